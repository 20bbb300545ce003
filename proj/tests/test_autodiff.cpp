#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "csa/autodiff.hpp"

using csa::Tensor;
namespace ad = csa::ad;

namespace {

Tensor random_tensor(std::mt19937_64& rng, csa::Shape shape) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = u(rng);
    return t;
}

ad::Var weighted_sum(const ad::Var& y, const Tensor& r) { return ad::sum(ad::mul(y, ad::constant(r))); }

}  // namespace

TEST(Conv2d, HandCases) {
    const auto ones = ad::constant(Tensor({1, 3, 3}, 1.0));
    const auto out = ad::conv2d(ones, ad::constant(Tensor({1, 1, 1, 1}, 2.0)), nullptr, 1, 0);
    EXPECT_EQ(out->value, Tensor({1, 3, 3}, 2.0));

    std::mt19937_64 rng(1);
    const Tensor x = random_tensor(rng, {2, 5, 4});
    Tensor delta({2, 2, 3, 3});
    delta[(0 * 2 + 0) * 9 + 4] = 1.0;
    delta[(1 * 2 + 1) * 9 + 4] = 1.0;
    EXPECT_EQ(ad::conv2d(ad::constant(x), ad::constant(delta), nullptr, 1, 1)->value, x);
}

TEST(Conv2d, StrideAndPaddingExtents) {
    const auto out = ad::conv2d(ad::constant(Tensor({1, 8, 8})), ad::constant(Tensor({4, 1, 3, 3})),
                                ad::constant(Tensor({4}, 0.5)), 2, 1);
    EXPECT_EQ(out->value.shape(), (csa::Shape{4, 4, 4}));
    EXPECT_EQ(out->value, Tensor({4, 4, 4}, 0.5));
    EXPECT_THROW(ad::conv2d(ad::constant(Tensor({2, 4, 4})), ad::constant(Tensor({1, 3, 3, 3})), nullptr, 1, 1),
                 csa::ShapeError);
}

TEST(Conv2d, Gradcheck) {
    std::mt19937_64 rng(2);
    const Tensor r = random_tensor(rng, {3, 2, 2});
    const auto rep = ad::finite_diff_gradcheck(
        [&](std::span<const ad::Var> v) { return weighted_sum(ad::conv2d(v[0], v[1], v[2], 2, 1), r); },
        {random_tensor(rng, {2, 4, 3}), random_tensor(rng, {3, 2, 3, 3}), random_tensor(rng, {3})});
    EXPECT_TRUE(rep.passed);
    EXPECT_LT(rep.max_rel_error, 1e-6);
}

TEST(Linear, HandCasesAndGradcheck) {
    const auto id = ad::linear(ad::constant(Tensor::vector({3, -2})), ad::constant(Tensor::matrix({{1, 0}, {0, 1}})),
                               ad::constant(Tensor({2})));
    EXPECT_EQ(id->value, Tensor::vector({3, -2}));
    const auto y = ad::linear(ad::constant(Tensor::vector({2, 5})), ad::constant(Tensor::matrix({{1, 1}})),
                              ad::constant(Tensor::vector({3})));
    EXPECT_EQ(y->value, Tensor::vector({10}));

    std::mt19937_64 rng(3);
    const Tensor r = random_tensor(rng, {4});
    ad::GradcheckOptions opts;
    opts.tol = 1e-8;
    const auto rep = ad::finite_diff_gradcheck(
        [&](std::span<const ad::Var> v) { return weighted_sum(ad::linear(v[0], v[1], v[2]), r); },
        {random_tensor(rng, {6}), random_tensor(rng, {4, 6}), random_tensor(rng, {4})}, opts);
    EXPECT_TRUE(rep.passed) << rep.max_rel_error;
}

TEST(Activations, Values) {
    EXPECT_EQ(ad::relu(ad::constant(Tensor::vector({-1, 0, 2})))->value, Tensor::vector({0, 0, 2}));
    EXPECT_EQ(ad::sigmoid(ad::constant(Tensor::vector({0})))->value[0], 0.5);
    const double tiny = ad::stable_sigmoid(-800.0);
    EXPECT_TRUE(std::isfinite(tiny));
    EXPECT_GE(tiny, 0.0);
    EXPECT_LT(tiny, 1e-300);
    EXPECT_EQ(ad::stable_sigmoid(800.0), 1.0);
    // e^-30 / (1 + e^-30), evaluated in long double.
    const long double ref = std::exp(-30.0L) / (1.0L + std::exp(-30.0L));
    EXPECT_NEAR(ad::stable_sigmoid(-30.0), static_cast<double>(ref), 1e-28);
}

TEST(Activations, ReluSubgradientAtZeroIsZero) {
    auto x = ad::parameter(Tensor::vector({0.0, 1.0}));
    ad::backward(ad::sum(ad::relu(x)));
    EXPECT_EQ(x->grad, Tensor::vector({0.0, 1.0}));
}

TEST(GlobalAvgPool, ValuesAndGradcheck) {
    Tensor f({2, 2, 2}, 7.0);
    f.at(1, 0, 0) = 0;
    f.at(1, 0, 1) = 1;
    f.at(1, 1, 0) = 2;
    f.at(1, 1, 1) = 3;
    EXPECT_EQ(ad::global_avg_pool(ad::constant(f))->value, Tensor::vector({7, 1.5}));

    std::mt19937_64 rng(4);
    const Tensor r = random_tensor(rng, {3});
    ad::GradcheckOptions opts;
    opts.tol = 1e-8;
    const auto rep = ad::finite_diff_gradcheck(
        [&](std::span<const ad::Var> v) { return weighted_sum(ad::global_avg_pool(v[0]), r); },
        {random_tensor(rng, {3, 4, 2})}, opts);
    EXPECT_TRUE(rep.passed) << rep.max_rel_error;
}

TEST(SoftmaxCrossEntropy, ValuesAndGradcheck) {
    EXPECT_NEAR(ad::softmax_cross_entropy(ad::constant(Tensor::vector({0, 0})), 0)->value[0], std::log(2.0), 1e-15);
    const double big = ad::softmax_cross_entropy(ad::constant(Tensor::vector({1000, 0})), 0)->value[0];
    EXPECT_TRUE(std::isfinite(big));
    EXPECT_LT(big, 1e-300);
    EXPECT_THROW(ad::softmax_cross_entropy(ad::constant(Tensor::vector({0, 0})), 2), std::out_of_range);

    std::mt19937_64 rng(5);
    ad::GradcheckOptions opts;
    opts.tol = 1e-8;
    const auto rep = ad::finite_diff_gradcheck(
        [](std::span<const ad::Var> v) { return ad::softmax_cross_entropy(v[0], 3); }, {random_tensor(rng, {7})},
        opts);
    EXPECT_TRUE(rep.passed) << rep.max_rel_error;
}

TEST(Backward, SharedSubgraphAccumulatesOncePerCall) {
    // y = x*x + x*x through a shared node: dy/dx = 4x.
    auto x = ad::parameter(Tensor::vector({3.0}));
    auto sq = ad::mul(x, x);
    auto root = ad::sum(ad::mul(ad::constant(Tensor::vector({2.0})), sq));
    ad::backward(root);
    EXPECT_EQ(x->grad[0], 12.0);
    // Leaf gradients accumulate across calls; interior ones are recomputed.
    ad::backward(root);
    EXPECT_EQ(x->grad[0], 24.0);
    const std::vector<ad::Var> leaves{x};
    ad::zero_grad(leaves);
    EXPECT_EQ(x->grad[0], 0.0);
}

TEST(Backward, RejectsNonScalarRoot) {
    auto x = ad::parameter(Tensor::vector({1.0, 2.0}));
    EXPECT_THROW(ad::backward(ad::relu(x)), std::invalid_argument);
}

TEST(Backward, GradShapesMatchValues) {
    std::mt19937_64 rng(6);
    auto x = ad::parameter(random_tensor(rng, {2, 5, 5}));
    auto k = ad::parameter(random_tensor(rng, {3, 2, 3, 3}));
    auto b = ad::parameter(random_tensor(rng, {3}));
    auto h = ad::relu(ad::conv2d(x, k, b, 2, 1));
    auto pooled = ad::global_avg_pool(h);
    ad::backward(ad::softmax_cross_entropy(pooled, 1));
    for (const auto& v : {x, k, b, h, pooled}) EXPECT_EQ(v->grad.shape(), v->value.shape());
}

TEST(Sgd, VanillaStep) {
    std::vector<Tensor> p{Tensor::vector({1.0})};
    const std::vector<Tensor> g{Tensor::vector({1.0})};
    ad::OptimizerState st{0.1, 0.0, 0.0, false, {}};
    ad::sgd_step(p, g, st);
    EXPECT_DOUBLE_EQ(p[0][0], 0.9);
}

TEST(Sgd, NesterovTwoStepsMatchHandSimulation) {
    // step 1: buf = 1, update = 1 + 0.9 * 1 = 1.9, p = 1 - 0.19 = 0.81
    // step 2: buf = 0.9 * 1 + 1 = 1.9, update = 1 + 0.9 * 1.9 = 2.71, p = 0.81 - 0.271 = 0.539
    std::vector<Tensor> p{Tensor::vector({1.0})};
    const std::vector<Tensor> g{Tensor::vector({1.0})};
    ad::OptimizerState st{0.1, 0.9, 0.0, true, {}};
    ad::sgd_step(p, g, st);
    EXPECT_NEAR(p[0][0], 0.81, 1e-15);
    ad::sgd_step(p, g, st);
    EXPECT_NEAR(st.momentum_buffers[0][0], 1.9, 1e-15);
    EXPECT_NEAR(p[0][0], 0.539, 1e-15);
}

TEST(Sgd, DecayOnly) {
    std::vector<Tensor> p{Tensor::vector({10.0})};
    const std::vector<Tensor> g{Tensor::vector({0.0})};
    ad::OptimizerState st{1.0, 0.0, 1e-4, false, {}};
    ad::sgd_step(p, g, st);
    EXPECT_NEAR(p[0][0], 9.999, 1e-12);
}

TEST(Gradcheck, QuadraticIsExact) {
    std::mt19937_64 rng(7);
    const auto rep = ad::finite_diff_gradcheck([](std::span<const ad::Var> v) { return ad::sum(ad::mul(v[0], v[0])); },
                                               {random_tensor(rng, {10})});
    EXPECT_TRUE(rep.passed);
    EXPECT_LT(rep.max_rel_error, 1e-9);
    EXPECT_EQ(rep.checked, 10u);
}

TEST(Gradcheck, ReluKinkIsExcludedNotFailed) {
    const auto rep = ad::finite_diff_gradcheck([](std::span<const ad::Var> v) { return ad::sum(ad::relu(v[0])); },
                                               {Tensor::vector({0.0, 0.5, -0.5})});
    EXPECT_TRUE(rep.passed);
    ASSERT_EQ(rep.excluded.size(), 1u);
    EXPECT_EQ(rep.excluded[0], (std::pair<std::size_t, std::size_t>{0, 0}));
    EXPECT_EQ(rep.checked, 2u);
}

TEST(Gradcheck, DetectsWrongBackward) {
    // A node whose backward reports twice the true derivative.
    const auto rep = ad::finite_diff_gradcheck(
        [](std::span<const ad::Var> v) {
            Tensor out = v[0]->value;
            auto x = v[0];
            return ad::sum(ad::make_node(std::move(out), {x}, [x](ad::Node& self) {
                for (std::size_t i = 0; i < x->grad.numel(); ++i) x->grad[i] += 2.0 * self.grad[i];
            }));
        },
        {Tensor::vector({0.3, -0.2})});
    EXPECT_FALSE(rep.passed);
    EXPECT_GT(rep.max_rel_error, 0.4);
}
