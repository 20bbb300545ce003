#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "csa/attention.hpp"
#include "csa/spatial_stats.hpp"

using csa::CsaBlock;
using csa::SeBlock;
using csa::Tensor;
namespace ad = csa::ad;

namespace {

Tensor random_map(std::mt19937_64& rng, std::size_t c, std::size_t h, std::size_t w) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Tensor t({c, h, w});
    for (double& v : t.data()) v = u(rng);
    return t;
}

// The three-channel reference map through a gate whose only live hidden unit
// has D row [-0.5, 1, 0.25], bias 0.1 and U column [1, -2, 0.5], U bias
// [0, 0.3, -0.1]. Expected values from an independent scalar evaluation.
void set_reference_gate(csa::GateBlock& block) {
    block.zero_init();
    auto& p = block.params();
    p.down_weight.at(0, 0) = -0.5;
    p.down_weight.at(0, 1) = 1.0;
    p.down_weight.at(0, 2) = 0.25;
    p.down_bias[0] = 0.1;
    p.up_weight.at(0, 0) = 1.0;
    p.up_weight.at(1, 0) = -2.0;
    p.up_weight.at(2, 0) = 0.5;
    p.up_bias[1] = 0.3;
    p.up_bias[2] = -0.1;
}

}  // namespace

TEST(HiddenWidth, FloorAndCeil) {
    EXPECT_EQ(csa::hidden_width(3, 16), 4u);
    EXPECT_EQ(csa::hidden_width(64, 16), 4u);
    EXPECT_EQ(csa::hidden_width(65, 16), 5u);
    EXPECT_EQ(csa::hidden_width(256, 16), 16u);
}

TEST(ParamCount, ClosedForm) {
    EXPECT_EQ(csa::param_count(CsaBlock(3, 16)), 31u);
    EXPECT_EQ(csa::param_count(CsaBlock(64, 16)), 580u);
    for (std::size_t c : {8u, 16u, 64u, 256u}) {
        const std::size_t h = csa::hidden_width(c, 16);
        EXPECT_EQ(csa::param_count(CsaBlock(c, 16)), h * c + h + c * h + c);
        EXPECT_EQ(csa::param_count(CsaBlock(c, 16)), csa::param_count(SeBlock(c, 16)));
    }
}

TEST(ChannelAttribute, Values) {
    Tensor f({2, 2, 2}, 1.0);
    for (std::size_t k = 4; k < 8; ++k) f[k] = 2.0;
    EXPECT_EQ(csa::channel_attribute(f), Tensor::vector({1, 2}));
    EXPECT_EQ(csa::channel_attribute(Tensor({3, 2, 2})), Tensor({3}));

    std::mt19937_64 rng(1);
    const Tensor g = random_map(rng, 8, 5, 5);
    const Tensor x = csa::channel_attribute(g);
    for (std::size_t c = 0; c < 8; ++c) {
        double s = 0.0;
        for (std::size_t h = 0; h < 5; ++h)
            for (std::size_t w = 0; w < 5; ++w) s += g.at(c, h, w);
        EXPECT_NEAR(x[c], s / 25.0, 1e-12);
    }
}

TEST(CsaBlock, ZeroGateGivesHalf) {
    std::mt19937_64 rng(2);
    CsaBlock block(6);
    block.zero_init();
    const auto tr = block.forward(random_map(rng, 6, 4, 4));
    EXPECT_EQ(tr.p, Tensor({6}, 0.5));
    const auto flat = block.forward(Tensor({6, 4, 4}, 3.0));
    EXPECT_EQ(flat.q, Tensor({6}));
    EXPECT_TRUE(flat.weights_degenerate);
    EXPECT_EQ(flat.p, Tensor({6}, 0.5));
}

TEST(CsaBlock, ReferencePipeline) {
    CsaBlock block(3, 16);
    set_reference_gate(block);
    const auto tr = block.forward(Tensor({3, 1, 2}, {0, 0, 1, 1, 2, 2}));
    EXPECT_NEAR(tr.q[0], -0.7071067811865474, 1e-12);
    EXPECT_NEAR(tr.q[1], 1.414213562373095, 1e-12);
    EXPECT_NEAR(tr.p[0], 0.8443543440062261, 1e-12);
    EXPECT_NEAR(tr.p[1], 0.043856690821441245, 1e-12);
    EXPECT_NEAR(tr.p[2], 0.6781963190076925, 1e-12);
    EXPECT_NEAR(tr.global, -0.2865876940156713, 1e-12);
}

TEST(SeBlock, MatchesScalarPipeline) {
    std::mt19937_64 rng(3);
    for (int n = 0; n < 10; ++n) {
        const std::size_t c = 4 + rng() % 20;
        SeBlock block(c);
        block.init_uniform(rng);
        const Tensor f = random_map(rng, c, 3, 4);
        const Tensor p = block.forward(f).p;

        const auto& prm = block.params();
        const Tensor x = csa::channel_attribute(f);
        std::vector<double> hidden(block.hidden());
        for (std::size_t k = 0; k < block.hidden(); ++k) {
            double s = prm.down_bias[k];
            for (std::size_t i = 0; i < c; ++i) s += prm.down_weight.at(k, i) * x[i];
            hidden[k] = std::max(0.0, s);
        }
        for (std::size_t i = 0; i < c; ++i) {
            double s = prm.up_bias[i];
            for (std::size_t k = 0; k < block.hidden(); ++k) s += prm.up_weight.at(i, k) * hidden[k];
            EXPECT_NEAR(p[i], 1.0 / (1.0 + std::exp(-s)), 1e-10);
        }
    }
}

TEST(SeBlock, ZeroGateGivesHalf) {
    std::mt19937_64 rng(4);
    SeBlock block(5);
    block.zero_init();
    EXPECT_EQ(block.forward(random_map(rng, 5, 3, 3)).p, Tensor({5}, 0.5));
}

TEST(CsaBlock, AffineInvariance) {
    std::mt19937_64 rng(5);
    CsaBlock block(12);
    block.init_uniform(rng);
    const Tensor f = random_map(rng, 12, 5, 5);
    const Tensor p = block.forward(f).p;
    for (double a : {0.5, 2.0, 10.0}) {
        for (double c : {-1.0, 0.0, 3.0}) {
            Tensor g(f.shape());
            for (std::size_t k = 0; k < f.numel(); ++k) g[k] = a * f[k] + c;
            EXPECT_LT(csa::max_abs_diff(block.forward(g).p, p), 1e-8);
        }
    }
}

TEST(CsaBlock, PermutingChannelsPermutesQ) {
    std::mt19937_64 rng(6);
    const std::size_t c = 9;
    const Tensor f = random_map(rng, c, 3, 3);
    std::vector<std::size_t> perm(c);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor fp(f.shape());
    for (std::size_t i = 0; i < c; ++i)
        for (std::size_t k = 0; k < 9; ++k) fp[i * 9 + k] = f[perm[i] * 9 + k];
    const auto a = csa::spatial_trace(f);
    const auto b = csa::spatial_trace(fp);
    for (std::size_t i = 0; i < c; ++i) EXPECT_NEAR(b.q[i], a.q[perm[i]], 1e-12);
}

TEST(Recalibrate, IdentityAndZero) {
    std::mt19937_64 rng(7);
    const Tensor f = random_map(rng, 4, 2, 3);
    EXPECT_EQ(csa::recalibrate(f, Tensor({4}, 1.0)), f);
    EXPECT_EQ(csa::recalibrate(f, Tensor({4})), Tensor(f.shape()));
}

TEST(CsaBlock, GradcheckComposite) {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> g(0.0, 1.0);
    for (bool stop : {false, true}) {
        csa::CsaOptions opts;
        opts.stop_grad_weights = stop;
        CsaBlock block(4, 16, opts);
        block.init_uniform(rng);
        Tensor f({4, 3, 3});
        for (double& v : f.data()) v = g(rng);
        const Tensor w0 = csa::spatial::build_weights(f).w;
        const auto rep = ad::finite_diff_gradcheck(
            [&](std::span<const ad::Var> v) {
                const auto gv = block.bind(false);
                const auto att = stop ? block.forward_with_weights(v[0], ad::constant(w0), gv) : block.forward(v[0], gv);
                return ad::sum(csa::recalibrate(v[0], att.p));
            },
            {f});
        EXPECT_TRUE(rep.passed) << "stop_grad=" << stop << " err " << rep.max_rel_error;
        EXPECT_LT(rep.max_rel_error, 1e-4);
    }
}

TEST(CsaBlock, StopGradLeavesGateGradientsAndChangesInputGradient) {
    std::mt19937_64 rng(9);
    const Tensor f = random_map(rng, 5, 3, 3);
    CsaBlock flowing(5);
    flowing.init_uniform(rng);
    CsaBlock stopped = flowing;
    stopped.options().stop_grad_weights = true;

    auto run = [&](const CsaBlock& b) {
        auto x = ad::parameter(f);
        const auto gv = b.bind(true);
        ad::backward(ad::sum(csa::recalibrate(x, b.forward(x, gv).p)));
        return std::pair{x->grad, gv.up_weight->grad};
    };
    const auto [gx_flow, gu_flow] = run(flowing);
    const auto [gx_stop, gu_stop] = run(stopped);
    EXPECT_EQ(gu_flow, gu_stop);
    EXPECT_GT(csa::max_abs_diff(gx_flow, gx_stop), 1e-9);
}

TEST(CsaBlock, RejectsWrongChannelCount) {
    EXPECT_THROW(CsaBlock(4).forward(Tensor({3, 2, 2})), csa::ShapeError);
    EXPECT_THROW(SeBlock(4).forward(Tensor({4, 2})), csa::ShapeError);
}
