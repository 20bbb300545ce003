#include "csa/selftest.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>

#include "csa/attention.hpp"
#include "csa/autodiff.hpp"
#include "csa/spatial_stats.hpp"

namespace csa::selftest {

namespace {

using Clock = std::chrono::steady_clock;

std::size_t uniform_size(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

/// C x H x W with per-channel offsets so the channel averages are spread out.
Tensor random_feature_map(std::mt19937_64& rng, std::size_t c, std::size_t h, std::size_t w) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> offset(-1.0, 1.0);
    Tensor f({c, h, w});
    const std::size_t plane = h * w;
    for (std::size_t i = 0; i < c; ++i) {
        const double o = offset(rng);
        for (std::size_t k = 0; k < plane; ++k) f[i * plane + k] = o + gauss(rng);
    }
    return f;
}

/// Non-negative activations, like the output of a relu block.
Tensor random_activation_map(std::mt19937_64& rng, std::size_t c, std::size_t h, std::size_t w) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Tensor f({c, h, w});
    for (double& v : f.data()) v = u(rng);
    return f;
}

Tensor affine(const Tensor& f, double a, double c) {
    Tensor out(f.shape());
    for (std::size_t i = 0; i < f.numel(); ++i) out[i] = a * f[i] + c;
    return out;
}

std::string sci(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3e", v);
    return buf;
}

double elapsed(Clock::time_point start) { return std::chrono::duration<double>(Clock::now() - start).count(); }

}  // namespace

SuiteResult oracle_equivalence(std::size_t instances, std::uint64_t seed) {
    const auto start = Clock::now();
    SuiteResult r{"oracle_equivalence", false, 0.0, 1e-10, {}, 0.0};
    std::mt19937_64 rng(seed);
    std::size_t evaluated = 0;
    for (std::size_t n = 0; n < instances; ++n) {
        const std::size_t c = uniform_size(rng, 2, 64);
        const std::size_t d = uniform_size(rng, 4, 32);
        const Tensor f = random_feature_map(rng, c, d, 1);
        const Tensor x = channel_attribute(f);
        const auto weights = spatial::build_weights(f);
        const auto z = spatial::standardize(x);
        if (z.floor_hit) continue;
        const Tensor direct = spatial::local_moran_direct(x, weights.v);
        const Tensor matrix = spatial::local_moran_matrix(z.values, spatial::unitary_weights(weights.v));
        double scale = 0.0;
        for (double v : matrix.data()) scale = std::max(scale, std::abs(v));
        const double err = max_abs_diff(direct, matrix) / std::max(scale, 1e-300);
        r.metric = std::max(r.metric, err);
        ++evaluated;
    }
    r.passed = evaluated == instances && r.metric < r.threshold;
    r.detail = std::to_string(evaluated) + "/" + std::to_string(instances) + " instances";
    r.seconds = elapsed(start);
    return r;
}

SuiteResult weight_contract(std::size_t instances, std::uint64_t seed) {
    const auto start = Clock::now();
    SuiteResult r{"weight_contract", false, 0.0, 1e-12, {}, 0.0};
    std::mt19937_64 rng(seed);
    std::size_t violations = 0;
    std::size_t degenerate_ok = 0, degenerate_total = 0;

    auto check = [&](const spatial::SpatialWeights& sw) {
        const std::size_t c = sw.w.dim(0);
        double total = 0.0;
        for (std::size_t i = 0; i < c; ++i) {
            if (sw.w.at(i, i) != 0.0) ++violations;
            for (std::size_t j = 0; j < c; ++j) {
                const double e = sw.w.at(i, j);
                if (!std::isfinite(e) || e < 0.0 || e != sw.w.at(j, i)) ++violations;
                total += e;
            }
        }
        if (c >= 2) r.metric = std::max(r.metric, std::abs(total - 1.0));
    };

    for (std::size_t n = 0; n < instances; ++n) {
        const std::size_t c = uniform_size(rng, 2, 64);
        const std::size_t h = uniform_size(rng, 1, 8), w = uniform_size(rng, 1, 8);
        const Tensor f = random_feature_map(rng, c, h, w);
        const auto sw = spatial::build_weights(f);
        if (sw.degenerate) ++violations;
        check(sw);
    }

    // Coincident channels take the uniform fallback and stay finite end to end.
    for (std::size_t c : {1u, 2u, 3u, 8u, 64u}) {
        for (double value : {0.0, 1.0, -3.5}) {
            ++degenerate_total;
            const Tensor f({c, 4, 4}, value);
            const auto sw = spatial::build_weights(f);
            check(sw);
            CsaBlock block(c);
            std::mt19937_64 init(seed + c);
            block.init_uniform(init);
            const auto tr = block.forward(f);
            bool ok = sw.degenerate && tr.p.all_finite() && tr.q.all_finite();
            for (double qv : tr.q.data()) ok = ok && qv == 0.0;
            if (c >= 2) ok = ok && std::abs(sw.w.at(0, 1) - 1.0 / static_cast<double>(c * (c - 1))) < 1e-15;
            degenerate_ok += ok;
        }
    }
    r.passed = violations == 0 && r.metric <= r.threshold && degenerate_ok == degenerate_total;
    r.detail = std::to_string(violations) + " structural violations, degenerate " + std::to_string(degenerate_ok) +
               "/" + std::to_string(degenerate_total);
    r.seconds = elapsed(start);
    return r;
}

SuiteResult affine_invariance(std::size_t instances, std::uint64_t seed) {
    const auto start = Clock::now();
    SuiteResult r{"affine_invariance", false, 0.0, 1e-8, {}, 0.0};
    std::mt19937_64 rng(seed);
    for (std::size_t n = 0; n < instances; ++n) {
        const std::size_t c = uniform_size(rng, 4, 32);
        const std::size_t h = uniform_size(rng, 3, 8), w = uniform_size(rng, 3, 8);
        const Tensor f = random_activation_map(rng, c, h, w);
        CsaBlock block(c);
        block.init_uniform(rng);
        const Tensor p0 = block.forward(f).p;
        for (double a : {0.5, 2.0, 10.0})
            for (double shift : {-1.0, 0.0, 3.0})
                r.metric = std::max(r.metric, max_abs_diff(block.forward(affine(f, a, shift)).p, p0));
    }
    r.passed = r.metric < r.threshold;
    r.detail = std::to_string(instances) + " maps x 9 transforms";
    r.seconds = elapsed(start);
    return r;
}

SuiteResult se_affine_sensitivity(std::size_t instances, std::uint64_t seed) {
    const auto start = Clock::now();
    SuiteResult r{"se_affine_sensitivity", false, 0.0, 0.95, {}, 0.0};
    std::mt19937_64 rng(seed);
    std::size_t moved = 0;
    for (std::size_t n = 0; n < instances; ++n) {
        const std::size_t c = uniform_size(rng, 4, 32);
        const std::size_t h = uniform_size(rng, 3, 8), w = uniform_size(rng, 3, 8);
        const Tensor f = random_activation_map(rng, c, h, w);
        SeBlock block(c);
        block.init_uniform(rng);
        const double delta = max_abs_diff(block.forward(affine(f, 2.0, 0.0)).p, block.forward(f).p);
        if (delta > 1e-3) ++moved;
    }
    r.metric = static_cast<double>(moved) / static_cast<double>(instances);
    r.passed = r.metric >= r.threshold;
    r.detail = std::to_string(moved) + "/" + std::to_string(instances) + " SE gates moved > 1e-3 under F -> 2F";
    r.seconds = elapsed(start);
    return r;
}

SuiteResult permutation_equivariance(std::size_t instances, std::uint64_t seed) {
    const auto start = Clock::now();
    SuiteResult r{"permutation_equivariance", false, 0.0, 1e-12, {}, 0.0};
    std::mt19937_64 rng(seed);
    for (std::size_t n = 0; n < instances; ++n) {
        const std::size_t c = uniform_size(rng, 2, 32);
        const std::size_t h = uniform_size(rng, 2, 6), w = uniform_size(rng, 2, 6);
        const Tensor f = random_activation_map(rng, c, h, w);
        std::vector<std::size_t> perm(c);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);

        const std::size_t plane = h * w;
        Tensor fp(f.shape());
        for (std::size_t i = 0; i < c; ++i)
            std::copy_n(&f[perm[i] * plane], plane, &fp[i * plane]);

        CsaBlock block(c);
        block.init_uniform(rng);
        CsaBlock permuted = block;
        const auto& src = block.params();
        auto& dst = permuted.params();
        const std::size_t hid = block.hidden();
        for (std::size_t k = 0; k < hid; ++k)
            for (std::size_t i = 0; i < c; ++i) dst.down_weight.at(k, i) = src.down_weight.at(k, perm[i]);
        for (std::size_t i = 0; i < c; ++i) {
            for (std::size_t k = 0; k < hid; ++k) dst.up_weight.at(i, k) = src.up_weight.at(perm[i], k);
            dst.up_bias[i] = src.up_bias[perm[i]];
        }

        const auto base = block.forward(f);
        const auto moved = permuted.forward(fp);
        for (std::size_t i = 0; i < c; ++i) {
            r.metric = std::max(r.metric, std::abs(moved.q[i] - base.q[perm[i]]));
            r.metric = std::max(r.metric, std::abs(moved.p[i] - base.p[perm[i]]));
        }
    }
    r.passed = r.metric < r.threshold;
    r.detail = std::to_string(instances) + " (F, permutation) pairs, q and p";
    r.seconds = elapsed(start);
    return r;
}

namespace {

Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = u(rng);
    return t;
}

/// Values in +-[0.2, 1], away from the relu kink.
Tensor away_from_zero(std::mt19937_64& rng, Shape shape) {
    std::uniform_real_distribution<double> mag(0.2, 1.0);
    std::bernoulli_distribution sign(0.5);
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = sign(rng) ? mag(rng) : -mag(rng);
    return t;
}

/// (A + A^T) / 2, so finite-difference probes of a weight matrix stay symmetric.
ad::Var symmetrize(const ad::Var& a) {
    const std::size_t c = a->value.dim(0);
    Tensor out({c, c});
    for (std::size_t i = 0; i < c; ++i)
        for (std::size_t j = 0; j < c; ++j) out.at(i, j) = 0.5 * (a->value.at(i, j) + a->value.at(j, i));
    return ad::make_node(std::move(out), {a}, [a, c](ad::Node& self) {
        for (std::size_t i = 0; i < c; ++i)
            for (std::size_t j = 0; j < c; ++j) a->grad.at(i, j) += 0.5 * (self.grad.at(i, j) + self.grad.at(j, i));
    });
}

SuiteResult run_gradcheck(const std::string& name, const ad::GraphBuilder& fn, const std::vector<Tensor>& point,
                          double tol) {
    const auto start = Clock::now();
    ad::GradcheckOptions opts;
    opts.tol = tol;
    const auto rep = ad::finite_diff_gradcheck(fn, point, opts);
    SuiteResult r{"gradcheck/" + name, rep.passed, rep.max_rel_error, tol, {}, 0.0};
    r.detail = std::to_string(rep.checked) + " coords, " + std::to_string(rep.excluded.size()) + " at kinks";
    // A check that skips most coordinates proves nothing.
    if (rep.excluded.size() * 10 > rep.checked) r.passed = false;
    r.seconds = elapsed(start);
    return r;
}

}  // namespace

std::vector<SuiteResult> gradient_checks(std::uint64_t seed) {
    constexpr double kSmooth = 1e-6;
    constexpr double kPiecewise = 1e-4;
    std::mt19937_64 rng(seed);
    std::vector<SuiteResult> out;

    // Every layer is scalarised as sum(out * R) with a fixed random R.
    auto weighted = [](Tensor weights) {
        return [weights](const ad::Var& y) { return ad::sum(ad::mul(y, ad::constant(weights))); };
    };

    {
        const auto r = weighted(random_tensor(rng, {3, 3, 3}));
        out.push_back(run_gradcheck(
            "conv2d", [r](std::span<const ad::Var> v) { return r(ad::conv2d(v[0], v[1], v[2], 2, 1)); },
            {random_tensor(rng, {2, 5, 5}), random_tensor(rng, {3, 2, 3, 3}), random_tensor(rng, {3})}, kSmooth));
    }
    {
        const auto r = weighted(random_tensor(rng, {4}));
        out.push_back(run_gradcheck(
            "linear", [r](std::span<const ad::Var> v) { return r(ad::linear(v[0], v[1], v[2])); },
            {random_tensor(rng, {5}), random_tensor(rng, {4, 5}), random_tensor(rng, {4})}, kSmooth));
    }
    {
        const auto r = weighted(random_tensor(rng, {12}));
        out.push_back(run_gradcheck(
            "relu", [r](std::span<const ad::Var> v) { return r(ad::relu(v[0])); }, {away_from_zero(rng, {12})},
            kPiecewise));
    }
    {
        const auto r = weighted(random_tensor(rng, {12}));
        out.push_back(run_gradcheck(
            "sigmoid", [r](std::span<const ad::Var> v) { return r(ad::sigmoid(v[0])); },
            {random_tensor(rng, {12}, -4.0, 4.0)}, kSmooth));
    }
    {
        const auto r = weighted(random_tensor(rng, {3}));
        out.push_back(run_gradcheck(
            "global_avg_pool", [r](std::span<const ad::Var> v) { return r(ad::global_avg_pool(v[0])); },
            {random_tensor(rng, {3, 4, 5})}, kSmooth));
    }
    out.push_back(run_gradcheck(
        "softmax_cross_entropy", [](std::span<const ad::Var> v) { return ad::softmax_cross_entropy(v[0], 2); },
        {random_tensor(rng, {6}, -3.0, 3.0)}, kSmooth));
    {
        const auto r = weighted(random_tensor(rng, {3, 2, 4}));
        out.push_back(run_gradcheck(
            "recalibrate", [r](std::span<const ad::Var> v) { return r(recalibrate(v[0], v[1])); },
            {random_tensor(rng, {3, 2, 4}), random_tensor(rng, {3}, 0.0, 1.0)}, kSmooth));
    }
    {
        const auto r = weighted(random_tensor(rng, {5, 5}));
        out.push_back(run_gradcheck(
            "spatial_weights",
            [r](std::span<const ad::Var> v) { return r(spatial_weights(v[0], spatial::kDefaultEpsDist, false).w); },
            {random_feature_map(rng, 5, 3, 3)}, kSmooth));
    }
    {
        const auto r = weighted(random_tensor(rng, {6}));
        out.push_back(run_gradcheck(
            "standardize",
            [r](std::span<const ad::Var> v) { return r(standardize(v[0], spatial::kDefaultEpsSigma)); },
            {random_tensor(rng, {6})}, kSmooth));
    }
    {
        const auto r = weighted(random_tensor(rng, {5}));
        out.push_back(run_gradcheck(
            "local_moran", [r](std::span<const ad::Var> v) { return r(local_moran(v[0], symmetrize(v[1]))); },
            {random_tensor(rng, {5}), random_tensor(rng, {5, 5}, 0.0, 1.0)}, kSmooth));
    }

    // Gated composites: loss = sum(recalibrate(F, p(F))) on a 4x3x3 map.
    {
        const CsaBlock block(4, kDefaultReduction);
        std::vector<Tensor> point{random_feature_map(rng, 4, 3, 3), random_tensor(rng, {4, 4}),
                                  random_tensor(rng, {4}), random_tensor(rng, {4, 4}), random_tensor(rng, {4})};
        out.push_back(run_gradcheck(
            "csa_block",
            [block](std::span<const ad::Var> v) {
                const auto att = block.forward(v[0], GateVars{v[1], v[2], v[3], v[4]});
                return ad::sum(recalibrate(v[0], att.p));
            },
            point, kPiecewise));
    }
    {
        // With w stopped, the reference function holds w at its value for the base point.
        CsaOptions opts;
        opts.stop_grad_weights = true;
        const CsaBlock block(4, kDefaultReduction, opts);
        std::vector<Tensor> point{random_feature_map(rng, 4, 3, 3), random_tensor(rng, {4, 4}),
                                  random_tensor(rng, {4}), random_tensor(rng, {4, 4}), random_tensor(rng, {4})};
        const Tensor w0 = spatial::build_weights(point[0]).w;
        auto result = run_gradcheck(
            "csa_block_stop_grad_w",
            [block, w0](std::span<const ad::Var> v) {
                const auto att = block.forward_with_weights(v[0], ad::constant(w0), GateVars{v[1], v[2], v[3], v[4]});
                return ad::sum(recalibrate(v[0], att.p));
            },
            point, kPiecewise);

        // The block's own stop-grad path must produce exactly that gradient.
        auto grads_of = [&](bool fixed) {
            std::vector<ad::Var> leaves;
            for (const auto& t : point) leaves.push_back(ad::parameter(t));
            const GateVars gv{leaves[1], leaves[2], leaves[3], leaves[4]};
            const auto att = fixed ? block.forward_with_weights(leaves[0], ad::constant(w0), gv)
                                   : block.forward(leaves[0], gv);
            ad::backward(ad::sum(recalibrate(leaves[0], att.p)));
            return leaves;
        };
        const auto a = grads_of(false);
        const auto b = grads_of(true);
        double gap = 0.0;
        for (std::size_t k = 0; k < a.size(); ++k) gap = std::max(gap, max_abs_diff(a[k]->grad, b[k]->grad));
        if (gap > 1e-12) {
            result.passed = false;
            result.detail += ", stop-grad path differs by " + sci(gap);
        }
        out.push_back(std::move(result));
    }
    {
        const SeBlock block(4);
        std::vector<Tensor> point{random_feature_map(rng, 4, 3, 3), random_tensor(rng, {4, 4}),
                                  random_tensor(rng, {4}), random_tensor(rng, {4, 4}), random_tensor(rng, {4})};
        out.push_back(run_gradcheck(
            "se_block",
            [block](std::span<const ad::Var> v) {
                const auto att = block.forward(v[0], GateVars{v[1], v[2], v[3], v[4]});
                return ad::sum(recalibrate(v[0], att.p));
            },
            point, kPiecewise));
    }
    return out;
}

SuiteResult param_accounting() {
    SuiteResult r{"param_accounting", true, 0.0, 0.0, {}, 0.0};
    std::ostringstream detail;
    for (std::size_t c : {8u, 16u, 64u, 256u}) {
        const CsaBlock csa_block(c, 16);
        const SeBlock se_block(c, 16);
        const std::size_t h = hidden_width(c, 16);
        const std::size_t closed = h * c + h + c * h + c;
        const bool ok = param_count(csa_block) == param_count(se_block) && param_count(csa_block) == closed;
        r.passed = r.passed && ok;
        if (!ok) r.metric += 1.0;
        detail << "C=" << c << ":" << param_count(csa_block) << (ok ? "" : "!") << ' ';
    }
    r.detail = detail.str();
    return r;
}

std::vector<SuiteResult> run_all(const Options& opts) {
    std::vector<SuiteResult> out;
    out.push_back(oracle_equivalence(opts.oracle_instances, opts.seed));
    out.push_back(weight_contract(opts.weight_instances, opts.seed + 1));
    out.push_back(affine_invariance(opts.affine_instances, opts.seed + 2));
    out.push_back(se_affine_sensitivity(opts.affine_instances, opts.seed + 2));
    out.push_back(permutation_equivariance(opts.permutation_instances, opts.seed + 3));
    for (auto& g : gradient_checks(opts.seed + 4)) out.push_back(std::move(g));
    out.push_back(param_accounting());
    return out;
}

std::string format_table(const std::vector<SuiteResult>& results) {
    std::ostringstream os;
    char line[256];
    std::snprintf(line, sizeof line, "%-34s %-6s %-11s %-11s %s\n", "suite", "result", "metric", "bound", "detail");
    os << line;
    for (const auto& r : results) {
        std::snprintf(line, sizeof line, "%-34s %-6s %-11s %-11s %s\n", r.name.c_str(), r.passed ? "PASS" : "FAIL",
                      sci(r.metric).c_str(), sci(r.threshold).c_str(), r.detail.c_str());
        os << line;
    }
    return os.str();
}

}  // namespace csa::selftest
