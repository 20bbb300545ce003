#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "csa/autodiff.hpp"

namespace csa::ad {

namespace {

double evaluate(const GraphBuilder& fn, const std::vector<Tensor>& point) {
    std::vector<Var> vars;
    vars.reserve(point.size());
    for (const auto& t : point) vars.push_back(constant(t));
    const Var out = fn(vars);
    if (out->value.numel() != 1) throw ShapeError("gradcheck: function must return a scalar");
    const double v = out->value[0];
    if (!std::isfinite(v)) throw std::domain_error("gradcheck: non-finite function value at probe point");
    return v;
}

}  // namespace

GradcheckReport finite_diff_gradcheck(const GraphBuilder& fn, const std::vector<Tensor>& point,
                                      const GradcheckOptions& opts) {
    if (!(opts.h > 0.0)) throw std::invalid_argument("gradcheck: h must be positive");

    std::vector<Var> leaves;
    for (const auto& t : point) leaves.push_back(parameter(t));
    const Var root = fn(leaves);
    backward(root);
    const double f0 = evaluate(fn, point);

    struct Probe {
        std::size_t input, index;
        double analytic, numeric;
        bool kink;
    };
    std::vector<Probe> probes;
    double scale = 0.0;
    std::vector<Tensor> work = point;
    for (std::size_t in = 0; in < point.size(); ++in) {
        for (std::size_t i = 0; i < point[in].numel(); ++i) {
            const double x = point[in][i];
            work[in][i] = x + opts.h;
            const double fp = evaluate(fn, work);
            work[in][i] = x - opts.h;
            const double fm = evaluate(fn, work);
            work[in][i] = x;
            const double central = (fp - fm) / (2.0 * opts.h);
            const double fwd = (fp - f0) / opts.h;
            const double bwd = (f0 - fm) / opts.h;
            const bool kink = std::abs(fwd - bwd) > opts.kink_tol * std::max(1.0, std::abs(central));
            const double a = leaves[in]->grad[i];
            probes.push_back({in, i, a, central, kink});
            if (!kink) scale = std::max({scale, std::abs(a), std::abs(central)});
        }
    }

    GradcheckReport report;
    const double floor = std::max(opts.floor_ratio * scale, 1e-300);
    for (const auto& p : probes) {
        if (p.kink) {
            report.excluded.emplace_back(p.input, p.index);
            continue;
        }
        ++report.checked;
        const double denom = std::max({std::abs(p.analytic), std::abs(p.numeric), floor});
        const double rel = std::abs(p.analytic - p.numeric) / denom;
        if (report.checked == 1 || rel > report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst_input = p.input;
            report.worst_index = p.index;
        }
    }
    report.passed = report.max_rel_error <= opts.tol;
    return report;
}

}  // namespace csa::ad
