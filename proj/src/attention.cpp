#include "csa/attention.hpp"

#include <cmath>

namespace csa {

std::size_t hidden_width(std::size_t channels, std::size_t reduction) {
    if (channels == 0 || reduction == 0) throw std::invalid_argument("channels and reduction must be positive");
    return std::max((channels + reduction - 1) / reduction, kMinHiddenWidth);
}

ad::Var channel_attribute(const ad::Var& f) { return ad::global_avg_pool(f); }

Tensor channel_attribute(const Tensor& f) { return ad::global_avg_pool(ad::constant(f))->value; }

WeightsVar spatial_weights(const ad::Var& f, double eps_dist, bool stop_grad) {
    WeightsVar out;
    out.info = spatial::build_weights(f->value, eps_dist);
    if (stop_grad || out.info.degenerate) {
        out.w = ad::constant(out.info.w);
        return out;
    }

    const std::size_t c = f->value.dim(0);
    const std::size_t d = f->value.numel() / c;
    // Shared, immutable copies for the backward closure.
    auto info = std::make_shared<const spatial::SpatialWeights>(out.info);
    double v_total = 0.0;
    for (double e : info->v.data()) v_total += e;

    out.w = ad::make_node(info->w, {f}, [f, info, c, d, v_total](ad::Node& self) {
        const Tensor& gw = self.grad;
        const Tensor& w = info->w;
        const Tensor& v = info->v;
        const Tensor& l = info->distance;
        const double lbar = info->mean_dist;

        double dot = 0.0;
        for (std::size_t k = 0; k < gw.numel(); ++k) dot += gw[k] * w[k];

        // w = v / sum(v); v = exp(-l / lbar)
        Tensor gv({c, c});
        double g_lbar = 0.0;
        for (std::size_t i = 0; i < c; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
                if (i == j) continue;
                const double g = (gw.at(i, j) - dot) / v_total;
                gv.at(i, j) = g;
                g_lbar += g * v.at(i, j) * l.at(i, j);
            }
        }
        g_lbar /= lbar * lbar;
        const double pair_share = g_lbar / static_cast<double>(c * (c - 1));

        // dl/ds = 1 / (2 sqrt(s)), guarded for coincident channels.
        Tensor gs({c, c});
        for (std::size_t i = 0; i < c; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
                if (i == j) continue;
                const double gl = -gv.at(i, j) * v.at(i, j) / lbar + pair_share;
                gs.at(i, j) = gl / (2.0 * std::sqrt(l.at(i, j) * l.at(i, j) + spatial::kSqrtGuard));
            }
        }

        // s_ij = |f_i - f_j|^2
        const Tensor& fv = f->value;
        for (std::size_t i = 0; i < c; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
                if (i == j) continue;
                const double coef = 2.0 * (gs.at(i, j) + gs.at(j, i));
                if (coef == 0.0) continue;
                for (std::size_t k = 0; k < d; ++k) {
                    f->grad[i * d + k] += coef * (fv[i * d + k] - fv[j * d + k]);
                }
            }
        }
    });
    return out;
}

ad::Var standardize(const ad::Var& x, double eps_sigma, bool* floor_hit) {
    auto s = spatial::standardize(x->value, eps_sigma);
    if (floor_hit) *floor_hit = s.floor_hit;
    if (s.floor_hit) return ad::constant(std::move(s.values));
    const double sigma = s.sigma;
    return ad::make_node(std::move(s.values), {x}, [x, sigma](ad::Node& self) {
        const std::size_t n = self.value.numel();
        double mean_g = 0.0, mean_gz = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            mean_g += self.grad[i];
            mean_gz += self.grad[i] * self.value[i];
        }
        mean_g /= static_cast<double>(n);
        mean_gz /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            x->grad[i] += (self.grad[i] - mean_g - self.value[i] * mean_gz) / sigma;
        }
    });
}

ad::Var local_moran(const ad::Var& z, const ad::Var& w) {
    Tensor out = spatial::local_moran_matrix(z->value, w->value);
    const std::size_t c = z->value.numel();
    return ad::make_node(std::move(out), {z, w}, [z, w, c](ad::Node& self) {
        const Tensor& zv = z->value;
        const Tensor& wv = w->value;
        // I_i = z_i * sum_j z_j w_ji
        for (std::size_t i = 0; i < c; ++i) {
            const double g = self.grad[i];
            if (g == 0.0) continue;
            if (z->requires_grad) {
                double lag = 0.0;
                for (std::size_t j = 0; j < c; ++j) lag += zv[j] * wv.at(j, i);
                z->grad[i] += g * lag;
                for (std::size_t j = 0; j < c; ++j) z->grad[j] += g * zv[i] * wv.at(j, i);
            }
            if (w->requires_grad) {
                for (std::size_t j = 0; j < c; ++j) w->grad.at(j, i) += g * zv[i] * zv[j];
            }
        }
    });
}

ad::Var recalibrate(const ad::Var& f, const ad::Var& p) { return ad::channel_scale(f, p); }

Tensor recalibrate(const Tensor& f, const Tensor& p) { return broadcast_mul_channels(f, p); }

// GateBlock ---------------------------------------------------------------

GateBlock::GateBlock(std::size_t channels, std::size_t reduction)
    : channels_(channels), reduction_(reduction), hidden_(hidden_width(channels, reduction)) {
    params_.down_weight = Tensor({hidden_, channels_});
    params_.down_bias = Tensor({hidden_});
    params_.up_weight = Tensor({channels_, hidden_});
    params_.up_bias = Tensor({channels_});
}

std::size_t GateBlock::param_count() const noexcept {
    return hidden_ * channels_ + hidden_ + channels_ * hidden_ + channels_;
}

void GateBlock::init_uniform(std::mt19937_64& rng) {
    auto fill = [&rng](Tensor& t, std::size_t fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (double& v : t.data()) v = dist(rng);
    };
    fill(params_.down_weight, channels_);
    fill(params_.down_bias, channels_);
    fill(params_.up_weight, hidden_);
    fill(params_.up_bias, hidden_);
}

void GateBlock::zero_init() {
    for (Tensor* t : {&params_.down_weight, &params_.down_bias, &params_.up_weight, &params_.up_bias}) {
        std::fill(t->data().begin(), t->data().end(), 0.0);
    }
}

GateVars GateBlock::bind(bool requires_grad) const {
    auto make = requires_grad ? ad::parameter : ad::constant;
    return {make(params_.down_weight), make(params_.down_bias), make(params_.up_weight), make(params_.up_bias)};
}

ad::Var GateBlock::excite(const ad::Var& descriptor, const GateVars& vars) const {
    auto hidden = ad::relu(ad::linear(descriptor, vars.down_weight, vars.down_bias));
    return ad::sigmoid(ad::linear(hidden, vars.up_weight, vars.up_bias));
}

void GateBlock::check_channels(const Tensor& f) const {
    if (f.rank() != 3 || f.dim(0) != channels_) {
        throw ShapeError("attention block expects " + std::to_string(channels_) + " x H x W, got " +
                         shape_str(f.shape()));
    }
}

std::size_t param_count(const GateBlock& block) { return block.param_count(); }

// CsaBlock ----------------------------------------------------------------

CsaBlock::CsaBlock(std::size_t channels, std::size_t reduction, CsaOptions options)
    : GateBlock(channels, reduction), options_(options) {}

AttentionOutput CsaBlock::forward(const ad::Var& f, const GateVars& vars) const {
    check_channels(f->value);
    auto weights = spatial_weights(f, options_.eps_dist, options_.stop_grad_weights);
    auto out = forward_with_weights(f, weights.w, vars);
    out.trace.w = weights.info.w;
    out.trace.weights_degenerate = weights.info.degenerate;
    return out;
}

AttentionOutput CsaBlock::forward_with_weights(const ad::Var& f, const ad::Var& w, const GateVars& vars) const {
    check_channels(f->value);
    AttentionOutput out;
    auto& tr = out.trace;

    auto x = channel_attribute(f);
    auto z = standardize(x, options_.eps_sigma, &tr.z_floor_hit);
    auto local = local_moran(z, w);
    auto q = standardize(local, options_.eps_sigma, &tr.q_floor_hit);
    out.p = excite(q, vars);

    tr.x = x->value;
    tr.z = z->value;
    tr.local = local->value;
    tr.global = spatial::global_moran(local->value);
    tr.q = q->value;
    tr.w = w->value;
    tr.p = out.p->value;
    return out;
}

AttentionTrace CsaBlock::forward(const Tensor& f) const {
    return forward(ad::constant(f), bind(false)).trace;
}

// SeBlock -----------------------------------------------------------------

SeBlock::SeBlock(std::size_t channels, std::size_t reduction) : GateBlock(channels, reduction) {}

AttentionOutput SeBlock::forward(const ad::Var& f, const GateVars& vars) const {
    check_channels(f->value);
    AttentionOutput out;
    auto x = channel_attribute(f);
    out.p = excite(x, vars);
    out.trace.x = x->value;
    out.trace.p = out.p->value;
    return out;
}

AttentionTrace SeBlock::forward(const Tensor& f) const {
    return forward(ad::constant(f), bind(false)).trace;
}

AttentionTrace spatial_trace(const Tensor& f, const CsaOptions& options) {
    AttentionTrace tr;
    tr.x = channel_attribute(f);
    const auto weights = spatial::build_weights(f, options.eps_dist);
    const auto z = spatial::standardize(tr.x, options.eps_sigma);
    const auto m = spatial::moran(z.values, weights, options.eps_sigma);
    tr.z = z.values;
    tr.z_floor_hit = z.floor_hit;
    tr.w = weights.w;
    tr.weights_degenerate = weights.degenerate;
    tr.local = m.local;
    tr.global = m.global;
    tr.q = m.descriptor;
    tr.q_floor_hit = m.sigma_floor_hit;
    return tr;
}

}  // namespace csa
