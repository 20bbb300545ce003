#include "csa/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace csa::ad {

Var constant(Tensor value) {
    auto n = std::make_shared<Node>();
    n->grad = Tensor::zeros_like(value);
    n->value = std::move(value);
    return n;
}

Var parameter(Tensor value) {
    auto n = constant(std::move(value));
    n->requires_grad = true;
    return n;
}

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->grad = Tensor::zeros_like(value);
    n->value = std::move(value);
    n->requires_grad = std::any_of(parents.begin(), parents.end(), [](const Var& p) { return p && p->requires_grad; });
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
    return n;
}

namespace {

std::vector<Node*> topo_order(Node* root) {
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    // Iterative post-order DFS.
    std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
    seen.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p && p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}

void accumulate(const Var& target, std::size_t i, double g) {
    if (target && target->requires_grad) target->grad[i] += g;
}

}  // namespace

void backward(const Var& root) {
    if (root->value.numel() != 1) {
        throw ShapeError("backward needs a scalar root, got " + shape_str(root->value.shape()));
    }
    if (!root->requires_grad) return;
    auto order = topo_order(root.get());
    for (Node* n : order) {
        if (!n->is_leaf()) std::fill(n->grad.data().begin(), n->grad.data().end(), 0.0);
    }
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
}

void zero_grad(std::span<const Var> leaves) {
    for (const auto& v : leaves) std::fill(v->grad.data().begin(), v->grad.data().end(), 0.0);
}

Var conv2d(const Var& input, const Var& kernels, const Var& bias, std::size_t stride, std::size_t pad) {
    const Tensor& x = input->value;
    const Tensor& k = kernels->value;
    if (x.rank() != 3 || k.rank() != 4 || k.dim(1) != x.dim(0) || k.dim(2) != k.dim(3)) {
        throw ShapeError("conv2d: input " + shape_str(x.shape()) + " incompatible with kernels " +
                         shape_str(k.shape()));
    }
    if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
    const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
    const std::size_t cout = k.dim(0), ks = k.dim(2);
    if (ks > h + 2 * pad || ks > w + 2 * pad) {
        throw ShapeError("conv2d: kernel " + std::to_string(ks) + " larger than padded input " + shape_str(x.shape()));
    }
    if (bias && (bias->value.rank() != 1 || bias->value.dim(0) != cout)) {
        throw ShapeError("conv2d: bias " + shape_str(bias->value.shape()) + " vs " + std::to_string(cout) +
                         " output channels");
    }
    const std::size_t ho = (h + 2 * pad - ks) / stride + 1;
    const std::size_t wo = (w + 2 * pad - ks) / stride + 1;

    // Valid output range along one axis for kernel offset `kk`.
    auto out_range = [=](std::size_t kk, std::size_t in_extent, std::size_t out_extent) {
        // need 0 <= o*stride + kk - pad < in_extent
        std::size_t lo = 0;
        if (kk < pad) lo = (pad - kk + stride - 1) / stride;
        std::size_t hi = 0;  // exclusive
        if (in_extent + pad > kk) hi = std::min(out_extent, (in_extent + pad - kk - 1) / stride + 1);
        return std::pair{lo, std::max(lo, hi)};
    };

    Tensor out({cout, ho, wo});
    for (std::size_t co = 0; co < cout; ++co) {
        double* o = &out[co * ho * wo];
        const double b = bias ? bias->value[co] : 0.0;
        std::fill(o, o + ho * wo, b);
        for (std::size_t ci = 0; ci < cin; ++ci) {
            const double* in = &x[ci * h * w];
            for (std::size_t kh = 0; kh < ks; ++kh) {
                const auto [oh0, oh1] = out_range(kh, h, ho);
                for (std::size_t kw = 0; kw < ks; ++kw) {
                    const double kv = k[((co * cin + ci) * ks + kh) * ks + kw];
                    const auto [ow0, ow1] = out_range(kw, w, wo);
                    for (std::size_t oh = oh0; oh < oh1; ++oh) {
                        const double* row = in + (oh * stride + kh - pad) * w;
                        double* orow = o + oh * wo;
                        for (std::size_t ow = ow0; ow < ow1; ++ow) orow[ow] += kv * row[ow * stride + kw - pad];
                    }
                }
            }
        }
    }

    return make_node(std::move(out), {input, kernels, bias}, [=](Node& self) {
        const Tensor& g = self.grad;
        const Tensor& xv = input->value;
        const Tensor& kv = kernels->value;
        const bool need_x = input->requires_grad;
        const bool need_k = kernels->requires_grad;
        for (std::size_t co = 0; co < cout; ++co) {
            const double* go = &g[co * ho * wo];
            if (bias && bias->requires_grad) {
                double acc = 0.0;
                for (std::size_t t = 0; t < ho * wo; ++t) acc += go[t];
                bias->grad[co] += acc;
            }
            for (std::size_t ci = 0; ci < cin; ++ci) {
                const double* in = &xv[ci * h * w];
                double* gin = need_x ? &input->grad[ci * h * w] : nullptr;
                for (std::size_t kh = 0; kh < ks; ++kh) {
                    const auto [oh0, oh1] = out_range(kh, h, ho);
                    for (std::size_t kw = 0; kw < ks; ++kw) {
                        const std::size_t kidx = ((co * cin + ci) * ks + kh) * ks + kw;
                        const double kval = kv[kidx];
                        const auto [ow0, ow1] = out_range(kw, w, wo);
                        double gk = 0.0;
                        for (std::size_t oh = oh0; oh < oh1; ++oh) {
                            const std::size_t roff = (oh * stride + kh - pad) * w;
                            const double* grow = go + oh * wo;
                            for (std::size_t ow = ow0; ow < ow1; ++ow) {
                                const std::size_t iidx = roff + ow * stride + kw - pad;
                                gk += grow[ow] * in[iidx];
                                if (gin) gin[iidx] += kval * grow[ow];
                            }
                        }
                        if (need_k) kernels->grad[kidx] += gk;
                    }
                }
            }
        }
    });
}

Var linear(const Var& input, const Var& weight, const Var& bias) {
    const Tensor& x = input->value;
    const Tensor& wt = weight->value;
    if (x.rank() != 1 || wt.rank() != 2 || wt.dim(1) != x.dim(0)) {
        throw ShapeError("linear: weight " + shape_str(wt.shape()) + " vs input " + shape_str(x.shape()));
    }
    const std::size_t m = wt.dim(0), n = wt.dim(1);
    if (bias && (bias->value.rank() != 1 || bias->value.dim(0) != m)) {
        throw ShapeError("linear: bias " + shape_str(bias->value.shape()) + " vs " + std::to_string(m) + " outputs");
    }
    Tensor out({m});
    for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += wt[i * n + j] * x[j];
        out[i] = acc + (bias ? bias->value[i] : 0.0);
    }
    return make_node(std::move(out), {input, weight, bias}, [=](Node& self) {
        const Tensor& g = self.grad;
        for (std::size_t i = 0; i < m; ++i) {
            const double gi = g[i];
            if (bias) accumulate(bias, i, gi);
            if (weight->requires_grad)
                for (std::size_t j = 0; j < n; ++j) weight->grad[i * n + j] += gi * input->value[j];
            if (input->requires_grad)
                for (std::size_t j = 0; j < n; ++j) input->grad[j] += gi * weight->value[i * n + j];
        }
    });
}

Var relu(const Var& x) {
    Tensor out(x->value.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x->value[i] > 0.0 ? x->value[i] : 0.0;
    return make_node(std::move(out), {x}, [x](Node& self) {
        for (std::size_t i = 0; i < self.grad.numel(); ++i)
            if (x->value[i] > 0.0) x->grad[i] += self.grad[i];
    });
}

double stable_sigmoid(double v) noexcept {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
}

Var sigmoid(const Var& x) {
    Tensor out(x->value.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = stable_sigmoid(x->value[i]);
    return make_node(std::move(out), {x}, [x](Node& self) {
        for (std::size_t i = 0; i < self.grad.numel(); ++i) {
            const double s = self.value[i];
            x->grad[i] += self.grad[i] * s * (1.0 - s);
        }
    });
}

Var global_avg_pool(const Var& f) {
    const Tensor& v = f->value;
    if (v.rank() != 3) throw ShapeError("global_avg_pool: expected C x H x W, got " + shape_str(v.shape()));
    const std::size_t c = v.dim(0), plane = v.dim(1) * v.dim(2);
    const double inv = 1.0 / static_cast<double>(plane);
    Tensor out({c});
    for (std::size_t i = 0; i < c; ++i) {
        double acc = 0.0;
        for (std::size_t k = 0; k < plane; ++k) acc += v[i * plane + k];
        out[i] = acc * inv;
    }
    return make_node(std::move(out), {f}, [=](Node& self) {
        for (std::size_t i = 0; i < c; ++i) {
            const double g = self.grad[i] * inv;
            for (std::size_t k = 0; k < plane; ++k) f->grad[i * plane + k] += g;
        }
    });
}

Var softmax_cross_entropy(const Var& logits, std::size_t label) {
    const Tensor& z = logits->value;
    if (z.rank() != 1) throw ShapeError("softmax_cross_entropy: logits must be a vector, got " + shape_str(z.shape()));
    if (label >= z.dim(0)) {
        throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(label) + " outside [0, " +
                                std::to_string(z.dim(0)) + ")");
    }
    const double mx = *std::max_element(z.data().begin(), z.data().end());
    double se = 0.0;
    for (double v : z.data()) se += std::exp(v - mx);
    const double lse = mx + std::log(se);
    Tensor out({1}, lse - z[label]);
    return make_node(std::move(out), {logits}, [=](Node& self) {
        if (!logits->requires_grad) return;
        const double g = self.grad[0];
        for (std::size_t i = 0; i < logits->value.numel(); ++i) {
            const double p = std::exp(logits->value[i] - lse);
            logits->grad[i] += g * (p - (i == label ? 1.0 : 0.0));
        }
    });
}

Var channel_scale(const Var& f, const Var& p) {
    Tensor out = broadcast_mul_channels(f->value, p->value);
    const std::size_t c = f->value.dim(0);
    const std::size_t plane = f->value.numel() / c;
    return make_node(std::move(out), {f, p}, [=](Node& self) {
        for (std::size_t i = 0; i < c; ++i) {
            const double pi = p->value[i];
            double gp = 0.0;
            for (std::size_t k = 0; k < plane; ++k) {
                const double g = self.grad[i * plane + k];
                gp += g * f->value[i * plane + k];
                if (f->requires_grad) f->grad[i * plane + k] += g * pi;
            }
            accumulate(p, i, gp);
        }
    });
}

Var sum(const Var& x) {
    double s = 0.0;
    for (double v : x->value.data()) s += v;
    return make_node(Tensor({1}, s), {x}, [x](Node& self) {
        for (std::size_t i = 0; i < x->value.numel(); ++i) x->grad[i] += self.grad[0];
    });
}

Var mul(const Var& a, const Var& b) {
    if (a->value.shape() != b->value.shape()) {
        throw ShapeError("mul: " + shape_str(a->value.shape()) + " vs " + shape_str(b->value.shape()));
    }
    Tensor out(a->value.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] * b->value[i];
    return make_node(std::move(out), {a, b}, [a, b](Node& self) {
        for (std::size_t i = 0; i < self.grad.numel(); ++i) {
            accumulate(a, i, self.grad[i] * b->value[i]);
            accumulate(b, i, self.grad[i] * a->value[i]);
        }
    });
}

void sgd_step(std::span<Tensor> params, std::span<const Tensor> grads, OptimizerState& state) {
    if (params.size() != grads.size()) throw std::invalid_argument("sgd_step: params/grads count mismatch");
    if (state.momentum_buffers.empty()) {
        for (const auto& p : params) state.momentum_buffers.push_back(Tensor::zeros_like(p));
    }
    if (state.momentum_buffers.size() != params.size()) {
        throw std::invalid_argument("sgd_step: optimizer state tracks a different parameter set");
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& p = params[k];
        const Tensor& g = grads[k];
        Tensor& buf = state.momentum_buffers[k];
        if (g.shape() != p.shape() || buf.shape() != p.shape()) {
            throw ShapeError("sgd_step: param " + shape_str(p.shape()) + " grad " + shape_str(g.shape()));
        }
        for (std::size_t i = 0; i < p.numel(); ++i) {
            const double gi = g[i] + state.weight_decay * p[i];
            buf[i] = state.momentum * buf[i] + gi;
            const double update = state.nesterov ? gi + state.momentum * buf[i] : buf[i];
            p[i] -= state.lr * update;
        }
    }
}

}  // namespace csa::ad
