#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "csa/tensor.hpp"

namespace csa::ad {

struct Node;
using Var = std::shared_ptr<Node>;

/// A value in the computation graph. `grad` always has the shape of `value`.
struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<Var> parents;
    /// Reads this node's grad and accumulates into the parents' grads.
    std::function<void(Node&)> backward_fn;

    bool is_leaf() const noexcept { return parents.empty(); }
};

Var constant(Tensor value);
Var parameter(Tensor value);

/// Builds an interior node; requires_grad is inherited from the parents.
Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn);

/// Reverse sweep from a single-element root. Interior grads are reset first;
/// leaf grads accumulate across calls until zero_grad.
void backward(const Var& root);

void zero_grad(std::span<const Var> leaves);

// Layers ------------------------------------------------------------------

/// Direct cross-correlation. input C_in x H x W, kernels C_out x C_in x k x k,
/// bias C_out (may be null).
Var conv2d(const Var& input, const Var& kernels, const Var& bias, std::size_t stride, std::size_t pad);

/// weight m x n, input n, bias m (may be null).
Var linear(const Var& input, const Var& weight, const Var& bias);

/// max(0, x); the subgradient at 0 is 0.
Var relu(const Var& x);
Var sigmoid(const Var& x);

/// C x H x W -> C
Var global_avg_pool(const Var& f);

/// Scalar loss: logsumexp(logits) - logits[label].
Var softmax_cross_entropy(const Var& logits, std::size_t label);

/// out[c, ...] = p[c] * f[c, ...]
Var channel_scale(const Var& f, const Var& p);

Var sum(const Var& x);
Var mul(const Var& a, const Var& b);

double stable_sigmoid(double x) noexcept;

// Optimizer ---------------------------------------------------------------

struct OptimizerState {
    double lr = 0.05;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    bool nesterov = true;
    std::vector<Tensor> momentum_buffers;  // created on first step
};

/// SGD with momentum and L2 decay:
///   g = grad + wd * param;  buf = m * buf + g;
///   update = nesterov ? g + m * buf : buf;  param -= lr * update
void sgd_step(std::span<Tensor> params, std::span<const Tensor> grads, OptimizerState& state);

// Gradient checking --------------------------------------------------------

struct GradcheckOptions {
    double h = 1e-5;
    double tol = 1e-6;
    /// Coordinates whose |grad| is below floor_ratio * max|grad| are compared
    /// against that floor instead of their own magnitude.
    double floor_ratio = 1e-2;
    /// Forward and backward one-sided slopes differing by more than this
    /// (relative to max(1, |central|)) mark a kink; the coordinate is excluded.
    double kink_tol = 1e-3;
};

struct GradcheckReport {
    double max_rel_error = 0.0;
    std::size_t worst_input = 0;
    std::size_t worst_index = 0;
    std::size_t checked = 0;
    /// (input, flat index) pairs skipped because the function is not smooth there.
    std::vector<std::pair<std::size_t, std::size_t>> excluded;
    bool passed = false;
};

using GraphBuilder = std::function<Var(std::span<const Var>)>;

/// Compares reverse-mode gradients of a scalar graph against central
/// differences at `point`. Throws std::domain_error when a probe is non-finite.
GradcheckReport finite_diff_gradcheck(const GraphBuilder& fn, const std::vector<Tensor>& point,
                                      const GradcheckOptions& opts = {});

}  // namespace csa::ad
