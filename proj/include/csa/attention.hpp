#pragma once

#include <cstddef>
#include <random>

#include "csa/autodiff.hpp"
#include "csa/spatial_stats.hpp"
#include "csa/tensor.hpp"

namespace csa {

inline constexpr std::size_t kDefaultReduction = 16;
inline constexpr std::size_t kMinHiddenWidth = 4;

/// max(ceil(C / r), 4)
std::size_t hidden_width(std::size_t channels, std::size_t reduction);

/// Bottleneck gate C -> h -> C shared by the CSA and SE blocks.
struct GateParams {
    Tensor down_weight;  // h x C
    Tensor down_bias;    // h
    Tensor up_weight;    // C x h
    Tensor up_bias;      // C
};

struct GateVars {
    ad::Var down_weight, down_bias, up_weight, up_bias;
};

/// Intermediates of one attention forward pass, per sample.
struct AttentionTrace {
    Tensor x;      // channel attribute (global average)
    Tensor z;      // standardized attribute
    Tensor local;  // local Moran's I
    Tensor q;      // re-normalised descriptor
    Tensor w;      // unitary spatial weights
    Tensor p;      // attention map
    double global = 0.0;
    bool weights_degenerate = false;
    bool z_floor_hit = false;
    bool q_floor_hit = false;
};

struct CsaOptions {
    double eps_sigma = spatial::kDefaultEpsSigma;
    double eps_dist = spatial::kDefaultEpsDist;
    /// Treat w as a constant during backpropagation.
    bool stop_grad_weights = false;
};

// Differentiable building blocks ------------------------------------------

/// Eq.-3 style channel attribute: per-channel global average.
ad::Var channel_attribute(const ad::Var& f);
Tensor channel_attribute(const Tensor& f);

struct WeightsVar {
    ad::Var w;
    spatial::SpatialWeights info;
};

/// Unitary spatial weights of a feature map as a graph node. Gradients flow
/// back into the feature map through the distances unless `stop_grad` is set
/// or the weights took the degenerate fallback.
WeightsVar spatial_weights(const ad::Var& f, double eps_dist, bool stop_grad);

/// Standardization as a graph node; zero output and zero gradient on the sigma floor.
ad::Var standardize(const ad::Var& x, double eps_sigma, bool* floor_hit = nullptr);

ad::Var local_moran(const ad::Var& z, const ad::Var& w);

/// Channel-wise rescaling of a feature map by its attention map.
ad::Var recalibrate(const ad::Var& f, const ad::Var& p);
Tensor recalibrate(const Tensor& f, const Tensor& p);

// Blocks ------------------------------------------------------------------

class GateBlock {
public:
    GateBlock(std::size_t channels, std::size_t reduction);

    std::size_t channels() const noexcept { return channels_; }
    std::size_t reduction() const noexcept { return reduction_; }
    std::size_t hidden() const noexcept { return hidden_; }
    std::size_t param_count() const noexcept;

    GateParams& params() noexcept { return params_; }
    const GateParams& params() const noexcept { return params_; }

    /// Uniform in +-1/sqrt(fan_in) for weights and biases.
    void init_uniform(std::mt19937_64& rng);
    void zero_init();

    GateVars bind(bool requires_grad) const;

protected:
    ad::Var excite(const ad::Var& descriptor, const GateVars& vars) const;
    void check_channels(const Tensor& f) const;

    std::size_t channels_;
    std::size_t reduction_;
    std::size_t hidden_;
    GateParams params_;
};

struct AttentionOutput {
    ad::Var p;
    AttentionTrace trace;
};

class CsaBlock : public GateBlock {
public:
    CsaBlock(std::size_t channels, std::size_t reduction = kDefaultReduction, CsaOptions options = {});

    const CsaOptions& options() const noexcept { return options_; }
    CsaOptions& options() noexcept { return options_; }

    AttentionOutput forward(const ad::Var& f, const GateVars& vars) const;
    AttentionTrace forward(const Tensor& f) const;

    /// The chain from x to p with a caller-supplied weight matrix.
    AttentionOutput forward_with_weights(const ad::Var& f, const ad::Var& w, const GateVars& vars) const;

private:
    CsaOptions options_;
};

/// Squeeze-and-excitation: the same gate fed with the raw global average.
class SeBlock : public GateBlock {
public:
    explicit SeBlock(std::size_t channels, std::size_t reduction = kDefaultReduction);

    AttentionOutput forward(const ad::Var& f, const GateVars& vars) const;
    /// Only x and p of the trace are populated.
    AttentionTrace forward(const Tensor& f) const;
};

std::size_t param_count(const GateBlock& block);

/// Parameter-free part of the CSA chain (x, z, w, I, q) for any feature map.
AttentionTrace spatial_trace(const Tensor& f, const CsaOptions& options = {});

}  // namespace csa
