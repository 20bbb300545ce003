#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "csa/attention.hpp"
#include "csa/autodiff.hpp"
#include "csa/checkpoint.hpp"

namespace csa {

enum class Variant { baseline, se, csa };

std::string to_string(Variant v);
/// Throws std::invalid_argument for anything but baseline | se | csa.
Variant parse_variant(const std::string& s);

struct ModelSpec {
    Variant variant = Variant::csa;
    std::vector<std::size_t> stage_channels{16, 32, 64};
    std::size_t blocks_per_stage = 2;
    std::size_t reduction = kDefaultReduction;
    std::size_t num_classes = 10;
    std::size_t in_channels = 1;
    std::uint64_t seed = 0;
    bool stop_grad_weights = false;
    /// Initial output bias of each gate MLP. sigmoid(3) ~ 0.95 keeps the
    /// untrained gates close to identity so the stacked sigmoids do not
    /// shrink the signal reaching the classifier.
    double gate_bias_init = 3.0;
    /// Start every attention gate at p = 0.5 by zeroing its MLP.
    bool zero_init_attention = false;

    void validate() const;
};

struct ConvLayer {
    Tensor weight;  // C_out x C_in x 3 x 3
    Tensor bias;    // C_out
    std::size_t stride = 1;
};

using AttentionSlot = std::variant<std::monostate, CsaBlock, SeBlock>;

/// Per-stage record of the feature map entering the attention gate.
struct StageTrace {
    AttentionTrace attention;  // spatial statistics always, p only for gated variants
    bool has_p = false;
};

struct ForwardResult {
    ad::Var logits;
    std::vector<StageTrace> stages;  // empty unless traces were requested
};

/// Stages of 3x3 conv + relu blocks; the first block of every stage after
/// the first downsamples with stride 2. The gate (if any) rescales the
/// output of each stage's last block. Global average pool + linear head.
class Model {
public:
    explicit Model(ModelSpec spec);

    const ModelSpec& spec() const noexcept { return spec_; }

    std::vector<std::string> parameter_names() const;
    std::vector<Tensor*> parameters();
    std::vector<const Tensor*> parameters() const;

    std::size_t param_count() const;
    std::size_t attention_param_count() const;
    std::size_t backbone_param_count() const { return param_count() - attention_param_count(); }
    std::size_t attention_block_count() const;
    const std::vector<AttentionSlot>& attention() const noexcept { return attention_; }

    /// Leaf nodes for every parameter, in parameters() order.
    std::vector<ad::Var> bind(bool requires_grad) const;

    ForwardResult forward(const Tensor& image, std::span<const ad::Var> bound, bool collect_traces = false) const;
    ForwardResult forward(const Tensor& image, bool collect_traces = false) const;

    Checkpoint to_checkpoint() const;
    static Model from_checkpoint(const Checkpoint& ckpt);

private:
    ModelSpec spec_;
    std::vector<std::vector<ConvLayer>> stages_;
    std::vector<AttentionSlot> attention_;
    Tensor fc_weight_;  // classes x C_last
    Tensor fc_bias_;
};

}  // namespace csa
