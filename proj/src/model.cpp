#include "csa/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace csa {

namespace {

// Attention gates draw from their own stream so that backbone weights are
// identical across variants for a given seed.
constexpr std::uint64_t kAttentionStream = 0x9E3779B97F4A7C15ull;

void init_gate(GateBlock& block, std::mt19937_64& rng, const ModelSpec& spec) {
    block.init_uniform(rng);
    auto b = block.params().up_bias.data();
    std::fill(b.begin(), b.end(), spec.gate_bias_init);
    if (spec.zero_init_attention) block.zero_init();
}

std::string join(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ',';
        s += std::to_string(v[i]);
    }
    return s;
}

std::vector<std::size_t> split_sizes(const std::string& s) {
    std::vector<std::size_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stoull(item));
    return out;
}

const std::string& meta_at(const Checkpoint& ckpt, const std::string& key) {
    auto it = ckpt.meta.find(key);
    if (it == ckpt.meta.end()) throw CheckpointError("checkpoint is missing meta '" + key + "'");
    return it->second;
}

}  // namespace

std::string to_string(Variant v) {
    switch (v) {
        case Variant::baseline: return "baseline";
        case Variant::se: return "se";
        case Variant::csa: return "csa";
    }
    return "?";
}

Variant parse_variant(const std::string& s) {
    if (s == "baseline") return Variant::baseline;
    if (s == "se") return Variant::se;
    if (s == "csa") return Variant::csa;
    throw std::invalid_argument("unknown variant '" + s + "' (expected baseline | se | csa)");
}

void ModelSpec::validate() const {
    if (stage_channels.empty()) throw std::invalid_argument("stage_channels must not be empty");
    for (auto c : stage_channels)
        if (c == 0) throw std::invalid_argument("stage_channels entries must be positive");
    if (blocks_per_stage == 0) throw std::invalid_argument("blocks_per_stage must be positive");
    if (reduction == 0) throw std::invalid_argument("reduction must be positive");
    if (num_classes < 2) throw std::invalid_argument("num_classes must be at least 2");
    if (in_channels == 0) throw std::invalid_argument("in_channels must be positive");
    if (!std::isfinite(gate_bias_init)) throw std::invalid_argument("gate_bias_init must be finite");
}

Model::Model(ModelSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    std::mt19937_64 rng(spec_.seed);
    std::mt19937_64 attn_rng(spec_.seed ^ kAttentionStream);

    std::size_t cin = spec_.in_channels;
    for (std::size_t s = 0; s < spec_.stage_channels.size(); ++s) {
        const std::size_t c = spec_.stage_channels[s];
        auto& blocks = stages_.emplace_back();
        for (std::size_t b = 0; b < spec_.blocks_per_stage; ++b) {
            ConvLayer layer;
            layer.weight = Tensor({c, cin, 3, 3});
            layer.bias = Tensor({c});
            layer.stride = (s > 0 && b == 0) ? 2 : 1;
            // He-uniform for relu stacks.
            const double bound = std::sqrt(6.0 / static_cast<double>(cin * 9));
            std::uniform_real_distribution<double> dist(-bound, bound);
            for (double& v : layer.weight.data()) v = dist(rng);
            blocks.push_back(std::move(layer));
            cin = c;
        }

        switch (spec_.variant) {
            case Variant::baseline: attention_.emplace_back(std::monostate{}); break;
            case Variant::se: {
                SeBlock block(c, spec_.reduction);
                init_gate(block, attn_rng, spec_);
                attention_.emplace_back(std::move(block));
                break;
            }
            case Variant::csa: {
                CsaOptions opts;
                opts.stop_grad_weights = spec_.stop_grad_weights;
                CsaBlock block(c, spec_.reduction, opts);
                init_gate(block, attn_rng, spec_);
                attention_.emplace_back(std::move(block));
                break;
            }
        }
    }

    fc_weight_ = Tensor({spec_.num_classes, cin});
    fc_bias_ = Tensor({spec_.num_classes});
    const double bound = 1.0 / std::sqrt(static_cast<double>(cin));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : fc_weight_.data()) v = dist(rng);
}

std::vector<std::string> Model::parameter_names() const {
    std::vector<std::string> names;
    for (std::size_t s = 0; s < stages_.size(); ++s) {
        const std::string stage = "stage" + std::to_string(s);
        for (std::size_t b = 0; b < stages_[s].size(); ++b) {
            const std::string conv = stage + ".conv" + std::to_string(b);
            names.push_back(conv + ".weight");
            names.push_back(conv + ".bias");
        }
        if (!std::holds_alternative<std::monostate>(attention_[s])) {
            for (const char* part : {"down.weight", "down.bias", "up.weight", "up.bias"})
                names.push_back(stage + ".attention." + part);
        }
    }
    names.push_back("classifier.weight");
    names.push_back("classifier.bias");
    return names;
}

namespace {

GateBlock* gate_of(AttentionSlot& slot) {
    if (auto* c = std::get_if<CsaBlock>(&slot)) return c;
    if (auto* s = std::get_if<SeBlock>(&slot)) return s;
    return nullptr;
}

const GateBlock* gate_of(const AttentionSlot& slot) {
    if (auto* c = std::get_if<CsaBlock>(&slot)) return c;
    if (auto* s = std::get_if<SeBlock>(&slot)) return s;
    return nullptr;
}

}  // namespace

std::vector<Tensor*> Model::parameters() {
    std::vector<Tensor*> out;
    for (std::size_t s = 0; s < stages_.size(); ++s) {
        for (auto& layer : stages_[s]) {
            out.push_back(&layer.weight);
            out.push_back(&layer.bias);
        }
        if (auto* g = gate_of(attention_[s])) {
            auto& p = g->params();
            out.insert(out.end(), {&p.down_weight, &p.down_bias, &p.up_weight, &p.up_bias});
        }
    }
    out.push_back(&fc_weight_);
    out.push_back(&fc_bias_);
    return out;
}

std::vector<const Tensor*> Model::parameters() const {
    auto mut = const_cast<Model*>(this)->parameters();
    return {mut.begin(), mut.end()};
}

std::size_t Model::param_count() const {
    std::size_t n = 0;
    for (const Tensor* t : parameters()) n += t->numel();
    return n;
}

std::size_t Model::attention_param_count() const {
    std::size_t n = 0;
    for (const auto& slot : attention_)
        if (const auto* g = gate_of(slot)) n += g->param_count();
    return n;
}

std::size_t Model::attention_block_count() const {
    std::size_t n = 0;
    for (const auto& slot : attention_)
        if (gate_of(slot)) ++n;
    return n;
}

std::vector<ad::Var> Model::bind(bool requires_grad) const {
    std::vector<ad::Var> vars;
    for (const Tensor* t : parameters()) vars.push_back(requires_grad ? ad::parameter(*t) : ad::constant(*t));
    return vars;
}

ForwardResult Model::forward(const Tensor& image, bool collect_traces) const {
    const auto vars = bind(false);
    return forward(image, vars, collect_traces);
}

ForwardResult Model::forward(const Tensor& image, std::span<const ad::Var> bound, bool collect_traces) const {
    if (image.rank() != 3 || image.dim(0) != spec_.in_channels) {
        throw ShapeError("model expects " + std::to_string(spec_.in_channels) + " x H x W input, got " +
                         shape_str(image.shape()));
    }
    if (bound.size() != parameters().size()) throw std::invalid_argument("bound parameter count mismatch");

    ForwardResult result;
    std::size_t cursor = 0;
    auto next = [&]() -> const ad::Var& { return bound[cursor++]; };

    ad::Var h = ad::constant(image);
    for (std::size_t s = 0; s < stages_.size(); ++s) {
        for (const auto& layer : stages_[s]) {
            const auto& w = next();
            const auto& b = next();
            h = ad::relu(ad::conv2d(h, w, b, layer.stride, 1));
        }
        const AttentionSlot& slot = attention_[s];
        const GateBlock* gate = gate_of(slot);
        if (!gate) {
            if (collect_traces) result.stages.push_back({spatial_trace(h->value), false});
            continue;
        }
        GateVars gv{next(), next(), next(), next()};
        AttentionOutput att;
        if (const auto* csa_block = std::get_if<CsaBlock>(&slot)) {
            att = csa_block->forward(h, gv);
        } else {
            att = std::get<SeBlock>(slot).forward(h, gv);
        }
        if (collect_traces) {
            StageTrace st;
            if (spec_.variant == Variant::csa) {
                st.attention = std::move(att.trace);
            } else {
                st.attention = spatial_trace(h->value);
                st.attention.p = att.p->value;
            }
            st.has_p = true;
            result.stages.push_back(std::move(st));
        }
        h = recalibrate(h, att.p);
    }
    auto pooled = ad::global_avg_pool(h);
    const auto& fw = next();
    const auto& fb = next();
    result.logits = ad::linear(pooled, fw, fb);
    return result;
}

Checkpoint Model::to_checkpoint() const {
    Checkpoint ckpt;
    ckpt.meta["variant"] = to_string(spec_.variant);
    ckpt.meta["stage_channels"] = join(spec_.stage_channels);
    ckpt.meta["blocks_per_stage"] = std::to_string(spec_.blocks_per_stage);
    ckpt.meta["reduction"] = std::to_string(spec_.reduction);
    ckpt.meta["num_classes"] = std::to_string(spec_.num_classes);
    ckpt.meta["in_channels"] = std::to_string(spec_.in_channels);
    ckpt.meta["seed"] = std::to_string(spec_.seed);
    ckpt.meta["stop_grad_weights"] = spec_.stop_grad_weights ? "true" : "false";
    ckpt.meta["zero_init_attention"] = spec_.zero_init_attention ? "true" : "false";
    const auto names = parameter_names();
    const auto params = parameters();
    for (std::size_t i = 0; i < names.size(); ++i) ckpt.tensors.emplace_back(names[i], *params[i]);
    return ckpt;
}

Model Model::from_checkpoint(const Checkpoint& ckpt) {
    ModelSpec spec;
    try {
        spec.variant = parse_variant(meta_at(ckpt, "variant"));
        spec.stage_channels = split_sizes(meta_at(ckpt, "stage_channels"));
        spec.blocks_per_stage = std::stoull(meta_at(ckpt, "blocks_per_stage"));
        spec.reduction = std::stoull(meta_at(ckpt, "reduction"));
        spec.num_classes = std::stoull(meta_at(ckpt, "num_classes"));
        spec.in_channels = std::stoull(meta_at(ckpt, "in_channels"));
        spec.seed = std::stoull(meta_at(ckpt, "seed"));
        spec.stop_grad_weights = meta_at(ckpt, "stop_grad_weights") == "true";
        spec.zero_init_attention = meta_at(ckpt, "zero_init_attention") == "true";
    } catch (const std::logic_error& e) {
        throw CheckpointError(std::string("invalid model metadata: ") + e.what());
    }
    Model model(spec);
    const auto names = model.parameter_names();
    auto params = model.parameters();
    for (std::size_t i = 0; i < names.size(); ++i) {
        const Tensor& t = ckpt.tensor(names[i]);
        if (t.shape() != params[i]->shape()) {
            throw CheckpointError("tensor " + names[i] + " has shape " + shape_str(t.shape()) + ", model expects " +
                                  shape_str(params[i]->shape()));
        }
        *params[i] = t;
    }
    return model;
}

}  // namespace csa
