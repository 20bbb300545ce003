#include "csa/train.hpp"

#include "parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace csa {

namespace {

using Clock = std::chrono::steady_clock;

struct SampleOutcome {
    double loss = 0.0;
    bool top1 = false;
    bool top5 = false;
    std::vector<Tensor> grads;
};

std::size_t rank_of_label(const Tensor& logits, std::size_t label) {
    std::size_t rank = 0;
    for (std::size_t j = 0; j < logits.numel(); ++j) {
        if (logits[j] > logits[label] || (logits[j] == logits[label] && j < label)) ++rank;
    }
    return rank;
}

SampleOutcome run_sample(const Model& model, const Tensor& image, std::size_t label, bool with_grad) {
    const auto vars = model.bind(with_grad);
    const auto fwd = model.forward(image, vars);
    const auto loss = ad::softmax_cross_entropy(fwd.logits, label);
    SampleOutcome out;
    out.loss = loss->value[0];
    const std::size_t rank = rank_of_label(fwd.logits->value, label);
    out.top1 = rank == 0;
    out.top5 = rank < 5;
    if (with_grad) {
        ad::backward(loss);
        out.grads.reserve(vars.size());
        for (const auto& v : vars) out.grads.push_back(std::move(v->grad));
    }
    return out;
}

std::vector<std::size_t> shuffled_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed * 0x100000001B3ull + epoch + 1);
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(order[i - 1], order[j]);
    }
    return order;
}

}  // namespace

void TrainConfig::validate() const {
    if (epochs == 0) throw std::invalid_argument("epochs must be positive");
    if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("learning rate must be finite and >= 0");
    if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("momentum must be in [0, 1)");
    if (weight_decay < 0.0) throw std::invalid_argument("weight decay must be >= 0");
    if (!(max_grad_norm >= 0.0)) throw std::invalid_argument("max_grad_norm must be >= 0");
    for (std::size_t i = 0; i < milestones.size(); ++i) {
        if (milestones[i] == 0 || milestones[i] >= epochs)
            throw std::invalid_argument("milestones must lie in [1, epochs)");
        if (i > 0 && milestones[i] <= milestones[i - 1])
            throw std::invalid_argument("milestones must be strictly increasing");
    }
    if (threads == 0) throw std::invalid_argument("threads must be positive");
}

std::vector<std::size_t> scaled_milestones(std::size_t epochs) {
    std::vector<std::size_t> out;
    for (std::size_t m : {10u, 15u}) {
        const std::size_t s = m * epochs / 20;
        if (s >= 1 && s < epochs && (out.empty() || s > out.back())) out.push_back(s);
    }
    return out;
}

double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch) {
    double lr = cfg.lr;
    for (auto m : cfg.milestones)
        if (epoch >= m) lr /= 10.0;
    return lr;
}

Metrics evaluate(const Model& model, const Dataset& data, std::size_t threads) {
    Metrics m;
    m.samples = data.size();
    if (data.size() == 0) return m;
    std::vector<SampleOutcome> outcomes(data.size());
    detail::parallel_for(data.size(), threads,
                 [&](std::size_t i) { outcomes[i] = run_sample(model, data.images[i], data.labels[i], false); });
    std::size_t wrong1 = 0, wrong5 = 0;
    for (const auto& o : outcomes) {
        m.loss += o.loss;
        wrong1 += !o.top1;
        wrong5 += !o.top5;
    }
    const double n = static_cast<double>(data.size());
    m.loss /= n;
    m.top1_error = static_cast<double>(wrong1) / n;
    if (model.spec().num_classes > 5) m.top5_error = static_cast<double>(wrong5) / n;
    return m;
}

RunReport train(Model& model, const DataSplits& data, const TrainConfig& cfg) {
    cfg.validate();
    if (data.train.size() == 0) throw TrainingError("training split is empty");

    RunReport report;
    report.spec = model.spec();
    report.config = cfg;

    ad::OptimizerState opt;
    opt.momentum = cfg.momentum;
    opt.weight_decay = cfg.weight_decay;
    opt.nesterov = cfg.nesterov;

    auto params = model.parameters();
    const auto run_start = Clock::now();
    const std::size_t n = data.train.size();

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto epoch_start = Clock::now();
        opt.lr = lr_at_epoch(cfg, epoch);
        const auto order = shuffled_order(n, cfg.seed, epoch);

        double loss_sum = 0.0;
        std::size_t wrong = 0;
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size, ++batch_index) {
            const std::size_t bsz = std::min(cfg.batch_size, n - start);
            std::vector<SampleOutcome> outcomes(bsz);
            detail::parallel_for(bsz, cfg.threads, [&](std::size_t i) {
                const std::size_t idx = order[start + i];
                outcomes[i] = run_sample(model, data.train.images[idx], data.train.labels[idx], true);
            });

            // Fixed sample order for the reduction keeps results thread-count independent.
            std::vector<Tensor> grads;
            for (const Tensor* p : params) grads.push_back(Tensor::zeros_like(*p));
            double batch_loss = 0.0;
            for (const auto& o : outcomes) {
                batch_loss += o.loss;
                wrong += !o.top1;
                for (std::size_t k = 0; k < grads.size(); ++k)
                    for (std::size_t j = 0; j < grads[k].numel(); ++j) grads[k][j] += o.grads[k][j];
            }
            const double inv = 1.0 / static_cast<double>(bsz);
            batch_loss *= inv;
            if (!std::isfinite(batch_loss)) {
                std::ostringstream msg;
                msg << "non-finite loss at epoch " << epoch << ", batch " << batch_index << ", lr " << opt.lr;
                throw TrainingError(msg.str());
            }
            double sq = 0.0;
            for (auto& g : grads)
                for (double& v : g.data()) {
                    v *= inv;
                    sq += v * v;
                }
            if (cfg.max_grad_norm > 0.0 && std::sqrt(sq) > cfg.max_grad_norm) {
                const double scale = cfg.max_grad_norm / std::sqrt(sq);
                for (auto& g : grads)
                    for (double& v : g.data()) v *= scale;
            }
            loss_sum += batch_loss * static_cast<double>(bsz);

            std::vector<Tensor> values;
            values.reserve(params.size());
            for (Tensor* p : params) values.push_back(std::move(*p));
            ad::sgd_step(values, grads, opt);
            for (std::size_t k = 0; k < params.size(); ++k) *params[k] = std::move(values[k]);
        }

        EpochStats st;
        st.epoch = epoch;
        st.lr = opt.lr;
        st.train_loss = loss_sum / static_cast<double>(n);
        st.train_top1 = static_cast<double>(wrong) / static_cast<double>(n);
        st.test = evaluate(model, data.test, cfg.threads);
        st.seconds = std::chrono::duration<double>(Clock::now() - epoch_start).count();
        report.epochs.push_back(st);
    }

    report.final_train = evaluate(model, data.train, cfg.threads);
    report.final_test = evaluate(model, data.test, cfg.threads);
    report.total_seconds = std::chrono::duration<double>(Clock::now() - run_start).count();
    return report;
}

nlohmann::json to_json(const Metrics& m) {
    nlohmann::json j;
    j["loss"] = m.loss;
    j["top1_error"] = m.top1_error;
    if (m.top5_error) j["top5_error"] = *m.top5_error;
    j["samples"] = m.samples;
    return j;
}

nlohmann::json to_json(const ModelSpec& spec) {
    return {{"variant", to_string(spec.variant)},
            {"stage_channels", spec.stage_channels},
            {"blocks_per_stage", spec.blocks_per_stage},
            {"reduction", spec.reduction},
            {"num_classes", spec.num_classes},
            {"in_channels", spec.in_channels},
            {"seed", spec.seed},
            {"stop_grad_weights", spec.stop_grad_weights},
            {"gate_bias_init", spec.gate_bias_init},
            {"zero_init_attention", spec.zero_init_attention}};
}

nlohmann::json to_json(const TrainConfig& cfg) {
    return {{"epochs", cfg.epochs},       {"batch_size", cfg.batch_size}, {"lr", cfg.lr},
            {"milestones", cfg.milestones}, {"momentum", cfg.momentum},   {"weight_decay", cfg.weight_decay},
            {"nesterov", cfg.nesterov},   {"max_grad_norm", cfg.max_grad_norm}, {"seed", cfg.seed}};
}

nlohmann::json to_json(const RunReport& report, bool include_timing) {
    nlohmann::json j;
    j["model"] = to_json(report.spec);
    j["train_config"] = to_json(report.config);
    auto& epochs = j["epochs"] = nlohmann::json::array();
    for (const auto& e : report.epochs) {
        nlohmann::json ej{{"epoch", e.epoch},
                          {"lr", e.lr},
                          {"train_loss", e.train_loss},
                          {"train_top1_error", e.train_top1},
                          {"test", to_json(e.test)}};
        if (include_timing) ej["seconds"] = e.seconds;
        epochs.push_back(std::move(ej));
    }
    j["final_train"] = to_json(report.final_train);
    j["final_test"] = to_json(report.final_test);
    if (include_timing) j["total_seconds"] = report.total_seconds;
    return j;
}

}  // namespace csa
