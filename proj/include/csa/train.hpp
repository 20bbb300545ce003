#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "csa/dataset.hpp"
#include "csa/model.hpp"

namespace csa {

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    std::size_t epochs = 20;
    std::size_t batch_size = 64;
    double lr = 0.05;
    /// Epochs at which the learning rate is divided by 10.
    std::vector<std::size_t> milestones{10, 15};
    double momentum = 0.9;
    double weight_decay = 1e-4;
    bool nesterov = true;
    /// Rescales the mini-batch gradient to this global L2 norm when it is
    /// larger; 0 disables clipping.
    double max_grad_norm = 1.0;
    std::uint64_t seed = 0;
    /// Worker threads for per-sample forward/backward. Results do not depend on it.
    std::size_t threads = 1;

    void validate() const;
};

/// The default 10/15-of-20 milestones rescaled to an `epochs` budget.
std::vector<std::size_t> scaled_milestones(std::size_t epochs);

/// Learning rate in effect during `epoch` (0-based).
double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch);

struct Metrics {
    double loss = 0.0;
    double top1_error = 0.0;
    std::optional<double> top5_error;  // only when num_classes > 5
    std::size_t samples = 0;
};

struct EpochStats {
    std::size_t epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;   // mean minibatch loss over the epoch
    double train_top1 = 0.0;   // running error while training
    Metrics test;
    double seconds = 0.0;
};

struct RunReport {
    ModelSpec spec;
    TrainConfig config;
    std::vector<EpochStats> epochs;
    Metrics final_train;
    Metrics final_test;
    double total_seconds = 0.0;
};

Metrics evaluate(const Model& model, const Dataset& data, std::size_t threads = 1);

/// Mini-batch SGD with fixed per-epoch shuffles. Throws TrainingError on a
/// non-finite loss.
RunReport train(Model& model, const DataSplits& data, const TrainConfig& cfg);

nlohmann::json to_json(const Metrics& m);
nlohmann::json to_json(const ModelSpec& spec);
nlohmann::json to_json(const TrainConfig& cfg);
/// Without timing the document is a pure function of (spec, config, data).
nlohmann::json to_json(const RunReport& report, bool include_timing);

}  // namespace csa
