#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "csa/analysis.hpp"
#include "csa/run_config.hpp"
#include "csa/train.hpp"

namespace csa {

/// Writes `<out>/config.txt`, creating `out` if needed.
void write_config_echo(const RunConfig& cfg, const std::filesystem::path& out);

struct TrainOutcome {
    RunReport report;
    std::size_t param_count = 0;
    std::size_t attention_params = 0;
};

/// Trains one model and writes metrics.json (timing-free), run_report.json,
/// ckpt and config.txt into `out`.
TrainOutcome run_train(const RunConfig& cfg, const std::filesystem::path& out);

/// Evaluates a checkpoint on both splits; writes eval.json and config.txt.
nlohmann::json run_eval(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                        const std::filesystem::path& out);

/// Descriptor analysis on the test split of `cfg`'s dataset, using the
/// checkpoint if given and a freshly initialised model otherwise. Writes
/// descriptors_stage<k>.csv, analysis.json and config.txt.
std::vector<StageDescriptors> run_analyze(const RunConfig& cfg,
                                          const std::optional<std::filesystem::path>& checkpoint,
                                          const std::filesystem::path& out);

struct VariantRow {
    Variant variant = Variant::baseline;
    RunReport report;
    std::size_t param_count = 0;
    std::size_t attention_params = 0;
};

struct Comparison {
    std::vector<VariantRow> rows;  // baseline, se, csa
    Variant winner = Variant::baseline;
    double nearest_centroid_error = 0.0;
    /// Mean |q| of the trained CSA model, class-averaged, per stage.
    std::vector<double> csa_stage_mean_abs_q;
    bool last_stage_closer_to_zero = false;  // soft check, never fails a run
    double total_seconds = 0.0;
};

/// Trains baseline, se and csa from the same seed. Each variant's outputs go
/// to `<out>/<variant>/`; the table is written to compare.txt and the
/// timing-free summary to compare.json.
Comparison compare_variants(const RunConfig& cfg, const std::filesystem::path& out);

nlohmann::json to_json(const Comparison& cmp);
std::string format_comparison(const Comparison& cmp);

}  // namespace csa
