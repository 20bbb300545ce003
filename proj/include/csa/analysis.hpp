#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "csa/dataset.hpp"
#include "csa/model.hpp"

namespace csa {

inline constexpr double kDefaultEmaFactor = 0.3;

struct DescriptorRow {
    std::size_t rank = 0;     // position after sorting by ascending q
    std::size_t channel = 0;  // original channel index
    double x = 0.0, z = 0.0, local = 0.0, q = 0.0, p = 0.0;
    double z_ema = 0.0, q_ema = 0.0, p_ema = 0.0;
};

struct StageDescriptors {
    std::size_t stage = 0;  // 1-based
    bool has_p = false;
    std::vector<DescriptorRow> rows;
    std::size_t samples = 0;
    double mean_abs_q = 0.0;
    // Worst per-sample deviation of q from zero mean / unit population std
    // (samples on the sigma floor are counted separately).
    double max_sample_q_mean = 0.0;
    double max_sample_q_std_dev = 0.0;
    std::size_t floor_hits = 0;
};

/// Class-averaged (then averaged over classes) channel statistics at each
/// stage's gated feature map, rows sorted by ascending q. The *_ema columns
/// smooth the sorted curves with ema[k] = f * v[k] + (1 - f) * ema[k-1].
std::vector<StageDescriptors> analyze_descriptors(const Model& model, const Dataset& data,
                                                  double ema_factor = kDefaultEmaFactor, std::size_t threads = 1);

std::string descriptors_csv(const StageDescriptors& stage);
void write_descriptor_csvs(const std::vector<StageDescriptors>& stages, const std::filesystem::path& dir);

}  // namespace csa
