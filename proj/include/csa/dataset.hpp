#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "csa/tensor.hpp"

namespace csa {

class DatasetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Dataset {
    std::vector<Tensor> images;  // each C x H x W
    std::vector<std::size_t> labels;
    std::size_t num_classes = 0;

    std::size_t size() const noexcept { return labels.size(); }
};

struct DataSplits {
    Dataset train;
    Dataset test;
    std::vector<double> channel_mean;  // computed on train, applied to both
    std::vector<double> channel_std;
};

// IDX container (big-endian): magic 0x00000803 for uint8 images (N x rows x cols),
// 0x00000801 for uint8 labels (N).
inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

struct IdxImages {
    std::size_t count = 0, rows = 0, cols = 0;
    std::vector<std::uint8_t> pixels;
};

/// `limit` > 0 keeps only the first `limit` records.
IdxImages parse_idx_images(std::span<const std::uint8_t> bytes, std::size_t limit = 0);
std::vector<std::size_t> parse_idx_labels(std::span<const std::uint8_t> bytes, std::size_t num_classes,
                                          std::size_t limit = 0);

std::vector<std::uint8_t> encode_idx_images(const IdxImages& images);
std::vector<std::uint8_t> encode_idx_labels(std::span<const std::size_t> labels);

/// Pixels scaled to [0, 1], one channel.
Dataset images_to_dataset(const IdxImages& images, std::span<const std::size_t> labels, std::size_t num_classes);

/// Reads train-images-idx3-ubyte / train-labels-idx1-ubyte / t10k-images-idx3-ubyte /
/// t10k-labels-idx1-ubyte from `dir` and normalises with train statistics.
DataSplits load_idx_dir(const std::filesystem::path& dir, std::size_t limit = 0, std::size_t num_classes = 10);

struct SyntheticConfig {
    std::uint64_t seed = 1;
    std::size_t train_size = 512;
    std::size_t test_size = 256;
    std::size_t num_classes = 4;
    std::size_t image_size = 16;
    double noise = 0.35;
};

/// Oriented-bar task. Class k is a bar at angle k*pi/K through a point
/// jittered up to +-2 px from the centre, with amplitude in [0.6, 1] and
/// additive Gaussian noise. Labels cycle through the classes so every split
/// is balanced. Raw (unnormalised) pixels.
Dataset make_synthetic(std::uint64_t seed, std::size_t n, std::size_t num_classes, std::size_t image_size,
                       double noise);

DataSplits load_synthetic(const SyntheticConfig& cfg);

/// Per-channel mean/std over the train split, applied to train and test.
void normalize(DataSplits& splits);

/// Mean and population std of channel `c` across every image of `data`.
MeanStd channel_stats(const Dataset& data, std::size_t c);

/// Independent sanity classifier: assigns each sample to the class with the
/// nearest (Euclidean) mean training image. Returns the top-1 error on `eval`.
double nearest_centroid_error(const Dataset& train, const Dataset& eval);

}  // namespace csa
