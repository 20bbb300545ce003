#include "csa/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>

namespace csa {

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset) {
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
           (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

std::string hex32(std::uint32_t v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08X", v);
    return buf;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DatasetError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void apply_normalization(Dataset& data, const std::vector<double>& mean, const std::vector<double>& std) {
    for (auto& img : data.images) {
        const std::size_t plane = img.numel() / img.dim(0);
        for (std::size_t c = 0; c < img.dim(0); ++c)
            for (std::size_t k = 0; k < plane; ++k) img[c * plane + k] = (img[c * plane + k] - mean[c]) / std[c];
    }
}

}  // namespace

IdxImages parse_idx_images(std::span<const std::uint8_t> bytes, std::size_t limit) {
    if (bytes.size() < 16) throw DatasetError("IDX image file truncated: header needs 16 bytes");
    const auto magic = read_be32(bytes, 0);
    if (magic != kIdxImageMagic) {
        throw DatasetError("IDX image magic mismatch: got " + hex32(magic) + ", expected " + hex32(kIdxImageMagic));
    }
    IdxImages out;
    out.count = read_be32(bytes, 4);
    out.rows = read_be32(bytes, 8);
    out.cols = read_be32(bytes, 12);
    if (out.rows == 0 || out.cols == 0) throw DatasetError("IDX image file declares zero-sized images");
    const std::size_t plane = out.rows * out.cols;
    if (bytes.size() - 16 < out.count * plane) {
        throw DatasetError("IDX image file truncated: declares " + std::to_string(out.count) + " images of " +
                           std::to_string(plane) + " bytes, has " + std::to_string(bytes.size() - 16));
    }
    if (limit > 0) out.count = std::min(out.count, limit);
    out.pixels.assign(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(out.count * plane));
    return out;
}

std::vector<std::size_t> parse_idx_labels(std::span<const std::uint8_t> bytes, std::size_t num_classes,
                                          std::size_t limit) {
    if (bytes.size() < 8) throw DatasetError("IDX label file truncated: header needs 8 bytes");
    const auto magic = read_be32(bytes, 0);
    if (magic != kIdxLabelMagic) {
        throw DatasetError("IDX label magic mismatch: got " + hex32(magic) + ", expected " + hex32(kIdxLabelMagic));
    }
    std::size_t count = read_be32(bytes, 4);
    if (bytes.size() - 8 < count) {
        throw DatasetError("IDX label file truncated: declares " + std::to_string(count) + " labels, has " +
                           std::to_string(bytes.size() - 8));
    }
    if (limit > 0) count = std::min(count, limit);
    std::vector<std::size_t> labels(count);
    for (std::size_t i = 0; i < count; ++i) {
        labels[i] = bytes[8 + i];
        if (labels[i] >= num_classes) {
            throw DatasetError("IDX label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                               " out of range for " + std::to_string(num_classes) + " classes");
        }
    }
    return labels;
}

std::vector<std::uint8_t> encode_idx_images(const IdxImages& images) {
    std::vector<std::uint8_t> out;
    write_be32(out, kIdxImageMagic);
    write_be32(out, static_cast<std::uint32_t>(images.count));
    write_be32(out, static_cast<std::uint32_t>(images.rows));
    write_be32(out, static_cast<std::uint32_t>(images.cols));
    out.insert(out.end(), images.pixels.begin(), images.pixels.end());
    return out;
}

std::vector<std::uint8_t> encode_idx_labels(std::span<const std::size_t> labels) {
    std::vector<std::uint8_t> out;
    write_be32(out, kIdxLabelMagic);
    write_be32(out, static_cast<std::uint32_t>(labels.size()));
    for (auto l : labels) out.push_back(static_cast<std::uint8_t>(l));
    return out;
}

Dataset images_to_dataset(const IdxImages& images, std::span<const std::size_t> labels, std::size_t num_classes) {
    if (labels.size() != images.count) {
        throw DatasetError("image/label count mismatch: " + std::to_string(images.count) + " vs " +
                           std::to_string(labels.size()));
    }
    Dataset data;
    data.num_classes = num_classes;
    data.labels.assign(labels.begin(), labels.end());
    const std::size_t plane = images.rows * images.cols;
    data.images.reserve(images.count);
    for (std::size_t i = 0; i < images.count; ++i) {
        Tensor img({1, images.rows, images.cols});
        for (std::size_t k = 0; k < plane; ++k) img[k] = images.pixels[i * plane + k] / 255.0;
        data.images.push_back(std::move(img));
    }
    return data;
}

DataSplits load_idx_dir(const std::filesystem::path& dir, std::size_t limit, std::size_t num_classes) {
    auto load = [&](const char* img_name, const char* lbl_name) {
        const auto img_bytes = read_file(dir / img_name);
        const auto lbl_bytes = read_file(dir / lbl_name);
        const auto images = parse_idx_images(img_bytes, limit);
        const auto labels = parse_idx_labels(lbl_bytes, num_classes, limit);
        return images_to_dataset(images, labels, num_classes);
    };
    DataSplits splits;
    splits.train = load("train-images-idx3-ubyte", "train-labels-idx1-ubyte");
    splits.test = load("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte");
    normalize(splits);
    return splits;
}

Dataset make_synthetic(std::uint64_t seed, std::size_t n, std::size_t num_classes, std::size_t image_size,
                       double noise) {
    if (num_classes < 2) throw DatasetError("synthetic task needs at least two classes");
    if (image_size < 4) throw DatasetError("synthetic images must be at least 4x4");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> jitter(-2.0, 2.0);
    std::uniform_real_distribution<double> amplitude(0.6, 1.0);
    std::normal_distribution<double> gauss(0.0, noise);

    Dataset data;
    data.num_classes = num_classes;
    const double centre = (static_cast<double>(image_size) - 1.0) / 2.0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t label = i % num_classes;
        const double theta = std::numbers::pi * static_cast<double>(label) / static_cast<double>(num_classes);
        const double nx = -std::sin(theta), ny = std::cos(theta);
        const double cx = centre + jitter(rng), cy = centre + jitter(rng);
        const double amp = amplitude(rng);
        Tensor img({1, image_size, image_size});
        for (std::size_t r = 0; r < image_size; ++r) {
            for (std::size_t c = 0; c < image_size; ++c) {
                const double dist = std::abs(nx * (static_cast<double>(c) - cx) + ny * (static_cast<double>(r) - cy));
                const double bar = std::clamp(1.5 - dist, 0.0, 1.0);
                img.at(0, r, c) = amp * bar + (noise > 0.0 ? gauss(rng) : 0.0);
            }
        }
        data.images.push_back(std::move(img));
        data.labels.push_back(label);
    }
    return data;
}

DataSplits load_synthetic(const SyntheticConfig& cfg) {
    DataSplits splits;
    // Distinct streams so the test split never repeats a training sample.
    splits.train = make_synthetic(cfg.seed * 2 + 1, cfg.train_size, cfg.num_classes, cfg.image_size, cfg.noise);
    splits.test = make_synthetic(cfg.seed * 2 + 2, cfg.test_size, cfg.num_classes, cfg.image_size, cfg.noise);
    normalize(splits);
    return splits;
}

MeanStd channel_stats(const Dataset& data, std::size_t c) {
    std::vector<double> values;
    for (const auto& img : data.images) {
        const std::size_t plane = img.numel() / img.dim(0);
        values.insert(values.end(), img.data().begin() + c * plane, img.data().begin() + (c + 1) * plane);
    }
    if (values.empty()) return {};
    return reduce_mean_std(Tensor::vector(std::move(values)), true);
}

void normalize(DataSplits& splits) {
    if (splits.train.size() == 0) throw DatasetError("cannot normalise with an empty training split");
    const std::size_t channels = splits.train.images.front().dim(0);
    splits.channel_mean.assign(channels, 0.0);
    splits.channel_std.assign(channels, 1.0);
    for (std::size_t c = 0; c < channels; ++c) {
        const auto ms = channel_stats(splits.train, c);
        splits.channel_mean[c] = ms.mean;
        splits.channel_std[c] = ms.std > 0.0 ? ms.std : 1.0;
    }
    apply_normalization(splits.train, splits.channel_mean, splits.channel_std);
    apply_normalization(splits.test, splits.channel_mean, splits.channel_std);
}

double nearest_centroid_error(const Dataset& train, const Dataset& eval) {
    if (train.size() == 0 || eval.size() == 0) throw DatasetError("nearest centroid needs non-empty data");
    const std::size_t k = train.num_classes;
    const std::size_t dim = train.images.front().numel();
    std::vector<std::vector<double>> centroid(k, std::vector<double>(dim, 0.0));
    std::vector<std::size_t> count(k, 0);
    for (std::size_t i = 0; i < train.size(); ++i) {
        const auto& img = train.images[i];
        auto& cen = centroid[train.labels[i]];
        for (std::size_t j = 0; j < dim; ++j) cen[j] += img[j];
        ++count[train.labels[i]];
    }
    for (std::size_t c = 0; c < k; ++c)
        if (count[c]) for (auto& v : centroid[c]) v /= static_cast<double>(count[c]);

    std::size_t wrong = 0;
    for (std::size_t i = 0; i < eval.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t arg = 0;
        for (std::size_t c = 0; c < k; ++c) {
            if (!count[c]) continue;
            double d = 0.0;
            for (std::size_t j = 0; j < dim; ++j) {
                const double diff = eval.images[i][j] - centroid[c][j];
                d += diff * diff;
            }
            if (d < best) {
                best = d;
                arg = c;
            }
        }
        if (arg != eval.labels[i]) ++wrong;
    }
    return static_cast<double>(wrong) / static_cast<double>(eval.size());
}

}  // namespace csa
