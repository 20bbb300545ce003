#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "csa/dataset.hpp"

using csa::DatasetError;

namespace {

std::vector<std::uint8_t> header(std::uint32_t magic, std::vector<std::uint32_t> dims) {
    std::vector<std::uint8_t> out;
    auto put = [&](std::uint32_t v) {
        for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
    };
    put(magic);
    for (auto d : dims) put(d);
    return out;
}

void write_file(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
    std::ofstream f(p, std::ios::binary);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST(Idx, ParsesMnistSizedHeader) {
    auto bytes = header(0x00000803, {10000, 28, 28});
    ASSERT_EQ(bytes[2], 0x08);
    ASSERT_EQ(bytes[3], 0x03);
    bytes.resize(16 + 10000 * 28 * 28, 0);
    const auto images = csa::parse_idx_images(bytes);
    EXPECT_EQ(images.count, 10000u);
    EXPECT_EQ(images.rows, 28u);
    EXPECT_EQ(images.cols, 28u);
    EXPECT_EQ(csa::parse_idx_images(bytes, 100).count, 100u);
}

TEST(Idx, RoundTrip) {
    csa::IdxImages img{3, 2, 4, {}};
    for (std::size_t i = 0; i < 24; ++i) img.pixels.push_back(static_cast<std::uint8_t>(i * 10));
    const auto back = csa::parse_idx_images(csa::encode_idx_images(img));
    EXPECT_EQ(back.pixels, img.pixels);
    EXPECT_EQ(back.rows, 2u);

    const std::vector<std::size_t> labels{0, 9, 3};
    EXPECT_EQ(csa::parse_idx_labels(csa::encode_idx_labels(labels), 10), labels);

    const auto data = csa::images_to_dataset(img, labels, 10);
    ASSERT_EQ(data.size(), 3u);
    EXPECT_EQ(data.images[0].shape(), (csa::Shape{1, 2, 4}));
    EXPECT_DOUBLE_EQ(data.images[2].at(0, 1, 3), 230.0 / 255.0);
}

TEST(Idx, Errors) {
    auto bad_magic = header(0x00000801, {1, 2, 2});
    bad_magic.resize(20);
    EXPECT_THROW(csa::parse_idx_images(bad_magic), DatasetError);

    auto truncated = header(0x00000803, {2, 2, 2});
    truncated.resize(16 + 5);
    EXPECT_THROW(csa::parse_idx_images(truncated), DatasetError);
    EXPECT_THROW(csa::parse_idx_images(std::vector<std::uint8_t>(10)), DatasetError);

    auto labels = header(0x00000801, {3});
    labels.insert(labels.end(), {1, 2, 10});
    EXPECT_THROW(csa::parse_idx_labels(labels, 10), DatasetError);
    labels.back() = 9;
    EXPECT_NO_THROW(csa::parse_idx_labels(labels, 10));
    labels.pop_back();
    EXPECT_THROW(csa::parse_idx_labels(labels, 10), DatasetError);
}

TEST(Idx, LoadsDirectoryAndNormalises) {
    const auto dir = std::filesystem::temp_directory_path() / "csa_idx_test";
    std::filesystem::create_directories(dir);
    csa::IdxImages img{4, 3, 3, {}};
    for (std::size_t i = 0; i < 36; ++i) img.pixels.push_back(static_cast<std::uint8_t>((i * 37) % 256));
    const std::vector<std::size_t> labels{0, 1, 2, 1};
    write_file(dir / "train-images-idx3-ubyte", csa::encode_idx_images(img));
    write_file(dir / "train-labels-idx1-ubyte", csa::encode_idx_labels(labels));
    write_file(dir / "t10k-images-idx3-ubyte", csa::encode_idx_images(img));
    write_file(dir / "t10k-labels-idx1-ubyte", csa::encode_idx_labels(labels));
    const auto splits = csa::load_idx_dir(dir, 0, 3);
    EXPECT_EQ(splits.train.size(), 4u);
    EXPECT_EQ(splits.test.num_classes, 3u);
    const auto ms = csa::channel_stats(splits.train, 0);
    EXPECT_LT(std::abs(ms.mean), 1e-6);
    EXPECT_LT(std::abs(ms.std - 1.0), 1e-3);
    EXPECT_THROW(csa::load_idx_dir(dir / "missing"), DatasetError);
    std::filesystem::remove_all(dir);
}

TEST(Synthetic, Deterministic) {
    const auto a = csa::make_synthetic(1, 512, 4, 16, 0.35);
    const auto b = csa::make_synthetic(1, 512, 4, 16, 0.35);
    EXPECT_EQ(a.images, b.images);
    EXPECT_EQ(a.labels, b.labels);
    const auto c = csa::make_synthetic(2, 512, 4, 16, 0.35);
    EXPECT_NE(a.images, c.images);
}

TEST(Synthetic, BalancedLabels) {
    const auto d = csa::make_synthetic(5, 100, 4, 12, 0.1);
    std::vector<std::size_t> count(4);
    for (auto l : d.labels) ++count[l];
    EXPECT_EQ(count, (std::vector<std::size_t>{25, 25, 25, 25}));
}

TEST(Synthetic, NormalisedWithTrainStatistics) {
    const auto s = csa::load_synthetic({});
    const auto ms = csa::channel_stats(s.train, 0);
    EXPECT_LT(std::abs(ms.mean), 1e-6);
    EXPECT_LT(std::abs(ms.std - 1.0), 1e-3);
    // The test split reuses the train constants, so it is only close to standard.
    const auto mt = csa::channel_stats(s.test, 0);
    EXPECT_LT(std::abs(mt.mean), 0.1);
    EXPECT_NE(mt.mean, ms.mean);
}

TEST(Synthetic, NearestCentroidIsInformativeButImperfect) {
    const auto s = csa::load_synthetic({});
    const double err = csa::nearest_centroid_error(s.train, s.test);
    EXPECT_LT(err, 0.15);
    EXPECT_GT(err, 0.0);
}

TEST(Synthetic, RejectsBadConfig) {
    EXPECT_THROW(csa::make_synthetic(1, 10, 1, 16, 0.1), DatasetError);
    EXPECT_THROW(csa::make_synthetic(1, 10, 4, 3, 0.1), DatasetError);
}
