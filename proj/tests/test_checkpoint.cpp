#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <random>

#include "csa/checkpoint.hpp"
#include "csa/model.hpp"

using csa::Checkpoint;
using csa::CheckpointError;
using csa::Tensor;

TEST(Checkpoint, TextRoundTripIsBitExact) {
    Checkpoint c;
    c.meta["variant"] = "csa";
    c.meta["note"] = "two words";
    std::mt19937_64 rng(1);
    std::normal_distribution<double> g(0.0, 1.0);
    Tensor t({2, 3});
    for (double& v : t.data()) v = g(rng) * 1e-7;
    t[0] = std::numeric_limits<double>::denorm_min();
    t[1] = -0.0;
    c.tensors.emplace_back("a.weight", t);
    c.tensors.emplace_back("b", Tensor::vector({1.0 / 3.0}));

    const auto back = csa::parse_checkpoint(csa::serialize_checkpoint(c));
    EXPECT_EQ(back.meta, c.meta);
    ASSERT_EQ(back.tensors.size(), 2u);
    EXPECT_EQ(back.tensors[0].first, "a.weight");
    EXPECT_EQ(back.tensor("a.weight"), t);
    EXPECT_TRUE(std::signbit(back.tensor("a.weight")[1]));
    EXPECT_EQ(back.tensor("b")[0], 1.0 / 3.0);
    EXPECT_THROW(back.tensor("missing"), CheckpointError);
}

TEST(Checkpoint, RejectsMalformedText) {
    EXPECT_THROW(csa::parse_checkpoint("hello\n"), CheckpointError);
    EXPECT_THROW(csa::parse_checkpoint("csa-checkpoint 1\ntensor x 1 3\n1 2\nend\n"), CheckpointError);
    EXPECT_THROW(csa::parse_checkpoint("csa-checkpoint 1\ntensor x 1 2\n1 2\n"), CheckpointError);
    EXPECT_THROW(csa::parse_checkpoint("csa-checkpoint 1\ntensor x 1 2\n1 abc\nend\n"), CheckpointError);
    EXPECT_THROW(csa::load_checkpoint("/nonexistent/ckpt"), CheckpointError);
}

TEST(Checkpoint, ModelRoundTripThroughFile) {
    csa::ModelSpec spec;
    spec.variant = csa::Variant::se;
    spec.stage_channels = {4, 8};
    spec.num_classes = 3;
    spec.seed = 9;
    const csa::Model model(spec);
    const auto path = std::filesystem::temp_directory_path() / "csa_ckpt_test";
    csa::save_checkpoint(model.to_checkpoint(), path);
    const auto back = csa::Model::from_checkpoint(csa::load_checkpoint(path));
    std::filesystem::remove(path);

    EXPECT_EQ(back.spec().variant, csa::Variant::se);
    EXPECT_EQ(back.spec().stage_channels, spec.stage_channels);
    const auto a = model.parameters();
    const auto b = back.parameters();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(*a[k], *b[k]);

    Tensor img({1, 8, 8}, 0.25);
    EXPECT_EQ(model.forward(img).logits->value, back.forward(img).logits->value);
}

TEST(Checkpoint, ModelRejectsMismatchedTensors) {
    csa::ModelSpec spec;
    spec.stage_channels = {4};
    spec.num_classes = 2;
    auto ckpt = csa::Model(spec).to_checkpoint();
    ckpt.tensors.back().second = Tensor({5});
    EXPECT_THROW(csa::Model::from_checkpoint(ckpt), CheckpointError);
}
