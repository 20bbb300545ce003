#include <gtest/gtest.h>

#include "csa/run_config.hpp"

using csa::ConfigError;
using csa::RunConfig;

TEST(RunConfig, ParsesKeyValueText) {
    RunConfig cfg;
    csa::apply_config_text(cfg, R"(# experiment
variant = se
stage_channels = 8, 16
epochs = 4        # short
lr = 0.1
seed = 42
stop_grad_weights = true
synthetic.noise = 0.2
)");
    cfg.finalize();
    EXPECT_EQ(cfg.model.variant, csa::Variant::se);
    EXPECT_EQ(cfg.model.stage_channels, (std::vector<std::size_t>{8, 16}));
    EXPECT_EQ(cfg.train.epochs, 4u);
    EXPECT_EQ(cfg.train.milestones, (std::vector<std::size_t>{2, 3}));
    EXPECT_EQ(cfg.model.seed, 42u);
    EXPECT_EQ(cfg.train.seed, 42u);
    EXPECT_EQ(cfg.synthetic.seed, 42u);
    EXPECT_TRUE(cfg.model.stop_grad_weights);
    EXPECT_EQ(cfg.model.num_classes, cfg.synthetic.num_classes);
}

TEST(RunConfig, RejectsUnknownKeysAndBadValues) {
    RunConfig cfg;
    EXPECT_THROW(csa::apply_config_text(cfg, "learning_rate = 0.1\n"), ConfigError);
    EXPECT_THROW(csa::apply_config_text(cfg, "epochs = ten\n"), ConfigError);
    EXPECT_THROW(csa::apply_config_text(cfg, "epochs\n"), ConfigError);
    EXPECT_THROW(csa::apply_config_key(cfg, "nesterov", "maybe"), ConfigError);
    EXPECT_THROW(csa::apply_config_key(cfg, "variant", "vgg"), ConfigError);
    try {
        csa::apply_config_text(cfg, "\n\nbogus = 1\n");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
    }
}

TEST(RunConfig, FinalizeValidates) {
    RunConfig cfg;
    csa::apply_config_key(cfg, "milestones", "3,2");
    EXPECT_THROW(cfg.finalize(), ConfigError);
    cfg = RunConfig{};
    csa::apply_config_key(cfg, "dataset", "mnist");
    EXPECT_THROW(cfg.finalize(), ConfigError);
    cfg = RunConfig{};
    csa::apply_config_key(cfg, "epochs", "0");
    EXPECT_THROW(cfg.finalize(), ConfigError);
}

TEST(RunConfig, EchoRoundTrips) {
    RunConfig cfg;
    csa::apply_config_text(cfg, "variant = baseline\nlr = 0.037\nmilestones = 3\nepochs = 6\nseed = 9\n");
    cfg.finalize();
    const std::string echo = csa::config_echo(cfg);
    RunConfig back;
    csa::apply_config_text(back, echo);
    back.finalize();
    EXPECT_EQ(csa::config_echo(back), echo);
    EXPECT_EQ(back.train.lr, 0.037);
    EXPECT_EQ(back.train.milestones, (std::vector<std::size_t>{3}));
}
