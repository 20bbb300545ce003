// csa: train, evaluate and inspect CSA / SE / baseline CNNs.
#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "csa/checkpoint.hpp"
#include "csa/commands.hpp"
#include "csa/dataset.hpp"
#include "csa/run_config.hpp"
#include "csa/selftest.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kRuntime = 2;

struct Flags {
    std::optional<std::string> config, variant, dataset, epochs, batch, lr, milestones, seed, reduction, threads, clip;
    bool stop_grad = false;
    std::string out = "csa_out";
    std::optional<std::string> checkpoint;
};

void add_run_flags(CLI::App* cmd, Flags& f) {
    cmd->add_option("--config", f.config, "key = value config file (flags override it)");
    cmd->add_option("--variant", f.variant, "baseline | se | csa");
    cmd->add_option("--dataset", f.dataset, "synthetic | idx:<dir>");
    cmd->add_option("--epochs", f.epochs, "training epochs");
    cmd->add_option("--batch", f.batch, "mini-batch size");
    cmd->add_option("--lr", f.lr, "initial learning rate");
    cmd->add_option("--milestones", f.milestones, "comma-separated epochs where lr drops by 10");
    cmd->add_option("--seed", f.seed, "seed for data, init and shuffling");
    cmd->add_option("--reduction", f.reduction, "gate reduction ratio r");
    cmd->add_option("--max-grad-norm", f.clip, "clip the batch gradient to this L2 norm (0 disables)");
    cmd->add_option("--threads", f.threads, "worker threads (results do not depend on it)");
    cmd->add_flag("--stop-grad-weights", f.stop_grad, "treat the CSA weight matrix as a constant");
    cmd->add_option("--out", f.out, "output directory")->capture_default_str();
}

csa::RunConfig build_config(const Flags& f) {
    csa::RunConfig cfg;
    if (f.config) csa::apply_config_file(cfg, *f.config);
    const auto set = [&](const char* key, const std::optional<std::string>& v) {
        if (v) csa::apply_config_key(cfg, key, *v);
    };
    set("variant", f.variant);
    set("dataset", f.dataset);
    set("epochs", f.epochs);
    set("batch_size", f.batch);
    set("lr", f.lr);
    set("milestones", f.milestones);
    set("seed", f.seed);
    set("reduction", f.reduction);
    set("threads", f.threads);
    set("max_grad_norm", f.clip);
    if (f.stop_grad) cfg.model.stop_grad_weights = true;
    cfg.finalize();
    return cfg;
}

void print_metrics(const char* label, const csa::Metrics& m) {
    std::printf("%-6s loss %.4f  top1 %.2f%%", label, m.loss, 100.0 * m.top1_error);
    if (m.top5_error) std::printf("  top5 %.2f%%", 100.0 * *m.top5_error);
    std::printf("\n");
}

int print_suites(const std::vector<csa::selftest::SuiteResult>& results) {
    std::cout << csa::selftest::format_table(results);
    std::size_t failed = 0;
    for (const auto& r : results)
        if (!r.passed) {
            ++failed;
            std::cerr << "FAILED: " << r.name << '\n';
        }
    std::cout << (failed ? std::to_string(failed) + " suite(s) failed\n" : "all suites passed\n");
    return failed ? kRuntime : kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Channel-wise spatially autocorrelated attention: training and analysis tool", "csa"};
    app.require_subcommand(1);

    Flags flags;
    auto* train_cmd = app.add_subcommand("train", "train one model");
    add_run_flags(train_cmd, flags);

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on both splits");
    add_run_flags(eval_cmd, flags);
    eval_cmd->add_option("--checkpoint", flags.checkpoint, "checkpoint file")->required();

    auto* analyze_cmd = app.add_subcommand("analyze", "per-stage channel descriptor CSVs");
    add_run_flags(analyze_cmd, flags);
    analyze_cmd->add_option("--checkpoint", flags.checkpoint, "checkpoint file (default: untrained model)");

    auto* compare_cmd = app.add_subcommand("compare", "train baseline, se and csa from one seed");
    add_run_flags(compare_cmd, flags);

    std::uint64_t check_seed = 2024;
    auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference checks of every layer");
    grad_cmd->add_option("--seed", check_seed, "seed for the probe points")->capture_default_str();

    csa::selftest::Options st;
    auto* self_cmd = app.add_subcommand("selftest", "property suites; exit 0 iff all pass");
    self_cmd->add_option("--seed", st.seed, "suite seed")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        std::cerr << app.help();
        return kValidation;
    }

    try {
        if (*grad_cmd) return print_suites(csa::selftest::gradient_checks(check_seed));
        if (*self_cmd) return print_suites(csa::selftest::run_all(st));

        const csa::RunConfig cfg = build_config(flags);
        const std::filesystem::path out = flags.out;

        if (*train_cmd) {
            const auto res = csa::run_train(cfg, out);
            for (const auto& e : res.report.epochs)
                std::printf("epoch %2zu  lr %.4g  train loss %.4f  train top1 %.2f%%  test top1 %.2f%%  %.1fs\n",
                            e.epoch + 1, e.lr, e.train_loss, 100.0 * e.train_top1, 100.0 * e.test.top1_error,
                            e.seconds);
            print_metrics("train", res.report.final_train);
            print_metrics("test", res.report.final_test);
            std::printf("params %zu (attention %zu); outputs in %s\n", res.param_count, res.attention_params,
                        out.string().c_str());
        } else if (*eval_cmd) {
            const auto j = csa::run_eval(cfg, *flags.checkpoint, out);
            std::cout << j.dump(2) << '\n';
        } else if (*analyze_cmd) {
            std::optional<std::filesystem::path> ckpt;
            if (flags.checkpoint) ckpt = *flags.checkpoint;
            const auto stages = csa::run_analyze(cfg, ckpt, out);
            for (const auto& s : stages)
                std::printf("stage %zu: %zu channels, mean |q| %.4f, worst sample |mean q| %.2e, |std q - 1| %.2e\n",
                            s.stage, s.rows.size(), s.mean_abs_q, s.max_sample_q_mean, s.max_sample_q_std_dev);
        } else if (*compare_cmd) {
            const auto cmp = csa::compare_variants(cfg, out);
            std::cout << csa::format_comparison(cmp);
        }
        return kOk;
    } catch (const csa::ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kValidation;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kRuntime;
    }
}
