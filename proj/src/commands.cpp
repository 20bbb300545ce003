#include "csa/commands.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "csa/checkpoint.hpp"

namespace csa {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << text;
    if (!f) throw std::runtime_error("write failed for " + path.string());
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

Model load_model(const fs::path& checkpoint) { return Model::from_checkpoint(load_checkpoint(checkpoint)); }

void require_compatible(const Model& model, const DataSplits& data) {
    if (data.train.num_classes != model.spec().num_classes)
        throw ConfigError("checkpoint has " + std::to_string(model.spec().num_classes) + " classes, dataset has " +
                          std::to_string(data.train.num_classes));
    if (!data.train.images.empty() && data.train.images.front().dim(0) != model.spec().in_channels)
        throw ConfigError("checkpoint expects " + std::to_string(model.spec().in_channels) + " input channels");
}

}  // namespace

void write_config_echo(const RunConfig& cfg, const fs::path& out) {
    fs::create_directories(out);
    write_text(out / "config.txt", config_echo(cfg));
}

TrainOutcome run_train(const RunConfig& cfg, const fs::path& out) {
    write_config_echo(cfg, out);
    const DataSplits data = load_dataset(cfg);
    Model model(cfg.model);
    TrainOutcome outcome;
    outcome.report = train(model, data, cfg.train);
    outcome.param_count = model.param_count();
    outcome.attention_params = model.attention_param_count();

    auto metrics = to_json(outcome.report, false);
    metrics["param_count"] = outcome.param_count;
    metrics["attention_param_count"] = outcome.attention_params;
    write_json(out / "metrics.json", metrics);

    auto full = to_json(outcome.report, true);
    full["param_count"] = outcome.param_count;
    full["attention_param_count"] = outcome.attention_params;
    write_json(out / "run_report.json", full);

    save_checkpoint(model.to_checkpoint(), out / "ckpt");
    return outcome;
}

nlohmann::json run_eval(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& out) {
    write_config_echo(cfg, out);
    const Model model = load_model(checkpoint);
    const DataSplits data = load_dataset(cfg);
    require_compatible(model, data);
    nlohmann::json j{{"model", to_json(model.spec())},
                     {"train", to_json(evaluate(model, data.train, cfg.train.threads))},
                     {"test", to_json(evaluate(model, data.test, cfg.train.threads))}};
    write_json(out / "eval.json", j);
    return j;
}

std::vector<StageDescriptors> run_analyze(const RunConfig& cfg, const std::optional<fs::path>& checkpoint,
                                          const fs::path& out) {
    write_config_echo(cfg, out);
    const Model model = checkpoint ? load_model(*checkpoint) : Model(cfg.model);
    const DataSplits data = load_dataset(cfg);
    require_compatible(model, data);
    auto stages = analyze_descriptors(model, data.test, kDefaultEmaFactor, cfg.train.threads);
    write_descriptor_csvs(stages, out);

    nlohmann::json j{{"variant", to_string(model.spec().variant)}, {"samples", data.test.size()}};
    auto& arr = j["stages"] = nlohmann::json::array();
    for (const auto& s : stages) {
        arr.push_back({{"stage", s.stage},
                       {"channels", s.rows.size()},
                       {"mean_abs_q", s.mean_abs_q},
                       {"max_sample_q_mean", s.max_sample_q_mean},
                       {"max_sample_q_std_dev", s.max_sample_q_std_dev},
                       {"floor_hits", s.floor_hits}});
    }
    write_json(out / "analysis.json", j);
    return stages;
}

Comparison compare_variants(const RunConfig& cfg, const fs::path& out) {
    const auto start = std::chrono::steady_clock::now();
    fs::create_directories(out);
    Comparison cmp;
    const DataSplits data = load_dataset(cfg);
    cmp.nearest_centroid_error = nearest_centroid_error(data.train, data.test);

    for (Variant v : {Variant::baseline, Variant::se, Variant::csa}) {
        RunConfig vc = cfg;
        vc.model.variant = v;
        const fs::path dir = out / to_string(v);
        write_config_echo(vc, dir);
        Model model(vc.model);
        VariantRow row;
        row.variant = v;
        row.report = train(model, data, vc.train);
        row.param_count = model.param_count();
        row.attention_params = model.attention_param_count();

        auto metrics = to_json(row.report, false);
        metrics["param_count"] = row.param_count;
        metrics["attention_param_count"] = row.attention_params;
        write_json(dir / "metrics.json", metrics);
        write_json(dir / "run_report.json", to_json(row.report, true));
        save_checkpoint(model.to_checkpoint(), dir / "ckpt");

        if (v == Variant::csa) {
            const auto stages = analyze_descriptors(model, data.test, kDefaultEmaFactor, vc.train.threads);
            write_descriptor_csvs(stages, dir);
            for (const auto& s : stages) cmp.csa_stage_mean_abs_q.push_back(s.mean_abs_q);
        }
        cmp.rows.push_back(std::move(row));
    }

    const VariantRow* best = &cmp.rows.front();
    for (const auto& r : cmp.rows) {
        const auto& a = r.report.final_test;
        const auto& b = best->report.final_test;
        if (a.top1_error < b.top1_error || (a.top1_error == b.top1_error && a.loss < b.loss)) best = &r;
    }
    cmp.winner = best->variant;

    const auto& q = cmp.csa_stage_mean_abs_q;
    if (q.size() >= 2) cmp.last_stage_closer_to_zero = q.back() < q[(q.size() - 1) / 2];
    cmp.total_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    write_json(out / "compare.json", to_json(cmp));
    write_text(out / "compare.txt", format_comparison(cmp));
    return cmp;
}

nlohmann::json to_json(const Comparison& cmp) {
    nlohmann::json j;
    auto& rows = j["variants"] = nlohmann::json::array();
    for (const auto& r : cmp.rows) {
        rows.push_back({{"variant", to_string(r.variant)},
                        {"final_train_top1_error", r.report.final_train.top1_error},
                        {"final_test_top1_error", r.report.final_test.top1_error},
                        {"final_test_loss", r.report.final_test.loss},
                        {"param_count", r.param_count},
                        {"attention_param_count", r.attention_params},
                        {"backbone_param_count", r.param_count - r.attention_params},
                        {"beats_nearest_centroid", r.report.final_test.top1_error < cmp.nearest_centroid_error}});
    }
    j["winner"] = to_string(cmp.winner);
    j["nearest_centroid_test_error"] = cmp.nearest_centroid_error;
    j["csa_stage_mean_abs_q"] = cmp.csa_stage_mean_abs_q;
    j["last_stage_mean_abs_q_below_middle"] = cmp.last_stage_closer_to_zero;
    return j;
}

std::string format_comparison(const Comparison& cmp) {
    std::ostringstream os;
    char line[256];
    std::snprintf(line, sizeof line, "%-9s %11s %11s %9s %9s %12s\n", "variant", "train_top1", "test_top1", "params",
                  "attn", "s/epoch");
    os << line;
    for (const auto& r : cmp.rows) {
        double secs = 0.0;
        for (const auto& e : r.report.epochs) secs += e.seconds;
        if (!r.report.epochs.empty()) secs /= static_cast<double>(r.report.epochs.size());
        std::snprintf(line, sizeof line, "%-9s %10.2f%% %10.2f%% %9zu %9zu %12.2f%s\n", to_string(r.variant).c_str(),
                      100.0 * r.report.final_train.top1_error, 100.0 * r.report.final_test.top1_error, r.param_count,
                      r.attention_params, secs, r.variant == cmp.winner ? "  <- best" : "");
        os << line;
    }
    std::snprintf(line, sizeof line, "nearest-centroid test top1: %.2f%%\n", 100.0 * cmp.nearest_centroid_error);
    os << line;
    os << "csa mean |q| by stage:";
    for (double q : cmp.csa_stage_mean_abs_q) {
        std::snprintf(line, sizeof line, " %.4f", q);
        os << line;
    }
    os << (cmp.last_stage_closer_to_zero ? "  (last stage below middle)\n" : "  (last stage not below middle)\n");
    return os.str();
}

}  // namespace csa
