#include "csa/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "csa/checkpoint.hpp"

namespace csa {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    T out{};
    const char* end = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc{} || ptr != end || value.empty())
        throw ConfigError("invalid value for " + key + ": '" + value + "'");
    return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ConfigError("invalid value for " + key + ": '" + value + "' (expected true or false)");
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& value) {
    std::vector<std::size_t> out;
    if (trim(value).empty()) return out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_number<std::size_t>(key, trim(item)));
    return out;
}

std::string join(const std::vector<std::size_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(v[i]);
    }
    return out;
}

}  // namespace

void RunConfig::finalize() {
    model.seed = seed;
    train.seed = seed;
    synthetic.seed = seed;
    if (!milestones_set) train.milestones = scaled_milestones(train.epochs);
    if (dataset == "synthetic") {
        model.num_classes = synthetic.num_classes;
    } else if (dataset.rfind("idx:", 0) != 0 || dataset.size() == 4) {
        throw ConfigError("dataset must be 'synthetic' or 'idx:<dir>', got '" + dataset + "'");
    }
    try {
        model.validate();
        train.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (synthetic.train_size == 0 || synthetic.test_size == 0 || synthetic.image_size < 4 ||
        synthetic.num_classes < 2 || !(synthetic.noise >= 0.0))
        throw ConfigError("invalid synthetic dataset settings");
}

void apply_config_key(RunConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "variant") {
        try {
            cfg.model.variant = parse_variant(value);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
    } else if (key == "stage_channels") {
        cfg.model.stage_channels = parse_list(key, value);
    } else if (key == "blocks_per_stage") {
        cfg.model.blocks_per_stage = parse_number<std::size_t>(key, value);
    } else if (key == "reduction") {
        cfg.model.reduction = parse_number<std::size_t>(key, value);
    } else if (key == "num_classes") {
        cfg.model.num_classes = parse_number<std::size_t>(key, value);
    } else if (key == "stop_grad_weights") {
        cfg.model.stop_grad_weights = parse_bool(key, value);
    } else if (key == "gate_bias_init") {
        cfg.model.gate_bias_init = parse_number<double>(key, value);
    } else if (key == "zero_init_attention") {
        cfg.model.zero_init_attention = parse_bool(key, value);
    } else if (key == "seed") {
        cfg.seed = parse_number<std::uint64_t>(key, value);
    } else if (key == "epochs") {
        cfg.train.epochs = parse_number<std::size_t>(key, value);
    } else if (key == "batch_size") {
        cfg.train.batch_size = parse_number<std::size_t>(key, value);
    } else if (key == "lr") {
        cfg.train.lr = parse_number<double>(key, value);
    } else if (key == "milestones") {
        cfg.train.milestones = parse_list(key, value);
        cfg.milestones_set = true;
    } else if (key == "momentum") {
        cfg.train.momentum = parse_number<double>(key, value);
    } else if (key == "weight_decay") {
        cfg.train.weight_decay = parse_number<double>(key, value);
    } else if (key == "nesterov") {
        cfg.train.nesterov = parse_bool(key, value);
    } else if (key == "max_grad_norm") {
        cfg.train.max_grad_norm = parse_number<double>(key, value);
    } else if (key == "threads") {
        cfg.train.threads = parse_number<std::size_t>(key, value);
    } else if (key == "dataset") {
        cfg.dataset = value;
    } else if (key == "limit") {
        cfg.limit = parse_number<std::size_t>(key, value);
    } else if (key == "synthetic.train_size") {
        cfg.synthetic.train_size = parse_number<std::size_t>(key, value);
    } else if (key == "synthetic.test_size") {
        cfg.synthetic.test_size = parse_number<std::size_t>(key, value);
    } else if (key == "synthetic.num_classes") {
        cfg.synthetic.num_classes = parse_number<std::size_t>(key, value);
    } else if (key == "synthetic.image_size") {
        cfg.synthetic.image_size = parse_number<std::size_t>(key, value);
    } else if (key == "synthetic.noise") {
        cfg.synthetic.noise = parse_number<double>(key, value);
    } else {
        throw ConfigError("unknown config key '" + key + "'");
    }
}

void apply_config_text(RunConfig& cfg, const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
        try {
            apply_config_key(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
        }
    }
}

void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read config file " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    apply_config_text(cfg, ss.str());
}

std::string config_echo(const RunConfig& cfg) {
    std::ostringstream os;
    const auto b = [](bool v) { return v ? "true" : "false"; };
    os << "variant = " << to_string(cfg.model.variant) << '\n'
       << "stage_channels = " << join(cfg.model.stage_channels) << '\n'
       << "blocks_per_stage = " << cfg.model.blocks_per_stage << '\n'
       << "reduction = " << cfg.model.reduction << '\n'
       << "num_classes = " << cfg.model.num_classes << '\n'
       << "stop_grad_weights = " << b(cfg.model.stop_grad_weights) << '\n'
       << "gate_bias_init = " << format_double(cfg.model.gate_bias_init) << '\n'
       << "zero_init_attention = " << b(cfg.model.zero_init_attention) << '\n'
       << "seed = " << cfg.seed << '\n'
       << "epochs = " << cfg.train.epochs << '\n'
       << "batch_size = " << cfg.train.batch_size << '\n'
       << "lr = " << format_double(cfg.train.lr) << '\n'
       << "milestones = " << join(cfg.train.milestones) << '\n'
       << "momentum = " << format_double(cfg.train.momentum) << '\n'
       << "weight_decay = " << format_double(cfg.train.weight_decay) << '\n'
       << "nesterov = " << b(cfg.train.nesterov) << '\n'
       << "max_grad_norm = " << format_double(cfg.train.max_grad_norm) << '\n'
       << "threads = " << cfg.train.threads << '\n'
       << "dataset = " << cfg.dataset << '\n'
       << "limit = " << cfg.limit << '\n'
       << "synthetic.train_size = " << cfg.synthetic.train_size << '\n'
       << "synthetic.test_size = " << cfg.synthetic.test_size << '\n'
       << "synthetic.num_classes = " << cfg.synthetic.num_classes << '\n'
       << "synthetic.image_size = " << cfg.synthetic.image_size << '\n'
       << "synthetic.noise = " << format_double(cfg.synthetic.noise) << '\n';
    return os.str();
}

DataSplits load_dataset(const RunConfig& cfg) {
    if (cfg.dataset == "synthetic") return load_synthetic(cfg.synthetic);
    return load_idx_dir(cfg.dataset.substr(4), cfg.limit, cfg.model.num_classes);
}

}  // namespace csa
