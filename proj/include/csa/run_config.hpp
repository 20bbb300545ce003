#pragma once

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "csa/dataset.hpp"
#include "csa/model.hpp"
#include "csa/train.hpp"

namespace csa {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Everything a CLI run depends on. Serialises to a flat `key = value` file.
struct RunConfig {
    ModelSpec model;
    TrainConfig train;
    std::string dataset = "synthetic";  // "synthetic" or "idx:<dir>"
    std::size_t limit = 0;              // idx only, 0 = all records
    SyntheticConfig synthetic;
    std::uint64_t seed = 0;
    bool milestones_set = false;  // otherwise derived from epochs

    /// Propagates the seed, rescales default milestones and syncs the class
    /// count with the dataset, then validates. Throws ConfigError.
    void finalize();
};

/// Sets one key. Unknown keys and malformed values throw ConfigError.
void apply_config_key(RunConfig& cfg, const std::string& key, const std::string& value);

/// Lines of `key = value`; '#' starts a comment, blank lines are skipped.
void apply_config_text(RunConfig& cfg, const std::string& text);
void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);

/// Inverse of apply_config_text for every key.
std::string config_echo(const RunConfig& cfg);

DataSplits load_dataset(const RunConfig& cfg);

}  // namespace csa
