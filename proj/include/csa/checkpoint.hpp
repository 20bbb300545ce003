#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "csa/tensor.hpp"

namespace csa {

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Named tensors plus string metadata.
///
/// Text format, one record per line:
///
///     csa-checkpoint 1
///     meta <key> <value...>
///     tensor <name> <rank> <d0> ... <dN-1>
///     <row-major values separated by single spaces>
///     end
///
/// Values use the shortest decimal form that round-trips to the same double,
/// so a save/load cycle is bit-exact. Keys and names contain no whitespace.
struct Checkpoint {
    std::map<std::string, std::string> meta;
    std::vector<std::pair<std::string, Tensor>> tensors;

    const Tensor& tensor(const std::string& name) const;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::string& text);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Shortest round-trip decimal representation.
std::string format_double(double v);

}  // namespace csa
