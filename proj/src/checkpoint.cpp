#include "csa/checkpoint.hpp"

#include <array>
#include <charconv>
#include <fstream>
#include <sstream>

namespace csa {

const Tensor& Checkpoint::tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return t;
    throw CheckpointError("checkpoint has no tensor '" + name + "'");
}

std::string format_double(double v) {
    std::array<char, 32> buf{};
    auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    if (ec != std::errc{}) throw CheckpointError("cannot format value");
    return std::string(buf.data(), end);
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
    std::ostringstream os;
    os << "csa-checkpoint 1\n";
    for (const auto& [k, v] : ckpt.meta) os << "meta " << k << ' ' << v << '\n';
    for (const auto& [name, t] : ckpt.tensors) {
        os << "tensor " << name << ' ' << t.rank();
        for (auto e : t.shape()) os << ' ' << e;
        os << '\n';
        for (std::size_t i = 0; i < t.numel(); ++i) {
            if (i) os << ' ';
            os << format_double(t[i]);
        }
        os << '\n';
    }
    os << "end\n";
    return os.str();
}

Checkpoint parse_checkpoint(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "csa-checkpoint 1") {
        throw CheckpointError("not a csa checkpoint (bad header)");
    }
    Checkpoint ckpt;
    bool ended = false;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string kind;
        ls >> kind;
        if (kind == "end") {
            ended = true;
            break;
        }
        if (kind == "meta") {
            std::string key;
            ls >> key;
            std::string value;
            std::getline(ls, value);
            if (!value.empty() && value.front() == ' ') value.erase(0, 1);
            ckpt.meta[key] = value;
        } else if (kind == "tensor") {
            std::string name;
            std::size_t rank = 0;
            if (!(ls >> name >> rank) || rank == 0) throw CheckpointError("malformed tensor header: " + line);
            Shape shape(rank);
            for (auto& e : shape)
                if (!(ls >> e)) throw CheckpointError("malformed tensor shape: " + line);
            std::string values;
            if (!std::getline(in, values)) throw CheckpointError("truncated checkpoint at tensor " + name);
            std::vector<double> data;
            const char* p = values.data();
            const char* end = p + values.size();
            while (p < end) {
                if (*p == ' ') {
                    ++p;
                    continue;
                }
                double v = 0.0;
                auto [next, ec] = std::from_chars(p, end, v);
                if (ec != std::errc{}) throw CheckpointError("bad value in tensor " + name);
                data.push_back(v);
                p = next;
            }
            try {
                ckpt.tensors.emplace_back(name, Tensor(shape, std::move(data)));
            } catch (const ShapeError& e) {
                throw CheckpointError("tensor " + name + ": " + e.what());
            }
        } else if (!kind.empty()) {
            throw CheckpointError("unknown checkpoint record '" + kind + "'");
        }
    }
    if (!ended) throw CheckpointError("truncated checkpoint (missing end marker)");
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot write " + path.string());
    out << serialize_checkpoint(ckpt);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_checkpoint(ss.str());
}

}  // namespace csa
