#include "csa/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "csa/checkpoint.hpp"
#include "parallel.hpp"

namespace csa {

namespace {

struct ChannelSums {
    std::vector<double> x, z, local, q, p;

    explicit ChannelSums(std::size_t c) : x(c), z(c), local(c), q(c), p(c) {}

    void add(const AttentionTrace& t, bool has_p) {
        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] += t.x[i];
            z[i] += t.z[i];
            local[i] += t.local[i];
            q[i] += t.q[i];
            if (has_p) p[i] += t.p[i];
        }
    }

    void scale(double s) {
        for (auto* v : {&x, &z, &local, &q, &p})
            for (double& e : *v) e *= s;
    }

    void add(const ChannelSums& o) {
        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] += o.x[i];
            z[i] += o.z[i];
            local[i] += o.local[i];
            q[i] += o.q[i];
            p[i] += o.p[i];
        }
    }
};

}  // namespace

std::vector<StageDescriptors> analyze_descriptors(const Model& model, const Dataset& data, double ema_factor,
                                                  std::size_t threads) {
    std::vector<StageDescriptors> out;
    if (data.size() == 0) return out;

    std::vector<std::vector<StageTrace>> traces(data.size());
    detail::parallel_for(data.size(), threads,
                         [&](std::size_t i) { traces[i] = model.forward(data.images[i], true).stages; });

    const std::size_t num_stages = traces.front().size();
    const std::size_t k = std::max(data.num_classes, model.spec().num_classes);
    for (std::size_t s = 0; s < num_stages; ++s) {
        StageDescriptors sd;
        sd.stage = s + 1;
        sd.has_p = traces.front()[s].has_p;
        sd.samples = data.size();
        const std::size_t c = traces.front()[s].attention.q.numel();

        std::vector<ChannelSums> per_class(k, ChannelSums(c));
        std::vector<std::size_t> count(k, 0);
        for (std::size_t i = 0; i < data.size(); ++i) {
            const auto& tr = traces[i][s].attention;
            per_class[data.labels[i]].add(tr, sd.has_p);
            ++count[data.labels[i]];
            if (tr.q_floor_hit) {
                ++sd.floor_hits;
                continue;
            }
            const auto ms = reduce_mean_std(tr.q, true);
            sd.max_sample_q_mean = std::max(sd.max_sample_q_mean, std::abs(ms.mean));
            sd.max_sample_q_std_dev = std::max(sd.max_sample_q_std_dev, std::abs(ms.std - 1.0));
        }

        ChannelSums avg(c);
        std::size_t classes_present = 0;
        for (std::size_t cls = 0; cls < k; ++cls) {
            if (!count[cls]) continue;
            per_class[cls].scale(1.0 / static_cast<double>(count[cls]));
            avg.add(per_class[cls]);
            ++classes_present;
        }
        avg.scale(1.0 / static_cast<double>(classes_present));

        std::vector<std::size_t> order(c);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return avg.q[a] < avg.q[b]; });

        double abs_q = 0.0;
        for (std::size_t r = 0; r < c; ++r) {
            const std::size_t ch = order[r];
            DescriptorRow row;
            row.rank = r;
            row.channel = ch;
            row.x = avg.x[ch];
            row.z = avg.z[ch];
            row.local = avg.local[ch];
            row.q = avg.q[ch];
            row.p = avg.p[ch];
            if (r == 0) {
                row.z_ema = row.z;
                row.q_ema = row.q;
                row.p_ema = row.p;
            } else {
                const auto& prev = sd.rows.back();
                row.z_ema = ema_factor * row.z + (1.0 - ema_factor) * prev.z_ema;
                row.q_ema = ema_factor * row.q + (1.0 - ema_factor) * prev.q_ema;
                row.p_ema = ema_factor * row.p + (1.0 - ema_factor) * prev.p_ema;
            }
            abs_q += std::abs(row.q);
            sd.rows.push_back(row);
        }
        sd.mean_abs_q = abs_q / static_cast<double>(c);
        out.push_back(std::move(sd));
    }
    return out;
}

std::string descriptors_csv(const StageDescriptors& stage) {
    std::ostringstream os;
    os << "rank,channel,x,z,I_l,q,p,z_ema,q_ema,p_ema\n";
    for (const auto& r : stage.rows) {
        os << r.rank << ',' << r.channel << ',' << format_double(r.x) << ',' << format_double(r.z) << ','
           << format_double(r.local) << ',' << format_double(r.q) << ',';
        if (stage.has_p) os << format_double(r.p);
        os << ',' << format_double(r.z_ema) << ',' << format_double(r.q_ema) << ',';
        if (stage.has_p) os << format_double(r.p_ema);
        os << '\n';
    }
    return os.str();
}

void write_descriptor_csvs(const std::vector<StageDescriptors>& stages, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (const auto& s : stages) {
        const auto path = dir / ("descriptors_stage" + std::to_string(s.stage) + ".csv");
        std::ofstream f(path);
        if (!f) throw std::runtime_error("cannot write " + path.string());
        f << descriptors_csv(s);
    }
}

}  // namespace csa
