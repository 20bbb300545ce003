#include "csa/spatial_stats.hpp"

#include <algorithm>
#include <cmath>

namespace csa::spatial {

Tensor flatten_channels(const Tensor& f) {
    if (f.empty()) throw EmptyInputError("feature map has no channels");
    if (f.rank() < 2) throw ShapeError("expected a C x ... feature map, got " + shape_str(f.shape()));
    const std::size_t c = f.dim(0);
    return f.reshaped({c, f.numel() / c});
}

SpatialWeights build_weights(const Tensor& f, double eps_dist) {
    const Tensor rows = flatten_channels(f);
    const std::size_t c = rows.dim(0);

    SpatialWeights out;
    out.distance = Tensor({c, c});
    out.v = Tensor({c, c});
    out.w = Tensor({c, c});
    if (c == 1) {
        out.degenerate = true;
        return out;
    }

    const Tensor sq = pairwise_sq_dist(rows);
    double total = 0.0;
    for (std::size_t i = 0; i < c; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            if (i == j) continue;
            const double l = std::sqrt(sq.at(i, j));
            out.distance.at(i, j) = l;
            total += l;
        }
    }
    out.mean_dist = total / static_cast<double>(c * (c - 1));
    out.degenerate = out.mean_dist < eps_dist;

    for (std::size_t i = 0; i < c; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            if (i == j) continue;
            out.v.at(i, j) = out.degenerate ? 1.0 : std::exp(-out.distance.at(i, j) / out.mean_dist);
        }
    }
    out.w = unitary_weights(out.v);
    return out;
}

Tensor unitary_weights(const Tensor& v) {
    double s = 0.0;
    for (double e : v.data()) s += e;
    if (!(s > 0.0)) throw DegenerateInputError("contiguity matrix has non-positive total");
    Tensor w(v.shape());
    for (std::size_t k = 0; k < v.numel(); ++k) w[k] = v[k] / s;
    return w;
}

Standardized standardize(const Tensor& x, double eps_sigma) {
    if (x.empty()) throw EmptyInputError("standardize: empty vector");
    const auto ms = reduce_mean_std(x, /*population=*/true);
    Standardized out{Tensor(x.shape()), ms.mean, ms.std, ms.std < eps_sigma};
    if (out.floor_hit) return out;
    for (std::size_t i = 0; i < x.numel(); ++i) out.values[i] = (x[i] - ms.mean) / ms.std;
    return out;
}

void require_symmetric(const Tensor& w, double tol) {
    if (w.rank() != 2 || w.dim(0) != w.dim(1)) {
        throw ShapeError("weight matrix must be square, got " + shape_str(w.shape()));
    }
    double scale = 0.0;
    for (double e : w.data()) scale = std::max(scale, std::abs(e));
    const std::size_t c = w.dim(0);
    for (std::size_t i = 0; i < c; ++i) {
        for (std::size_t j = i + 1; j < c; ++j) {
            if (std::abs(w.at(i, j) - w.at(j, i)) > tol * scale) {
                throw std::invalid_argument("weight matrix is not symmetric");
            }
        }
    }
}

Tensor local_moran_matrix(const Tensor& z, const Tensor& w) {
    if (z.rank() != 1 || w.rank() != 2 || w.dim(0) != z.dim(0) || w.dim(1) != z.dim(0)) {
        throw ShapeError("local_moran_matrix: z " + shape_str(z.shape()) + " vs w " + shape_str(w.shape()));
    }
    require_symmetric(w);
    const std::size_t c = z.dim(0);
    // z as a 1 x C row: (z w)_i = sum_j z_j w_ji, and diag(z^T z w)_i = z_i (z w)_i.
    const Tensor zw = matmul(z.reshaped({1, c}), w);
    Tensor out({c});
    for (std::size_t i = 0; i < c; ++i) out[i] = z[i] * zw[i];
    return out;
}

Tensor local_moran_direct(const Tensor& x, const Tensor& v) {
    if (x.rank() != 1 || v.rank() != 2 || v.dim(0) != x.dim(0) || v.dim(1) != x.dim(0)) {
        throw ShapeError("local_moran_direct: x " + shape_str(x.shape()) + " vs v " + shape_str(v.shape()));
    }
    const std::size_t c = x.dim(0);
    if (c < 2) throw DegenerateInputError("local_moran_direct needs at least two observations");

    double mu = 0.0;
    for (std::size_t i = 0; i < c; ++i) mu += x[i];
    mu /= static_cast<double>(c);

    double sum_v = 0.0;
    for (std::size_t i = 0; i < c; ++i)
        for (std::size_t j = 0; j < c; ++j) sum_v += v.at(i, j);

    double sum_sq = 0.0;
    for (std::size_t i = 0; i < c; ++i) sum_sq += (x[i] - mu) * (x[i] - mu);
    if (!(sum_sq > 0.0)) throw DegenerateInputError("local_moran_direct: attribute has zero variance");

    Tensor out({c});
    for (std::size_t i = 0; i < c; ++i) {
        double lag = 0.0;
        for (std::size_t j = 0; j < c; ++j) lag += v.at(i, j) * (x[j] - mu);
        out[i] = static_cast<double>(c) * (x[i] - mu) * lag / (sum_v * sum_sq);
    }
    return out;
}

double global_moran(const Tensor& local) {
    double s = 0.0;
    for (double e : local.data()) s += e;
    return s;
}

Standardized csa_descriptor(const Tensor& local, double eps_sigma) {
    return standardize(local, eps_sigma);
}

MoranResult moran(const Tensor& z, const SpatialWeights& weights, double eps_sigma) {
    MoranResult r;
    r.local = local_moran_matrix(z, weights.w);
    r.global = global_moran(r.local);
    auto q = csa_descriptor(r.local, eps_sigma);
    r.descriptor = std::move(q.values);
    r.sigma_floor_hit = q.floor_hit;
    return r;
}

}  // namespace csa::spatial
