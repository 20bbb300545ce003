#include "csa/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace csa {

namespace {

std::size_t checked_numel(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must have at least one extent");
    std::size_t n = 1;
    for (auto e : shape) {
        if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
        n *= e;
    }
    return n;
}

}  // namespace

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    data_.assign(checked_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (checked_numel(shape_) != data_.size()) {
        throw ShapeError("shape " + shape_str(shape_) + " does not match " + std::to_string(data_.size()) +
                         " values");
    }
}

Tensor Tensor::vector(std::vector<double> values) {
    Shape s{values.size()};
    return Tensor(std::move(s), std::move(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t m = rows.size();
    const std::size_t n = m ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(m * n);
    for (const auto& r : rows) {
        if (r.size() != n) throw ShapeError("ragged matrix literal");
        data.insert(data.end(), r.begin(), r.end());
    }
    return Tensor({m, n}, std::move(data));
}

Tensor Tensor::reshaped(Shape shape) const {
    return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t t = 0; t < k; ++t) acc += a[i * k + t] * b[t * n + j];
            out[i * n + j] = acc;
        }
    }
    return out;
}

MeanStd reduce_mean_std(const Tensor& t, bool population) {
    const auto v = t.data();
    const double n = static_cast<double>(v.size());
    double sum = 0.0;
    for (double x : v) sum += x;
    const double mean = sum / n;
    // Corrected two-pass: the residual sum of deviations absorbs rounding in `mean`.
    double ss = 0.0, comp = 0.0;
    for (double x : v) {
        const double d = x - mean;
        ss += d * d;
        comp += d;
    }
    double var_num = ss - comp * comp / n;
    if (var_num < 0.0) var_num = 0.0;
    const double denom = population ? n : n - 1.0;
    const double var = denom > 0.0 ? var_num / denom : 0.0;
    return {mean, std::sqrt(var)};
}

Tensor broadcast_mul_channels(const Tensor& f, const Tensor& p) {
    if (f.rank() != 3 || p.rank() != 1 || f.dim(0) != p.dim(0)) {
        throw ShapeError("broadcast_mul_channels: feature map " + shape_str(f.shape()) + " vs gate " +
                         shape_str(p.shape()));
    }
    Tensor out(f.shape());
    const std::size_t plane = f.dim(1) * f.dim(2);
    for (std::size_t c = 0; c < f.dim(0); ++c) {
        const double g = p[c];
        for (std::size_t k = 0; k < plane; ++k) out[c * plane + k] = g * f[c * plane + k];
    }
    return out;
}

Tensor pairwise_sq_dist(const Tensor& rows) {
    if (rows.rank() != 2) throw ShapeError("pairwise_sq_dist: expected C x d, got " + shape_str(rows.shape()));
    const std::size_t c = rows.dim(0), d = rows.dim(1);
    Tensor out({c, c});
    // Explicit differences rather than |a|^2 + |b|^2 - 2ab: no cancellation, so
    // entries are >= 0 and the diagonal is exactly zero without clamping.
    for (std::size_t i = 0; i < c; ++i) {
        for (std::size_t j = i + 1; j < c; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = rows[i * d + k] - rows[j * d + k];
                acc += diff * diff;
            }
            out.at(i, j) = acc;
            out.at(j, i) = acc;
        }
    }
    return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace csa
