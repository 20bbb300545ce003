#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace csa {

using Shape = std::vector<std::size_t>;

/// Thrown when operand extents are incompatible. The message names both shapes.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

std::string shape_str(const Shape& shape);

/// Dense row-major float64 array. Every extent is >= 1.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor vector(std::vector<double> values);
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t numel() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    const double& operator[](std::size_t i) const { return data_[i]; }

    double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    double& at(std::size_t c, std::size_t h, std::size_t w) {
        return data_[(c * shape_[1] + h) * shape_[2] + w];
    }
    double at(std::size_t c, std::size_t h, std::size_t w) const {
        return data_[(c * shape_[1] + h) * shape_[2] + w];
    }

    /// Same data, new extents. Throws ShapeError when the element counts differ.
    Tensor reshaped(Shape shape) const;

    bool all_finite() const noexcept;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;
};

/// Standard product, summing over k left to right.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Mean and standard deviation over every element. `population` selects the
/// divide-by-N convention; otherwise N-1 (0 when N == 1).
MeanStd reduce_mean_std(const Tensor& t, bool population = true);

/// out[c,h,w] = p[c] * f[c,h,w]
Tensor broadcast_mul_channels(const Tensor& f, const Tensor& p);

/// Squared Euclidean distances between the rows of a C x d matrix.
Tensor pairwise_sq_dist(const Tensor& rows);

/// Maximum absolute elementwise difference; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace csa
