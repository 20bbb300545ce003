#pragma once

#include <stdexcept>

#include "csa/tensor.hpp"

// Spatial autocorrelation over the channels of a feature map.
//
// Each channel f_i is treated as an observation located at its flattened
// activation vector. Closeness between channels is a negative exponential of
// their normalised L2 distance, and the attribute attached to each channel is
// its global average. Local Moran's I then scores how much each channel's
// attribute agrees with the attributes of the channels spatially close to it.

namespace csa::spatial {

inline constexpr double kDefaultEpsDist = 1e-12;
inline constexpr double kDefaultEpsSigma = 1e-8;
/// Guard inside sqrt(s) when differentiating distances, so coincident channels stay finite.
inline constexpr double kSqrtGuard = 1e-20;

class EmptyInputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class DegenerateInputError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

struct SpatialWeights {
    Tensor distance;        // l_ij, C x C, zero diagonal
    Tensor v;               // contiguity, C x C
    Tensor w;               // unitary weights, sums to 1 when C >= 2
    double mean_dist = 0.0; // mean l_ij over ordered off-diagonal pairs
    bool degenerate = false;
};

struct Standardized {
    Tensor values;
    double mean = 0.0;
    double sigma = 0.0;  // population
    bool floor_hit = false;
};

struct MoranResult {
    Tensor local;
    double global = 0.0;
    Tensor descriptor;
    bool sigma_floor_hit = false;
};

/// Builds contiguity and unitary weight matrices from a C x ... feature map.
/// When every channel coincides (mean distance below `eps_dist`) the contiguity
/// falls back to 1 off the diagonal and `degenerate` is set.
SpatialWeights build_weights(const Tensor& f, double eps_dist = kDefaultEpsDist);

/// w = v / sum(v). Requires a positive total.
Tensor unitary_weights(const Tensor& v);

/// (x - mean) / sigma with population sigma; all zeros when sigma < eps_sigma.
Standardized standardize(const Tensor& x, double eps_sigma = kDefaultEpsSigma);

/// Matrix form: I[i] = diag(z^T z w)_i = z_i * (z w)_i.
/// `w` must be square, match z, and be symmetric.
Tensor local_moran_matrix(const Tensor& z, const Tensor& w);

/// Textbook local Moran's I over raw attributes and an unnormalised contiguity
/// matrix, evaluated term by term. Used as a cross-check of the matrix form.
Tensor local_moran_direct(const Tensor& x, const Tensor& v);

double global_moran(const Tensor& local);

/// Re-normalises local indicators to zero mean / unit population std.
Standardized csa_descriptor(const Tensor& local, double eps_sigma = kDefaultEpsSigma);

/// Full parameter-free chain from attributes and weights to the descriptor.
MoranResult moran(const Tensor& z, const SpatialWeights& weights, double eps_sigma = kDefaultEpsSigma);

/// Throws std::invalid_argument unless w is square and symmetric to `tol` (relative to max |w|).
void require_symmetric(const Tensor& w, double tol = 1e-12);

/// Flattens a C x H x W (or any C x ...) tensor into C x (H*W...).
Tensor flatten_channels(const Tensor& f);

}  // namespace csa::spatial
