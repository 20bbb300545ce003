#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace csa::selftest {

struct SuiteResult {
    std::string name;
    bool passed = false;
    double metric = 0.0;     // worst observed value
    double threshold = 0.0;  // bound the metric is compared against
    std::string detail;
    double seconds = 0.0;
};

/// Local Moran's I, textbook form vs matrix form, on random feature maps
/// with C in [2, 64] and d in [4, 32]. Metric: max |direct - matrix| / max |matrix|.
SuiteResult oracle_equivalence(std::size_t instances, std::uint64_t seed);

/// Symmetry, zero diagonal, non-negativity and unit total of w on random
/// feature maps, plus the degenerate fallback on coincident channels.
SuiteResult weight_contract(std::size_t instances, std::uint64_t seed);

/// max |p(aF + c) - p(F)| over a in {0.5, 2, 10}, c in {-1, 0, 3}.
SuiteResult affine_invariance(std::size_t instances, std::uint64_t seed);

/// Counts instances where the SE gate moves by more than 1e-3 under F -> 2F;
/// passes when at least 95% of instances do.
SuiteResult se_affine_sensitivity(std::size_t instances, std::uint64_t seed);

/// Channel permutation of F permutes q, and permutes p once the gate's
/// weights are permuted to match.
SuiteResult permutation_equivariance(std::size_t instances, std::uint64_t seed);

/// Finite-difference checks of every layer and of the gated composite
/// (with and without gradient flow through w).
std::vector<SuiteResult> gradient_checks(std::uint64_t seed);

/// CSA and SE gates have identical closed-form parameter counts.
SuiteResult param_accounting();

struct Options {
    std::size_t oracle_instances = 1000;
    std::size_t weight_instances = 500;
    std::size_t affine_instances = 100;
    std::size_t permutation_instances = 100;
    std::uint64_t seed = 2024;
};

std::vector<SuiteResult> run_all(const Options& opts = {});

std::string format_table(const std::vector<SuiteResult>& results);

}  // namespace csa::selftest
