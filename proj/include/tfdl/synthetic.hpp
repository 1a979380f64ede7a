#pragma once

// Synthetic corpora with a known generating dictionary, for recovery checks
// and end-to-end smoke runs.

#include <cstdint>
#include <filesystem>

#include <Eigen/Dense>

#include "tfdl/embedding_store.hpp"

namespace tfdl {

struct SyntheticConfig {
    std::uint32_t d = 32;
    std::uint32_t m = 48;
    std::uint32_t active = 3;
    double coef_min = 0.5;
    double coef_max = 1.5;
    std::uint64_t num_occurrences = 4000;
    std::uint32_t num_layers = 1;
    std::uint32_t seq_len = 16;
    /// 0 gives every occurrence its own token (all frequency weights 1).
    std::uint32_t vocab_size = 0;
    std::uint64_t seed = 0;
};

/// Writes a store whose every row is x = Phi* a with `active` factors set to
/// U[coef_min, coef_max]. Returns Phi* (d x m, unit columns).
Eigen::MatrixXd write_synthetic_store(const std::filesystem::path& dir, const SyntheticConfig& config);

/// Greedy one-to-one matching by cosine similarity; returns the fraction of
/// true atoms matched at cosine >= threshold.
double recovered_fraction(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& learned, double threshold);

}  // namespace tfdl
