#pragma once

// Non-negative sparse inference:
//
//   alpha(x) = argmin_{alpha >= 0}  1/2 ||x - Phi alpha||_2^2 + lambda ||alpha||_1
//
// solved with FISTA (step 1/L, L = largest eigenvalue of Phi^T Phi) and a
// function-value momentum restart.

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "tfdl/dictionary.hpp"

namespace tfdl {

class EmbeddingStore;
class CodeStore;

inline constexpr double kDefaultLambda = 0.27;
inline constexpr int kDefaultMaxIter = 1000;
inline constexpr double kDefaultTol = 1e-6;
inline constexpr double kDefaultDropThreshold = 1e-6;

struct SparseEntry {
    std::uint32_t factor = 0;
    double value = 0.0;

    bool operator==(const SparseEntry&) const = default;
};

struct SparseCode {
    /// Ascending factor index, every value strictly positive.
    std::vector<SparseEntry> entries;
    double residual_norm = 0.0;

    bool empty() const noexcept { return entries.empty(); }
    Eigen::VectorXd dense(Eigen::Index m) const;
    double value(std::uint32_t factor) const;
};

/// max(v_i - t, 0) elementwise.
Eigen::VectorXd nonneg_soft_threshold(const Eigen::Ref<const Eigen::VectorXd>& v, double t);

/// 1/2 ||x - Phi alpha||^2 + lambda ||alpha||_1, evaluated directly.
double objective(const Eigen::Ref<const Eigen::VectorXd>& x, const Dictionary& dict,
                 const Eigen::Ref<const Eigen::VectorXd>& alpha, double lambda);

/// Power iteration on Phi^T Phi (50 iterations, relative tolerance 1e-7).
double lipschitz_constant(const Eigen::MatrixXd& phi, int max_iter = 50, double tol = 1e-7);

struct FistaOptions {
    int max_iter = kDefaultMaxIter;
    double tol = kDefaultTol;
};

struct FistaResult {
    Eigen::VectorXd alpha;
    double objective = 0.0;
    int iterations = 0;
    bool converged = false;
};

/// Holds the Gram matrix and step size for one dictionary; reusable across
/// inputs and safe to call concurrently. The dictionary must outlive it.
class SparseCoder {
public:
    explicit SparseCoder(const Dictionary& dict, FistaOptions options = {});

    FistaResult solve(const Eigen::Ref<const Eigen::VectorXd>& x, double lambda) const;

    /// Coefficients <= drop_threshold are dropped; residual uses kept entries only.
    SparseCode infer(const Eigen::Ref<const Eigen::VectorXd>& x, double lambda,
                     double drop_threshold = 0.0) const;

    const Dictionary& dictionary() const noexcept { return *dict_; }
    double lipschitz() const noexcept { return lipschitz_; }
    const FistaOptions& options() const noexcept { return options_; }

private:
    const Dictionary* dict_;
    FistaOptions options_;
    Eigen::MatrixXd gram_;
    double lipschitz_ = 0.0;
};

SparseCode to_sparse_code(const Eigen::Ref<const Eigen::VectorXd>& alpha, const Dictionary& dict,
                          const Eigen::Ref<const Eigen::VectorXd>& x, double drop_threshold);

SparseCode infer_code(const Eigen::Ref<const Eigen::VectorXd>& x, const Dictionary& dict, double lambda,
                      int max_iter = kDefaultMaxIter, double tol = kDefaultTol);

struct EncodeOptions {
    double lambda = kDefaultLambda;
    int max_iter = kDefaultMaxIter;
    double tol = kDefaultTol;
    double drop_threshold = kDefaultDropThreshold;
    unsigned threads = 1;
    /// First row to encode; rows before it are left to the caller (used when extending).
    std::uint64_t first_row = 0;
};

/// Codes every (occurrence, layer) row of the store with one shared dictionary.
/// Output order is by row index for any thread count.
std::vector<SparseCode> encode_rows(const EmbeddingStore& store, const Dictionary& dict,
                                    const EncodeOptions& options);

CodeStore encode_store(const EmbeddingStore& store, const Dictionary& dict, const EncodeOptions& options);

/// Runs fn(i) for i in [0, n) on up to `threads` workers, contiguous chunks.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn);

}  // namespace tfdl
