#pragma once

// Dictionary learning by alternating non-negative sparse inference with a
// frequency-weighted, diagonally preconditioned update of the factors.
//
// Per step, with batch weights w_i = 1/sqrt(f(token_i)):
//   r_i       = w_i x_i - Phi (w_i alpha_i)
//   h[j]     += sum_i (w_i alpha_ji)^2
//   Phi[:,j] += (sum_i r_i w_i alpha_ji) / (h[j] + delta)
// followed by clipping every column onto the unit l2 ball.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tfdl/dictionary.hpp"
#include "tfdl/embedding_store.hpp"
#include "tfdl/sparse_coder.hpp"

namespace tfdl {

inline constexpr char kDictionaryMagic[5] = "TFDC";
inline constexpr char kCheckpointMagic[5] = "TFCK";
inline constexpr std::uint32_t kDictionaryVersion = 1;

struct TrainConfig {
    std::uint32_t m = 1536;
    double lambda = kDefaultLambda;
    std::size_t batch_size = 200;
    std::uint64_t total_steps = 200000;
    std::uint64_t seed = 0;
    double delta = 1e-8;
    /// 0 disables checkpointing.
    std::uint64_t checkpoint_every = 0;
    std::filesystem::path checkpoint_path;
    /// Re-initialize a factor that has never been active for this many steps; 0 disables.
    std::uint64_t dead_factor_steps = 5000;
    int fista_max_iter = kDefaultMaxIter;
    double fista_tol = kDefaultTol;
    unsigned threads = 1;

    void validate() const;
};

struct LearnerState {
    Dictionary dict;
    Eigen::VectorXd h_accum;
    std::uint64_t step = 0;
    /// Step at which each factor was last (re)initialized; drives dead-factor handling.
    std::vector<std::uint64_t> last_reset;

    bool operator==(const LearnerState& other) const;
};

Dictionary init_dictionary(std::uint32_t d, std::uint32_t m, std::uint64_t seed);

LearnerState init_state(std::uint32_t d, std::uint32_t m, std::uint64_t seed, double lambda);

/// Preconditioned, unprojected change to Phi plus the updated h_accum.
struct UpdateDirection {
    Eigen::MatrixXd delta_phi;
    Eigen::VectorXd h_accum;
};

/// codes is m x n (one column per batch row).
UpdateDirection update_direction(const LearnerState& state, const Batch& batch, const Eigen::MatrixXd& codes,
                                 double delta);

void update_step(LearnerState& state, const Batch& batch, const Eigen::MatrixXd& codes, double delta);
void update_step(LearnerState& state, const Batch& batch, std::span<const SparseCode> codes, double delta);

/// 1/2 || X W - Phi A W ||_F^2 with X = batch rows as columns and W = diag(weights).
double weighted_update_objective(const Eigen::MatrixXd& phi, const Batch& batch, const Eigen::MatrixXd& codes);

/// Called after every step with the new state and the minibatch objective.
using StepObserver = std::function<void(const LearnerState&, double minibatch_objective)>;

struct TrainResult {
    LearnerState state;
    /// Mean over the minibatch of 1/2||x - Phi alpha||^2 + lambda||alpha||_1, before the update.
    std::vector<double> objective_trace;
    std::uint64_t reinitialized_factors = 0;
};

/// Runs the remaining steps of `state` (or from scratch if state is empty).
TrainResult train(const EmbeddingStore& store, const TrainConfig& config,
                  std::optional<LearnerState> resume = std::nullopt, const StepObserver& observer = {});

/// Dictionary file ("TFDC"): phi column-major float32, h_accum float32, step u64.
void write_dictionary(const std::filesystem::path& path, const LearnerState& state);
LearnerState read_dictionary(const std::filesystem::path& path);

/// Checkpoint file ("TFCK"): full double-precision learner state for bit-exact resume.
void write_checkpoint(const std::filesystem::path& path, const LearnerState& state);
LearnerState read_checkpoint(const std::filesystem::path& path);

}  // namespace tfdl
