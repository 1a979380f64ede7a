#pragma once

// Token attribution for one factor activation by masked perturbation and a
// distance-weighted ridge surrogate, fit twice: once over every position to
// select the k most influential positions, then again on those alone.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace tfdl {

inline constexpr const char* kUnknownToken = "[UNK]";

struct MaskedSequence {
    std::vector<std::string> tokens;
    /// h_t = 0 iff token t was replaced by the unknown token.
    std::vector<std::uint8_t> mask;
};

/// Evaluates the factor activation for a batch of (possibly masked) sequences.
/// Must be deterministic per input sequence.
using BlackBoxActivation = std::function<std::vector<double>(const std::vector<std::vector<std::string>>&)>;

/// Masks each position independently with probability mask_prob, never the queried position.
MaskedSequence random_mask(std::span<const std::string> seq, std::size_t position, double mask_prob,
                           std::mt19937_64& rng, const std::string& unknown = kUnknownToken);

/// Cosine similarity between h and the all-ones vector: sqrt(#ones / T). Zero vector gives 0.
double mask_distance(std::span<const std::uint8_t> mask);

struct RidgeFit {
    Eigen::VectorXd weights;
    double intercept = 0.0;
};

/// min_w,b  sum_i d_i (x_i.w + b - y_i)^2 + sigma ||w||^2, intercept unpenalized.
/// Solved on weighted-centered data via Cholesky.
RidgeFit weighted_ridge(const Eigen::MatrixXd& masks, const Eigen::VectorXd& values,
                        const Eigen::VectorXd& dist_weights, double sigma);

struct PerturbationSet {
    std::vector<std::string> base_seq;
    std::size_t position = 0;
    /// Element 0 is the unperturbed sequence.
    std::vector<MaskedSequence> samples;
    std::vector<double> values;

    Eigen::MatrixXd mask_matrix() const;
    Eigen::VectorXd distance_weights() const;
    std::vector<std::vector<std::string>> sequences() const;
};

struct SaliencyOptions {
    std::size_t n_samples = 1000;
    /// 0 means min(10, T).
    std::size_t k = 0;
    double sigma = 1.0;
    double mask_prob = 0.3;
    std::uint64_t seed = 0;
    std::string unknown = kUnknownToken;
};

struct SaliencyMap {
    std::vector<double> weights;
    /// Positions kept after the first pass, ascending. Weights elsewhere are exactly 0.
    std::vector<std::size_t> selected;
    double intercept = 0.0;
    std::vector<double> first_pass_weights;
};

std::size_t effective_k(std::size_t k, std::size_t length);

/// Generates element 0 plus n_samples masked variants; values are left empty.
PerturbationSet build_perturbations(std::span<const std::string> seq, std::size_t position,
                                    const SaliencyOptions& options);

/// Fills values by calling f once with the whole batch.
void evaluate_perturbations(PerturbationSet& set, const BlackBoxActivation& f);

SaliencyMap fit_saliency(const PerturbationSet& set, std::size_t k, double sigma);

SaliencyMap saliency(std::span<const std::string> seq, std::size_t position, const BlackBoxActivation& f,
                     const SaliencyOptions& options);

}  // namespace tfdl

namespace tfdl {

/// One exported saliency query with everything needed to reproduce it.
struct SaliencyRecord {
    std::uint64_t occ_index = 0;
    std::uint64_t seq_id = 0;
    std::size_t position = 0;
    std::uint32_t layer = 0;
    std::uint32_t factor = 0;
    std::vector<std::string> tokens;
    SaliencyMap map;
    SaliencyOptions options;
    double lambda = 0.0;
};

std::string saliency_record_to_json(const SaliencyRecord& record);
SaliencyRecord saliency_record_from_json(const std::string& line);

/// Newline-delimited records.
void write_saliency_records(const std::filesystem::path& path, std::span<const SaliencyRecord> records,
                            bool append = false);
std::vector<SaliencyRecord> read_saliency_records(const std::filesystem::path& path);

}  // namespace tfdl
