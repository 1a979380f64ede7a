#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tfdl/code_store.hpp"
#include "tfdl/embedding_store.hpp"

namespace tfdl {

/// Number of top activations averaged into an importance score.
inline constexpr std::size_t kImportanceCap = 1000;

struct ImportanceCurve {
    std::uint32_t factor = 0;
    std::vector<double> values;  // one per layer slot

    bool operator==(const ImportanceCurve&) const = default;
};

struct ActivationHit {
    std::uint64_t occ_index = 0;
    std::uint64_t seq_id = 0;
    std::uint32_t position = 0;
    std::string token;
    std::uint32_t layer = 0;
    double activation = 0.0;

    bool operator==(const ActivationHit&) const = default;
};

enum class FactorLevel { Low, MidHigh };

struct LevelLabel {
    FactorLevel level = FactorLevel::Low;
    std::uint32_t peak_layer = 0;
    /// Set for an all-zero curve.
    bool inactive = false;
};

std::string to_string(FactorLevel level);

/// The k largest activations of factor c at layer l, descending, ties by ascending occ_index.
std::vector<ActivationHit> top_activations(const CodeStore& codes, const EmbeddingStore& store,
                                           std::uint32_t factor, std::uint32_t layer, std::size_t k);

/// Per layer, the mean of the top-min(cap, n+) positive activations of the factor (0 if none).
ImportanceCurve importance_score(const CodeStore& codes, std::uint32_t factor, std::size_t cap = kImportanceCap);

/// Curves for every factor in one pass over the code store.
std::vector<ImportanceCurve> importance_scores(const CodeStore& codes, std::size_t cap = kImportanceCap);

/// floor(num_layers / 2): 6 for a 12-block model with 13 layer slots.
std::uint32_t default_split_layer(std::size_t num_layers);

LevelLabel classify_factor_level(const ImportanceCurve& curve, std::uint32_t split_layer);

/// One-dimensional logistic regression on a single factor activation.
struct SingleActivationClassifier {
    double intercept = 0.0;
    double slope = 0.0;
    /// Activation where the predicted probability crosses 0.5 (NaN if slope is 0).
    double decision_activation = 0.0;
    int iterations = 0;
    bool converged = false;

    std::size_t true_positive = 0;
    std::size_t false_positive = 0;
    std::size_t true_negative = 0;
    std::size_t false_negative = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double accuracy = 0.0;

    double probability(double activation) const;
    bool predict(double activation) const { return probability(activation) >= 0.5; }
};

/// Unregularized IRLS (Newton) fit to convergence 1e-8; metrics at threshold 0.5.
SingleActivationClassifier fit_single_activation_classifier(std::span<const double> activations,
                                                            std::span<const int> labels);

// Delimiter-separated exports, comma separated with a one-line header.
void write_curves_csv(const std::filesystem::path& path, std::span<const ImportanceCurve> curves);
std::vector<ImportanceCurve> read_curves_csv(const std::filesystem::path& path);
void write_hits_csv(const std::filesystem::path& path, std::span<const ActivationHit> hits);
void write_labels_csv(const std::filesystem::path& path, std::span<const ImportanceCurve> curves,
                      std::span<const LevelLabel> labels);

/// Reads "activation,label" rows (header line optional) for the disambiguation harness.
void read_activation_labels(const std::filesystem::path& path, std::vector<double>& activations,
                            std::vector<int>& labels);

std::string csv_escape(const std::string& field);

}  // namespace tfdl
