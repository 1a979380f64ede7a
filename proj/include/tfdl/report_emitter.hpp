#pragma once

// Static, self-contained report output:
//
//   <dir>/index.html
//   <dir>/curves.svg
//   <dir>/factors/<id>.html    id zero-padded to 5 digits
//
// Emitters are pure functions of their inputs and produce byte-identical
// files for identical inputs.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tfdl/analysis.hpp"
#include "tfdl/embedding_store.hpp"
#include "tfdl/lime_saliency.hpp"

namespace tfdl {

inline constexpr std::size_t kDefaultContextWindow = 64;

struct ContextWindow {
    std::vector<std::string> tokens;
    /// Sequence index of tokens[0].
    std::size_t start = 0;
    /// Index into tokens of the activated token.
    std::size_t highlight = 0;
};

struct HitContext {
    ActivationHit hit;
    ContextWindow window;
};

struct FactorReport {
    std::uint32_t factor = 0;
    ImportanceCurve curve;
    LevelLabel label;
    /// Top hits per layer slot; layers with no hits may be empty.
    std::vector<std::vector<HitContext>> layers;
    std::vector<SaliencyRecord> saliency;
};

/// At most `window` tokens of the sequence, centered on `position`.
ContextWindow context_window(std::span<const std::string> sequence, std::size_t position,
                             std::size_t window = kDefaultContextWindow);

FactorReport build_factor_report(const CodeStore& codes, const EmbeddingStore& store, const ImportanceCurve& curve,
                                 std::uint32_t split_layer, std::size_t top_k,
                                 std::span<const SaliencyRecord> saliency = {},
                                 std::size_t window = kDefaultContextWindow);

std::string html_escape(const std::string& text);

/// Inline CSS for a token with saliency weight w given the normalizer max|w|.
/// Empty for w == 0; red for positive, green for negative, opacity |w| / max|w|.
std::string saliency_style(double weight, double max_abs);

std::string render_is_curves_svg(std::span<const ImportanceCurve> curves);
std::string render_factor_page(const FactorReport& report);
std::string render_index(std::span<const FactorReport> reports, const std::string& config_text);

void emit_is_curves(std::span<const ImportanceCurve> curves, const std::filesystem::path& path);
void emit_factor_page(const FactorReport& report, const std::filesystem::path& path);

std::string factor_page_name(std::uint32_t factor);

/// Writes the full output tree.
void emit_report_tree(const std::filesystem::path& dir, std::span<const FactorReport> reports,
                      const std::string& config_text = {});

}  // namespace tfdl
