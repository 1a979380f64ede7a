#include "tfdl/report_emitter.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "tfdl/error.hpp"

namespace tfdl {

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw FormatError("cannot write " + path.string());
    }
    out << text;
    if (!out) {
        throw FormatError("write failed on " + path.string());
    }
}

double max_abs(std::span<const double> weights) {
    double m = 0.0;
    for (double w : weights) {
        m = std::max(m, std::abs(w));
    }
    return m;
}

const char* kPageStyle =
    "body{font-family:sans-serif;margin:2em;}"
    ".ctx{font-family:monospace;line-height:1.8;margin:0.4em 0;}"
    ".hit{color:#0000ff;font-weight:bold;}"
    "table{border-collapse:collapse;}td,th{border:1px solid #ccc;padding:2px 6px;}";

}  // namespace

ContextWindow context_window(std::span<const std::string> sequence, std::size_t position, std::size_t window) {
    if (position >= sequence.size()) {
        throw FormatError("context position outside sequence");
    }
    window = std::max<std::size_t>(window, 1);
    ContextWindow ctx;
    const std::size_t len = std::min(window, sequence.size());
    std::size_t start = position >= len / 2 ? position - len / 2 : 0;
    start = std::min(start, sequence.size() - len);
    ctx.start = start;
    ctx.highlight = position - start;
    ctx.tokens.assign(sequence.begin() + static_cast<std::ptrdiff_t>(start),
                      sequence.begin() + static_cast<std::ptrdiff_t>(start + len));
    return ctx;
}

FactorReport build_factor_report(const CodeStore& codes, const EmbeddingStore& store, const ImportanceCurve& curve,
                                 std::uint32_t split_layer, std::size_t top_k,
                                 std::span<const SaliencyRecord> saliency, std::size_t window) {
    FactorReport report;
    report.factor = curve.factor;
    report.curve = curve;
    report.label = classify_factor_level(curve, split_layer);
    report.layers.resize(codes.num_layers());
    for (std::uint32_t l = 0; l < codes.num_layers(); ++l) {
        for (auto& hit : top_activations(codes, store, curve.factor, l, top_k)) {
            ContextWindow ctx = context_window(store.sequence(hit.seq_id), hit.position, window);
            report.layers[l].push_back({std::move(hit), std::move(ctx)});
        }
    }
    for (const auto& rec : saliency) {
        if (rec.factor == curve.factor) {
            report.saliency.push_back(rec);
        }
    }
    return report;
}

std::string html_escape(const std::string& text) {
    std::string out;
    out.reserve(text.size());
    for (char ch : text) {
        switch (ch) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            case '\'': out += "&#39;"; break;
            default: out += ch;
        }
    }
    return out;
}

std::string saliency_style(double weight, double max_abs_weight) {
    if (weight == 0.0 || !(max_abs_weight > 0.0)) {
        return {};
    }
    const double opacity = std::min(1.0, std::abs(weight) / max_abs_weight);
    const char* rgb = weight > 0.0 ? "255,0,0" : "0,160,0";
    return std::string("background-color:rgba(") + rgb + "," + fixed(opacity, 3) + ");";
}

std::string factor_page_name(std::uint32_t factor) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%05u.html", factor);
    return buf;
}

std::string render_is_curves_svg(std::span<const ImportanceCurve> curves) {
    if (curves.empty()) {
        throw UsageError("no importance curves to plot");
    }
    constexpr double kWidth = 720, kHeight = 420;
    constexpr double kLeft = 60, kRight = 150, kTop = 20, kBottom = 50;
    const double plot_w = kWidth - kLeft - kRight;
    const double plot_h = kHeight - kTop - kBottom;

    std::size_t layers = 1;
    double y_max = 0.0;
    for (const auto& c : curves) {
        layers = std::max(layers, c.values.size());
        for (double v : c.values) {
            y_max = std::max(y_max, v);
        }
    }
    if (!(y_max > 0.0)) {
        y_max = 1.0;
    }
    const double x_span = layers > 1 ? static_cast<double>(layers - 1) : 1.0;
    auto px = [&](double layer) { return kLeft + plot_w * layer / x_span; };
    auto py = [&](double v) { return kTop + plot_h * (1.0 - v / y_max); };

    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n";
    s << "<rect x=\"0\" y=\"0\" width=\"" << kWidth << "\" height=\"" << kHeight << "\" fill=\"#ffffff\"/>\n";
    // axes
    s << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + plot_h << "\" x2=\"" << kLeft + plot_w << "\" y2=\""
      << kTop + plot_h << "\" stroke=\"#000000\"/>\n";
    s << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kTop + plot_h
      << "\" stroke=\"#000000\"/>\n";
    for (std::size_t l = 0; l < layers; ++l) {
        s << "<text x=\"" << fixed(px(static_cast<double>(l)), 2) << "\" y=\"" << kTop + plot_h + 16
          << "\" font-size=\"11\" text-anchor=\"middle\">" << l << "</text>\n";
    }
    for (int tick = 0; tick <= 4; ++tick) {
        const double v = y_max * tick / 4.0;
        s << "<text x=\"" << kLeft - 6 << "\" y=\"" << fixed(py(v) + 4, 2)
          << "\" font-size=\"11\" text-anchor=\"end\">" << fixed(v, 3) << "</text>\n";
    }
    s << "<text x=\"" << fixed(kLeft + plot_w / 2, 2) << "\" y=\"" << kHeight - 10
      << "\" font-size=\"13\" text-anchor=\"middle\">layer</text>\n";
    s << "<text x=\"16\" y=\"" << fixed(kTop + plot_h / 2, 2) << "\" font-size=\"13\" text-anchor=\"middle\" "
      << "transform=\"rotate(-90 16 " << fixed(kTop + plot_h / 2, 2) << ")\">importance score</text>\n";

    for (std::size_t i = 0; i < curves.size(); ++i) {
        const auto& c = curves[i];
        const char* color = kPalette[i % std::size(kPalette)];
        s << "<polyline class=\"is-curve\" data-factor=\"" << c.factor << "\" fill=\"none\" stroke=\"" << color
          << "\" stroke-width=\"2\" points=\"";
        for (std::size_t l = 0; l < c.values.size(); ++l) {
            s << (l ? " " : "") << fixed(px(static_cast<double>(l)), 2) << ',' << fixed(py(c.values[l]), 2);
        }
        s << "\"/>\n";
        const double ly = kTop + 14.0 * static_cast<double>(i) + 8;
        s << "<g class=\"legend\"><line x1=\"" << kLeft + plot_w + 12 << "\" y1=\"" << fixed(ly, 2) << "\" x2=\""
          << kLeft + plot_w + 32 << "\" y2=\"" << fixed(ly, 2) << "\" stroke=\"" << color
          << "\" stroke-width=\"2\"/><text x=\"" << kLeft + plot_w + 36 << "\" y=\"" << fixed(ly + 4, 2)
          << "\" font-size=\"11\">factor " << c.factor << "</text></g>\n";
    }
    s << "</svg>\n";
    return s.str();
}

namespace {

void render_tokens(std::ostringstream& s, std::span<const std::string> tokens, std::size_t offset,
                   std::ptrdiff_t highlight, std::span<const double> weights, double norm) {
    s << "<div class=\"ctx\">";
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const std::size_t seq_index = offset + i;
        std::string style;
        if (seq_index < weights.size()) {
            style = saliency_style(weights[seq_index], norm);
        }
        const bool is_hit = static_cast<std::ptrdiff_t>(i) == highlight;
        s << (i ? " " : "") << "<span";
        if (is_hit) {
            s << " class=\"hit\"";
        }
        if (!style.empty()) {
            s << " style=\"" << style << "\"";
        }
        s << '>' << html_escape(tokens[i]) << "</span>";
    }
    s << "</div>\n";
}

const SaliencyRecord* find_saliency(const FactorReport& report, const ActivationHit& hit) {
    for (const auto& rec : report.saliency) {
        if (rec.occ_index == hit.occ_index && rec.layer == hit.layer) {
            return &rec;
        }
    }
    return nullptr;
}

}  // namespace

std::string render_factor_page(const FactorReport& report) {
    std::ostringstream s;
    s << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>factor " << report.factor
      << "</title><style>" << kPageStyle << "</style></head><body>\n";
    s << "<h1>Transformer factor " << report.factor << "</h1>\n";
    s << "<p>level: " << to_string(report.label.level) << ", peak layer: " << report.label.peak_layer
      << (report.label.inactive ? " (inactive)" : "") << "</p>\n";
    s << "<table><tr><th>layer</th>";
    for (std::size_t l = 0; l < report.curve.values.size(); ++l) {
        s << "<td>" << l << "</td>";
    }
    s << "</tr><tr><th>importance</th>";
    for (double v : report.curve.values) {
        s << "<td>" << fixed(v, 4) << "</td>";
    }
    s << "</tr></table>\n";

    for (std::size_t l = 0; l < report.layers.size(); ++l) {
        if (report.layers[l].empty()) {
            continue;
        }
        s << "<h2>Layer " << l << "</h2>\n<ol>\n";
        for (const auto& hc : report.layers[l]) {
            const SaliencyRecord* rec = find_saliency(report, hc.hit);
            std::span<const double> weights;
            if (rec != nullptr) {
                if (rec->seq_id != hc.hit.seq_id || rec->position != hc.hit.position) {
                    throw FormatError("saliency record does not match its activation hit");
                }
                weights = rec->map.weights;
            }
            s << "<li>activation " << fixed(hc.hit.activation, 4) << " &middot; occurrence " << hc.hit.occ_index
              << "\n";
            render_tokens(s, hc.window.tokens, hc.window.start, static_cast<std::ptrdiff_t>(hc.window.highlight),
                          weights, max_abs(weights));
            s << "</li>\n";
        }
        s << "</ol>\n";
    }

    if (!report.saliency.empty()) {
        s << "<h2>Saliency maps</h2>\n";
        for (const auto& rec : report.saliency) {
            s << "<h3>occurrence " << rec.occ_index << ", layer " << rec.layer << "</h3>\n";
            s << "<p>n_samples " << rec.options.n_samples << ", k " << effective_k(rec.options.k, rec.tokens.size())
              << ", sigma " << fixed(rec.options.sigma, 4) << ", mask_prob " << fixed(rec.options.mask_prob, 4)
              << ", seed " << rec.options.seed << ", intercept " << fixed(rec.map.intercept, 6) << "</p>\n";
            render_tokens(s, rec.tokens, 0, static_cast<std::ptrdiff_t>(rec.position), rec.map.weights,
                          max_abs(rec.map.weights));
        }
    }
    s << "</body></html>\n";
    return s.str();
}

std::string render_index(std::span<const FactorReport> reports, const std::string& config_text) {
    std::ostringstream s;
    s << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>transformer factors</title><style>"
      << kPageStyle << "</style></head><body>\n";
    s << "<h1>Transformer factors</h1>\n<img src=\"curves.svg\" alt=\"importance score curves\">\n";
    s << "<table><tr><th>factor</th><th>level</th><th>peak layer</th><th>max importance</th></tr>\n";
    for (const auto& r : reports) {
        double peak = 0.0;
        for (double v : r.curve.values) {
            peak = std::max(peak, v);
        }
        s << "<tr><td><a href=\"factors/" << factor_page_name(r.factor) << "\">" << r.factor << "</a></td><td>"
          << to_string(r.label.level) << (r.label.inactive ? " (inactive)" : "") << "</td><td>"
          << r.label.peak_layer << "</td><td>" << fixed(peak, 4) << "</td></tr>\n";
    }
    s << "</table>\n";
    if (!config_text.empty()) {
        s << "<h2>Configuration</h2>\n<pre>" << html_escape(config_text) << "</pre>\n";
    }
    s << "</body></html>\n";
    return s.str();
}

void emit_is_curves(std::span<const ImportanceCurve> curves, const std::filesystem::path& path) {
    write_text(path, render_is_curves_svg(curves));
}

void emit_factor_page(const FactorReport& report, const std::filesystem::path& path) {
    write_text(path, render_factor_page(report));
}

void emit_report_tree(const std::filesystem::path& dir, std::span<const FactorReport> reports,
                      const std::string& config_text) {
    std::vector<ImportanceCurve> curves;
    curves.reserve(reports.size());
    for (const auto& r : reports) {
        curves.push_back(r.curve);
    }
    emit_is_curves(curves, dir / "curves.svg");
    for (const auto& r : reports) {
        emit_factor_page(r, dir / "factors" / factor_page_name(r.factor));
    }
    write_text(dir / "index.html", render_index(reports, config_text));
}

}  // namespace tfdl
