#include "tfdl/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "tfdl/error.hpp"

namespace tfdl {

std::string to_string(FactorLevel level) {
    return level == FactorLevel::Low ? "Low" : "MidHigh";
}

namespace {

void check_factor(const CodeStore& codes, std::uint32_t factor) {
    if (factor >= codes.m()) {
        throw UsageError("factor " + std::to_string(factor) + " out of range (m=" + std::to_string(codes.m()) + ")");
    }
}

// Mean of the `cap` largest values, summed in descending order.
double top_mean(std::vector<float>& values, std::size_t cap) {
    if (values.empty() || cap == 0) {
        return 0.0;
    }
    const std::size_t k = std::min(cap, values.size());
    std::partial_sort(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k), values.end(),
                      std::greater<float>());
    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        sum += values[i];
    }
    return sum / static_cast<double>(k);
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::ofstream open_csv(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw FormatError("cannot write " + path.string());
    }
    return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (ch == '"') {
                quoted = false;
            } else {
                cur += ch;
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    fields.push_back(std::move(cur));
    return fields;
}

double parse_double(const std::string& s, const std::string& where) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != s.size()) {
        throw FormatError(where + ": expected a number, got \"" + s + "\"");
    }
    return v;
}

}  // namespace

std::vector<ActivationHit> top_activations(const CodeStore& codes, const EmbeddingStore& store,
                                           std::uint32_t factor, std::uint32_t layer, std::size_t k) {
    check_factor(codes, factor);
    if (layer >= codes.num_layers()) {
        throw UsageError("layer " + std::to_string(layer) + " out of range");
    }
    if (codes.num_layers() != store.num_layers() || codes.num_rows() != store.num_rows()) {
        throw FormatError("code store does not match embedding store shape");
    }
    std::vector<std::pair<float, std::uint64_t>> candidates;
    for (std::uint64_t occ = 0; occ < store.num_occurrences(); ++occ) {
        const float v = codes.value(occ * codes.num_layers() + layer, factor);
        if (v > 0.0f) {
            candidates.emplace_back(v, occ);
        }
    }
    auto order = [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
    };
    const std::size_t n = std::min(k, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(n), candidates.end(),
                      order);
    std::vector<ActivationHit> hits;
    hits.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& meta = store.occurrence(candidates[i].second);
        hits.push_back({meta.occ_index, meta.seq_id, meta.position, meta.token, layer, candidates[i].first});
    }
    return hits;
}

ImportanceCurve importance_score(const CodeStore& codes, std::uint32_t factor, std::size_t cap) {
    check_factor(codes, factor);
    const std::uint32_t layers = codes.num_layers();
    std::vector<std::vector<float>> per_layer(layers);
    for (std::uint64_t row = 0; row < codes.num_rows(); ++row) {
        const float v = codes.value(row, factor);
        if (v > 0.0f) {
            per_layer[row % layers].push_back(v);
        }
    }
    ImportanceCurve curve{factor, std::vector<double>(layers, 0.0)};
    for (std::uint32_t l = 0; l < layers; ++l) {
        curve.values[l] = top_mean(per_layer[l], cap);
    }
    return curve;
}

std::vector<ImportanceCurve> importance_scores(const CodeStore& codes, std::size_t cap) {
    const std::uint32_t layers = codes.num_layers();
    const std::uint32_t m = codes.m();
    std::vector<std::vector<float>> buckets(std::size_t{m} * layers);
    for (std::uint64_t row = 0; row < codes.num_rows(); ++row) {
        const auto factors = codes.row_factors(row);
        const auto values = codes.row_values(row);
        const std::size_t l = row % layers;
        for (std::size_t k = 0; k < factors.size(); ++k) {
            if (values[k] > 0.0f) {
                buckets[std::size_t{factors[k]} * layers + l].push_back(values[k]);
            }
        }
    }
    std::vector<ImportanceCurve> curves(m);
    for (std::uint32_t c = 0; c < m; ++c) {
        curves[c].factor = c;
        curves[c].values.assign(layers, 0.0);
        for (std::uint32_t l = 0; l < layers; ++l) {
            curves[c].values[l] = top_mean(buckets[std::size_t{c} * layers + l], cap);
        }
    }
    return curves;
}

std::uint32_t default_split_layer(std::size_t num_layers) {
    return static_cast<std::uint32_t>(num_layers / 2);
}

LevelLabel classify_factor_level(const ImportanceCurve& curve, std::uint32_t split_layer) {
    if (curve.values.empty()) {
        throw UsageError("empty importance curve");
    }
    LevelLabel label;
    double best = curve.values[0];
    for (std::size_t l = 0; l < curve.values.size(); ++l) {
        const double v = curve.values[l];
        if (!std::isfinite(v) || v < 0.0) {
            throw FormatError("importance curve of factor " + std::to_string(curve.factor) +
                              " has a negative or non-finite value");
        }
        if (v > best) {
            best = v;
            label.peak_layer = static_cast<std::uint32_t>(l);
        }
    }
    label.inactive = best == 0.0;
    label.level = label.peak_layer <= split_layer ? FactorLevel::Low : FactorLevel::MidHigh;
    return label;
}

double SingleActivationClassifier::probability(double activation) const {
    return 1.0 / (1.0 + std::exp(-(intercept + slope * activation)));
}

SingleActivationClassifier fit_single_activation_classifier(std::span<const double> activations,
                                                            std::span<const int> labels) {
    if (activations.size() != labels.size()) {
        throw UsageError("activation and label counts differ");
    }
    std::size_t positives = 0;
    for (int y : labels) {
        if (y != 0 && y != 1) {
            throw FormatError("labels must be 0 or 1");
        }
        positives += static_cast<std::size_t>(y);
    }
    if (positives == 0 || positives == labels.size()) {
        throw UsageError("single-class input: both labels must be present");
    }
    const std::size_t n = activations.size();

    // Fit on standardized activations for conditioning, then map back.
    double mean = 0.0;
    for (double a : activations) {
        mean += a;
    }
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double a : activations) {
        var += (a - mean) * (a - mean);
    }
    const double scale = var > 0.0 ? std::sqrt(var / static_cast<double>(n)) : 1.0;

    auto log_likelihood = [&](double b0, double b1) {
        double ll = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double z = b0 + b1 * (activations[i] - mean) / scale;
            // log(1 + e^z) computed stably
            const double softplus = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
            ll += labels[i] * z - softplus;
        }
        return ll;
    };

    double b0 = 0.0;
    double b1 = 0.0;
    double ll = log_likelihood(b0, b1);
    SingleActivationClassifier model;
    constexpr int kMaxIter = 200;
    for (int it = 0; it < kMaxIter; ++it) {
        model.iterations = it + 1;
        double g0 = 0.0, g1 = 0.0, h00 = 0.0, h01 = 0.0, h11 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double x = (activations[i] - mean) / scale;
            const double p = 1.0 / (1.0 + std::exp(-(b0 + b1 * x)));
            const double w = p * (1.0 - p);
            g0 += labels[i] - p;
            g1 += (labels[i] - p) * x;
            h00 += w;
            h01 += w * x;
            h11 += w * x * x;
        }
        const double det = h00 * h11 - h01 * h01;
        if (!(det > std::numeric_limits<double>::min()) || !std::isfinite(det)) {
            // Separable data drives the weights to zero; the fit so far already separates.
            break;
        }
        double d0 = (h11 * g0 - h01 * g1) / det;
        double d1 = (h00 * g1 - h01 * g0) / det;
        double step = 1.0;
        double next_ll = log_likelihood(b0 + d0, b1 + d1);
        while (next_ll < ll && step > 1e-10) {
            step *= 0.5;
            next_ll = log_likelihood(b0 + step * d0, b1 + step * d1);
        }
        if (next_ll < ll) {
            break;
        }
        b0 += step * d0;
        b1 += step * d1;
        ll = next_ll;
        if (std::max(std::abs(step * d0), std::abs(step * d1)) < 1e-8) {
            model.converged = true;
            break;
        }
    }

    model.slope = b1 / scale;
    model.intercept = b0 - b1 * mean / scale;
    model.decision_activation =
        model.slope != 0.0 ? -model.intercept / model.slope : std::numeric_limits<double>::quiet_NaN();

    for (std::size_t i = 0; i < n; ++i) {
        const double z = b0 + b1 * (activations[i] - mean) / scale;
        const bool predicted = z >= 0.0;
        const bool actual = labels[i] == 1;
        if (predicted && actual) {
            ++model.true_positive;
        } else if (predicted) {
            ++model.false_positive;
        } else if (actual) {
            ++model.false_negative;
        } else {
            ++model.true_negative;
        }
    }
    const auto tp = static_cast<double>(model.true_positive);
    const auto fp = static_cast<double>(model.false_positive);
    const auto fn = static_cast<double>(model.false_negative);
    model.precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    model.recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    model.f1 = tp > 0 ? 2.0 * tp / (2.0 * tp + fp + fn) : 0.0;
    model.accuracy = static_cast<double>(model.true_positive + model.true_negative) / static_cast<double>(n);
    return model;
}

std::string csv_escape(const std::string& field) {
    if (field.find_first_of(",\"\n\r") == std::string::npos) {
        return field;
    }
    std::string out = "\"";
    for (char ch : field) {
        if (ch == '"') {
            out += '"';
        }
        out += ch;
    }
    out += '"';
    return out;
}

void write_curves_csv(const std::filesystem::path& path, std::span<const ImportanceCurve> curves) {
    auto out = open_csv(path);
    out << "factor,layer,value\n";
    for (const auto& c : curves) {
        for (std::size_t l = 0; l < c.values.size(); ++l) {
            out << c.factor << ',' << l << ',' << format_double(c.values[l]) << '\n';
        }
    }
    if (!out) {
        throw FormatError("write failed on " + path.string());
    }
}

std::vector<ImportanceCurve> read_curves_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError("cannot open " + path.string());
    }
    std::string line;
    if (!std::getline(in, line) || line.rfind("factor,layer,value", 0) != 0) {
        throw FormatError(path.string() + ": missing curves header");
    }
    std::vector<ImportanceCurve> curves;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        const std::string where = path.string() + ":" + std::to_string(line_no);
        const auto f = split_csv_line(line);
        if (f.size() != 3) {
            throw FormatError(where + ": expected 3 fields");
        }
        const auto factor = static_cast<std::uint32_t>(parse_double(f[0], where));
        const auto layer = static_cast<std::size_t>(parse_double(f[1], where));
        const double value = parse_double(f[2], where);
        if (curves.empty() || curves.back().factor != factor) {
            curves.push_back({factor, {}});
        }
        if (layer != curves.back().values.size()) {
            throw FormatError(where + ": layers must be listed in order per factor");
        }
        curves.back().values.push_back(value);
    }
    return curves;
}

void write_hits_csv(const std::filesystem::path& path, std::span<const ActivationHit> hits) {
    auto out = open_csv(path);
    out << "rank,occ_index,seq_id,position,token,layer,activation\n";
    for (std::size_t i = 0; i < hits.size(); ++i) {
        const auto& h = hits[i];
        out << (i + 1) << ',' << h.occ_index << ',' << h.seq_id << ',' << h.position << ',' << csv_escape(h.token)
            << ',' << h.layer << ',' << format_double(h.activation) << '\n';
    }
    if (!out) {
        throw FormatError("write failed on " + path.string());
    }
}

void write_labels_csv(const std::filesystem::path& path, std::span<const ImportanceCurve> curves,
                      std::span<const LevelLabel> labels) {
    auto out = open_csv(path);
    out << "factor,peak_layer,label,inactive\n";
    for (std::size_t i = 0; i < curves.size(); ++i) {
        out << curves[i].factor << ',' << labels[i].peak_layer << ',' << to_string(labels[i].level) << ','
            << (labels[i].inactive ? 1 : 0) << '\n';
    }
    if (!out) {
        throw FormatError("write failed on " + path.string());
    }
}

void read_activation_labels(const std::filesystem::path& path, std::vector<double>& activations,
                            std::vector<int>& labels) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError("cannot open " + path.string());
    }
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        const auto f = split_csv_line(line);
        if (line_no == 1 && !f.empty() && f[0] == "activation") {
            continue;
        }
        const std::string where = path.string() + ":" + std::to_string(line_no);
        if (f.size() != 2) {
            throw FormatError(where + ": expected activation,label");
        }
        activations.push_back(parse_double(f[0], where));
        const double y = parse_double(f[1], where);
        if (y != 0.0 && y != 1.0) {
            throw FormatError(where + ": label must be 0 or 1");
        }
        labels.push_back(static_cast<int>(y));
    }
}

}  // namespace tfdl
