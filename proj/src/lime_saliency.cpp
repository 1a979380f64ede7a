#include "tfdl/lime_saliency.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tfdl/error.hpp"

namespace tfdl {

MaskedSequence random_mask(std::span<const std::string> seq, std::size_t position, double mask_prob,
                           std::mt19937_64& rng, const std::string& unknown) {
    if (!(mask_prob >= 0.0 && mask_prob < 1.0)) {
        throw UsageError("mask_prob must lie in [0, 1)");
    }
    if (position >= seq.size()) {
        throw UsageError("queried position " + std::to_string(position) + " outside sequence of length " +
                         std::to_string(seq.size()));
    }
    MaskedSequence out;
    out.tokens.assign(seq.begin(), seq.end());
    out.mask.assign(seq.size(), 1);
    for (std::size_t t = 0; t < seq.size(); ++t) {
        // 53-bit uniform in [0, 1); one draw per position keeps streams aligned.
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        if (t != position && u < mask_prob) {
            out.tokens[t] = unknown;
            out.mask[t] = 0;
        }
    }
    return out;
}

double mask_distance(std::span<const std::uint8_t> mask) {
    if (mask.empty()) {
        return 0.0;
    }
    const auto ones = std::count_if(mask.begin(), mask.end(), [](std::uint8_t v) { return v != 0; });
    return std::sqrt(static_cast<double>(ones) / static_cast<double>(mask.size()));
}

RidgeFit weighted_ridge(const Eigen::MatrixXd& masks, const Eigen::VectorXd& values,
                        const Eigen::VectorXd& dist_weights, double sigma) {
    const Eigen::Index n = masks.rows();
    if (values.size() != n || dist_weights.size() != n) {
        throw FormatError("weighted_ridge: shape mismatch");
    }
    if (n < 2) {
        throw UsageError("weighted_ridge needs at least 2 samples");
    }
    if (!(sigma > 0.0)) {
        throw UsageError("ridge sigma must be positive");
    }
    if (!masks.allFinite() || !values.allFinite() || !dist_weights.allFinite()) {
        throw NumericalError("weighted_ridge: non-finite input");
    }
    if ((dist_weights.array() < 0.0).any()) {
        throw NumericalError("weighted_ridge: negative sample weight");
    }
    const double total = dist_weights.sum();
    if (!(total > 0.0)) {
        throw NumericalError("weighted_ridge: all sample weights are zero");
    }

    const Eigen::RowVectorXd x_mean = (dist_weights.transpose() * masks) / total;
    const double y_mean = dist_weights.dot(values) / total;
    const Eigen::MatrixXd xc = masks.rowwise() - x_mean;
    const Eigen::VectorXd yc = values.array() - y_mean;

    Eigen::MatrixXd gram = xc.transpose() * dist_weights.asDiagonal() * xc;
    gram.diagonal().array() += sigma;
    const Eigen::VectorXd rhs = xc.transpose() * dist_weights.cwiseProduct(yc);
    const Eigen::LLT<Eigen::MatrixXd> llt(gram);
    if (llt.info() != Eigen::Success) {
        throw NumericalError("weighted_ridge: normal matrix not positive definite");
    }
    RidgeFit fit;
    fit.weights = llt.solve(rhs);
    fit.intercept = y_mean - x_mean.dot(fit.weights);
    return fit;
}

Eigen::MatrixXd PerturbationSet::mask_matrix() const {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(base_seq.size()));
    for (std::size_t i = 0; i < samples.size(); ++i) {
        for (std::size_t t = 0; t < base_seq.size(); ++t) {
            x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)) = samples[i].mask[t];
        }
    }
    return x;
}

Eigen::VectorXd PerturbationSet::distance_weights() const {
    Eigen::VectorXd w(static_cast<Eigen::Index>(samples.size()));
    for (std::size_t i = 0; i < samples.size(); ++i) {
        w(static_cast<Eigen::Index>(i)) = mask_distance(samples[i].mask);
    }
    return w;
}

std::vector<std::vector<std::string>> PerturbationSet::sequences() const {
    std::vector<std::vector<std::string>> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
        out.push_back(s.tokens);
    }
    return out;
}

std::size_t effective_k(std::size_t k, std::size_t length) {
    return std::min(k == 0 ? std::size_t{10} : k, length);
}

PerturbationSet build_perturbations(std::span<const std::string> seq, std::size_t position,
                                    const SaliencyOptions& options) {
    if (position >= seq.size()) {
        throw UsageError("queried position " + std::to_string(position) + " outside sequence of length " +
                         std::to_string(seq.size()));
    }
    if (options.n_samples < 2) {
        throw UsageError("n_samples must be at least 2");
    }
    PerturbationSet set;
    set.base_seq.assign(seq.begin(), seq.end());
    set.position = position;
    set.samples.reserve(options.n_samples + 1);
    set.samples.push_back({set.base_seq, std::vector<std::uint8_t>(seq.size(), 1)});
    std::mt19937_64 rng(options.seed);
    for (std::size_t i = 0; i < options.n_samples; ++i) {
        set.samples.push_back(random_mask(seq, position, options.mask_prob, rng, options.unknown));
    }
    return set;
}

void evaluate_perturbations(PerturbationSet& set, const BlackBoxActivation& f) {
    auto values = f(set.sequences());
    if (values.size() != set.samples.size()) {
        throw FormatError("activation provider returned " + std::to_string(values.size()) + " values for " +
                          std::to_string(set.samples.size()) + " sequences");
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) {
            std::string text;
            for (const auto& tok : set.samples[i].tokens) {
                text += (text.empty() ? "" : " ") + tok;
            }
            throw NumericalError("non-finite activation for perturbed sequence: " + text);
        }
    }
    set.values = std::move(values);
}

SaliencyMap fit_saliency(const PerturbationSet& set, std::size_t k, double sigma) {
    if (set.values.size() != set.samples.size()) {
        throw UsageError("perturbation set has not been evaluated");
    }
    const std::size_t length = set.base_seq.size();
    const Eigen::MatrixXd x = set.mask_matrix();
    const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(set.values.data(),
                                                                static_cast<Eigen::Index>(set.values.size()));
    const Eigen::VectorXd dist = set.distance_weights();

    const RidgeFit first = weighted_ridge(x, y, dist, sigma);
    SaliencyMap out;
    out.first_pass_weights.assign(first.weights.data(), first.weights.data() + first.weights.size());

    std::vector<std::size_t> order(length);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return std::abs(first.weights(static_cast<Eigen::Index>(a))) >
               std::abs(first.weights(static_cast<Eigen::Index>(b)));
    });
    const std::size_t keep = effective_k(k, length);
    out.selected.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep));
    std::sort(out.selected.begin(), out.selected.end());

    Eigen::MatrixXd sub(x.rows(), static_cast<Eigen::Index>(keep));
    for (std::size_t j = 0; j < keep; ++j) {
        sub.col(static_cast<Eigen::Index>(j)) = x.col(static_cast<Eigen::Index>(out.selected[j]));
    }
    const RidgeFit second = weighted_ridge(sub, y, dist, sigma);
    out.weights.assign(length, 0.0);
    for (std::size_t j = 0; j < keep; ++j) {
        out.weights[out.selected[j]] = second.weights(static_cast<Eigen::Index>(j));
    }
    out.intercept = second.intercept;
    return out;
}

SaliencyMap saliency(std::span<const std::string> seq, std::size_t position, const BlackBoxActivation& f,
                     const SaliencyOptions& options) {
    PerturbationSet set = build_perturbations(seq, position, options);
    evaluate_perturbations(set, f);
    return fit_saliency(set, options.k, options.sigma);
}

}  // namespace tfdl

#include <fstream>

#include "json.hpp"

namespace tfdl {

using nlohmann::json;

std::string saliency_record_to_json(const SaliencyRecord& r) {
    json j;
    j["occ_index"] = r.occ_index;
    j["seq_id"] = r.seq_id;
    j["position"] = r.position;
    j["layer"] = r.layer;
    j["factor"] = r.factor;
    j["tokens"] = r.tokens;
    j["weights"] = r.map.weights;
    j["intercept"] = r.map.intercept;
    j["selected"] = r.map.selected;
    j["first_pass_weights"] = r.map.first_pass_weights;
    j["n_samples"] = r.options.n_samples;
    j["k"] = effective_k(r.options.k, r.tokens.size());
    j["sigma"] = r.options.sigma;
    j["mask_prob"] = r.options.mask_prob;
    j["seed"] = r.options.seed;
    j["unknown"] = r.options.unknown;
    j["lambda"] = r.lambda;
    return j.dump();
}

SaliencyRecord saliency_record_from_json(const std::string& line) {
    SaliencyRecord r;
    try {
        const json j = json::parse(line);
        r.occ_index = j.at("occ_index").get<std::uint64_t>();
        r.seq_id = j.at("seq_id").get<std::uint64_t>();
        r.position = j.at("position").get<std::size_t>();
        r.layer = j.at("layer").get<std::uint32_t>();
        r.factor = j.at("factor").get<std::uint32_t>();
        r.tokens = j.at("tokens").get<std::vector<std::string>>();
        r.map.weights = j.at("weights").get<std::vector<double>>();
        r.map.intercept = j.at("intercept").get<double>();
        r.map.selected = j.at("selected").get<std::vector<std::size_t>>();
        r.map.first_pass_weights = j.value("first_pass_weights", std::vector<double>{});
        r.options.n_samples = j.at("n_samples").get<std::size_t>();
        r.options.k = j.at("k").get<std::size_t>();
        r.options.sigma = j.at("sigma").get<double>();
        r.options.mask_prob = j.at("mask_prob").get<double>();
        r.options.seed = j.at("seed").get<std::uint64_t>();
        r.options.unknown = j.value("unknown", std::string(kUnknownToken));
        r.lambda = j.value("lambda", 0.0);
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed saliency record: ") + e.what());
    }
    if (r.map.weights.size() != r.tokens.size() || r.position >= r.tokens.size()) {
        throw FormatError("saliency record weights do not match its token list");
    }
    return r;
}

void write_saliency_records(const std::filesystem::path& path, std::span<const SaliencyRecord> records,
                            bool append) {
    std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
    if (!out) {
        throw FormatError("cannot write " + path.string());
    }
    for (const auto& r : records) {
        out << saliency_record_to_json(r) << '\n';
    }
    if (!out) {
        throw FormatError("write failed on " + path.string());
    }
}

std::vector<SaliencyRecord> read_saliency_records(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError("cannot open " + path.string());
    }
    std::vector<SaliencyRecord> out;
    for (std::string line; std::getline(in, line);) {
        if (!line.empty()) {
            out.push_back(saliency_record_from_json(line));
        }
    }
    return out;
}

}  // namespace tfdl
