#include "tfdl/synthetic.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <tuple>

#include "tfdl/dictionary_learner.hpp"
#include "tfdl/error.hpp"

namespace tfdl {

Eigen::MatrixXd write_synthetic_store(const std::filesystem::path& dir, const SyntheticConfig& config) {
    if (config.active == 0 || config.active > config.m || config.seq_len == 0) {
        throw UsageError("synthetic corpus needs 1 <= active <= m and seq_len >= 1");
    }
    const Eigen::MatrixXd truth = init_dictionary(config.d, config.m, config.seed ^ 0x5eed0fa7ULL).phi;
    std::mt19937_64 rng(config.seed);
    std::uniform_real_distribution<double> coef(config.coef_min, config.coef_max);

    StoreAttributes attrs{{"generator", "synthetic"},
                          {"seed", std::to_string(config.seed)},
                          {"active", std::to_string(config.active)}};
    StoreWriter writer(dir, config.d, config.num_layers, attrs);
    SequenceTable sequences;
    std::vector<std::uint32_t> ids(config.m);
    std::iota(ids.begin(), ids.end(), 0u);

    for (std::uint64_t o = 0; o < config.num_occurrences; ++o) {
        const std::uint64_t seq = o / config.seq_len;
        const auto pos = static_cast<std::uint32_t>(o % config.seq_len);
        std::string token = config.vocab_size == 0 ? "t" + std::to_string(o)
                                                   : "w" + std::to_string(rng() % config.vocab_size);
        sequences[seq].push_back(token);

        OccurrenceRecord rec;
        rec.meta = {o, seq, pos, token};
        rec.vectors.reserve(std::size_t{config.d} * config.num_layers);
        for (std::uint32_t l = 0; l < config.num_layers; ++l) {
            // Partial Fisher-Yates picks `active` distinct atoms.
            for (std::uint32_t k = 0; k < config.active; ++k) {
                std::uniform_int_distribution<std::uint32_t> pick(k, config.m - 1);
                std::swap(ids[k], ids[pick(rng)]);
            }
            Eigen::VectorXd x = Eigen::VectorXd::Zero(config.d);
            for (std::uint32_t k = 0; k < config.active; ++k) {
                x += coef(rng) * truth.col(ids[k]);
            }
            for (std::uint32_t i = 0; i < config.d; ++i) {
                rec.vectors.push_back(static_cast<float>(x(i)));
            }
        }
        writer.add(rec);
    }
    writer.finish(sequences);
    return truth;
}

double recovered_fraction(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& learned, double threshold) {
    if (truth.rows() != learned.rows()) {
        throw UsageError("dictionaries have different dimension");
    }
    const Eigen::MatrixXd t = truth.colwise().normalized();
    Eigen::MatrixXd l = learned;
    for (Eigen::Index c = 0; c < l.cols(); ++c) {
        const double n = l.col(c).norm();
        if (n > 0.0) {
            l.col(c) /= n;
        }
    }
    const Eigen::MatrixXd cos = t.transpose() * l;
    std::vector<std::tuple<double, Eigen::Index, Eigen::Index>> pairs;
    pairs.reserve(static_cast<std::size_t>(cos.size()));
    for (Eigen::Index i = 0; i < cos.rows(); ++i) {
        for (Eigen::Index j = 0; j < cos.cols(); ++j) {
            pairs.emplace_back(cos(i, j), i, j);
        }
    }
    std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) {
        if (std::get<0>(a) != std::get<0>(b)) {
            return std::get<0>(a) > std::get<0>(b);
        }
        return std::tie(std::get<1>(a), std::get<2>(a)) < std::tie(std::get<1>(b), std::get<2>(b));
    });
    std::vector<bool> used_t(static_cast<std::size_t>(t.cols())), used_l(static_cast<std::size_t>(l.cols()));
    std::size_t matched = 0;
    for (const auto& [c, i, j] : pairs) {
        if (c < threshold) {
            break;
        }
        if (!used_t[static_cast<std::size_t>(i)] && !used_l[static_cast<std::size_t>(j)]) {
            used_t[static_cast<std::size_t>(i)] = used_l[static_cast<std::size_t>(j)] = true;
            ++matched;
        }
    }
    return static_cast<double>(matched) / static_cast<double>(t.cols());
}

}  // namespace tfdl
