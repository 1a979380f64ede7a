#include "tfdl/sparse_coder.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "tfdl/binary_io.hpp"
#include "tfdl/code_store.hpp"
#include "tfdl/embedding_store.hpp"
#include "tfdl/error.hpp"

namespace tfdl {

void Dictionary::validate(bool require_overcomplete) const {
    if (d() == 0 || m() == 0) {
        throw FormatError("dictionary has zero dimension");
    }
    if (!phi.allFinite()) {
        throw FormatError("dictionary has non-finite entries");
    }
    const double norm = max_column_norm();
    if (norm > 1.0 + kColumnNormSlack) {
        throw FormatError("dictionary column norm " + std::to_string(norm) + " exceeds 1");
    }
    if (require_overcomplete && m() <= d()) {
        throw FormatError("dictionary is not overcomplete (m <= d)");
    }
}

double Dictionary::max_column_norm() const {
    return m() == 0 ? 0.0 : phi.colwise().norm().maxCoeff();
}

std::uint64_t Dictionary::content_hash() const {
    io::Fnv1a64 h;
    h.update_value(static_cast<std::uint32_t>(d()));
    h.update_value(static_cast<std::uint32_t>(m()));
    for (Eigen::Index c = 0; c < m(); ++c) {
        for (Eigen::Index r = 0; r < d(); ++r) {
            h.update_value(static_cast<float>(phi(r, c)));
        }
    }
    return h.digest();
}

void project_columns_to_unit_ball(Eigen::MatrixXd& phi) {
    for (Eigen::Index c = 0; c < phi.cols(); ++c) {
        const double n = phi.col(c).norm();
        if (n > 1.0) {
            phi.col(c) /= n;
        }
    }
}

Eigen::VectorXd SparseCode::dense(Eigen::Index m) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(m);
    for (const auto& e : entries) {
        out(e.factor) = e.value;
    }
    return out;
}

double SparseCode::value(std::uint32_t factor) const {
    auto it = std::lower_bound(entries.begin(), entries.end(), factor,
                               [](const SparseEntry& e, std::uint32_t f) { return e.factor < f; });
    return (it != entries.end() && it->factor == factor) ? it->value : 0.0;
}

Eigen::VectorXd nonneg_soft_threshold(const Eigen::Ref<const Eigen::VectorXd>& v, double t) {
    return (v.array() - t).max(0.0).matrix();
}

double objective(const Eigen::Ref<const Eigen::VectorXd>& x, const Dictionary& dict,
                 const Eigen::Ref<const Eigen::VectorXd>& alpha, double lambda) {
    if (x.size() != dict.d() || alpha.size() != dict.m()) {
        throw FormatError("objective: shape mismatch");
    }
    return 0.5 * (x - dict.phi * alpha).squaredNorm() + lambda * alpha.lpNorm<1>();
}

double lipschitz_constant(const Eigen::MatrixXd& phi, int max_iter, double tol) {
    const Eigen::Index m = phi.cols();
    if (m == 0) {
        return 0.0;
    }
    Eigen::VectorXd v = Eigen::VectorXd::Constant(m, 1.0 / std::sqrt(static_cast<double>(m)));
    double eig = 0.0;
    for (int it = 0; it < max_iter; ++it) {
        Eigen::VectorXd w = phi.transpose() * (phi * v);
        const double next = v.dot(w);
        const double n = w.norm();
        if (n == 0.0) {
            return eig;
        }
        v = w / n;
        const bool done = std::abs(next - eig) <= tol * std::abs(next);
        eig = next;
        if (done) {
            break;
        }
    }
    return eig;
}

SparseCoder::SparseCoder(const Dictionary& dict, FistaOptions options)
    : dict_(&dict), options_(options) {
    if (dict.d() == 0 || dict.m() == 0) {
        throw FormatError("zero-dimension dictionary");
    }
    gram_ = dict.phi.transpose() * dict.phi;
    lipschitz_ = dict.lipschitz_cache ? *dict.lipschitz_cache : lipschitz_constant(dict.phi);
}

FistaResult SparseCoder::solve(const Eigen::Ref<const Eigen::VectorXd>& x, double lambda) const {
    const Eigen::Index m = dict_->m();
    if (x.size() != dict_->d()) {
        throw FormatError("input dimension " + std::to_string(x.size()) + " does not match dictionary d " +
                          std::to_string(dict_->d()));
    }
    if (!x.allFinite()) {
        throw NumericalError("non-finite input vector");
    }
    if (!(lambda > 0.0)) {
        throw UsageError("lambda must be positive");
    }

    FistaResult result;
    result.alpha = Eigen::VectorXd::Zero(m);
    const double half_xx = 0.5 * x.squaredNorm();
    if (lipschitz_ <= 0.0 || half_xx == 0.0) {
        result.objective = half_xx;
        result.converged = true;
        return result;
    }

    const double step = 1.0 / lipschitz_;
    const Eigen::VectorXd b = dict_->phi.transpose() * x;
    // F(a) = 1/2 |x|^2 - a.b + 1/2 a.Ga + lambda sum(a), with G a kept alongside a.
    auto value_of = [&](const Eigen::VectorXd& a, const Eigen::VectorXd& ga) {
        return half_xx - a.dot(b) + 0.5 * a.dot(ga) + lambda * a.sum();
    };

    Eigen::VectorXd alpha = Eigen::VectorXd::Zero(m);
    Eigen::VectorXd g_alpha = Eigen::VectorXd::Zero(m);
    Eigen::VectorXd y = alpha;
    Eigen::VectorXd g_y = g_alpha;
    Eigen::VectorXd next(m);
    Eigen::VectorXd g_next(m);
    double t = 1.0;
    double f_alpha = half_xx;

    int it = 0;
    for (; it < options_.max_iter; ++it) {
        next = ((y - step * (g_y - b)).array() - step * lambda).max(0.0).matrix();
        g_next.noalias() = gram_ * next;
        const double f_next = value_of(next, g_next);

        if (f_next > f_alpha) {
            // Momentum restart: drop the extrapolation and retry from alpha.
            if (t == 1.0) {
                // Plain proximal step from alpha still increased F: numerically converged.
                result.converged = true;
                break;
            }
            t = 1.0;
            y = alpha;
            g_y = g_alpha;
            continue;
        }

        const double diff = (next - alpha).norm();
        const double scale = next.norm();
        const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        const double beta = (t - 1.0) / t_next;
        y = next + beta * (next - alpha);
        g_y = g_next + beta * (g_next - g_alpha);
        alpha.swap(next);
        g_alpha.swap(g_next);
        f_alpha = f_next;
        t = t_next;

        if (diff <= options_.tol * scale || (scale == 0.0 && diff == 0.0)) {
            result.converged = true;
            ++it;
            break;
        }
    }
    result.iterations = it;
    result.alpha = std::move(alpha);
    result.objective = objective(x, *dict_, result.alpha, lambda);
    return result;
}

SparseCode to_sparse_code(const Eigen::Ref<const Eigen::VectorXd>& alpha, const Dictionary& dict,
                          const Eigen::Ref<const Eigen::VectorXd>& x, double drop_threshold) {
    SparseCode code;
    Eigen::VectorXd recon = Eigen::VectorXd::Zero(dict.d());
    for (Eigen::Index c = 0; c < alpha.size(); ++c) {
        if (alpha(c) > drop_threshold && alpha(c) > 0.0) {
            code.entries.push_back({static_cast<std::uint32_t>(c), alpha(c)});
            recon += alpha(c) * dict.phi.col(c);
        }
    }
    code.residual_norm = (x - recon).norm();
    return code;
}

SparseCode SparseCoder::infer(const Eigen::Ref<const Eigen::VectorXd>& x, double lambda,
                              double drop_threshold) const {
    const FistaResult r = solve(x, lambda);
    return to_sparse_code(r.alpha, *dict_, x, drop_threshold);
}

SparseCode infer_code(const Eigen::Ref<const Eigen::VectorXd>& x, const Dictionary& dict, double lambda,
                      int max_iter, double tol) {
    const SparseCoder coder(dict, FistaOptions{max_iter, tol});
    return coder.infer(x, lambda);
}

void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn) {
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    const std::size_t chunk = (n + threads - 1) / threads;
    for (unsigned w = 0; w < threads; ++w) {
        pool.emplace_back([&, w] {
            try {
                const std::size_t lo = w * chunk;
                const std::size_t hi = std::min(n, lo + chunk);
                for (std::size_t i = lo; i < hi; ++i) {
                    fn(i);
                }
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) {
        t.join();
    }
    for (auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

std::vector<SparseCode> encode_rows(const EmbeddingStore& store, const Dictionary& dict,
                                    const EncodeOptions& options) {
    if (static_cast<Eigen::Index>(store.d()) != dict.d()) {
        throw FormatError("dimension mismatch: store d=" + std::to_string(store.d()) +
                          ", dictionary d=" + std::to_string(dict.d()));
    }
    const SparseCoder coder(dict, FistaOptions{options.max_iter, options.tol});
    const std::uint64_t first = std::min(options.first_row, store.num_rows());
    std::vector<SparseCode> codes(store.num_rows() - first);
    parallel_for(codes.size(), options.threads, [&](std::size_t i) {
        auto row = store.row(first + i);
        const Eigen::VectorXd x =
            Eigen::Map<const Eigen::VectorXf>(row.data(), static_cast<Eigen::Index>(row.size())).cast<double>();
        codes[i] = coder.infer(x, options.lambda, options.drop_threshold);
    });
    return codes;
}

CodeStore encode_store(const EmbeddingStore& store, const Dictionary& dict, const EncodeOptions& options) {
    EncodeOptions all = options;
    all.first_row = 0;
    const auto codes = encode_rows(store, dict, all);
    CodeStoreInfo info;
    info.num_rows = 0;
    info.m = static_cast<std::uint32_t>(dict.m());
    info.dict_hash = dict.content_hash();
    info.store_hash = store.content_hash();
    info.num_layers = store.num_layers();
    info.drop_threshold = options.drop_threshold;
    info.lambda = options.lambda;
    return CodeStore::from_codes(info, codes);
}

}  // namespace tfdl
