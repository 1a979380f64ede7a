#pragma once

// Shared fixtures and independent reference implementations for the tests.
// Nothing here calls into the code paths it is used to check.

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tfdl/embedding_store.hpp"

namespace tfdl::test {

/// Removes itself on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("tfdl_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

struct RandomCorpus {
    std::vector<OccurrenceRecord> records;
    SequenceTable sequences;
};

/// Random records over a small vocabulary, grouped into sequences of seq_len tokens.
inline RandomCorpus random_corpus(std::size_t n, std::uint32_t d, std::uint32_t layers, std::uint64_t seed,
                                  std::size_t vocab = 7, std::size_t seq_len = 5) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    RandomCorpus c;
    for (std::size_t o = 0; o < n; ++o) {
        const std::uint64_t seq = o / seq_len;
        const auto pos = static_cast<std::uint32_t>(o % seq_len);
        std::string tok = "w" + std::to_string(rng() % vocab);
        c.sequences[seq].push_back(tok);
        OccurrenceRecord r;
        r.meta = {o, seq, pos, tok};
        for (std::size_t k = 0; k < std::size_t{d} * layers; ++k) {
            r.vectors.push_back(normal(rng));
        }
        c.records.push_back(std::move(r));
    }
    return c;
}

/// Unit-column random matrix.
inline Eigen::MatrixXd random_unit_columns(Eigen::Index d, Eigen::Index m, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd phi(d, m);
    for (Eigen::Index c = 0; c < m; ++c) {
        for (Eigen::Index r = 0; r < d; ++r) {
            phi(r, c) = normal(rng);
        }
        phi.col(c).normalize();
    }
    return phi;
}

/// Cyclic coordinate descent for min 1/2||x - Phi a||^2 + lambda sum(a), a >= 0.
inline Eigen::VectorXd nonneg_lasso_cd(const Eigen::MatrixXd& phi, const Eigen::VectorXd& x, double lambda,
                                       int max_sweeps = 200000, double tol = 1e-15) {
    const Eigen::Index m = phi.cols();
    Eigen::VectorXd a = Eigen::VectorXd::Zero(m);
    Eigen::VectorXd r = x;  // residual x - Phi a
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double max_change = 0.0;
        for (Eigen::Index j = 0; j < m; ++j) {
            double col_sq = 0.0, dot = 0.0;
            for (Eigen::Index i = 0; i < phi.rows(); ++i) {
                col_sq += phi(i, j) * phi(i, j);
                dot += phi(i, j) * r(i);
            }
            if (col_sq == 0.0) {
                continue;
            }
            const double next = std::max(0.0, a(j) + (dot - lambda) / col_sq);
            const double change = next - a(j);
            if (change != 0.0) {
                for (Eigen::Index i = 0; i < phi.rows(); ++i) {
                    r(i) -= change * phi(i, j);
                }
                a(j) = next;
                max_change = std::max(max_change, std::abs(change));
            }
        }
        if (max_change < tol) {
            break;
        }
    }
    return a;
}

/// Elementwise recomputation of 1/2||x - Phi a||^2 + lambda ||a||_1.
inline double naive_objective(const Eigen::MatrixXd& phi, const Eigen::VectorXd& x, const Eigen::VectorXd& a,
                              double lambda) {
    double sq = 0.0;
    for (Eigen::Index i = 0; i < phi.rows(); ++i) {
        double recon = 0.0;
        for (Eigen::Index j = 0; j < phi.cols(); ++j) {
            recon += phi(i, j) * a(j);
        }
        sq += (x(i) - recon) * (x(i) - recon);
    }
    double l1 = 0.0;
    for (Eigen::Index j = 0; j < a.size(); ++j) {
        l1 += std::abs(a(j));
    }
    return 0.5 * sq + lambda * l1;
}

/// Gaussian elimination with partial pivoting on a dense system.
inline std::vector<double> gauss_solve(std::vector<std::vector<double>> a, std::vector<double> b) {
    const std::size_t n = b.size();
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r) {
            if (std::abs(a[r][col]) > std::abs(a[piv][col])) {
                piv = r;
            }
        }
        std::swap(a[col], a[piv]);
        std::swap(b[col], b[piv]);
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = a[r][col] / a[col][col];
            for (std::size_t k = col; k < n; ++k) {
                a[r][k] -= f * a[col][k];
            }
            b[r] -= f * b[col];
        }
    }
    std::vector<double> x(n);
    for (std::size_t i = n; i-- > 0;) {
        double s = b[i];
        for (std::size_t k = i + 1; k < n; ++k) {
            s -= a[i][k] * x[k];
        }
        x[i] = s / a[i][i];
    }
    return x;
}

/// Weighted ridge with an unpenalized intercept via the augmented normal
/// equations [X 1]^T W [X 1] + diag(sigma,..,sigma,0).  Returns (w, b).
inline std::pair<std::vector<double>, double> ridge_normal_equations(const Eigen::MatrixXd& x,
                                                                     const Eigen::VectorXd& y,
                                                                     const Eigen::VectorXd& w, double sigma) {
    const std::size_t n = static_cast<std::size_t>(x.rows());
    const std::size_t t = static_cast<std::size_t>(x.cols());
    std::vector<std::vector<double>> a(t + 1, std::vector<double>(t + 1, 0.0));
    std::vector<double> rhs(t + 1, 0.0);
    auto feature = [&](std::size_t i, std::size_t j) {
        return j < t ? x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) : 1.0;
    };
    for (std::size_t i = 0; i < n; ++i) {
        const double wi = w(static_cast<Eigen::Index>(i));
        for (std::size_t j = 0; j <= t; ++j) {
            rhs[j] += wi * feature(i, j) * y(static_cast<Eigen::Index>(i));
            for (std::size_t k = 0; k <= t; ++k) {
                a[j][k] += wi * feature(i, j) * feature(i, k);
            }
        }
    }
    for (std::size_t j = 0; j < t; ++j) {
        a[j][j] += sigma;
    }
    auto sol = gauss_solve(a, rhs);
    const double b = sol.back();
    sol.pop_back();
    return {sol, b};
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

}  // namespace tfdl::test
