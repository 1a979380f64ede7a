#pragma once

#include <cstdint>
#include <optional>

#include <Eigen/Dense>

namespace tfdl {

/// Column norms may exceed 1 by at most this much.
inline constexpr double kColumnNormSlack = 1e-9;

/// Transformer-factor dictionary: phi is d x m, one factor per column.
struct Dictionary {
    Eigen::MatrixXd phi;
    double lambda = 0.0;
    /// Largest eigenvalue of phi^T phi, if already computed.
    std::optional<double> lipschitz_cache;

    Eigen::Index d() const noexcept { return phi.rows(); }
    Eigen::Index m() const noexcept { return phi.cols(); }

    /// Throws FormatError if any invariant fails. Overcompleteness (m > d) is
    /// only checked when require_overcomplete is set.
    void validate(bool require_overcomplete = false) const;

    double max_column_norm() const;

    /// FNV-1a over (d, m, phi as float32 column-major), i.e. over exactly what
    /// the dictionary file stores.
    std::uint64_t content_hash() const;
};

/// Clip every column onto the unit l2 ball.
void project_columns_to_unit_ball(Eigen::MatrixXd& phi);

}  // namespace tfdl
