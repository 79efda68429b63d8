#pragma once

// Information geometry: per-round Fisher increments, pooled episodic
// matrices, covariate-mismatch weights and the forced-exploration gate.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "errors.hpp"
#include "mnl.hpp"

namespace tjap {

/// Fisher information of one MNL observation at `nu`, given the augmented
/// features of the offered items (one row per item):
///   I = Σ_i q_i x̃_i x̃_iᵀ − (Σ_i q_i x̃_i)(Σ_j q_j x̃_j)ᵀ.
inline Matrix fisher_increment(const Matrix& features, const Vector& nu) {
    const Eigen::Index dim = nu.size();
    Matrix info = Matrix::Zero(dim, dim);
    if (features.rows() == 0) return info;
    const Vector utilities = features * nu;
    const Vector q = choice_probabilities(utilities);
    Vector mean = Vector::Zero(dim);
    for (Eigen::Index i = 0; i < features.rows(); ++i) {
        const double qi = q[i + 1];
        info.noalias() += qi * features.row(i).transpose() * features.row(i);
        mean.noalias() += qi * features.row(i).transpose();
    }
    info.noalias() -= mean * mean.transpose();
    return info;
}

/// W = V⁽⁰⁾ + Σ_h ω_h V⁽ʰ⁾, summed in source order.
inline Matrix pool_geometry(const Matrix& target, std::span<const Matrix> sources, std::span<const double> weights) {
    if (sources.size() != weights.size()) throw DomainError("pool_geometry: one weight per source required");
    Matrix w = target;
    for (std::size_t h = 0; h < sources.size(); ++h) {
        if (!(weights[h] >= 0.0)) throw DomainError("pool_geometry: negative market weight");
        if (sources[h].rows() != target.rows() || sources[h].cols() != target.cols())
            throw DomainError("pool_geometry: dimension mismatch");
        w += weights[h] * sources[h];
    }
    return w;
}

inline constexpr int kMismatchBins = 16;

/// Binned χ²(P̂⁽⁰⁾ ‖ P̂⁽ʰ⁾) of per-coordinate marginals on [0, 1], averaged
/// over coordinates. Rows are covariate draws; counts get add-one smoothing.
inline double chi2_mismatch(const Matrix& target_samples, const Matrix& source_samples) {
    if (target_samples.cols() != source_samples.cols()) throw DomainError("chi2_mismatch: dimension mismatch");
    if (target_samples.rows() == 0 || source_samples.rows() == 0) throw DomainError("chi2_mismatch: no samples");
    auto histogram = [](const Matrix& s, Eigen::Index col) {
        std::vector<double> h(kMismatchBins, 1.0);
        for (Eigen::Index r = 0; r < s.rows(); ++r) {
            const double x = std::clamp(s(r, col), 0.0, 1.0);
            h[std::min(static_cast<int>(x * kMismatchBins), kMismatchBins - 1)] += 1.0;
        }
        const double total = static_cast<double>(s.rows()) + kMismatchBins;
        for (double& v : h) v /= total;
        return h;
    };
    double acc = 0.0;
    for (Eigen::Index c = 0; c < target_samples.cols(); ++c) {
        const auto p = histogram(target_samples, c);
        const auto q = histogram(source_samples, c);
        for (int b = 0; b < kMismatchBins; ++b) acc += (p[b] - q[b]) * (p[b] - q[b]) / q[b];
    }
    return acc / static_cast<double>(target_samples.cols());
}

/// ω = 1 / (1 + χ²).
inline double market_weight(double chi2) {
    if (!(chi2 >= 0.0)) throw DomainError("market_weight: chi2 must be non-negative");
    return 1.0 / (1.0 + chi2);
}

/// All eigenvalues of a symmetric matrix by cyclic Jacobi rotations, run
/// until the off-diagonal Frobenius norm is at most `tol` (relative to the
/// matrix norm once that exceeds 1). Returned in ascending order.
inline std::vector<double> jacobi_eigenvalues(const Matrix& m, double tol = 1e-10) {
    const Eigen::Index n = m.rows();
    if (m.cols() != n) throw DomainError("jacobi_eigenvalues: matrix not square");
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
        throw DomainError("jacobi_eigenvalues: matrix not symmetric");

    Matrix a = 0.5 * (m + m.transpose());
    const double stop = tol * std::max(1.0, a.norm());
    auto off_norm = [&] {
        double s = 0.0;
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = i + 1; j < n; ++j) s += 2.0 * a(i, j) * a(i, j);
        return std::sqrt(s);
    };
    for (int sweep = 0; sweep < 100 && off_norm() > stop; ++sweep) {
        for (Eigen::Index p = 0; p < n - 1; ++p) {
            for (Eigen::Index q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
            }
        }
    }
    std::vector<double> ev(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) ev[static_cast<std::size_t>(i)] = a(i, i);
    std::sort(ev.begin(), ev.end());
    return ev;
}

inline double min_eigenvalue(const Matrix& m) {
    if (m.rows() == 0) throw DomainError("min_eigenvalue: empty matrix");
    return jacobi_eigenvalues(m).front();
}

/// Curvature level the gate asks of V⁽⁰⁾: κ²·K·q·C̃_min / 2.
inline double gate_threshold(double q_prev, double kappa, int capacity, double cov_floor) {
    return kappa * kappa * capacity * q_prev * cov_floor / 2.0;
}

/// Forced exploration fires iff the episode has at most q rounds left and
/// the target curvature is at or below the gate threshold.
inline bool gate_is_open(double target_min_eig, double q_prev, double kappa, int capacity, double cov_floor,
                         double rounds_left) {
    if (q_prev < 0.0) throw DomainError("gate_is_open: negative window");
    if (rounds_left > q_prev) return false;
    return target_min_eig <= gate_threshold(q_prev, kappa, capacity, cov_floor);
}

inline bool gate_is_open(const Matrix& target_info, double q_prev, double kappa, int capacity, double cov_floor,
                         double rounds_left) {
    if (rounds_left > q_prev) return false;
    return gate_is_open(min_eigenvalue(target_info), q_prev, kappa, capacity, cov_floor, rounds_left);
}

/// q = ⌈max{ 2Λ/(κ²K C̃), 8Kd(1+P̄²)/(κ²K C̃) · log(2d/η) }⌉.
inline std::int64_t forced_exploration_length(double curvature_target, double kappa, int capacity,
                                              double cov_floor, int d, double price_max, double eta_gate) {
    if (!(curvature_target > 0.0 && kappa > 0.0 && capacity > 0 && cov_floor > 0.0 && d > 0 &&
          price_max >= 0.0 && eta_gate > 0.0))
        throw DomainError("forced_exploration_length: parameters must be positive");
    const double mu = kappa * kappa * capacity * cov_floor;
    const double first = 2.0 * curvature_target / mu;
    const double second = 8.0 * capacity * d * (1.0 + price_max * price_max) / mu * std::log(2.0 * d / eta_gate);
    const double q = std::ceil(std::max(first, second));
    if (q >= 9.0e18) return std::numeric_limits<std::int64_t>::max();
    return static_cast<std::int64_t>(q);
}

/// Λ_m = C_Λ · C̃_min · |T_m|.
inline double curvature_target(double c_lambda_gate, double cov_floor, double episode_len) {
    return c_lambda_gate * cov_floor * episode_len;
}

}  // namespace tjap
