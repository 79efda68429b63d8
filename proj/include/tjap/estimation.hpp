#pragma once

// Likelihood machinery for the MNL model and the two-step transfer estimator:
// a pooled (aggregate) MLE over source markets followed by an ℓ1-penalized
// correction fitted on target data only.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "geometry.hpp"
#include "mnl.hpp"

namespace tjap {

/// One round of one market: what was offered, at which prices, and what the
/// customer picked.
struct Observation {
    int market = 0;  // 0 = target, h ≥ 1 = source h
    int round = 0;
    Assortment items;
    std::vector<double> prices;
    Matrix features;          // |S| × 2d augmented rows x̃_i(p_i)
    std::size_t chosen = 0;   // 0 = outside option, k = k-th offered item

    void validate() const {
        if (features.rows() != static_cast<Eigen::Index>(items.size()) || prices.size() != items.size())
            throw DomainError("Observation: inconsistent assortment, prices and features");
        if (chosen > items.size()) throw DomainError("Observation: chosen index outside S ∪ {0}");
    }
};

struct EstimationConfig {
    double c_alpha = 0.001;
    double c_lambda = 0.05;
    double c_beta = 1e-6;
    double lambda0 = 1.0;       // ridge constant, W̄ = W + λ0·I
    int s0 = -1;                // declared shift sparsity; < 0 means ⌈0.2·2d⌉
    double eta_total = -1.0;    // Σ_m η_m; ≤ 0 means T⁻²
    int newton_max_iters = 100;
    int prox_max_iters = 20000;
    double tol = 1e-6;
    double param_radius = 2.0;  // estimates are projected onto this ℓ2 ball

    void validate() const {
        if (!(c_alpha > 0 && c_lambda > 0 && c_beta > 0 && lambda0 > 0))
            throw DomainError("EstimationConfig: tuning constants must be positive");
        if (newton_max_iters < 1 || prox_max_iters < 1) throw DomainError("EstimationConfig: iteration caps");
        if (!(tol > 0.0 && tol <= 1e-3)) throw DomainError("EstimationConfig: tol must lie in (0, 1e-3]");
        if (!(param_radius > 0.0)) throw DomainError("EstimationConfig: param_radius must be positive");
    }

    int declared_sparsity(int d) const { return s0 >= 0 ? s0 : static_cast<int>(std::ceil(0.2 * 2 * d)); }
};

struct LossValue {
    double value = 0.0;
    Vector gradient;
};

namespace detail {

// Adds w·ℓ(ν), w·∇ℓ(ν) and optionally w·∇²ℓ(ν) of one observation.
inline void accumulate_nll(const Observation& obs, const Vector& nu, double w, double& value, Vector& grad,
                           Matrix* hessian) {
    const Eigen::Index m = obs.features.rows();
    if (m == 0) return;  // ℓ = log 1 = 0 when nothing is offered
    const Vector u = obs.features * nu;
    const double top = std::max(0.0, u.maxCoeff());
    Vector e = (u.array() - top).exp().matrix();
    const double z = std::exp(-top) + e.sum();
    const double log_z = top + std::log(z);
    const Vector q = e / z;
    value += w * (log_z - (obs.chosen == 0 ? 0.0 : u[static_cast<Eigen::Index>(obs.chosen) - 1]));
    const Vector mean = obs.features.transpose() * q;
    grad.noalias() += w * mean;
    if (obs.chosen != 0) grad.noalias() -= w * obs.features.row(static_cast<Eigen::Index>(obs.chosen) - 1).transpose();
    if (hessian) {
        for (Eigen::Index i = 0; i < m; ++i)
            hessian->noalias() += (w * q[i]) * obs.features.row(i).transpose() * obs.features.row(i);
        hessian->noalias() -= w * mean * mean.transpose();
    }
}

inline std::vector<double> uniform_weights(std::size_t n) {
    return std::vector<double>(n, 1.0 / static_cast<double>(n));
}

}  // namespace detail

/// Mean NLL over `data` and its gradient.
inline LossValue nll_and_gradient(std::span<const Observation> data, const Vector& nu) {
    if (data.empty()) throw DomainError("nll_and_gradient: empty data");
    LossValue out{0.0, Vector::Zero(nu.size())};
    const double w = 1.0 / static_cast<double>(data.size());
    for (const auto& obs : data) detail::accumulate_nll(obs, nu, w, out.value, out.gradient, nullptr);
    return out;
}

struct MleResult {
    Vector estimate;
    int iterations = 0;
    std::vector<double> objective_trace;  // objective after each accepted step
};

/// Weighted ridge MLE: minimizes Σ_t w_t ℓ_t(ν) + λ0‖ν‖²/(2n) by damped
/// Newton (the MNL Hessian equals the Fisher information) with Armijo
/// backtracking; falls back to a gradient step when the curvature matrix is
/// near-singular. The result is projected onto the param_radius ball.
inline MleResult weighted_ridge_mle(std::span<const Observation> data, std::span<const double> weights,
                                    const Vector& warm_start, const EstimationConfig& cfg) {
    cfg.validate();
    if (data.empty()) throw DomainError("ridge MLE: empty data");
    const Eigen::Index dim = warm_start.size();
    const double ridge = cfg.lambda0 / static_cast<double>(data.size());

    auto objective = [&](const Vector& nu, Vector* grad, Matrix* hess) {
        double value = 0.0;
        Vector g = Vector::Zero(dim);
        for (std::size_t t = 0; t < data.size(); ++t) detail::accumulate_nll(data[t], nu, weights[t], value, g, hess);
        value += 0.5 * ridge * nu.squaredNorm();
        g += ridge * nu;
        if (hess) hess->diagonal().array() += ridge;
        if (grad) *grad = std::move(g);
        return value;
    };

    MleResult res;
    Vector nu = warm_start;
    Vector grad;
    Matrix hess = Matrix::Zero(dim, dim);
    double f = objective(nu, &grad, &hess);
    res.objective_trace.push_back(f);
    bool converged = grad.norm() <= cfg.tol;
    for (int it = 0; it < cfg.newton_max_iters && !converged; ++it) {
        Vector dir;
        if (min_eigenvalue(hess) < 1e-8) {
            dir = -grad;
        } else {
            dir = -hess.ldlt().solve(grad);
            if (grad.dot(dir) >= 0.0) dir = -grad;
        }
        const double slope = grad.dot(dir);
        double step = 1.0;
        Vector trial;
        double f_trial = f;
        bool accepted = false;
        for (int ls = 0; ls < 60; ++ls) {
            trial = nu + step * dir;
            f_trial = objective(trial, nullptr, nullptr);
            if (f_trial <= f + 1e-4 * step * slope) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            // objective flat at working precision: take the full step only if it shrinks the gradient
            Vector g_full;
            Matrix h_full = Matrix::Zero(dim, dim);
            const double f_full = objective(nu + dir, &g_full, &h_full);
            if (!(g_full.norm() < grad.norm() && f_full <= f + 1e-12 * std::max(1.0, std::abs(f)))) break;
            nu += dir;
            f = f_full;
            grad = std::move(g_full);
            hess = std::move(h_full);
            res.objective_trace.push_back(f);
            res.iterations = it + 1;
            converged = grad.norm() <= cfg.tol;
            continue;
        }
        nu = trial;
        hess.setZero();
        f = objective(nu, &grad, &hess);
        res.objective_trace.push_back(f);
        res.iterations = it + 1;
        converged = grad.norm() <= cfg.tol;
    }
    if (!converged) {
        throw ConvergenceError("ridge MLE did not converge, |grad| = " + std::to_string(grad.norm()), nu);
    }
    const double norm = nu.norm();
    if (norm > cfg.param_radius) nu *= cfg.param_radius / norm;
    res.estimate = std::move(nu);
    return res;
}

/// Unweighted ridge MLE on one market's data (the target-only estimator).
inline MleResult ridge_mle(std::span<const Observation> data, const Vector& warm_start, const EstimationConfig& cfg) {
    const auto w = detail::uniform_weights(data.size());
    return weighted_ridge_mle(data, w, warm_start, cfg);
}

/// Pooled source estimator. Market h contributes with weight ω_h spread
/// evenly over its observations; with all ω = 1 and equal sample sizes this
/// is the plain mean NLL over all source rounds. `market_weights` is indexed
/// by source id (h − 1); pass an empty span for ω ≡ 1.
inline MleResult aggregate_mle(std::span<const Observation> source_data, const Vector& warm_start,
                               const EstimationConfig& cfg, std::span<const double> market_weights = {}) {
    const auto dim = static_cast<std::size_t>(warm_start.size());
    if (source_data.size() < dim)
        throw DomainError("aggregate_mle: need at least 2d observations, got " + std::to_string(source_data.size()));
    int markets = 0;
    for (const auto& o : source_data) {
        if (o.market < 1) throw DomainError("aggregate_mle: target observation in source data");
        markets = std::max(markets, o.market);
    }
    if (!market_weights.empty() && market_weights.size() < static_cast<std::size_t>(markets))
        throw DomainError("aggregate_mle: missing market weight");
    std::vector<double> count(static_cast<std::size_t>(markets) + 1, 0.0);
    for (const auto& o : source_data) count[static_cast<std::size_t>(o.market)] += 1.0;
    std::vector<double> omega(static_cast<std::size_t>(markets) + 1, 1.0);
    double omega_sum = 0.0;
    for (int h = 1; h <= markets; ++h) {
        const auto k = static_cast<std::size_t>(h);
        if (!market_weights.empty()) omega[k] = market_weights[k - 1];
        if (!(omega[k] >= 0.0)) throw DomainError("aggregate_mle: negative market weight");
        if (count[k] > 0) omega_sum += omega[k];
    }
    if (!(omega_sum > 0.0)) throw DomainError("aggregate_mle: all market weights are zero");
    // (1/Σω) Σ_h ω_h (1/|T_h|) Σ_t ℓ_t
    std::vector<double> w(source_data.size());
    for (std::size_t t = 0; t < source_data.size(); ++t) {
        const auto k = static_cast<std::size_t>(source_data[t].market);
        w[t] = omega[k] / (omega_sum * count[k]);
    }
    return weighted_ridge_mle(source_data, w, warm_start, cfg);
}

struct DebiasResult {
    Vector delta;
    int iterations = 0;
    double kkt_residual = 0.0;
    std::vector<double> objective_trace;  // penalized objective at each accepted iterate
};

inline double soft_threshold(double x, double t) {
    return x > t ? x - t : (x < -t ? x + t : 0.0);
}

/// ∞-norm of the minimum-norm element of ∇f(δ) + λ∂‖δ‖₁.
inline double l1_kkt_residual(const Vector& delta, const Vector& grad, double lambda) {
    double r = 0.0;
    for (Eigen::Index j = 0; j < delta.size(); ++j) {
        const double v = delta[j] != 0.0 ? std::abs(grad[j] + lambda * (delta[j] > 0 ? 1.0 : -1.0))
                                         : std::max(0.0, std::abs(grad[j]) - lambda);
        r = std::max(r, v);
    }
    return r;
}

/// ℓ1-penalized target correction around `center`:
///   δ̂ = argmin_δ mean NLL(center + δ) + λ‖δ‖₁,
/// solved by monotone accelerated proximal gradient with backtracking on the
/// local Lipschitz estimate. Stops once the KKT residual is at most tol.
inline DebiasResult debias_l1(std::span<const Observation> target_data, const Vector& center, double lambda,
                              const EstimationConfig& cfg) {
    cfg.validate();
    if (!(lambda > 0.0)) throw DomainError("debias_l1: lambda must be positive");
    if (target_data.empty()) throw DomainError("debias_l1: empty target data");

    auto smooth = [&](const Vector& delta, Vector* grad) {
        const Vector nu = center + delta;
        if (!grad) {
            double value = 0.0;
            Vector g = Vector::Zero(nu.size());
            const double w = 1.0 / static_cast<double>(target_data.size());
            for (const auto& o : target_data) detail::accumulate_nll(o, nu, w, value, g, nullptr);
            return value;
        }
        auto lv = nll_and_gradient(target_data, nu);
        *grad = std::move(lv.gradient);
        return lv.value;
    };
    auto penalized = [&](const Vector& delta, double smooth_value) {
        return smooth_value + lambda * delta.lpNorm<1>();
    };
    auto prox = [&](const Vector& v, double step) {
        Vector out(v.size());
        for (Eigen::Index j = 0; j < v.size(); ++j) out[j] = soft_threshold(v[j], step * lambda);
        return out;
    };

    DebiasResult res;
    Vector x = Vector::Zero(center.size());
    Vector gx;
    double fx = smooth(x, &gx);
    double obj_x = penalized(x, fx);
    res.objective_trace.push_back(obj_x);
    res.kkt_residual = l1_kkt_residual(x, gx, lambda);
    if (res.kkt_residual <= cfg.tol) {
        res.delta = x;
        return res;
    }

    Vector y = x;
    double t = 1.0;
    double lip = 1.0;
    for (int it = 0; it < cfg.prox_max_iters; ++it) {
        Vector gy;
        const double fy = smooth(y, &gy);
        Vector z;
        double fz = 0.0;
        for (int ls = 0; ls < 100; ++ls) {
            z = prox(y - gy / lip, 1.0 / lip);
            fz = smooth(z, nullptr);
            const Vector diff = z - y;
            if (fz <= fy + gy.dot(diff) + 0.5 * lip * diff.squaredNorm() + 1e-15 * std::abs(fy)) break;
            lip *= 2.0;
        }
        const double mapping = lip * (z - y).norm();
        const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        const double obj_z = penalized(z, fz);
        const Vector x_prev = x;
        if (obj_z <= obj_x) {
            x = z;
            obj_x = obj_z;
            res.objective_trace.push_back(obj_x);
        }
        y = x + (t / t_next) * (z - x) + ((t - 1.0) / t_next) * (x - x_prev);
        t = t_next;
        res.iterations = it + 1;

        // prox-gradient mapping at y; only when it is small is the (costlier)
        // KKT check at x worth doing
        if (mapping <= cfg.tol || (it % 25) == 24) {
            smooth(x, &gx);
            res.kkt_residual = l1_kkt_residual(x, gx, lambda);
            if (res.kkt_residual <= cfg.tol) {
                res.delta = x;
                return res;
            }
            // restart momentum from the accepted iterate
            y = x;
            t = 1.0;
        }
        lip = std::max(lip * 0.9, 1e-8);
    }
    throw ConvergenceError("debias_l1 did not converge, KKT residual = " + std::to_string(res.kkt_residual), x);
}

/// ν̂ = ν̂_ag + δ̂.
inline Vector combine_estimator(const Vector& aggregate, const Vector& delta) {
    if (aggregate.size() != delta.size()) throw DomainError("combine_estimator: dimension mismatch");
    return aggregate + delta;
}

struct Tuning {
    double alpha = 0.0;
    double lambda = 0.0;
    double beta = 0.0;
    double eta = 0.0;
};

/// η_m = 6·η_total/(π²m²), so that Σ_m η_m ≤ η_total (default T⁻²).
inline double episode_failure_budget(int m, int horizon, const EstimationConfig& cfg) {
    if (m < 1 || horizon < 1) throw DomainError("episode_failure_budget: m and T must be positive");
    const double total = cfg.eta_total > 0.0 ? cfg.eta_total : 1.0 / (static_cast<double>(horizon) * horizon);
    return 6.0 * total / (std::numbers::pi * std::numbers::pi * m * m);
}

/// Restricted-eigenvalue proxy φ² = λ_min(V⁽⁰⁾)/|T|, floored at 1e−3.
inline double restricted_eigen_proxy(const Matrix& target_info, double episode_len) {
    if (!(episode_len >= 1.0)) throw DomainError("restricted_eigen_proxy: empty episode");
    return std::max(min_eigenvalue(target_info) / episode_len, 1e-3);
}

/// α = c_α √(2d·log(1 + tr(W)/(2d·λ0)) + log(2/η)),
/// λ = c_λ √(log(2d/η)/|T|),  β = c_β·s0·λ/φ².
inline Tuning tuning_from_budget(double eta, double trace_w, double episode_len, double phi_sq, int d,
                                 const EstimationConfig& cfg) {
    if (!(episode_len >= 1.0)) throw DomainError("tuning: episode length must be at least 1");
    const double dim = 2.0 * d;
    Tuning out;
    out.eta = eta;
    const double radicand = dim * std::log1p(trace_w / (dim * cfg.lambda0)) + std::log(2.0 / eta);
    out.alpha = cfg.c_alpha * std::sqrt(std::max(radicand, 0.0));
    out.lambda = cfg.c_lambda * std::sqrt(std::max(std::log(dim / eta), 0.0) / episode_len);
    out.beta = cfg.c_beta * cfg.declared_sparsity(d) * out.lambda / std::max(phi_sq, 1e-3);
    return out;
}

inline Tuning tuning_schedules(int m, int horizon, double trace_w, double episode_len, double phi_sq, int d,
                               const EstimationConfig& cfg) {
    return tuning_from_budget(episode_failure_budget(m, horizon, cfg), trace_w, episode_len, phi_sq, d, cfg);
}

}  // namespace tjap
