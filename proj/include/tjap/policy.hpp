#pragma once

// The transfer joint assortment-pricing learner and the policy interface the
// simulator drives.
//
// Time is 1-based. Rounds 1..2d are uniform-random warm-up. After that the
// horizon is cut into episodes ending at τ_m = 2^{m−1}; within an episode the
// estimate ν̂, the pooled geometry W and the radii (α, β) are frozen, while
// per-market Fisher information V⁽ʰ⁾ accumulates at ν̂. At each episode end
// the estimator is refit on that episode's data only and V is reset.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "estimation.hpp"
#include "geometry.hpp"
#include "mnl.hpp"
#include "pricing.hpp"
#include "rng.hpp"

namespace tjap {

/// Constants a scenario publishes to every policy. None of them reveal the
/// true parameters beyond the bounds the model assumes known.
struct ProblemSpec {
    int d = 1;
    int num_items = 1;        // N
    int capacity = 1;         // K
    int num_sources = 0;      // H
    int horizon = 1;          // T
    double price_max = 1.0;   // P̄
    double sensitivity_floor = 0.1;  // L0
    double cov_floor = 0.25;  // C̃_min
    double param_bound = 1.0; // published bound on ‖ν‖₂
    int declared_sparsity = -1;

    int dim() const { return 2 * d; }
};

struct PolicyConfig {
    EstimationConfig estimation;
    int grid_points = 512;
    double kappa = 0.1;
    double cov_floor = -1.0;            // ≤ 0: use ProblemSpec::cov_floor
    double c_gate = 0.05;               // Λ_m = c_gate · C̃_min · |T_m|
    double forced_cap_fraction = 0.02;  // forced window ≤ this share of the episode
    bool covariate_weights = false;     // ω_h = 1/(1+χ²) instead of ω ≡ 1
};

struct Action {
    Assortment items;
    std::vector<double> prices;
    bool forced = false;  // gate-triggered exploration
    bool warmup = false;
};

class Policy {
public:
    virtual ~Policy() = default;
    virtual std::string name() const = 0;
    virtual Action select_action(const Matrix& contexts, int round) = 0;
    /// Feedback for `round`: the target observation (market 0) and any
    /// source observations of the same round.
    virtual void observe(int round, std::span<const Observation> observations) = 0;
    virtual int episode() const { return 0; }
    virtual int forced_rounds() const { return 0; }
};

// ---------------------------------------------------------------------------
// Optimism building blocks

/// Holds the Cholesky factor of W̄ = W + λ0·I for one episode.
class ConfidenceGeometry {
public:
    ConfidenceGeometry() = default;
    ConfidenceGeometry(const Matrix& w, double lambda0)
        : ConfidenceGeometry(from_regularized(w + lambda0 * Matrix::Identity(w.rows(), w.cols()))) {}

    static ConfidenceGeometry from_regularized(const Matrix& w_bar) {
        ConfidenceGeometry g;
        g.llt_.compute(w_bar);
        if (g.llt_.info() != Eigen::Success) throw DomainError("ConfidenceGeometry: W̄ is not positive definite");
        g.dim_ = w_bar.rows();
        return g;
    }

    Eigen::Index dim() const { return dim_; }

    /// x̃ᵀ W̄⁻¹ x̃.
    double mahalanobis_sq(const Vector& xt) const {
        const Vector z = llt_.matrixL().solve(xt);
        return z.squaredNorm();
    }

    /// Coefficients (c0, c1, c2) with x̃(p)ᵀW̄⁻¹x̃(p) = c0 − 2p·c1 + p²·c2.
    std::array<double, 3> price_quadratic(const Vector& x) const {
        const Eigen::Index d = x.size();
        Vector head = Vector::Zero(dim_), tail = Vector::Zero(dim_);
        head.head(d) = x;
        tail.tail(d) = x;
        const Vector u = llt_.matrixL().solve(head);
        const Vector w = llt_.matrixL().solve(tail);
        return {u.squaredNorm(), u.dot(w), w.squaredNorm()};
    }

private:
    Eigen::LLT<Matrix> llt_;
    Eigen::Index dim_ = 0;
};

/// α‖x̃‖_{W̄⁻¹} + β‖x̃‖∞.
inline double two_radius_bonus(const Vector& xt, const ConfidenceGeometry& geom, double alpha, double beta) {
    return alpha * std::sqrt(geom.mahalanobis_sq(xt)) + beta * xt.lpNorm<Eigen::Infinity>();
}

/// ṽ(p_k) = min_{j≤k} { v̄(p_j) − L0 (p_k − p_j) } in one forward pass,
/// tracking the index that minimizes v̄(p_j) + L0 p_j.
inline std::vector<double> envelope(std::span<const double> bar_v, const PriceGrid& grid, double lipschitz) {
    std::vector<double> out(bar_v.size());
    std::size_t best = 0;
    double best_key = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < bar_v.size(); ++k) {
        const double pk = grid.at(static_cast<int>(k));
        const double key = bar_v[k] + lipschitz * pk;
        if (key < best_key) {
            best_key = key;
            best = k;
        }
        out[k] = bar_v[best] - lipschitz * (pk - grid.at(static_cast<int>(best)));
    }
    return out;
}

/// Per-item optimistic curves v̄_i(p) = ⟨x̃_i(p), ν̂⟩ + α‖x̃_i(p)‖_{W̄⁻¹} + β‖x̃_i(p)‖∞
/// on the grid, each passed through the L0 envelope.
inline std::vector<GridUtility> optimistic_curves(const Matrix& contexts, const Vector& nu_hat,
                                                  const ConfidenceGeometry& geom, double alpha, double beta,
                                                  double lipschitz, const PriceGrid& grid) {
    const Eigen::Index d = contexts.cols();
    std::vector<GridUtility> curves;
    curves.reserve(static_cast<std::size_t>(contexts.rows()));
    std::vector<double> bar_v(static_cast<std::size_t>(grid.points));
    for (Eigen::Index i = 0; i < contexts.rows(); ++i) {
        const Vector x = contexts.row(i).transpose();
        const double base = x.dot(nu_hat.head(d));
        const double slope = x.dot(nu_hat.tail(d));
        const double xinf = x.lpNorm<Eigen::Infinity>();
        std::array<double, 3> quad{0.0, 0.0, 0.0};
        if (alpha != 0.0) quad = geom.price_quadratic(x);
        for (int k = 0; k < grid.points; ++k) {
            const double p = grid.at(k);
            double v = base - slope * p;
            if (alpha != 0.0) v += alpha * std::sqrt(std::max(0.0, quad[0] - 2.0 * p * quad[1] + p * p * quad[2]));
            if (beta != 0.0) v += beta * xinf * std::max(1.0, p);
            bar_v[static_cast<std::size_t>(k)] = v;
        }
        curves.emplace_back(grid, envelope(bar_v, grid, lipschitz));
    }
    return curves;
}

/// argmax over (S, p) of the optimistic revenue.
inline PricedAssortment optimistic_decision(const Matrix& contexts, const Vector& nu_hat,
                                            const ConfidenceGeometry& geom, double alpha, double beta,
                                            double lipschitz, int capacity, const PriceGrid& grid) {
    const auto curves = optimistic_curves(contexts, nu_hat, geom, alpha, beta, lipschitz, grid);
    return optimal_assortment_and_prices(std::span<const GridUtility>(curves), capacity, grid);
}

/// Uniform K-subset of [N] with i.i.d. U[0, P̄] prices.
inline Action random_action(int num_items, int capacity, double price_max, Rng& rng) {
    std::vector<int> perm(static_cast<std::size_t>(num_items));
    std::iota(perm.begin(), perm.end(), 0);
    const int k = std::min(capacity, num_items);
    for (int i = 0; i < k; ++i) {
        const int j = i + static_cast<int>(uniform01(rng) * (num_items - i));
        std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(std::min(j, num_items - 1))]);
    }
    Action a;
    a.items.assign(perm.begin(), perm.begin() + k);
    std::sort(a.items.begin(), a.items.end());
    for (int i = 0; i < k; ++i) a.prices.push_back(uniform01(rng) * price_max);
    return a;
}

/// Augmented feature rows for an offered assortment.
inline Matrix offered_features(const Matrix& contexts, const Assortment& items, std::span<const double> prices) {
    const Eigen::Index d = contexts.cols();
    Matrix f(static_cast<Eigen::Index>(items.size()), 2 * d);
    for (std::size_t k = 0; k < items.size(); ++k) {
        const auto r = static_cast<Eigen::Index>(k);
        f.row(r).head(d) = contexts.row(items[k]);
        f.row(r).tail(d) = -prices[k] * contexts.row(items[k]);
    }
    return f;
}

/// Episode index m with τ_{m−1} < t ≤ τ_m, τ_m = 2^{m−1}.
inline int episode_of_round(int t) {
    if (t <= 1) return 1;
    int m = 1;
    while ((std::int64_t{1} << (m - 1)) < t) ++m;
    return m;
}

inline int episode_end(int m, int horizon) {
    const std::int64_t tau = std::int64_t{1} << (m - 1);
    return static_cast<int>(std::min<std::int64_t>(tau, horizon));
}

// ---------------------------------------------------------------------------

enum class LearnerMode {
    Transfer,    // aggregate on sources, ℓ1-debias on target, two-radius bonus
    Pool,        // one ridge MLE on target + sources, no debiasing, β = 0
    TargetOnly,  // ignore sources entirely
};

/// Everything frozen for one episode plus the rolling statistics.
struct EpisodeState {
    int m = 1;
    int tau_prev = 0;  // last round of the previous episode
    int tau_end = 0;   // last round of this episode
    Vector nu_hat;
    Matrix w_frozen;
    Tuning tuning;
    std::int64_t q_raw = 0;  // window length from the explicit gate rule
    double q_window = 0.0;   // window actually used (capped)
    std::vector<Matrix> rolling_info;               // V⁽ʰ⁾, h = 0..H
    std::vector<std::vector<Observation>> buffer;   // this episode's data per market
    std::vector<std::vector<Vector>> covariates;    // context rows per market, for χ² weights
    std::vector<double> market_weights;             // ω_h of the frozen W
};

class TjapPolicy : public Policy {
public:
    TjapPolicy(ProblemSpec spec, PolicyConfig cfg, std::uint64_t seed, LearnerMode mode = LearnerMode::Transfer)
        : spec_(spec), cfg_(cfg), mode_(mode), rng_(make_stream(seed, Stream::Policy)),
          grid_(spec.price_max, cfg.grid_points) {
        cfg_.estimation.validate();
        if (cfg_.estimation.s0 < 0 && spec_.declared_sparsity >= 0) cfg_.estimation.s0 = spec_.declared_sparsity;
        cfg_.estimation.param_radius = 2.0 * std::max(1.0, spec_.param_bound);
        markets_ = mode_ == LearnerMode::TargetOnly ? 1 : spec_.num_sources + 1;
        const Eigen::Index dim = spec_.dim();
        state_.nu_hat = Vector::Zero(dim);
        state_.w_frozen = Matrix::Zero(dim, dim);
        state_.rolling_info.assign(static_cast<std::size_t>(markets_), Matrix::Zero(dim, dim));
        state_.buffer.assign(static_cast<std::size_t>(markets_), {});
        state_.covariates.assign(static_cast<std::size_t>(markets_), {});
        state_.tau_end = warmup_rounds();
        geometry_ = ConfidenceGeometry(state_.w_frozen, cfg_.estimation.lambda0);
    }

    std::string name() const override {
        switch (mode_) {
            case LearnerMode::Transfer: return "tjap";
            case LearnerMode::Pool: return "pool";
            case LearnerMode::TargetOnly: return "target_only";
        }
        return "tjap";
    }

    int warmup_rounds() const { return std::min(spec_.dim(), spec_.horizon); }
    double cov_floor() const { return cfg_.cov_floor > 0.0 ? cfg_.cov_floor : spec_.cov_floor; }
    const EpisodeState& state() const { return state_; }
    const ConfidenceGeometry& geometry() const { return geometry_; }
    const PriceGrid& grid() const { return grid_; }
    int episode() const override { return in_warmup() ? 1 : state_.m; }
    int forced_rounds() const override { return forced_count_; }
    int next_round() const { return next_round_; }
    bool in_warmup() const { return next_round_ <= warmup_rounds(); }
    /// Optimistic value R̃ of the last non-random action.
    double last_optimistic_value() const { return last_value_; }

    Action select_action(const Matrix& contexts, int round) override {
        if (round != next_round_)
            throw SequencingError("select_action for round " + std::to_string(round) + ", expected " +
                                  std::to_string(next_round_));
        if (round <= warmup_rounds()) {
            Action a = random_action(spec_.num_items, spec_.capacity, spec_.price_max, rng_);
            a.warmup = true;
            return a;
        }
        const double rounds_left = state_.tau_end - round + 1;
        if (rounds_left <= state_.q_window &&
            gate_is_open(state_.rolling_info[0], state_.q_window, cfg_.kappa, spec_.capacity, cov_floor(),
                         rounds_left)) {
            Action a = random_action(spec_.num_items, spec_.capacity, spec_.price_max, rng_);
            a.forced = true;
            ++forced_count_;
            return a;
        }
        const auto pa = optimistic_decision(contexts, state_.nu_hat, geometry_, state_.tuning.alpha,
                                            state_.tuning.beta, spec_.sensitivity_floor, spec_.capacity, grid_);
        last_value_ = pa.value;
        return Action{pa.items, pa.prices, false, false};
    }

    void observe(int round, std::span<const Observation> observations) override {
        if (round != next_round_)
            throw SequencingError("observe for round " + std::to_string(round) + ", expected " +
                                  std::to_string(next_round_));
        const bool warm = round <= warmup_rounds();
        for (const auto& obs : observations) {
            if (obs.market < 0 || obs.market > spec_.num_sources) throw DomainError("observe: unknown market");
            if (obs.market >= markets_) continue;
            obs.validate();
            const auto h = static_cast<std::size_t>(obs.market);
            if (warm) {
                const double scale = 1.0 / (static_cast<double>(spec_.capacity) * spec_.capacity);
                state_.rolling_info[h].noalias() += scale * obs.features.transpose() * obs.features;
            } else {
                state_.rolling_info[h] += fisher_increment(obs.features, state_.nu_hat);
            }
            state_.buffer[h].push_back(obs);
        }
        ++next_round_;
        if (round == warmup_rounds()) {
            if (round < spec_.horizon) start_after_warmup();
        } else if (!warm && round == state_.tau_end) {
            episode_rollover();
        }
    }

    /// Records the covariate sample of one market for χ² weighting.
    void observe_covariates(int market, const Matrix& contexts) {
        if (!cfg_.covariate_weights || market >= markets_) return;
        auto& dst = state_.covariates[static_cast<std::size_t>(market)];
        for (Eigen::Index r = 0; r < contexts.rows(); ++r) dst.push_back(contexts.row(r).transpose());
    }

    /// Refits on the finished episode, freezes the pooled geometry and opens
    /// the next episode. Throws SequencingError when no data arrived since
    /// the last rollover.
    void episode_rollover() {
        if (state_.buffer[0].empty()) throw SequencingError("episode_rollover: no target data since last rollover");
        const int finished = state_.m;
        const double len = static_cast<double>(state_.buffer[0].size());
        const double eta = episode_failure_budget(finished, spec_.horizon, cfg_.estimation);
        const auto weights = source_weights();
        try {
            state_.nu_hat = refit(eta, len, weights);
        } catch (const ConvergenceError& e) {
            throw ConvergenceError("episode " + std::to_string(finished) + ": " + e.what(), e.last_iterate());
        }
        freeze_and_advance(eta, len, weights, /*allow_bias_radius=*/true);
    }

private:
    bool transfers() const { return mode_ == LearnerMode::Transfer && spec_.num_sources > 0; }

    std::vector<double> source_weights() const {
        std::vector<double> w(static_cast<std::size_t>(markets_ - 1), 1.0);
        if (!cfg_.covariate_weights) return w;
        const auto& target = state_.covariates[0];
        for (int h = 1; h < markets_; ++h) {
            const auto& src = state_.covariates[static_cast<std::size_t>(h)];
            if (target.empty() || src.empty()) continue;
            auto to_matrix = [](const std::vector<Vector>& rows) {
                Matrix m(static_cast<Eigen::Index>(rows.size()), rows.front().size());
                for (std::size_t r = 0; r < rows.size(); ++r) m.row(static_cast<Eigen::Index>(r)) = rows[r].transpose();
                return m;
            };
            w[static_cast<std::size_t>(h - 1)] = market_weight(chi2_mismatch(to_matrix(target), to_matrix(src)));
        }
        return w;
    }

    std::vector<Observation> gather_sources() const {
        std::vector<Observation> all;
        for (int h = 1; h < markets_; ++h) {
            const auto& b = state_.buffer[static_cast<std::size_t>(h)];
            all.insert(all.end(), b.begin(), b.end());
        }
        return all;
    }

    Vector refit(double eta, double len, const std::vector<double>& weights) {
        const auto& est = cfg_.estimation;
        const auto& target = state_.buffer[0];
        if (mode_ == LearnerMode::Pool && markets_ > 1) {
            std::vector<Observation> pooled = target;
            const auto src = gather_sources();
            pooled.insert(pooled.end(), src.begin(), src.end());
            return ridge_mle(pooled, state_.nu_hat, est).estimate;
        }
        if (!transfers()) return ridge_mle(target, state_.nu_hat, est).estimate;

        const auto src = gather_sources();
        if (static_cast<int>(src.size()) < spec_.dim()) return ridge_mle(target, state_.nu_hat, est).estimate;
        const Vector center = aggregate_mle(src, state_.nu_hat, est, weights).estimate;
        const double lambda = tuning_from_budget(eta, 0.0, len, 1.0, spec_.d, est).lambda;
        const Vector delta = debias_l1(target, center, lambda, est).delta;
        Vector nu = combine_estimator(center, delta);
        const double norm = nu.norm();
        if (norm > est.param_radius) nu *= est.param_radius / norm;
        return nu;
    }

    void start_after_warmup() {
        const int first = warmup_rounds() + 1;
        state_.m = episode_of_round(first) - 1;  // the warm-up plays the role of the previous episode
        const double len = static_cast<double>(warmup_rounds());
        const double eta = episode_failure_budget(std::max(state_.m, 1), spec_.horizon, cfg_.estimation);
        std::vector<Observation> data = state_.buffer[0];
        if (mode_ == LearnerMode::Pool) {
            const auto src = gather_sources();
            data.insert(data.end(), src.begin(), src.end());
        }
        try {
            state_.nu_hat = ridge_mle(data, state_.nu_hat, cfg_.estimation).estimate;
        } catch (const ConvergenceError& e) {
            throw ConvergenceError(std::string("warm-up fit: ") + e.what(), e.last_iterate());
        }
        freeze_and_advance(eta, len, source_weights(), /*allow_bias_radius=*/false);
        state_.tau_prev = warmup_rounds();
    }

    void freeze_and_advance(double eta, double len, const std::vector<double>& weights, bool allow_bias_radius) {
        std::vector<Matrix> sources(state_.rolling_info.begin() + 1, state_.rolling_info.end());
        std::vector<double> omega = weights;
        omega.resize(sources.size(), 1.0);
        state_.w_frozen = pool_geometry(state_.rolling_info[0], sources, omega);
        state_.market_weights = omega;
        const double phi_sq = restricted_eigen_proxy(state_.rolling_info[0], len);
        state_.tuning = tuning_from_budget(eta, state_.w_frozen.trace(), len, phi_sq, spec_.d, cfg_.estimation);
        if (!(allow_bias_radius && transfers())) state_.tuning.beta = 0.0;
        geometry_ = ConfidenceGeometry(state_.w_frozen, cfg_.estimation.lambda0);

        state_.tau_prev = state_.tau_end;
        state_.m += 1;
        state_.tau_end = episode_end(state_.m, spec_.horizon);
        const double next_len = std::max(1, state_.tau_end - state_.tau_prev);
        const double target_curv = curvature_target(cfg_.c_gate, cov_floor(), next_len);
        state_.q_raw = forced_exploration_length(target_curv, cfg_.kappa, spec_.capacity, cov_floor(), spec_.d,
                                                 spec_.price_max, eta);
        state_.q_window = std::min(static_cast<double>(state_.q_raw), std::floor(cfg_.forced_cap_fraction * next_len));

        for (auto& v : state_.rolling_info) v.setZero();
        for (auto& b : state_.buffer) b.clear();
        for (auto& c : state_.covariates) c.clear();
    }

    ProblemSpec spec_;
    PolicyConfig cfg_;
    LearnerMode mode_;
    Rng rng_;
    PriceGrid grid_;
    int markets_ = 1;
    int next_round_ = 1;
    int forced_count_ = 0;
    double last_value_ = 0.0;
    EpisodeState state_;
    ConfidenceGeometry geometry_;
};

}  // namespace tjap
