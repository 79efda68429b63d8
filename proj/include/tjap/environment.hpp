#pragma once

// Synthetic multi-market scenarios, market stepping and the regret loop.

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numbers>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "baselines.hpp"
#include "errors.hpp"
#include "mnl.hpp"
#include "policy.hpp"
#include "pricing.hpp"
#include "rng.hpp"

namespace tjap {

enum class SourcePolicy { Uniform, Greedy };

struct ScenarioConfig {
    int d = 10;
    int num_items = 30;
    int capacity = 5;
    int num_sources = 0;
    int s0 = 2;
    int horizon = 2000;
    double delta = 0.1;
    double sensitivity_floor = 1.0;
    double max_utility = std::numeric_limits<double>::quiet_NaN();  // NaN: derive from the draws
    double max_gamma_scale = 50.0;
    double gamma_low = 0.5;   // γ⁽⁰⁾ entries start as U[gamma_low, gamma_high] before normalization
    double gamma_high = 1.5;
    int grid_points = 512;
    SourcePolicy source_policy = SourcePolicy::Uniform;

    void validate() const {
        if (d < 1 || num_items < 1 || capacity < 1 || capacity > num_items)
            throw DomainError("ScenarioConfig: need d ≥ 1 and 1 ≤ K ≤ N");
        if (num_sources < 0) throw DomainError("ScenarioConfig: H must be non-negative");
        if (s0 < 0 || s0 > 2 * d) throw DomainError("ScenarioConfig: s0 must lie in [0, 2d]");
        if (horizon < 1) throw DomainError("ScenarioConfig: T must be positive");
        if (!(delta >= 0.0)) throw DomainError("ScenarioConfig: shift magnitude must be non-negative");
        if (!(sensitivity_floor > 0.0)) throw DomainError("ScenarioConfig: L0 must be positive");
        if (!(gamma_low > 0.0 && gamma_high >= gamma_low))
            throw DomainError("ScenarioConfig: need 0 < gamma_low ≤ gamma_high");
        if (!(max_gamma_scale >= 1.0)) throw DomainError("ScenarioConfig: max_gamma_scale must be at least 1");
        if (grid_points < 2) throw DomainError("ScenarioConfig: grid needs at least 2 points");
    }
};

struct MarketScenario {
    ScenarioConfig config;
    std::uint64_t seed = 0;
    std::vector<ParamVector> nu;    // index 0 = target, h = source h
    std::vector<int> support;       // shift coordinates, ascending, size s0
    std::vector<double> signs;      // ±1 per support coordinate
    std::vector<Vector> shifts;     // δ⁽ʰ⁾ for h = 1..H, stored at h − 1
    double price_max = 1.0;
    double max_utility = 0.0;
    double gamma_scale = 1.0;
    double cov_floor = 0.0;
    double param_bound = 1.0;

    int d() const { return config.d; }
    int num_sources() const { return config.num_sources; }
    const ParamVector& target() const { return nu.front(); }

    ProblemSpec spec() const {
        ProblemSpec s;
        s.d = config.d;
        s.num_items = config.num_items;
        s.capacity = config.capacity;
        s.num_sources = config.num_sources;
        s.horizon = config.horizon;
        s.price_max = price_max;
        s.sensitivity_floor = config.sensitivity_floor;
        s.cov_floor = cov_floor;
        s.param_bound = param_bound;
        s.declared_sparsity = config.s0;
        return s;
    }
};

/// x = min(|z|, 1) with z ~ N(0, I_d), one row per item.
inline Matrix draw_contexts(std::uint64_t scenario_seed, int t, int num_items, int d) {
    Rng rng = make_stream(scenario_seed, Stream::Contexts, static_cast<std::uint64_t>(t));
    Matrix x(num_items, d);
    for (int i = 0; i < num_items; ++i)
        for (int j = 0; j < d; ++j) x(i, j) = std::min(std::abs(standard_normal(rng)), 1.0);
    return x;
}

inline Matrix draw_contexts(const MarketScenario& sc, int t) {
    return draw_contexts(sc.seed, t, sc.config.num_items, sc.config.d);
}

/// Moments of min(|z|, 1) for standard normal z.
inline std::pair<double, double> clipped_half_normal_moments() {
    const double pdf1 = std::exp(-0.5) / std::sqrt(2.0 * std::numbers::pi);
    const double pdf0 = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    const double tail = std::erfc(1.0 / std::numbers::sqrt2);  // P(|z| > 1)
    const double m1 = 2.0 * (pdf0 - pdf1) + tail;
    const double m2 = (1.0 - tail) - 2.0 * pdf1 + tail;
    return {m1, m2};
}

/// λ_min of Cov(x) ⊗ E[(1, −p)ᵀ(1, −p)] for p ~ U[0, P̄]: a lower bound on
/// the curvature a uniformly random offer contributes per item.
inline double forced_cov_floor(double price_max) {
    const auto [m1, m2] = clipped_half_normal_moments();
    const double a = 1.0, b = -price_max / 2.0, c = price_max * price_max / 3.0;
    const double lam = 0.5 * (a + c) - std::sqrt(0.25 * (a - c) * (a - c) + b * b);
    return lam * (m2 - m1 * m1);
}

inline MarketScenario generate_scenario(const ScenarioConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const int d = cfg.d;
    MarketScenario sc;
    sc.config = cfg;
    sc.seed = seed;

    Rng prng = make_stream(seed, Stream::TargetParams);
    Vector nu0(2 * d);
    for (int j = 0; j < d; ++j) nu0[j] = standard_normal(prng);
    for (int j = 0; j < d; ++j) nu0[d + j] = cfg.gamma_low + (cfg.gamma_high - cfg.gamma_low) * uniform01(prng);
    nu0 /= std::max(1.0, nu0.norm());

    // common support and signs, drawn whether or not sources exist
    Rng srng = make_stream(seed, Stream::ShiftPattern);
    std::vector<int> coords(static_cast<std::size_t>(2 * d));
    std::iota(coords.begin(), coords.end(), 0);
    for (int i = 0; i < cfg.s0; ++i) {
        const int j = i + std::min(static_cast<int>(uniform01(srng) * (2 * d - i)), 2 * d - i - 1);
        std::swap(coords[static_cast<std::size_t>(i)], coords[static_cast<std::size_t>(j)]);
    }
    sc.support.assign(coords.begin(), coords.begin() + cfg.s0);
    std::sort(sc.support.begin(), sc.support.end());
    for (int i = 0; i < cfg.s0; ++i) sc.signs.push_back(uniform01(srng) < 0.5 ? -1.0 : 1.0);

    // scan the contexts of the whole horizon for the L0 floor and the utility bound
    double scale = 1.0, max_u = 0.0;
    for (int t = 1; t <= cfg.horizon; ++t) {
        const Matrix x = draw_contexts(seed, t, cfg.num_items, d);
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            double gamma_dot = 0.0, theta_dot = 0.0, down = 0.0, up = 0.0;
            for (int j = 0; j < d; ++j) {
                theta_dot += x(i, j) * nu0[j];
                gamma_dot += x(i, j) * nu0[d + j];
            }
            for (int k = 0; k < cfg.s0; ++k) {
                const int j = sc.support[static_cast<std::size_t>(k)];
                const double sgn = sc.signs[static_cast<std::size_t>(k)];
                if (j >= d && sgn < 0.0) down += cfg.delta * x(i, j - d);
                if (j < d && sgn > 0.0) up += cfg.delta * x(i, j);
            }
            const double need = cfg.sensitivity_floor + down;
            if (gamma_dot <= 0.0 || need / gamma_dot > cfg.max_gamma_scale)
                throw DomainError("generate_scenario: L0 = " + std::to_string(cfg.sensitivity_floor) +
                                  " not reachable for these covariates");
            scale = std::max(scale, need / gamma_dot);
            max_u = std::max(max_u, theta_dot + up);
        }
    }
    nu0.tail(d) *= scale;
    sc.gamma_scale = scale;
    sc.nu.push_back(nu0);

    for (int h = 1; h <= cfg.num_sources; ++h) {
        Vector delta = Vector::Zero(2 * d);
        for (int k = 0; k < cfg.s0; ++k)
            delta[sc.support[static_cast<std::size_t>(k)]] = sc.signs[static_cast<std::size_t>(k)] * cfg.delta;
        Vector nu_h = nu0 + delta;
        for (int j = d; j < 2 * d; ++j) nu_h[j] = std::max(1e-3, nu_h[j]);
        sc.shifts.push_back(delta);
        sc.nu.push_back(nu_h);
    }

    sc.max_utility = std::isnan(cfg.max_utility) ? max_u : cfg.max_utility;
    sc.price_max = price_cap(sc.max_utility, cfg.capacity, cfg.sensitivity_floor);
    sc.cov_floor = forced_cov_floor(sc.price_max);
    sc.param_bound = 1.0;
    for (const auto& v : sc.nu) sc.param_bound = std::max(sc.param_bound, v.norm());
    return sc;
}

/// Builds the observation of one offer and its sampled outcome.
inline Observation make_observation(int market, int round, const Matrix& contexts, const Action& a, const Vector& nu,
                                    double u) {
    Observation o;
    o.market = market;
    o.round = round;
    o.items = a.items;
    o.prices = a.prices;
    o.features = offered_features(contexts, a.items, a.prices);
    const Vector util = o.features * nu;
    o.chosen = choice_from_uniform(choice_probabilities(util), u).chosen;
    return o;
}

/// Uniform-random offer in source market h, outcome drawn at ν⁽ʰ⁾.
inline Observation source_step(const MarketScenario& sc, int h, const Matrix& contexts, int t) {
    if (h < 1 || h > sc.num_sources()) throw DomainError("source_step: no source market " + std::to_string(h));
    Rng arng = make_stream(sc.seed, Stream::SourceAction, static_cast<std::uint64_t>(h), static_cast<std::uint64_t>(t));
    const Action a = random_action(sc.config.num_items, sc.config.capacity, sc.price_max, arng);
    Rng crng = make_stream(sc.seed, Stream::SourceChoice, static_cast<std::uint64_t>(h), static_cast<std::uint64_t>(t));
    return make_observation(h, t, contexts, a, sc.nu[static_cast<std::size_t>(h)], uniform01(crng));
}

/// Expected revenue of offering `a` in market h.
inline double expected_revenue_at(const MarketScenario& sc, int h, const Matrix& contexts, const Action& a) {
    if (a.items.empty()) return 0.0;
    const Vector util = offered_features(contexts, a.items, a.prices) * sc.nu[static_cast<std::size_t>(h)];
    return expected_revenue(a.prices, std::span<const double>(util.data(), static_cast<std::size_t>(util.size())));
}

/// (S*, p*) at the true target parameters; `value` is the expected revenue
/// of that offer.
inline PricedAssortment clairvoyant_value(const MarketScenario& sc, const Matrix& contexts) {
    const auto curves = linear_curves(contexts, sc.target());
    auto pa = optimal_assortment_and_prices(std::span<const LinearUtility>(curves), sc.config.capacity,
                                            PriceGrid(sc.price_max, sc.config.grid_points));
    pa.value = expected_revenue_at(sc, 0, contexts, Action{pa.items, pa.prices, false, false});
    return pa;
}

struct RegretRecord {
    int t = 0;
    Action action;
    double realized_revenue = 0.0;
    double expected_revenue = 0.0;
    double clairvoyant_revenue = 0.0;
    double regret = 0.0;
    double cum_regret = 0.0;
    bool forced = false;
    int forced_so_far = 0;
    int episode = 0;
};

class RunError : public std::runtime_error {
public:
    RunError(int round, const std::string& what)
        : std::runtime_error("round " + std::to_string(round) + ": " + what), round_(round) {}
    int round() const { return round_; }

private:
    int round_;
};

/// Plays `policy` against the scenario for T rounds. Target choices use the
/// shared uniform of round t, so different policies see common random numbers.
inline std::vector<RegretRecord> run_policy(const MarketScenario& sc, Policy& policy, int horizon) {
    const int H = sc.num_sources();
    std::vector<std::unique_ptr<TjapPolicy>> source_learners;
    if (sc.config.source_policy == SourcePolicy::Greedy) {
        for (int h = 1; h <= H; ++h) {
            ProblemSpec ps = sc.spec();
            ps.num_sources = 0;
            source_learners.push_back(std::make_unique<TjapPolicy>(
                ps, PolicyConfig{}, hash_combine(sc.seed, 0x5eedULL, static_cast<std::uint64_t>(h)),
                LearnerMode::TargetOnly));
        }
    }

    std::vector<RegretRecord> out;
    out.reserve(static_cast<std::size_t>(horizon));
    double cum = 0.0;
    int forced = 0;
    std::vector<Observation> obs;
    for (int t = 1; t <= horizon; ++t) {
        try {
            const Matrix contexts = draw_contexts(sc, t);
            RegretRecord rec;
            rec.t = t;
            rec.episode = policy.episode();
            rec.action = policy.select_action(contexts, t);
            const Action& a = rec.action;
            for (double p : a.prices)
                if (!(p >= 0.0 && p <= sc.price_max)) throw DomainError("policy posted a price outside [0, P̄]");
            if (static_cast<int>(a.items.size()) > sc.config.capacity) throw DomainError("policy exceeded capacity K");

            Rng crng = make_stream(sc.seed, Stream::TargetChoice, static_cast<std::uint64_t>(t));
            obs.clear();
            obs.push_back(make_observation(0, t, contexts, a, sc.target(), uniform01(crng)));
            for (int h = 1; h <= H; ++h) {
                if (source_learners.empty()) {
                    obs.push_back(source_step(sc, h, contexts, t));
                } else {
                    auto& learner = *source_learners[static_cast<std::size_t>(h - 1)];
                    const Action sa = learner.select_action(contexts, t);
                    Rng scr = make_stream(sc.seed, Stream::SourceChoice, static_cast<std::uint64_t>(h),
                                          static_cast<std::uint64_t>(t));
                    Observation so = make_observation(0, t, contexts, sa, sc.nu[static_cast<std::size_t>(h)],
                                                      uniform01(scr));
                    learner.observe(t, std::span<const Observation>(&so, 1));
                    so.market = h;
                    obs.push_back(std::move(so));
                }
            }
            if (auto* tp = dynamic_cast<TjapPolicy*>(&policy)) {
                for (int h = 0; h <= H; ++h) tp->observe_covariates(h, contexts);
            }
            policy.observe(t, obs);

            const auto& target_obs = obs.front();
            rec.realized_revenue = target_obs.chosen == 0 ? 0.0 : a.prices[target_obs.chosen - 1];
            rec.expected_revenue = expected_revenue_at(sc, 0, contexts, a);
            rec.clairvoyant_revenue = clairvoyant_value(sc, contexts).value;
            rec.regret = rec.clairvoyant_revenue - rec.expected_revenue;
            cum += rec.regret;
            rec.cum_regret = cum;
            rec.forced = a.forced;
            if (a.forced) ++forced;
            rec.forced_so_far = forced;
            out.push_back(std::move(rec));
        } catch (const RunError&) {
            throw;
        } catch (const std::exception& e) {
            throw RunError(t, e.what());
        }
    }
    return out;
}

inline std::unique_ptr<Policy> make_policy(const std::string& algorithm, const MarketScenario& sc,
                                           const PolicyConfig& cfg, std::uint64_t run_seed) {
    const ProblemSpec spec = sc.spec();
    if (algorithm == "tjap") return std::make_unique<TjapPolicy>(spec, cfg, run_seed, LearnerMode::Transfer);
    if (algorithm == "pool") return std::make_unique<TjapPolicy>(spec, cfg, run_seed, LearnerMode::Pool);
    if (algorithm == "target_only") return std::make_unique<TjapPolicy>(spec, cfg, run_seed, LearnerMode::TargetOnly);
    if (algorithm == "topk_pricing") return std::make_unique<TopKPricingPolicy>(spec, cfg.estimation, run_seed);
    if (algorithm == "clairvoyant") return std::make_unique<ClairvoyantPolicy>(spec, sc.target(), cfg.grid_points);
    throw DomainError("unknown algorithm '" + algorithm + "'");
}

}  // namespace tjap
