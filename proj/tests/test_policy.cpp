#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <gtest/gtest.h>

#include "tjap/environment.hpp"
#include "tjap/policy.hpp"

using namespace tjap;

namespace {

std::vector<double> envelope_direct(const std::vector<double>& v, const PriceGrid& g, double l0) {
    std::vector<double> out(v.size());
    for (std::size_t k = 0; k < v.size(); ++k) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j <= k; ++j)
            best = std::min(best, v[j] - l0 * (g.at(static_cast<int>(k)) - g.at(static_cast<int>(j))));
        out[k] = best;
    }
    return out;
}

Matrix random_contexts(Rng& rng, int n, int d) {
    Matrix x(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) x(i, j) = uniform01(rng);
    return x;
}

ProblemSpec small_spec(int sources = 1) {
    ProblemSpec s;
    s.d = 2;
    s.num_items = 4;
    s.capacity = 2;
    s.num_sources = sources;
    s.horizon = 64;
    s.price_max = 4.0;
    s.sensitivity_floor = 0.5;
    s.cov_floor = 0.05;
    s.param_bound = 1.0;
    s.declared_sparsity = 1;
    return s;
}

Vector small_truth() {
    Vector nu(4);
    nu << 0.4, -0.2, 0.8, 0.9;
    return nu;
}

// Drives a learner for rounds [from, to] with sources offering uniformly at random.
std::vector<std::vector<Observation>> drive(TjapPolicy& pol, const ProblemSpec& spec, int from, int to,
                                            std::uint64_t seed) {
    std::vector<std::vector<Observation>> log;
    const Vector nu = small_truth();
    for (int t = from; t <= to; ++t) {
        Rng rng(hash_combine(seed, static_cast<std::uint64_t>(t)));
        const Matrix x = random_contexts(rng, spec.num_items, spec.d);
        const Action a = pol.select_action(x, t);
        std::vector<Observation> obs{make_observation(0, t, x, a, nu, uniform01(rng))};
        for (int h = 1; h <= spec.num_sources; ++h) {
            const Action sa = random_action(spec.num_items, spec.capacity, spec.price_max, rng);
            obs.push_back(make_observation(h, t, x, sa, nu, uniform01(rng)));
        }
        pol.observe(t, obs);
        log.push_back(obs);
    }
    return log;
}

}  // namespace

TEST(Bonus, Examples) {
    const auto id = ConfidenceGeometry::from_regularized(Matrix::Identity(2, 2));
    Vector e1(2);
    e1 << 1.0, 0.0;
    EXPECT_DOUBLE_EQ(two_radius_bonus(e1, id, 0.0, 0.0), 0.0);
    EXPECT_DOUBLE_EQ(two_radius_bonus(e1, id, 2.0, 0.0), 2.0);
    Matrix w = Matrix::Zero(2, 2);
    w.diagonal() << 4.0, 1.0;
    // 1 · (1/2) + 3 · 1
    EXPECT_NEAR(two_radius_bonus(e1, ConfidenceGeometry::from_regularized(w), 1.0, 3.0), 3.5, 1e-15);
}

TEST(Bonus, RidgeIsAddedToW) {
    const ConfidenceGeometry g(Matrix::Identity(2, 2) * 3.0, 1.0);
    Vector x(2);
    x << 2.0, 0.0;
    EXPECT_NEAR(g.mahalanobis_sq(x), 1.0, 1e-15);
    EXPECT_THROW(ConfidenceGeometry::from_regularized(-Matrix::Identity(2, 2)), DomainError);
}

TEST(Bonus, PriceQuadraticMatchesDirectForm) {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const Matrix b = random_contexts(rng, 6, 6);
        const ConfidenceGeometry g(b.transpose() * b, 1.0);
        const Vector x = random_contexts(rng, 1, 3).row(0).transpose();
        const auto q = g.price_quadratic(x);
        for (double p : {0.0, 0.7, 2.5}) {
            const double direct = g.mahalanobis_sq(augment_feature(x, p, 3.0));
            EXPECT_NEAR(q[0] - 2.0 * p * q[1] + p * p * q[2], direct, 1e-12 * std::max(1.0, direct));
        }
    }
}

TEST(Envelope, ConstantInput) {
    const PriceGrid g(5.0, 101);
    const std::vector<double> v(101, 1.5);
    const auto e = envelope(v, g, 0.4);
    for (int k = 0; k < 101; ++k) EXPECT_NEAR(e[k], 1.5 - 0.4 * g.at(k), 1e-14);
}

TEST(Envelope, AlreadyLipschitzIsUnchanged) {
    const PriceGrid g(5.0, 101);
    std::vector<double> v(101);
    for (int k = 0; k < 101; ++k) v[k] = 2.0 - 0.4 * g.at(k);
    const auto e = envelope(v, g, 0.4);
    for (int k = 0; k < 101; ++k) EXPECT_NEAR(e[k], v[k], 1e-14);
}

TEST(Envelope, SingleJumpMatchesQuadraticOracle) {
    const PriceGrid g(3.0, 1000);
    std::vector<double> v(1000);
    for (int k = 0; k < 1000; ++k) v[k] = 1.0 - 0.8 * g.at(k) + (k >= 400 ? 0.9 : 0.0);
    EXPECT_EQ(envelope(v, g, 0.5), envelope_direct(v, g, 0.5));
}

TEST(Envelope, Properties) {
    Rng rng(9);
    for (int trial = 0; trial < 200; ++trial) {
        const PriceGrid g(1.0 + 4.0 * uniform01(rng), 2 + static_cast<int>(uniform01(rng) * 200));
        const double l0 = 0.1 + uniform01(rng);
        std::vector<double> v(g.points);
        for (auto& x : v) x = -2.0 + 4.0 * uniform01(rng);
        const auto e = envelope(v, g, l0);
        EXPECT_EQ(e, envelope_direct(v, g, l0));
        for (int k = 0; k < g.points; ++k) {
            EXPECT_LE(e[k], v[k]);
            if (k > 0) {
                EXPECT_GE(e[k - 1] - e[k], l0 * (g.at(k) - g.at(k - 1)) * (1 - 1e-12) - 1e-12);
            }
        }
    }
}

TEST(OptimisticDecision, ZeroBonusIsGreedy) {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix x = random_contexts(rng, 6, 3);
        Vector nu(6);
        nu << 0.5, -0.3, 0.2, 1.0, 1.2, 0.9;
        const PriceGrid g(6.0, 512);
        const ConfidenceGeometry geom(Matrix::Zero(6, 6), 1.0);
        const auto opt = optimistic_decision(x, nu, geom, 0.0, 0.0, 0.0, 2, g);
        std::vector<LinearUtility> lin;
        for (int i = 0; i < 6; ++i) lin.push_back({x.row(i).dot(nu.head(3)), x.row(i).dot(nu.tail(3))});
        const auto greedy = optimal_assortment_and_prices(std::span<const LinearUtility>(lin), 2, g);
        EXPECT_EQ(opt.items, greedy.items);
        EXPECT_NEAR(opt.value, greedy.value, 1e-9);
    }
}

TEST(OptimisticDecision, LargeBiasBonusPullsItemIn) {
    Matrix x(2, 2);
    x << 0.9, 0.9, 0.05, 0.05;
    Vector nu(4);
    nu << 1.0, 1.0, 0.5, 0.5;
    const PriceGrid g(6.0, 512);
    const ConfidenceGeometry geom(Matrix::Identity(4, 4) * 1e6, 1.0);
    const auto without = optimistic_decision(x, nu, geom, 0.0, 0.0, 0.0, 2, g);
    const auto with = optimistic_decision(x, nu, geom, 0.0, 200.0, 0.0, 2, g);
    EXPECT_EQ(with.items, (Assortment{0, 1}));
    EXPECT_GT(with.value, without.value);
}

TEST(OptimisticDecision, MatchesBruteForceOnEnvelope) {
    Rng rng(6);
    const Matrix x = random_contexts(rng, 4, 2);
    Vector nu(4);
    nu << 0.3, 0.6, 0.9, 0.7;
    const PriceGrid g(4.0, 512);
    const Matrix b = random_contexts(rng, 4, 4);
    const ConfidenceGeometry geom(b.transpose() * b * 10.0, 1.0);
    const auto curves = optimistic_curves(x, nu, geom, 0.4, 0.05, 0.5, g);
    const auto span = std::span<const GridUtility>(curves);
    const auto fast = optimal_assortment_and_prices(span, 2, g);
    const auto slow = brute_force_joint_oracle(span, 2, g.price_max, 0.005);
    EXPECT_NEAR(fast.value, slow.value, 2e-3);
    EXPECT_EQ(fast.value, optimistic_decision(x, nu, geom, 0.4, 0.05, 0.5, 2, g).value);
}

// With α set to ‖ν̂ − ν*‖ in the W̄ norm the true utility is covered, so the
// envelope sits between the truth and the raw optimistic curve and the
// optimistic value is at least the clairvoyant value up to grid slack.
TEST(OptimisticDecision, SandwichAndOptimismUnderCoverage) {
    Rng rng(8);
    for (int trial = 0; trial < 30; ++trial) {
        const int n = 6, d = 3, k = 3;
        const Matrix x = random_contexts(rng, n, d);
        Vector truth(6);
        truth << 0.5, -0.2, 0.3, 0.9, 1.1, 1.0;
        const double l0 = (x * truth.tail(d)).minCoeff();
        const Vector err = 0.1 * (random_contexts(rng, 6, 1).col(0).array() - 0.5).matrix();
        const Vector nu_hat = truth + err;
        const Matrix b = random_contexts(rng, 8, 6);
        const Matrix w = b.transpose() * b * 5.0;
        const ConfidenceGeometry geom(w, 1.0);
        const Matrix w_bar = w + Matrix::Identity(6, 6);
        const double alpha = std::sqrt(err.dot(w_bar * err)) * (1.0 + 1e-12);
        const PriceGrid g(5.0, 512);
        const auto curves = optimistic_curves(x, nu_hat, geom, alpha, 0.0, l0, g);
        std::vector<LinearUtility> lin;
        for (int i = 0; i < n; ++i) {
            const double icpt = x.row(i).dot(truth.head(d));
            const double slope = x.row(i).dot(truth.tail(d));
            ASSERT_GE(slope, l0);
            lin.push_back({icpt, slope});
            for (int j = 0; j < g.points; ++j) {
                const double p = g.at(j);
                const Vector xt = augment_feature(x.row(i).transpose(), p, g.price_max);
                const double bar = xt.dot(nu_hat) + two_radius_bonus(xt, geom, alpha, 0.0);
                EXPECT_LE(lin.back()(p), curves[i].values()[j] + 1e-12);
                EXPECT_LE(curves[i].values()[j], bar + 1e-12);
            }
        }
        const double optimistic = optimal_assortment_and_prices(std::span<const GridUtility>(curves), k, g).value;
        const double clair = optimal_assortment_and_prices(std::span<const LinearUtility>(lin), k, g).value;
        EXPECT_GE(optimistic, clair - 2.0 * g.step() * l0 * k * g.price_max);
    }
}

TEST(RandomAction, ExactCapacityAndPriceRange) {
    Rng rng(1);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto a = random_action(7, 3, 2.5, rng);
        ASSERT_EQ(a.items.size(), 3u);
        EXPECT_TRUE(std::is_sorted(a.items.begin(), a.items.end()));
        EXPECT_EQ(std::adjacent_find(a.items.begin(), a.items.end()), a.items.end());
        for (double p : a.prices) {
            EXPECT_GE(p, 0.0);
            EXPECT_LE(p, 2.5);
        }
    }
    EXPECT_EQ(random_action(2, 5, 1.0, rng).items.size(), 2u);
}

TEST(Episodes, Boundaries) {
    EXPECT_EQ(episode_of_round(1), 1);
    EXPECT_EQ(episode_of_round(2), 2);
    EXPECT_EQ(episode_of_round(3), 3);
    EXPECT_EQ(episode_of_round(4), 3);
    EXPECT_EQ(episode_of_round(5), 4);
    EXPECT_EQ(episode_of_round(1024), 11);
    EXPECT_EQ(episode_of_round(1025), 12);
    EXPECT_EQ(episode_end(12, 2000), 2000);
    EXPECT_EQ(episode_end(11, 2000), 1024);
}

TEST(Warmup, LengthAndReproducibility) {
    ProblemSpec s = small_spec(0);
    s.d = 1;
    TjapPolicy a(s, PolicyConfig{}, 5), b(s, PolicyConfig{}, 5);
    EXPECT_EQ(a.warmup_rounds(), 2);
    Matrix x = Matrix::Constant(4, 1, 0.5);
    const auto a1 = a.select_action(x, 1);
    const auto b1 = b.select_action(x, 1);
    EXPECT_TRUE(a1.warmup);
    EXPECT_EQ(a1.items, b1.items);
    EXPECT_EQ(a1.prices, b1.prices);
}

TEST(Warmup, GramIsPsdAndBounded) {
    const ProblemSpec s = small_spec(0);
    TjapPolicy pol(s, PolicyConfig{}, 11);
    drive(pol, s, 1, pol.warmup_rounds() - 1, 3);
    const Matrix& v = pol.state().rolling_info[0];
    EXPECT_GE(min_eigenvalue(v), -1e-12);
    const double k = s.capacity, d = s.d;
    EXPECT_LE(v.trace(), 2 * d * (1.0 / (k * k)) * k * d * (1 + s.price_max * s.price_max));
    EXPECT_GT(v.trace(), 0.0);
}

TEST(Observe, RoundMismatchIsSequencingError) {
    const ProblemSpec s = small_spec();
    TjapPolicy pol(s, PolicyConfig{}, 1);
    EXPECT_THROW(pol.select_action(Matrix::Zero(4, 2), 2), SequencingError);
    EXPECT_THROW(pol.observe(3, {}), SequencingError);
}

TEST(Observe, EmptyOfferLeavesInformationUnchanged) {
    const ProblemSpec s = small_spec(0);
    TjapPolicy pol(s, PolicyConfig{}, 2);
    drive(pol, s, 1, 5, 9);  // warm-up ends at 4, episode 3 runs to 4... next ends at 8
    const Matrix before = pol.state().rolling_info[0];
    Observation empty;
    empty.round = 6;
    empty.features = Matrix(0, 4);
    pol.select_action(Matrix::Zero(4, 2), 6);
    pol.observe(6, std::vector<Observation>{empty});
    EXPECT_EQ(pol.state().rolling_info[0], before);
}

TEST(Observe, InformationIsReplayableSum) {
    const ProblemSpec s = small_spec();
    TjapPolicy pol(s, PolicyConfig{}, 3);
    drive(pol, s, 1, 16, 4);  // episode boundary at 16
    ASSERT_EQ(pol.state().tau_prev, 16);
    const Vector nu_hat = pol.state().nu_hat;
    const auto log = drive(pol, s, 17, 21, 5);
    std::vector<Matrix> expect(2, Matrix::Zero(4, 4));
    for (const auto& round : log)
        for (const auto& o : round) expect[o.market] += fisher_increment(o.features, nu_hat);
    for (int h = 0; h < 2; ++h)
        EXPECT_LT((pol.state().rolling_info[h] - expect[h]).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Observe, OrderOfIngestionDoesNotMatter) {
    const ProblemSpec s = small_spec();
    TjapPolicy a(s, PolicyConfig{}, 3), b(s, PolicyConfig{}, 3);
    drive(a, s, 1, 16, 4);
    drive(b, s, 1, 16, 4);
    Rng rng(99);
    const Matrix x = random_contexts(rng, 4, 2);
    const Action act = a.select_action(x, 17);
    b.select_action(x, 17);
    const Observation t0 = make_observation(0, 17, x, act, small_truth(), 0.3);
    Observation s1 = make_observation(1, 17, x, random_action(4, 2, 4.0, rng), small_truth(), 0.6);
    a.observe(17, std::vector<Observation>{t0, s1});
    b.observe(17, std::vector<Observation>{s1, t0});
    for (int h = 0; h < 2; ++h) EXPECT_EQ(a.state().rolling_info[h], b.state().rolling_info[h]);
}

TEST(Rollover, FreezesPooledInformation) {
    const ProblemSpec s = small_spec();
    TjapPolicy pol(s, PolicyConfig{}, 7);
    drive(pol, s, 1, 16, 8);
    const auto log = drive(pol, s, 17, 31, 9);
    const Matrix snapshot = pol.state().rolling_info[0] + pol.state().rolling_info[1];
    drive(pol, s, 32, 32, 10);
    // the last round's increments land before the freeze
    const Matrix w = pol.state().w_frozen;
    EXPECT_EQ(pol.state().m, 7);
    EXPECT_EQ(pol.state().tau_prev, 32);
    EXPECT_EQ(pol.state().tau_end, 64);
    EXPECT_GE((w - snapshot).norm(), 0.0);
    for (const auto& v : pol.state().rolling_info) EXPECT_EQ(v.norm(), 0.0);
    for (const auto& b : pol.state().buffer) EXPECT_TRUE(b.empty());
}

TEST(Rollover, FrozenGeometryEqualsPreResetSum) {
    const ProblemSpec s = small_spec();
    TjapPolicy pol(s, PolicyConfig{}, 7);
    drive(pol, s, 1, 31, 8);
    const Vector nu_hat = pol.state().nu_hat;
    Matrix pre = pol.state().rolling_info[0] + pol.state().rolling_info[1];
    const auto last = drive(pol, s, 32, 32, 10);
    for (const auto& o : last[0]) pre += fisher_increment(o.features, nu_hat);
    EXPECT_LT((pol.state().w_frozen - pre).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Rollover, TargetOnlyWithoutSources) {
    const ProblemSpec s = small_spec(0);
    TjapPolicy pol(s, PolicyConfig{}, 12);
    drive(pol, s, 1, 15, 1);
    const Matrix pre = pol.state().rolling_info[0];
    const Vector nu_hat = pol.state().nu_hat;
    const auto last = drive(pol, s, 16, 16, 2);
    const Matrix expect = pre + fisher_increment(last[0][0].features, nu_hat);
    EXPECT_LT((pol.state().w_frozen - expect).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(pol.state().tuning.beta, 0.0);
}

TEST(Rollover, RepeatedWithoutDataFails) {
    const ProblemSpec s = small_spec();
    TjapPolicy pol(s, PolicyConfig{}, 13);
    drive(pol, s, 1, 16, 3);
    EXPECT_THROW(pol.episode_rollover(), SequencingError);
}

TEST(Episode, ParametersFrozenWithinEpisode) {
    const ProblemSpec s = small_spec();
    TjapPolicy pol(s, PolicyConfig{}, 14);
    drive(pol, s, 1, 32, 5);
    const Vector nu = pol.state().nu_hat;
    const Matrix w = pol.state().w_frozen;
    const Tuning tu = pol.state().tuning;
    for (int t = 33; t < 64; ++t) {
        drive(pol, s, t, t, 6 + t);
        EXPECT_EQ(pol.state().nu_hat, nu);
        EXPECT_EQ(pol.state().w_frozen, w);
        EXPECT_EQ(pol.state().tuning.alpha, tu.alpha);
        EXPECT_EQ(pol.state().tuning.beta, tu.beta);
    }
}

TEST(Episode, TransferUsesBiasRadiusAfterFirstEstimate) {
    const ProblemSpec s = small_spec();
    TjapPolicy pol(s, PolicyConfig{}, 15);
    drive(pol, s, 1, 4, 1);
    EXPECT_EQ(pol.state().tuning.beta, 0.0);
    drive(pol, s, 5, 8, 2);
    EXPECT_GT(pol.state().tuning.beta, 0.0);
    TjapPolicy pool(s, PolicyConfig{}, 15, LearnerMode::Pool);
    drive(pool, s, 1, 8, 2);
    EXPECT_EQ(pool.state().tuning.beta, 0.0);
    EXPECT_EQ(pool.name(), "pool");
}

TEST(Gate, ForcedRoundsAreRandomAndCounted) {
    ProblemSpec s = small_spec();
    s.horizon = 256;
    s.cov_floor = 10.0;  // unreachable curvature target keeps the gate open
    PolicyConfig cfg;
    cfg.forced_cap_fraction = 0.25;
    cfg.kappa = 1.0;
    TjapPolicy pol(s, cfg, 16);
    drive(pol, s, 1, 256, 7);
    EXPECT_GT(pol.forced_rounds(), 0);
    EXPECT_LE(pol.forced_rounds(), 256 / 4);
}
