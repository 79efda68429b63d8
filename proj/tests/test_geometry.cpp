#include <cmath>
#include <vector>

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include "tjap/geometry.hpp"

using namespace tjap;

namespace {

Matrix random_features(Rng& rng, int rows, int dim, double scale = 1.0) {
    Matrix f(rows, dim);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < dim; ++j) f(i, j) = scale * (-1.0 + 2.0 * uniform01(rng));
    return f;
}

Vector random_vector(Rng& rng, int dim, double scale = 1.0) {
    Vector v(dim);
    for (int j = 0; j < dim; ++j) v[j] = scale * (-1.0 + 2.0 * uniform01(rng));
    return v;
}

// Covariance of the score x̃_y − E[x̃] by enumerating every outcome.
Matrix score_covariance(const Matrix& f, const Vector& nu) {
    const int m = static_cast<int>(f.rows());
    const int dim = static_cast<int>(nu.size());
    std::vector<long double> w(m + 1);
    long double z = 1.0L;
    w[0] = 1.0L;
    for (int i = 0; i < m; ++i) {
        long double u = 0.0L;
        for (int j = 0; j < dim; ++j) u += static_cast<long double>(f(i, j)) * nu[j];
        w[i + 1] = std::exp(u);
        z += w[i + 1];
    }
    for (auto& v : w) v /= z;
    std::vector<long double> mean(dim, 0.0L);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < dim; ++j) mean[j] += w[i + 1] * f(i, j);
    std::vector<long double> cov(dim * dim, 0.0L);
    for (int y = 0; y <= m; ++y) {
        std::vector<long double> s(dim);
        for (int j = 0; j < dim; ++j) s[j] = (y == 0 ? 0.0L : static_cast<long double>(f(y - 1, j))) - mean[j];
        for (int a = 0; a < dim; ++a)
            for (int b = 0; b < dim; ++b) cov[a * dim + b] += w[y] * s[a] * s[b];
    }
    Matrix out(dim, dim);
    for (int a = 0; a < dim; ++a)
        for (int b = 0; b < dim; ++b) out(a, b) = static_cast<double>(cov[a * dim + b]);
    return out;
}

}  // namespace

TEST(Fisher, EmptyAssortmentIsZero) {
    const Matrix info = fisher_increment(Matrix(0, 4), Vector::Zero(4));
    EXPECT_EQ(info.rows(), 4);
    EXPECT_EQ(info.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Fisher, SingleItemHalfProbability) {
    Matrix f = Matrix::Zero(1, 3);
    f(0, 0) = 1.0;
    const Matrix info = fisher_increment(f, Vector::Zero(3));
    Matrix expected = Matrix::Zero(3, 3);
    expected(0, 0) = 0.25;
    EXPECT_NEAR((info - expected).cwiseAbs().maxCoeff(), 0.0, 1e-15);
}

TEST(Fisher, EqualsScoreCovariance) {
    Rng rng(17);
    for (int trial = 0; trial < 300; ++trial) {
        const int m = 1 + trial % 3;
        const Matrix f = random_features(rng, m, 6);
        const Vector nu = random_vector(rng, 6, 1.5);
        EXPECT_LT((fisher_increment(f, nu) - score_covariance(f, nu)).cwiseAbs().maxCoeff(), 1e-10);
    }
}

TEST(Fisher, SymmetricPositiveSemidefinite) {
    Rng rng(23);
    for (int trial = 0; trial < 1000; ++trial) {
        const int m = 1 + trial % 5;
        const Matrix info = fisher_increment(random_features(rng, m, 8, 3.0), random_vector(rng, 8, 2.0));
        EXPECT_LT((info - info.transpose()).cwiseAbs().maxCoeff(), 1e-10);
        EXPECT_GE(min_eigenvalue(info), -1e-8);
    }
}

TEST(Fisher, AccumulatedInformationIsMonotone) {
    Rng rng(29);
    Matrix v = Matrix::Zero(4, 4);
    double prev = min_eigenvalue(v);
    const Vector nu = random_vector(rng, 4);
    for (int t = 0; t < 200; ++t) {
        v += fisher_increment(random_features(rng, 2, 4), nu);
        const double cur = min_eigenvalue(v);
        EXPECT_GE(cur, prev - 1e-12);
        prev = cur;
    }
    EXPECT_GT(prev, 0.0);
}

TEST(PoolGeometry, Examples) {
    Rng rng(1);
    const Matrix v0 = random_features(rng, 3, 3), v1 = random_features(rng, 3, 3), v2 = random_features(rng, 3, 3);
    const std::vector<Matrix> src{v1, v2};
    const std::vector<double> ones{1.0, 1.0}, zeros{0.0, 0.0}, mixed{2.0, 0.5};
    const Matrix plain = pool_geometry(v0, src, ones);
    const Matrix direct = v0 + v1 + v2;
    EXPECT_EQ(plain, direct);
    EXPECT_EQ(pool_geometry(v0, src, zeros), v0);
    const Matrix weighted = v0 + 2.0 * v1 + 0.5 * v2;
    EXPECT_EQ(pool_geometry(v0, src, mixed), weighted);
}

TEST(PoolGeometry, RejectsBadInputs) {
    const Matrix v = Matrix::Identity(2, 2);
    const std::vector<Matrix> src{v};
    const std::vector<double> neg{-0.1};
    EXPECT_THROW(pool_geometry(v, src, neg), DomainError);
    EXPECT_THROW(pool_geometry(v, src, std::vector<double>{}), DomainError);
    const std::vector<Matrix> wrong{Matrix::Identity(3, 3)};
    EXPECT_THROW(pool_geometry(v, wrong, std::vector<double>{1.0}), DomainError);
}

TEST(MarketWeight, Examples) {
    EXPECT_DOUBLE_EQ(market_weight(0.0), 1.0);
    EXPECT_DOUBLE_EQ(market_weight(1.0), 0.5);
    EXPECT_LT(market_weight(1e12), 1e-11);
    EXPECT_THROW(market_weight(-1.0), DomainError);
}

TEST(MarketWeight, MismatchScore) {
    Rng rng(4);
    Matrix a(2000, 3), b(2000, 3);
    for (int i = 0; i < 2000; ++i)
        for (int j = 0; j < 3; ++j) {
            a(i, j) = uniform01(rng);
            b(i, j) = uniform01(rng) * uniform01(rng);
        }
    EXPECT_DOUBLE_EQ(chi2_mismatch(a, a), 0.0);
    EXPECT_LT(chi2_mismatch(a, a.colwise().reverse().eval()), 1e-12);
    EXPECT_GT(chi2_mismatch(a, b), 0.1);
    EXPECT_THROW(chi2_mismatch(a, Matrix(5, 2)), DomainError);
}

TEST(MinEigenvalue, Examples) {
    EXPECT_NEAR(min_eigenvalue(Matrix::Identity(4, 4)), 1.0, 1e-14);
    Matrix d = Matrix::Zero(4, 4);
    d.diagonal() << 1, 2, 3, 4;
    EXPECT_NEAR(min_eigenvalue(d), 1.0, 1e-14);
}

TEST(MinEigenvalue, MatchesReferenceSolver) {
    Rng rng(6);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 2 + trial % 9;
        const Matrix b = random_features(rng, n, n, 2.0);
        const Matrix a = b.transpose() * b;
        const Eigen::SelfAdjointEigenSolver<Matrix> ref(a);
        const auto ev = jacobi_eigenvalues(a);
        for (int i = 0; i < n; ++i) EXPECT_NEAR(ev[i], ref.eigenvalues()[i], 1e-9 * std::max(1.0, a.norm()));
        EXPECT_NEAR(min_eigenvalue(a), jacobi_eigenvalues(a, 1e-11).front(), 1e-9);
    }
}

TEST(MinEigenvalue, RejectsNonSymmetric) {
    Matrix a = Matrix::Identity(3, 3);
    a(0, 2) = 1.0;
    EXPECT_THROW(min_eigenvalue(a), DomainError);
    EXPECT_THROW(min_eigenvalue(Matrix(2, 3)), DomainError);
}

TEST(Gate, WindowCondition) {
    EXPECT_FALSE(gate_is_open(0.0, 5.0, 0.1, 5, 0.5, 6.0));
    EXPECT_TRUE(gate_is_open(0.0, 5.0, 0.1, 5, 0.5, 5.0));
    EXPECT_FALSE(gate_is_open(Matrix::Zero(2, 2), 5.0, 0.1, 5, 0.5, 6.0));
    EXPECT_TRUE(gate_is_open(Matrix::Zero(2, 2), 5.0, 0.1, 5, 0.5, 0.0));
    EXPECT_THROW(gate_is_open(0.0, -1.0, 0.1, 5, 0.5, 0.0), DomainError);
}

// 0.01 · 5 · 20 · 0.5 / 2 = 0.25
TEST(Gate, ThresholdArithmetic) {
    EXPECT_NEAR(gate_threshold(20.0, 0.1, 5, 0.5), 0.25, 1e-15);
    EXPECT_FALSE(gate_is_open(0.3, 20.0, 0.1, 5, 0.5, 10.0));
    EXPECT_TRUE(gate_is_open(0.25, 20.0, 0.1, 5, 0.5, 10.0));
}

TEST(ForcedLength, DegenerateSecondBranch) {
    EXPECT_EQ(forced_exploration_length(1.0, 1.0, 1, 1.0, 1, 0.0, 2.0), 2);
}

// mu = 0.025: first branch 800, second 8·5·10·5/0.025 · log(2000) = 608072.197
TEST(ForcedLength, FormulaValue) {
    EXPECT_EQ(forced_exploration_length(10.0, 0.1, 5, 0.5, 10, 2.0, 0.01), 608073);
}

TEST(ForcedLength, FirstBranchLinearInTarget) {
    // η = 2d zeroes the second branch
    const auto q1 = forced_exploration_length(3.0, 0.2, 3, 0.4, 4, 1.5, 8.0);
    const auto q2 = forced_exploration_length(6.0, 0.2, 3, 0.4, 4, 1.5, 8.0);
    EXPECT_EQ(q1, static_cast<std::int64_t>(std::ceil(2.0 * 3.0 / (0.04 * 3 * 0.4))));
    EXPECT_NEAR(static_cast<double>(q2), 2.0 * static_cast<double>(q1), 1.0);
}

TEST(ForcedLength, RejectsNonPositive) {
    EXPECT_THROW(forced_exploration_length(0.0, 1.0, 1, 1.0, 1, 1.0, 1.0), DomainError);
    EXPECT_THROW(forced_exploration_length(1.0, 1.0, 1, 1.0, 1, 1.0, 0.0), DomainError);
}

TEST(ForcedLength, SaturatesInsteadOfOverflowing) {
    EXPECT_EQ(forced_exploration_length(1e300, 1e-3, 1, 1e-3, 1, 1.0, 1.0), std::numeric_limits<std::int64_t>::max());
}

TEST(CurvatureTarget, LinearSchedule) {
    EXPECT_DOUBLE_EQ(curvature_target(0.05, 0.5, 64.0), 1.6);
}

// Random offers with covariates min(|z|,1) and U[0, P̄] prices, one item
// per round: after q rounds the target curvature should be reached.
TEST(ForcedLength, UniformExplorationReachesTarget) {
    const double price_max = 2.0, kappa = 0.1, c_gate = 0.05, eta = 1.0;
    // numerically integrated moments of min(|z|, 1)
    const double m1 = 0.6312536196274929, m2 = 0.5160585509617134;
    const double cov_floor = (m2 - m1 * m1) * (0.5 * (1.0 + 4.0 / 3.0) - std::sqrt(0.25 * (1.0 / 3.0) * (1.0 / 3.0) + 1.0));
    const double target = curvature_target(c_gate, cov_floor, 64.0);
    const auto q = forced_exploration_length(target, kappa, 1, cov_floor, 1, price_max, eta);
    ASSERT_LT(q, 2'000'000);
    Vector nu(2);
    nu << 0.3, 1.0;
    int hits = 0;
    for (int trial = 0; trial < 50; ++trial) {
        Rng rng(1000 + trial);
        Matrix v = Matrix::Zero(2, 2);
        Matrix f(1, 2);
        for (std::int64_t t = 0; t < q; ++t) {
            Vector z(1);
            z[0] = standard_normal(rng);
            const double x = std::min(std::abs(z[0]), 1.0);
            const double p = uniform01(rng) * price_max;
            f << x, -p * x;
            v += fisher_increment(f, nu);
        }
        hits += min_eigenvalue(v) > target;
    }
    EXPECT_GE(hits, 45);
}
