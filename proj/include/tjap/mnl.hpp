#pragma once

// Multinomial-logit choice model with an outside option at utility zero.
//
// Index conventions used throughout the library:
//   * catalog items are 0..N-1;
//   * choice vectors are laid out over S ∪ {0} with the outside option at
//     position 0 and the k-th offered item at position k+1.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "rng.hpp"

namespace tjap {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Stacked (θ, γ) in R^{2d}: preference weights then price sensitivities.
using ParamVector = Eigen::VectorXd;

/// Catalog indices of the offered items, |S| ≤ K.
using Assortment = std::vector<int>;

/// Systematic utilities are clamped to this range before exponentiation.
inline constexpr double kUtilityClamp = 40.0;

inline double clamp_utility(double v) {
    return std::clamp(v, -kUtilityClamp, kUtilityClamp);
}

inline double standard_normal(Rng& rng) {
    // Box-Muller; one draw per call so streams stay position-independent.
    double u1 = uniform01(rng);
    while (u1 <= 0.0) u1 = uniform01(rng);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

struct ChoiceOutcome {
    std::size_t chosen = 0;  // 0 = outside option, k = k-th offered item (1-based)
    std::size_t size = 1;    // |S| + 1

    bool is_outside() const { return chosen == 0; }
    double y(std::size_t position) const { return position == chosen ? 1.0 : 0.0; }
};

/// x̃(p) = (x, −p·x).
inline Vector augment_feature(const Vector& x, double price, double price_max) {
    if (!(price >= 0.0 && price <= price_max)) {
        throw DomainError("augment_feature: price " + std::to_string(price) +
                          " outside [0, " + std::to_string(price_max) + "]");
    }
    Vector xt(2 * x.size());
    xt.head(x.size()) = x;
    xt.tail(x.size()) = -price * x;
    return xt;
}

/// Probabilities over S ∪ {0}, outside option first.
inline Vector choice_probabilities(std::span<const double> utilities) {
    Vector probs(utilities.size() + 1);
    double denom = 1.0;
    for (std::size_t i = 0; i < utilities.size(); ++i) {
        probs[i + 1] = std::exp(clamp_utility(utilities[i]));
        denom += probs[i + 1];
    }
    probs[0] = 1.0;
    probs /= denom;
    return probs;
}

inline Vector choice_probabilities(const Vector& utilities) {
    return choice_probabilities(std::span<const double>(utilities.data(), utilities.size()));
}

/// Inverse-CDF categorical draw driven by an externally supplied uniform.
/// Sharing `u` across policies gives common random numbers.
inline ChoiceOutcome choice_from_uniform(const Vector& probs, double u) {
    ChoiceOutcome out;
    out.size = static_cast<std::size_t>(probs.size());
    double acc = 0.0;
    for (Eigen::Index k = 0; k < probs.size(); ++k) {
        acc += probs[k];
        if (u < acc) {
            out.chosen = static_cast<std::size_t>(k);
            return out;
        }
    }
    // u landed in the rounding gap above the last partial sum
    for (Eigen::Index k = probs.size() - 1; k >= 0; --k) {
        if (probs[k] > 0.0) {
            out.chosen = static_cast<std::size_t>(k);
            break;
        }
    }
    return out;
}

inline ChoiceOutcome sample_choice(const Vector& probs, Rng& rng) {
    return choice_from_uniform(probs, uniform01(rng));
}

/// Σ_{i∈S} p_i q_i.
inline double expected_revenue(std::span<const double> prices, std::span<const double> utilities) {
    if (prices.size() != utilities.size()) {
        throw DomainError("expected_revenue: " + std::to_string(prices.size()) + " prices for " +
                          std::to_string(utilities.size()) + " items");
    }
    const Vector q = choice_probabilities(utilities);
    double r = 0.0;
    for (std::size_t i = 0; i < prices.size(); ++i) r += prices[i] * q[static_cast<Eigen::Index>(i) + 1];
    return r;
}

/// Principal branch of Lambert W for z ≥ 0, by Newton on w·e^w = z.
inline double lambert_w0(double z, double tol = 1e-10) {
    if (z < 0.0) throw DomainError("lambert_w0: negative argument");
    if (z == 0.0) return 0.0;
    double w = z < std::numbers::e ? std::log1p(z) * 0.75 : std::log(z) - std::log(std::log(z));
    for (int it = 0; it < 100; ++it) {
        const double ew = std::exp(w);
        const double step = (w * ew - z) / (ew * (w + 1.0));
        w -= step;
        if (std::abs(step) <= tol * std::max(1.0, std::abs(w))) break;
    }
    return w;
}

/// Common upper bound on optimal MNL prices:
/// P̄ = W(K·e^M)/L0 + 1/L0, where M bounds the zero-price utility.
inline double price_cap(double max_utility, int capacity, double sensitivity_floor) {
    if (!(sensitivity_floor > 0.0)) throw DomainError("price_cap: L0 must be positive");
    if (capacity < 1) throw DomainError("price_cap: K must be at least 1");
    const double z = capacity * std::exp(max_utility);
    return (lambert_w0(z) + 1.0) / sensitivity_floor;
}

}  // namespace tjap
