#pragma once

// Joint assortment and price optimization for MNL revenue when each item's
// utility is an arbitrary decreasing curve u_i(p) on [0, P̄].
//
// For a fixed assortment S the optimal revenue is the unique root μ* of
//     F(μ) = Σ_{i∈S} φ_i(μ) − μ,   φ_i(μ) = sup_p (p − μ) e^{u_i(p)},
// and the optimal prices are the maximizers inside φ_i(μ*). F is strictly
// decreasing with F(0) ≥ 0 and F(P̄) ≤ 0, so bisection on [0, P̄] always
// brackets the root. Choosing S jointly replaces the sum by the sum of the K
// largest positive φ_i.

#include <algorithm>
#include <bit>
#include <cmath>
#include <concepts>
#include <functional>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "mnl.hpp"

namespace tjap {

template <class C>
concept UtilityCurve = requires(const C& c, double p) {
    { c(p) } -> std::convertible_to<double>;
};

/// Uniform price grid with `points` nodes on [0, price_max].
struct PriceGrid {
    double price_max = 1.0;
    int points = 512;

    PriceGrid() = default;
    PriceGrid(double pmax, int n) : price_max(pmax), points(n) {
        if (!(pmax > 0.0) || n < 2) throw DomainError("PriceGrid: need P̄ > 0 and at least 2 points");
    }
    double step() const { return price_max / (points - 1); }
    double at(int k) const { return k == points - 1 ? price_max : price_max * k / (points - 1); }
};

/// u(p) = intercept − slope·p.
struct LinearUtility {
    double intercept = 0.0;
    double slope = 1.0;
    double operator()(double p) const { return intercept - slope * p; }
};

/// Values on a PriceGrid, linearly interpolated in between.
class GridUtility {
public:
    GridUtility() = default;
    GridUtility(PriceGrid grid, std::vector<double> values) : grid_(grid), values_(std::move(values)) {
        if (static_cast<int>(values_.size()) != grid_.points)
            throw DomainError("GridUtility: value count does not match grid");
    }

    double operator()(double p) const {
        const double s = std::clamp(p / grid_.step(), 0.0, static_cast<double>(grid_.points - 1));
        const int k = std::min(static_cast<int>(s), grid_.points - 2);
        const double w = s - k;
        return (1.0 - w) * values_[k] + w * values_[k + 1];
    }
    const std::vector<double>& values() const { return values_; }
    const PriceGrid& grid() const { return grid_; }

private:
    PriceGrid grid_;
    std::vector<double> values_;
};

/// Spot check of the curve contract on a grid: decreasing, and
/// |u(p1) − u(p2)| ≤ L·|p1 − p2| between neighbours.
template <UtilityCurve C>
bool curve_is_decreasing_lipschitz(const C& curve, const PriceGrid& grid, double lipschitz, double tol = 1e-12) {
    double prev = curve(grid.at(0));
    for (int k = 1; k < grid.points; ++k) {
        const double cur = curve(grid.at(k));
        if (cur > prev + tol) return false;
        if (prev - cur > lipschitz * (grid.at(k) - grid.at(k - 1)) + tol) return false;
        prev = cur;
    }
    return true;
}

/// A curve with e^{u} cached on the grid nodes and the upper envelope of the
/// lines μ ↦ (p_k − μ)e^{u(p_k)}, so the grid maximum is a binary search.
template <UtilityCurve C>
struct TabulatedCurve {
    C curve;
    std::vector<double> exp_u;
    std::vector<int> hull;         // node indices, in order of increasing μ
    std::vector<double> hull_from; // μ at which hull[j] takes over

    int best_node(double mu) const {
        const auto it = std::upper_bound(hull_from.begin(), hull_from.end(), mu);
        return hull[static_cast<std::size_t>(std::max<std::ptrdiff_t>(it - hull_from.begin() - 1, 0))];
    }
};

template <UtilityCurve C>
TabulatedCurve<C> tabulate(C curve, const PriceGrid& grid) {
    TabulatedCurve<C> t{std::move(curve), std::vector<double>(grid.points), {}, {}};
    for (int k = 0; k < grid.points; ++k) t.exp_u[k] = std::exp(clamp_utility(t.curve(grid.at(k))));

    // lines a − bμ with a = p·e^u, b = e^u, visited steepest first
    std::vector<int> idx(grid.points);
    std::iota(idx.begin(), idx.end(), 0);
    if (!std::is_sorted(t.exp_u.begin(), t.exp_u.end(), std::greater<>{}))
        std::stable_sort(idx.begin(), idx.end(), [&](int x, int y) { return t.exp_u[x] > t.exp_u[y]; });
    auto a = [&](int k) { return grid.at(k) * t.exp_u[k]; };
    auto b = [&](int k) { return t.exp_u[k]; };
    auto cross = [&](int l1, int l2) { return (a(l1) - a(l2)) / (b(l1) - b(l2)); };
    for (int k : idx) {
        if (!t.hull.empty() && b(t.hull.back()) == b(k)) {
            if (a(k) <= a(t.hull.back())) continue;
            t.hull.pop_back();
            t.hull_from.pop_back();
        }
        while (!t.hull.empty()) {
            const double x = cross(t.hull.back(), k);
            if (t.hull.size() > 1 && x <= t.hull_from.back()) {
                t.hull.pop_back();
                t.hull_from.pop_back();
                continue;
            }
            break;
        }
        t.hull_from.push_back(t.hull.empty() ? -std::numeric_limits<double>::infinity() : cross(t.hull.back(), k));
        t.hull.push_back(k);
    }
    return t;
}

struct PhiValue {
    double value = 0.0;
    double price = 0.0;
};

inline constexpr double kPhiPriceTol = 1e-7;
inline constexpr double kBisectionTol = 1e-7;

/// φ(μ) = max_p (p − μ)e^{u(p)}: best grid node, then golden-section search over
/// the two cells adjacent to the best node.
template <UtilityCurve C>
PhiValue phi_item(double mu, const TabulatedCurve<C>& t, const PriceGrid& grid) {
    const int best = t.best_node(mu);
    const double best_val = (grid.at(best) - mu) * t.exp_u[best];
    PhiValue out{best_val, grid.at(best)};
    if (best_val <= 0.0) return out;

    auto f = [&](double p) { return (p - mu) * std::exp(clamp_utility(t.curve(p))); };
    constexpr double inv_phi = 0.6180339887498949;
    double lo = grid.at(std::max(best - 1, 0));
    double hi = grid.at(std::min(best + 1, grid.points - 1));
    double x1 = hi - inv_phi * (hi - lo);
    double x2 = lo + inv_phi * (hi - lo);
    double f1 = f(x1), f2 = f(x2);
    while (hi - lo > kPhiPriceTol) {
        if (f1 < f2) {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        }
    }
    const double p = 0.5 * (lo + hi);
    const double v = f(p);
    if (v > out.value) out = {v, p};
    return out;
}

template <UtilityCurve C>
PhiValue phi_item(double mu, const C& curve, const PriceGrid& grid) {
    return phi_item(mu, tabulate(curve, grid), grid);
}

/// An assortment with its prices and fixed-point revenue μ*.
struct PricedAssortment {
    Assortment items;            // catalog indices, ascending
    std::vector<double> prices;  // aligned with items
    double value = 0.0;
};

/// Expected revenue of a priced assortment under the given curves.
template <UtilityCurve C>
double revenue_under(const PricedAssortment& pa, std::span<const C> curves) {
    std::vector<double> u(pa.items.size());
    for (std::size_t k = 0; k < pa.items.size(); ++k) u[k] = curves[pa.items[k]](pa.prices[k]);
    return expected_revenue(pa.prices, u);
}

/// Single item with u(p) = beta − gamma·p: maximizer of p·σ(u(p)) on [0, P̄].
/// The interior optimum solves gamma·p·(1 − q(p)) = 1; the left side is
/// increasing in p so bisection is exact up to rounding.
inline std::pair<double, double> single_item_optimal_price(double beta, double gamma, double price_max) {
    if (!(gamma > 0.0)) throw DomainError("single_item_optimal_price: slope must be positive");
    auto q = [&](double p) { return 1.0 / (1.0 + std::exp(-clamp_utility(beta - gamma * p))); };
    auto foc = [&](double p) { return gamma * p * (1.0 - q(p)) - 1.0; };
    double p_star = price_max;
    if (foc(price_max) > 0.0) {
        double lo = 0.0, hi = price_max;
        for (int it = 0; it < 200 && hi - lo > 1e-15 * std::max(1.0, hi); ++it) {
            const double mid = 0.5 * (lo + hi);
            (foc(mid) > 0.0 ? hi : lo) = mid;
        }
        p_star = 0.5 * (lo + hi);
    }
    return {p_star, p_star * q(p_star)};
}

namespace detail {

double bisect_fixed_point(double price_max, auto&& total_phi) {
    double lo = 0.0, hi = price_max;
    while (hi - lo > kBisectionTol) {
        const double mid = 0.5 * (lo + hi);
        (total_phi(mid) - mid > 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace detail

/// Revenue-optimal prices for a fixed assortment.
template <UtilityCurve C>
PricedAssortment fixed_point_revenue(const Assortment& items, std::span<const C> curves, const PriceGrid& grid) {
    PricedAssortment out;
    if (items.empty()) return out;
    std::vector<TabulatedCurve<C>> tabs;
    tabs.reserve(items.size());
    for (int i : items) tabs.push_back(tabulate(curves[i], grid));

    auto total_phi = [&](double mu) {
        double s = 0.0;
        for (const auto& t : tabs) s += phi_item(mu, t, grid).value;
        return s;
    };
    const double mu = detail::bisect_fixed_point(grid.price_max, total_phi);

    std::vector<std::size_t> order(items.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return items[a] < items[b]; });
    for (auto k : order) {
        out.items.push_back(items[k]);
        out.prices.push_back(phi_item(mu, tabs[k], grid).price);
    }
    out.value = mu;
    return out;
}

/// Joint optimum over all S with |S| ≤ K. Ties in φ go to the lower index;
/// items with φ_i(μ*) ≤ 0 are left out.
template <UtilityCurve C>
PricedAssortment optimal_assortment_and_prices(std::span<const C> curves, int capacity, const PriceGrid& grid) {
    const int n = static_cast<int>(curves.size());
    if (n < 1 || capacity < 1 || capacity > n) {
        throw DomainError("optimal_assortment_and_prices: need 1 <= K <= N");
    }
    std::vector<TabulatedCurve<C>> tabs;
    tabs.reserve(n);
    for (const auto& c : curves) tabs.push_back(tabulate(c, grid));

    std::vector<PhiValue> phis(n);
    std::vector<int> order(n);
    auto top_k = [&](double mu) {
        for (int i = 0; i < n; ++i) phis[i] = phi_item(mu, tabs[i], grid);
        std::iota(order.begin(), order.end(), 0);
        std::partial_sort(order.begin(), order.begin() + capacity, order.end(), [&](int a, int b) {
            return phis[a].value > phis[b].value || (phis[a].value == phis[b].value && a < b);
        });
        double s = 0.0;
        for (int k = 0; k < capacity; ++k) s += std::max(phis[order[k]].value, 0.0);
        return s;
    };
    const double mu = detail::bisect_fixed_point(grid.price_max, top_k);
    top_k(mu);

    Assortment chosen;
    for (int k = 0; k < capacity; ++k) {
        if (phis[order[k]].value > 0.0) chosen.push_back(order[k]);
    }
    std::sort(chosen.begin(), chosen.end());
    PricedAssortment out;
    out.items = chosen;
    for (int i : chosen) out.prices.push_back(phis[i].price);
    out.value = mu;
    return out;
}

// ---------------------------------------------------------------------------
// Brute-force reference. Used only to check the fixed-point optimizer.

namespace detail {

struct GridPoint {
    double price, a, b;  // a = p·e^u, b = e^u
};

// For fixed other items, revenue (A + a)/(B + b) grows with a and falls with
// b, so points beaten on both coordinates can never be optimal.
inline std::vector<GridPoint> pareto_points(std::vector<GridPoint> pts) {
    std::sort(pts.begin(), pts.end(), [](const GridPoint& x, const GridPoint& y) {
        return x.b < y.b || (x.b == y.b && x.a > y.a);
    });
    std::vector<GridPoint> keep;
    double best_a = -1.0;
    for (const auto& g : pts) {
        if (g.a > best_a) {
            keep.push_back(g);
            best_a = g.a;
        }
    }
    return keep;
}

}  // namespace detail

/// Exhaustive search over all S with |S| ≤ K. Prices are searched on a
/// uniform grid of spacing `grid_step`: exhaustively (with exact dominance
/// and bound pruning) for |S| ≤ 3, by coordinate ascent restarted from five
/// grid points for larger S.
template <UtilityCurve C>
PricedAssortment brute_force_joint_oracle(std::span<const C> curves, int capacity, double price_max,
                                          double grid_step) {
    const int n = static_cast<int>(curves.size());
    if (n > 8) throw DomainError("brute_force_joint_oracle: refusing N = " + std::to_string(n) + " > 8");
    if (grid_step < 0.001) throw DomainError("brute_force_joint_oracle: grid_step below 0.001");
    if (capacity < 1) throw DomainError("brute_force_joint_oracle: K must be at least 1");

    std::vector<double> prices;
    for (int k = 0;; ++k) {
        const double p = k * grid_step;
        if (p > price_max + 1e-12) break;
        prices.push_back(std::min(p, price_max));
    }
    const int g = static_cast<int>(prices.size());

    std::vector<std::vector<detail::GridPoint>> full(n), front(n);
    for (int i = 0; i < n; ++i) {
        for (double p : prices) {
            const double e = std::exp(clamp_utility(curves[i](p)));
            full[i].push_back({p, p * e, e});
        }
        front[i] = detail::pareto_points(full[i]);
    }

    PricedAssortment best;
    auto consider = [&](const Assortment& s, const std::vector<double>& ps, double value) {
        if (value > best.value) {
            best.items = s;
            best.prices = ps;
            best.value = value;
        }
    };

    auto search_small = [&](const Assortment& s) {
        const std::size_t m = s.size();
        std::vector<double> max_a(m, 0.0), min_b(m, std::numeric_limits<double>::infinity());
        for (std::size_t j = 0; j < m; ++j) {
            for (const auto& gp : front[s[j]]) {
                max_a[j] = std::max(max_a[j], gp.a);
                min_b[j] = std::min(min_b[j], gp.b);
            }
        }
        std::vector<double> ps(m);
        double best_here = best.value;
        bool improved = false;
        if (m == 1) {
            for (const auto& x : front[s[0]]) {
                const double r = x.a / (1.0 + x.b);
                if (r > best_here) {
                    best_here = r;
                    ps = {x.price};
                    improved = true;
                }
            }
        } else if (m == 2) {
            for (const auto& x : front[s[0]]) {
                if ((x.a + max_a[1]) / (1.0 + x.b + min_b[1]) <= best_here) continue;
                for (const auto& y : front[s[1]]) {
                    const double r = (x.a + y.a) / (1.0 + x.b + y.b);
                    if (r > best_here) {
                        best_here = r;
                        ps = {x.price, y.price};
                        improved = true;
                    }
                }
            }
        } else {
            for (const auto& x : front[s[0]]) {
                if ((x.a + max_a[1] + max_a[2]) / (1.0 + x.b + min_b[1] + min_b[2]) <= best_here) continue;
                for (const auto& y : front[s[1]]) {
                    const double a2 = x.a + y.a, b2 = 1.0 + x.b + y.b;
                    if ((a2 + max_a[2]) / (b2 + min_b[2]) <= best_here) continue;
                    for (const auto& z : front[s[2]]) {
                        const double r = (a2 + z.a) / (b2 + z.b);
                        if (r > best_here) {
                            best_here = r;
                            ps = {x.price, y.price, z.price};
                            improved = true;
                        }
                    }
                }
            }
        }
        if (improved) consider(s, ps, best_here);
    };

    auto search_large = [&](const Assortment& s) {
        const std::size_t m = s.size();
        for (int r = 0; r < 5; ++r) {
            const int start = static_cast<int>(std::lround((g - 1) * (r + 0.5) / 5.0));
            std::vector<int> idx(m, start);
            auto value = [&](const std::vector<int>& id) {
                double a = 0.0, b = 1.0;
                for (std::size_t j = 0; j < m; ++j) {
                    a += full[s[j]][id[j]].a;
                    b += full[s[j]][id[j]].b;
                }
                return a / b;
            };
            double cur = value(idx);
            for (bool changed = true; changed;) {
                changed = false;
                for (std::size_t j = 0; j < m; ++j) {
                    const int keep = idx[j];
                    int arg = keep;
                    for (int k = 0; k < g; ++k) {
                        idx[j] = k;
                        const double v = value(idx);
                        if (v > cur + 1e-15) {
                            cur = v;
                            arg = k;
                        }
                    }
                    idx[j] = arg;
                    if (arg != keep) changed = true;
                }
            }
            std::vector<double> ps(m);
            for (std::size_t j = 0; j < m; ++j) ps[j] = prices[idx[j]];
            consider(s, ps, cur);
        }
    };

    const int kmax = std::min(capacity, n);
    for (unsigned mask = 1; mask < (1u << n); ++mask) {
        const int size = std::popcount(mask);
        if (size > kmax) continue;
        Assortment s;
        for (int i = 0; i < n; ++i)
            if (mask & (1u << i)) s.push_back(i);
        if (size <= 3) search_small(s);
        else search_large(s);
    }
    return best;
}

}  // namespace tjap
