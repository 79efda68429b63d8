#pragma once

// Reference policies: the clairvoyant benchmark and a top-K ranking
// heuristic with per-item pricing.

#include <algorithm>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "estimation.hpp"
#include "policy.hpp"
#include "pricing.hpp"

namespace tjap {

/// Exact linear utilities v_i(p) = ⟨x_i, θ⟩ − ⟨x_i, γ⟩·p for every row.
inline std::vector<LinearUtility> linear_curves(const Matrix& contexts, const Vector& nu) {
    const Eigen::Index d = contexts.cols();
    std::vector<LinearUtility> curves;
    curves.reserve(static_cast<std::size_t>(contexts.rows()));
    for (Eigen::Index i = 0; i < contexts.rows(); ++i) {
        const Vector x = contexts.row(i).transpose();
        curves.push_back({x.dot(nu.head(d)), x.dot(nu.tail(d))});
    }
    return curves;
}

/// Plays argmax R(S, p) at a fixed parameter vector.
class ClairvoyantPolicy : public Policy {
public:
    ClairvoyantPolicy(ProblemSpec spec, Vector nu, int grid_points = 512)
        : spec_(spec), nu_(std::move(nu)), grid_(spec.price_max, grid_points) {}

    std::string name() const override { return "clairvoyant"; }

    Action select_action(const Matrix& contexts, int round) override {
        if (round != next_round_) throw SequencingError("clairvoyant: out-of-order round");
        const auto curves = linear_curves(contexts, nu_);
        const auto pa = optimal_assortment_and_prices(std::span<const LinearUtility>(curves), spec_.capacity, grid_);
        return Action{pa.items, pa.prices, false, false};
    }

    void observe(int round, std::span<const Observation>) override {
        if (round != next_round_) throw SequencingError("clairvoyant: out-of-order round");
        ++next_round_;
    }

private:
    ProblemSpec spec_;
    Vector nu_;
    PriceGrid grid_;
    int next_round_ = 1;
};

/// Top-K items by estimated zero-price utility, each priced as if sold alone.
/// Refits a target-only ridge MLE on all target data at every doubling point.
class TopKPricingPolicy : public Policy {
public:
    TopKPricingPolicy(ProblemSpec spec, EstimationConfig est, std::uint64_t seed)
        : spec_(spec), est_(est), rng_(make_stream(seed, Stream::Policy)) {
        est_.validate();
        est_.param_radius = 2.0 * std::max(1.0, spec_.param_bound);
        nu_hat_ = Vector::Zero(spec_.dim());
    }

    std::string name() const override { return "topk_pricing"; }
    int episode() const override { return episode_of_round(next_round_); }
    const Vector& estimate() const { return nu_hat_; }
    void set_estimate(const Vector& nu) { nu_hat_ = nu; }
    int warmup_rounds() const { return std::min(spec_.dim(), spec_.horizon); }

    Action select_action(const Matrix& contexts, int round) override {
        if (round != next_round_) throw SequencingError("topk_pricing: out-of-order round");
        if (round <= warmup_rounds()) {
            Action a = random_action(spec_.num_items, spec_.capacity, spec_.price_max, rng_);
            a.warmup = true;
            return a;
        }
        return rank_and_price(contexts);
    }

    Action rank_and_price(const Matrix& contexts) const {
        const auto curves = linear_curves(contexts, nu_hat_);
        std::vector<int> order(curves.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](int a, int b) { return curves[a].intercept > curves[b].intercept; });
        const int k = std::min<int>(spec_.capacity, static_cast<int>(order.size()));
        Action act;
        act.items.assign(order.begin(), order.begin() + k);
        std::sort(act.items.begin(), act.items.end());
        for (int i : act.items) {
            const double gamma = std::max(curves[i].slope, spec_.sensitivity_floor);
            act.prices.push_back(single_item_optimal_price(curves[i].intercept, gamma, spec_.price_max).first);
        }
        return act;
    }

    void observe(int round, std::span<const Observation> observations) override {
        if (round != next_round_) throw SequencingError("topk_pricing: out-of-order round");
        for (const auto& o : observations)
            if (o.market == 0) data_.push_back(o);
        ++next_round_;
        const bool doubling = round >= warmup_rounds() && (round & (round - 1)) == 0;
        if ((round == warmup_rounds() || doubling) && !data_.empty())
            nu_hat_ = ridge_mle(data_, nu_hat_, est_).estimate;
    }

private:
    ProblemSpec spec_;
    EstimationConfig est_;
    Rng rng_;
    Vector nu_hat_;
    std::vector<Observation> data_;
    int next_round_ = 1;
};

}  // namespace tjap
