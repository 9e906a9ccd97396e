#pragma once

/// @file fitness.hpp
/// Expression policies acting on normalized histories, and their model-based
/// return over a fixed set of start states.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "core.hpp"
#include "data.hpp"
#include "expr.hpp"
#include "surrogate.hpp"

namespace gprl {

/// An expression read as a setpoint policy. The feed setpoint is fixed.
struct PolicyBinding {
    Expr expr;
    NormalizationStats stats;
    double feed = kFeedMax;  // kg/s
};

/// Value of `v` lagged by `lag` grid steps, clamped to the oldest row.
inline double history_value(const RolloutHistory& h, Variable v, std::size_t lag) {
    if (v == Variable::S) return h.setpoint;
    const std::size_t n = h.rows.size();
    const StepRow& row = h.rows[n - 1 - std::min(lag, n - 1)];
    switch (v) {
    case Variable::T: return row[0];
    case Variable::M: return row[1];
    case Variable::P: return row[2];
    case Variable::UA: return row[3];
    case Variable::Q: return row[4];
    case Variable::That: return row[5];
    case Variable::Mhat: return row[6];
    default: throw Error("unknown variable");
    }
}

/// Maps a raw normalized policy output to the physical setpoint actually used.
inline double policy_setpoint(const PolicyBinding& b, double raw) {
    if (std::isnan(raw)) throw Error("policy produced NaN");
    return std::clamp(b.stats.denormalize(Channel::That, raw), kSetpointMin, kSetpointMax);
}

/// Physical action (T̂ in K, M̂ in kg/s) for a normalized history on the 10 s grid.
inline Action policy_action(const PolicyBinding& b, const RolloutHistory& h) {
    if (h.rows.empty()) throw Error("policy needs at least one history row");
    const double raw = eval_expr(b.expr, [&](Variable v, std::size_t lag) { return history_value(h, v, lag); });
    return Action{policy_setpoint(b, raw), b.feed};
}

inline std::array<double, kActionDim> normalized_action(const PolicyBinding& b, const Action& a) {
    return {b.stats.normalize(Channel::That, a.That), b.stats.normalize(Channel::Mhat, a.Mhat)};
}

struct FitnessSpec {
    std::vector<RolloutHistory> starts;
    std::size_t horizon = 10;
    double discount = 1.0;

    void validate() const {
        if (starts.empty()) throw Error("fitness needs at least one start state");
        if (horizon < 1) throw Error("fitness horizon must be >= 1");
        if (!(discount >= 0 && discount <= 1)) throw Error("discount must lie in [0, 1]");
    }
};

/// Keeps windows whose history held one T̂ throughout and makes that T̂ the
/// window's setpoint. After an exploration step the batch is then read as a
/// nominal batch at the new setpoint, so the default policy starts in
/// distribution.
inline std::vector<Window> steady_windows(std::vector<Window> windows) {
    std::erase_if(windows, [](const Window& w) {
        const double held = w.history[(w.horizon_past - 1) * kStepDim + kStateDim];
        for (std::size_t r = 0; r < w.horizon_past; ++r)
            if (w.history[r * kStepDim + kStateDim] != held) return true;
        return false;
    });
    for (auto& w : windows) w.setpoint = w.history[(w.horizon_past - 1) * kStepDim + kStateDim];
    return windows;
}

/// Histories of `count` training windows drawn without replacement.
inline std::vector<RolloutHistory> select_start_states(std::span<const Window> windows, std::size_t count,
                                                       std::uint64_t seed) {
    if (windows.empty()) throw Error("no windows to draw start states from");
    count = std::min(count, windows.size());
    std::vector<std::size_t> perm(windows.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::mt19937_64 rng(derive_seed(seed, 0x57a));
    // partial Fisher-Yates: the first `count` entries are the sample
    for (std::size_t i = 0; i < count; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, perm.size() - 1);
        std::swap(perm[i], perm[pick(rng)]);
    }
    std::vector<RolloutHistory> out;
    out.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
        const Window& w = windows[perm[k]];
        RolloutHistory h;
        h.setpoint = w.setpoint;
        h.rows.resize(w.horizon_past);
        for (std::size_t r = 0; r < w.horizon_past; ++r)
            std::copy_n(w.history.begin() + static_cast<std::ptrdiff_t>(r * kStepDim), kStepDim, h.rows[r].begin());
        out.push_back(std::move(h));
    }
    return out;
}

/// Discounted return of one rollout from `start`.
inline double rollout_return(const PolicyBinding& b, const SurrogateModel& m, const RolloutHistory& start,
                             std::size_t horizon, double discount) {
    const auto trace = rollout(
        m, start, [&](const RolloutHistory& h) { return normalized_action(b, policy_action(b, h)); }, horizon);
    double g = 0, w = 1;
    for (double r : trace.rewards) {
        g += w * r;
        w *= discount;
    }
    return g;
}

/// Mean discounted return over the start states. Any failure yields the
/// worst fitness; the reason goes to `diagnostic` when given.
inline double estimate_return(const PolicyBinding& b, const SurrogateModel& m, const FitnessSpec& spec,
                              std::string* diagnostic = nullptr) {
    spec.validate();
    try {
        double sum = 0;
        for (const auto& s : spec.starts) sum += rollout_return(b, m, s, spec.horizon, spec.discount);
        const double mean = sum / static_cast<double>(spec.starts.size());
        if (!std::isfinite(mean)) throw Error("non-finite return");
        return mean;
    } catch (const std::exception& ex) {
        if (diagnostic) *diagnostic = ex.what();
        return kWorstFitness;
    }
}

} // namespace gprl
