#pragma once

/// @file reactor.hpp
/// Desk-scale semi-batch polymerization reactor with an inner PI(D) jacket
/// temperature loop. The plant is a lumped model:
///
///   dM/dt  = feed - k(T) M             dP/dt = k(T) M
///   C dT/dt = Q + UA (Tj - T)           Q     = dH k(T) M
///   dTj/dt = (cmd - Tj) / jacket_lag    dUA/dt = -fouling k(T) M UA
///
/// integrated with fixed-step RK4. Feed and jacket command are held constant
/// over a step.

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "core.hpp"

namespace gprl {

struct ReactorParams {
    double rate_ref = 0.002;         // 1/s at 360 K
    double activation_ratio = 7217;  // K
    double reaction_heat = 1500;     // kJ/kg
    double heat_capacity = 600;      // kJ/K
    double jacket_lag = 40;          // s
    double jacket_cmd_min = 280;     // K
    double jacket_cmd_max = 420;     // K
    double fouling_rate = 0.01;      // 1/kg
    double ua_init = 1.0;            // kW/K
    double ua_floor = 0.2;           // kW/K
    double pid_kp = 8;
    double pid_ki = 0.05;
    double pid_kd = 0;
    double integrator_clamp = 400;   // K s
    double dt = 1;                   // s
    double monomer_target = 9;       // kg
    double impurity_min = 0.8;
    double impurity_max = 1.2;
    double start_temp = 345;         // K
    double max_duration = 2400;      // s

    void validate() const {
        const auto positive = [](double v, const char* name) {
            if (!(v > 0) || !std::isfinite(v)) throw Error(std::string("reactor param must be positive: ") + name);
        };
        positive(rate_ref, "rate_ref");
        positive(activation_ratio, "activation_ratio");
        positive(reaction_heat, "reaction_heat");
        positive(heat_capacity, "heat_capacity");
        positive(jacket_lag, "jacket_lag");
        positive(ua_init, "ua_init");
        positive(ua_floor, "ua_floor");
        positive(dt, "dt");
        positive(monomer_target, "monomer_target");
        positive(start_temp, "start_temp");
        positive(max_duration, "max_duration");
        if (fouling_rate < 0 || pid_kp < 0 || pid_ki < 0 || pid_kd < 0 || integrator_clamp < 0)
            throw Error("reactor gains and fouling rate must be non-negative");
        if (!(jacket_cmd_min < jacket_cmd_max)) throw Error("jacket_cmd_min must be below jacket_cmd_max");
        if (!(ua_floor < ua_init)) throw Error("ua_floor must be below ua_init");
        if (!(impurity_min > 0 && impurity_min <= impurity_max)) throw Error("invalid impurity range");
    }
};

inline void to_json(nlohmann::json& j, const ReactorParams& p) {
    j = nlohmann::json{{"rate_ref", p.rate_ref},
                       {"activation_ratio", p.activation_ratio},
                       {"reaction_heat", p.reaction_heat},
                       {"heat_capacity", p.heat_capacity},
                       {"jacket_lag", p.jacket_lag},
                       {"jacket_cmd_min", p.jacket_cmd_min},
                       {"jacket_cmd_max", p.jacket_cmd_max},
                       {"fouling_rate", p.fouling_rate},
                       {"ua_init", p.ua_init},
                       {"ua_floor", p.ua_floor},
                       {"pid_kp", p.pid_kp},
                       {"pid_ki", p.pid_ki},
                       {"pid_kd", p.pid_kd},
                       {"integrator_clamp", p.integrator_clamp},
                       {"dt", p.dt},
                       {"monomer_target", p.monomer_target},
                       {"impurity_min", p.impurity_min},
                       {"impurity_max", p.impurity_max},
                       {"start_temp", p.start_temp},
                       {"max_duration", p.max_duration}};
}

/// Reads a flat JSON object; absent keys keep their defaults, unknown keys are rejected.
inline void from_json(const nlohmann::json& j, ReactorParams& p) {
    nlohmann::json known;
    to_json(known, p);
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) throw Error("unknown reactor parameter: " + key);
        if (!value.is_number()) throw Error("reactor parameter must be numeric: " + key);
        known[key] = value;
    }
    p.rate_ref = known["rate_ref"];
    p.activation_ratio = known["activation_ratio"];
    p.reaction_heat = known["reaction_heat"];
    p.heat_capacity = known["heat_capacity"];
    p.jacket_lag = known["jacket_lag"];
    p.jacket_cmd_min = known["jacket_cmd_min"];
    p.jacket_cmd_max = known["jacket_cmd_max"];
    p.fouling_rate = known["fouling_rate"];
    p.ua_init = known["ua_init"];
    p.ua_floor = known["ua_floor"];
    p.pid_kp = known["pid_kp"];
    p.pid_ki = known["pid_ki"];
    p.pid_kd = known["pid_kd"];
    p.integrator_clamp = known["integrator_clamp"];
    p.dt = known["dt"];
    p.monomer_target = known["monomer_target"];
    p.impurity_min = known["impurity_min"];
    p.impurity_max = known["impurity_max"];
    p.start_temp = known["start_temp"];
    p.max_duration = known["max_duration"];
}

struct ReactorState {
    double time = 0;          // s
    double T = 0;             // K
    double M = 0;             // kg
    double P = 0;             // kg
    double UA = 0;            // kW/K
    double Q = 0;             // kW
    double Tj = 0;            // K
    double fed = 0;           // kg
    double pid_integral = 0;  // K s
    double prev_error = 0;    // K
    bool feeding_started = false;
};

struct Action {
    double That = kSetpointMin;  // K
    double Mhat = kFeedMax;      // kg/s

    [[nodiscard]] Action clipped() const noexcept {
        return {std::clamp(That, kSetpointMin, kSetpointMax), std::clamp(Mhat, kFeedMin, kFeedMax)};
    }
    [[nodiscard]] bool finite() const noexcept { return std::isfinite(That) && std::isfinite(Mhat); }
};

struct Recipe {
    double setpoint = 358;     // intended setpoint S, K
    double start_temp = 345;   // K
    double max_duration = 2400;
    double impurity = 1.0;
    double feed = kFeedMax;    // M̂ used before any controller decision
    std::uint64_t seed = 0;

    void validate() const {
        if (!(setpoint >= kSetpointMin && setpoint <= kSetpointMax)) throw Error("recipe setpoint out of range");
        if (!(max_duration > 0 && max_duration <= 2400)) throw Error("recipe max_duration must be in (0, 2400] s");
        if (!(impurity >= 0) || !std::isfinite(impurity)) throw Error("recipe impurity must be non-negative");
        if (!(start_temp > 0)) throw Error("recipe start_temp must be positive");
    }
};

/// Builds a recipe whose impurity factor is drawn from the seed.
inline Recipe make_recipe(double setpoint, std::uint64_t seed, const ReactorParams& params) {
    std::mt19937_64 rng(derive_seed(seed, 0x1e9));
    std::uniform_real_distribution<double> imp(params.impurity_min, params.impurity_max);
    Recipe r;
    r.setpoint = setpoint;
    r.start_temp = params.start_temp;
    r.max_duration = params.max_duration;
    r.impurity = params.impurity_min == params.impurity_max ? params.impurity_min : imp(rng);
    r.seed = seed;
    return r;
}

inline double reaction_rate(double T, double impurity, const ReactorParams& p) {
    if (!std::isfinite(T) || !(T > 0)) throw Error("invalid temperature");
    return impurity * p.rate_ref * std::exp(p.activation_ratio * (1.0 / 360.0 - 1.0 / T));
}

struct PidState {
    double integral = 0;
    double prev_error = 0;
};

struct PidOutput {
    double jacket_cmd = 0;
    PidState state;
};

/// Jacket command = clip(T + Kp e + Ki I + Kd de/dt); I clamps to ±integrator_clamp.
inline PidOutput pid_step(double error, const PidState& state, double T, const ReactorParams& p, double dt) {
    PidOutput out;
    out.state.integral = std::clamp(state.integral + error * dt, -p.integrator_clamp, p.integrator_clamp);
    out.state.prev_error = error;
    const double derivative = (error - state.prev_error) / dt;
    const double cmd = T + p.pid_kp * error + p.pid_ki * out.state.integral + p.pid_kd * derivative;
    out.jacket_cmd = std::clamp(cmd, p.jacket_cmd_min, p.jacket_cmd_max);
    return out;
}

namespace detail {

// y = (T, Tj, M, P, UA, fed)
using PlantVector = std::array<double, 6>;

inline PlantVector plant_rhs(const PlantVector& y, double feed, double cmd, double impurity,
                             const ReactorParams& p) {
    const double r = reaction_rate(y[0], impurity, p) * std::max(y[2], 0.0);
    const double Q = p.reaction_heat * r;
    const double dUA = y[4] > p.ua_floor ? -p.fouling_rate * r * y[4] : 0.0;
    return {(Q + y[4] * (y[1] - y[0])) / p.heat_capacity, (cmd - y[1]) / p.jacket_lag, feed - r, r, dUA, feed};
}

} // namespace detail

/// One RK4 step of the plant ODEs with a fixed jacket command and feed rate.
/// PID and feed logic live in `step`; this is the bare integrator.
inline ReactorState integrate(const ReactorState& s, double jacket_cmd, double feed, double impurity,
                              const ReactorParams& p, double dt) {
    using detail::PlantVector;
    const PlantVector y0{s.T, s.Tj, s.M, s.P, s.UA, s.fed};
    const auto axpy = [](const PlantVector& a, const PlantVector& b, double h) {
        PlantVector r;
        for (std::size_t i = 0; i < r.size(); ++i) r[i] = a[i] + h * b[i];
        return r;
    };
    const auto k1 = detail::plant_rhs(y0, feed, jacket_cmd, impurity, p);
    const auto k2 = detail::plant_rhs(axpy(y0, k1, dt / 2), feed, jacket_cmd, impurity, p);
    const auto k3 = detail::plant_rhs(axpy(y0, k2, dt / 2), feed, jacket_cmd, impurity, p);
    const auto k4 = detail::plant_rhs(axpy(y0, k3, dt), feed, jacket_cmd, impurity, p);

    ReactorState out = s;
    PlantVector y;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = y0[i] + dt / 6 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]);
    for (double v : y)
        if (!std::isfinite(v)) throw Error("simulation diverged");
    out.T = y[0];
    out.Tj = y[1];
    out.M = y[2];
    out.P = y[3];
    out.UA = std::clamp(y[4], p.ua_floor, p.ua_init);
    out.fed = y[5];
    out.time = s.time + dt;
    out.Q = p.reaction_heat * reaction_rate(out.T, impurity, p) * std::max(out.M, 0.0);
    return out;
}

/// Advances the plant one step under `action`: PID update, feed gate, RK4.
inline ReactorState step(const ReactorState& s, const Action& action, const ReactorParams& p, double impurity,
                         double dt) {
    if (!std::isfinite(s.T) || !std::isfinite(s.M) || !std::isfinite(s.Tj)) throw Error("simulation diverged");
    const Action a = action.clipped();
    const auto pid = pid_step(a.That - s.T, {s.pid_integral, s.prev_error}, s.T, p, dt);
    const double feed = s.feeding_started && s.fed < p.monomer_target ? a.Mhat : 0.0;
    ReactorState out = integrate(s, pid.jacket_cmd, feed, impurity, p, dt);
    out.pid_integral = pid.state.integral;
    out.prev_error = pid.state.prev_error;
    return out;
}

/// One logged sample. The action is the one applied during the step that
/// ended at `time`; row 0 carries the recipe's default action (S, feed).
struct TrajectoryRow {
    double time = 0;
    double S = 0;
    double That = 0;
    double Mhat = 0;
    double T = 0;
    double M = 0;
    double P = 0;
    double UA = 0;
    double Q = 0;
    double fed = 0;
    bool feeding = false;

    [[nodiscard]] double channel(Channel c) const noexcept {
        switch (c) {
        case Channel::S: return S;
        case Channel::That: return That;
        case Channel::Mhat: return Mhat;
        case Channel::T: return T;
        case Channel::M: return M;
        case Channel::P: return P;
        case Channel::UA: return UA;
        case Channel::Q: return Q;
        }
        return 0;
    }
};

struct Trajectory {
    Recipe recipe;
    std::vector<TrajectoryRow> rows;

    [[nodiscard]] double duration() const noexcept { return rows.empty() ? 0.0 : rows.back().time; }
    /// Index of the first row with feeding active, or rows.size() if feeding never started.
    [[nodiscard]] std::size_t feed_start_index() const noexcept {
        for (std::size_t i = 0; i < rows.size(); ++i)
            if (rows[i].feeding) return i;
        return rows.size();
    }
};

/// Controller: sees every logged row so far (last row = current measurement).
using Controller = std::function<Action(std::span<const TrajectoryRow>, const Recipe&)>;

inline Controller default_controller() {
    return [](std::span<const TrajectoryRow>, const Recipe& r) { return Action{r.setpoint, kFeedMax}; };
}

inline TrajectoryRow make_row(const ReactorState& s, const Recipe& r, const Action& a) {
    return {s.time, r.setpoint, a.That, a.Mhat, s.T, s.M, s.P, s.UA, s.Q, s.fed, s.feeding_started};
}

inline ReactorState initial_state(const Recipe& recipe, const ReactorParams& p) {
    ReactorState s;
    s.T = recipe.start_temp;
    s.Tj = recipe.start_temp;
    s.UA = p.ua_init;
    s.feeding_started = s.T >= recipe.setpoint - 1.0;
    return s;
}

/// Runs one batch to completion (P >= 0.95 target or max_duration).
inline Trajectory run_batch(const Recipe& recipe, const Controller& controller, const ReactorParams& p) {
    recipe.validate();
    p.validate();
    Trajectory traj;
    traj.recipe = recipe;
    traj.rows.reserve(static_cast<std::size_t>(recipe.max_duration / p.dt) + 2);

    ReactorState s = initial_state(recipe, p);
    traj.rows.push_back(make_row(s, recipe, Action{recipe.setpoint, recipe.feed}));

    while (s.P < 0.95 * p.monomer_target && s.time < recipe.max_duration) {
        const Action raw = controller(traj.rows, recipe);
        if (!raw.finite()) throw Error("policy produced invalid action");
        const Action a = raw.clipped();
        s = step(s, a, p, recipe.impurity, p.dt);
        if (!s.feeding_started && s.T >= recipe.setpoint - 1.0) s.feeding_started = true;
        traj.rows.push_back(make_row(s, recipe, a));
    }
    return traj;
}

inline constexpr std::string_view kTrajectoryHeader = "time_s,S,That,Mhat,T,M,P,UA,Q";

inline void write_trajectory_csv(std::ostream& os, std::span<const TrajectoryRow> rows) {
    os << kTrajectoryHeader << '\n';
    for (const auto& r : rows) {
        os << format_double(r.time);
        for (std::size_t c = 0; c < kChannels; ++c) os << ',' << format_double(r.channel(static_cast<Channel>(c)));
        os << '\n';
    }
}

inline void write_trajectory_csv(const std::string& path, std::span<const TrajectoryRow> rows) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write " + path);
    write_trajectory_csv(os, rows);
}

} // namespace gprl
