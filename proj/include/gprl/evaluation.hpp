#pragma once

/// @file evaluation.hpp
/// Closed-loop comparison on the simulator: the default policy T̂ = S against
/// an expression policy running on live measurements.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "core.hpp"
#include "fitness.hpp"
#include "reactor.hpp"

namespace gprl {

struct Deviation {
    double integral = 0;  // K^2 s
    double rmse = 0;      // K
    double duration = 0;  // s covered by the measurement
    bool from_feed_start = false;
};

/// Integrated squared tracking error from feeding start to the end of the
/// batch. If feeding never started the whole batch counts, so a policy cannot
/// score zero by never reaching the feed condition.
inline Deviation control_deviation(std::span<const TrajectoryRow> rows, double setpoint, double dt = 1.0) {
    if (rows.empty()) throw Error("control_deviation on an empty trajectory");
    std::size_t first = rows.size();
    for (std::size_t i = 0; i < rows.size(); ++i)
        if (rows[i].feeding) {
            first = i;
            break;
        }
    Deviation d;
    d.from_feed_start = first < rows.size();
    if (!d.from_feed_start) first = 0;
    for (std::size_t i = first; i < rows.size(); ++i) {
        const double e = setpoint - rows[i].T;
        d.integral += e * e * dt;
    }
    d.duration = static_cast<double>(rows.size() - first) * dt;
    d.rmse = std::sqrt(d.integral / d.duration);
    return d;
}

/// Runs an expression policy on the plant. The policy is consulted once per
/// control cycle and its action held in between; lagged terminals read the
/// logged rows, clamped to the first row.
inline Controller policy_controller(const PolicyBinding& b, double cycle = 10.0, double dt = 1.0) {
    struct Held {
        Action action;
        double next_update = -std::numeric_limits<double>::infinity();
    };
    auto held = std::make_shared<Held>();
    return [b, cycle, dt, held](std::span<const TrajectoryRow> rows, const Recipe&) {
        const TrajectoryRow& now = rows.back();
        if (now.time + 1e-9 >= held->next_update) {
            const auto lookup = [&](Variable v, std::size_t lag) {
                const auto back = static_cast<std::size_t>(std::llround(kLags[lag] / dt));
                const TrajectoryRow& r = rows[rows.size() - 1 - std::min(back, rows.size() - 1)];
                const Channel c = kVariableChannels[static_cast<std::size_t>(v)];
                return b.stats.normalize(c, r.channel(c));
            };
            held->action = Action{policy_setpoint(b, eval_expr(b.expr, lookup)), b.feed};
            held->next_update = now.time + cycle;
        }
        return held->action;
    };
}

struct SetpointResult {
    double setpoint = 0;
    bool ok = false;
    std::string error;
    Trajectory baseline, candidate;
    Deviation baseline_dev, candidate_dev;

    /// Percent reduction of the integrated deviation; NaN when undefined.
    [[nodiscard]] double reduction() const noexcept {
        if (!ok || !(baseline_dev.integral > 0)) return std::numeric_limits<double>::quiet_NaN();
        return 100.0 * (baseline_dev.integral - candidate_dev.integral) / baseline_dev.integral;
    }
};

struct EvalReport {
    std::vector<SetpointResult> results;

    /// Mean reduction over the listed setpoints, or over all when empty.
    [[nodiscard]] double mean_reduction(std::span<const double> subset = {}) const {
        double sum = 0;
        std::size_t n = 0;
        for (const auto& r : results) {
            if (!subset.empty() && std::find(subset.begin(), subset.end(), r.setpoint) == subset.end()) continue;
            const double x = r.reduction();
            if (std::isnan(x)) continue;
            sum += x;
            ++n;
        }
        return n == 0 ? std::numeric_limits<double>::quiet_NaN() : sum / static_cast<double>(n);
    }
    [[nodiscard]] std::size_t improved_count() const noexcept {
        std::size_t n = 0;
        for (const auto& r : results)
            if (r.ok && r.candidate_dev.integral < r.baseline_dev.integral) ++n;
        return n;
    }
};

inline const std::vector<double>& default_eval_setpoints() {
    static const std::vector<double> s{352, 358, 362, 365};
    return s;
}

/// Runs both controllers on the same recipe (impurity, start state) per setpoint.
inline EvalReport evaluate_pair(const PolicyBinding& b, const ReactorParams& params,
                                std::span<const double> setpoints, std::uint64_t seed, std::size_t workers = 1) {
    EvalReport report;
    report.results.resize(setpoints.size());
    detail::parallel_for(setpoints.size(), workers, [&](std::size_t i) {
        SetpointResult& r = report.results[i];
        r.setpoint = setpoints[i];
        try {
            const Recipe recipe = make_recipe(r.setpoint, derive_seed(seed, 0xe7a, i), params);
            r.baseline = run_batch(recipe, default_controller(), params);
            r.candidate = run_batch(recipe, policy_controller(b, 10.0, params.dt), params);
            r.baseline_dev = control_deviation(r.baseline.rows, r.setpoint, params.dt);
            r.candidate_dev = control_deviation(r.candidate.rows, r.setpoint, params.dt);
            r.ok = true;
        } catch (const std::exception& ex) {
            r.ok = false;
            r.error = ex.what();
        }
    });
    return report;
}

inline std::string setpoint_label(double s) {
    if (s == std::round(s)) return std::to_string(static_cast<long long>(std::llround(s)));
    return format_double(s);
}

inline constexpr std::string_view kReportHeader =
    "setpoint,status,default_deviation,policy_deviation,reduction_pct,default_rmse,policy_rmse,"
    "default_duration_s,policy_duration_s";

inline std::string report_csv(const EvalReport& report) {
    std::ostringstream os;
    os << kReportHeader << '\n';
    for (const auto& r : report.results) {
        os << format_double(r.setpoint) << ',';
        if (!r.ok) {
            os << "failed,,,,,,,\n";
            continue;
        }
        const double red = r.reduction();
        os << "ok," << format_double(r.baseline_dev.integral) << ',' << format_double(r.candidate_dev.integral) << ','
           << (std::isnan(red) ? std::string() : format_double(red)) << ',' << format_double(r.baseline_dev.rmse)
           << ',' << format_double(r.candidate_dev.rmse) << ',' << format_double(r.baseline.duration()) << ','
           << format_double(r.candidate.duration()) << '\n';
    }
    return os.str();
}

inline std::string summary_text(const EvalReport& report, std::string_view policy_text) {
    std::ostringstream os;
    os << "policy: " << policy_text << "\n\n";
    char line[160];
    std::snprintf(line, sizeof line, "%10s %16s %16s %12s\n", "setpoint", "default K^2 s", "policy K^2 s",
                  "reduction");
    os << line;
    for (const auto& r : report.results) {
        if (!r.ok) {
            std::snprintf(line, sizeof line, "%10s  failed: ", setpoint_label(r.setpoint).c_str());
            os << line << r.error << '\n';
            continue;
        }
        std::snprintf(line, sizeof line, "%8s K %16.1f %16.1f %11.1f%%\n", setpoint_label(r.setpoint).c_str(),
                      r.baseline_dev.integral, r.candidate_dev.integral, r.reduction());
        os << line;
    }
    std::snprintf(line, sizeof line, "\nmean reduction: %.1f%%, improved on %zu of %zu setpoints\n",
                  report.mean_reduction(), report.improved_count(), report.results.size());
    os << line;
    for (const auto& r : report.results)
        if (r.ok && !r.candidate_dev.from_feed_start)
            os << "note: at " << setpoint_label(r.setpoint) << " K the policy never reached the feed condition\n";
    return os.str();
}

inline void write_text(const std::filesystem::path& path, std::string_view text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write " + path.string());
    os << text;
    if (!os) throw Error("write failed: " + path.string());
}

/// report.csv, summary.txt and one trajectory file per setpoint and policy.
inline void save_report(const EvalReport& report, std::string_view policy_text, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_text(dir / "report.csv", report_csv(report));
    write_text(dir / "summary.txt", summary_text(report, policy_text));
    for (const auto& r : report.results) {
        if (!r.ok) continue;
        const std::string label = setpoint_label(r.setpoint);
        write_trajectory_csv((dir / ("traj_" + label + "_default.csv")).string(), r.baseline.rows);
        write_trajectory_csv((dir / ("traj_" + label + "_policy.csv")).string(), r.candidate.rows);
    }
}

} // namespace gprl
