#pragma once

/// @file data.hpp
/// Exploration batch generation (setpoint step attempts), 10 s resampling,
/// normalization, windowing and the 70/20/10 series split.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "core.hpp"
#include "reactor.hpp"

namespace gprl {

struct StepAttemptPlan {
    Recipe recipe;
    double step_time = 300;   // s, in [100, 600]
    double step_value = 358;  // K, in [352, 365]
};

/// Draws `n` exploration recipes. Each holds T̂ = S until `step_time`, then
/// switches T̂ to `step_value`. The feed setpoint is drawn once per recipe.
inline std::vector<StepAttemptPlan> plan_exploration(std::size_t n, std::uint64_t master_seed,
                                                     const ReactorParams& params = {}) {
    if (n < 1) throw Error("plan_exploration needs n >= 1");
    std::mt19937_64 rng(derive_seed(master_seed, 0xe4a));
    std::uniform_real_distribution<double> temp(kSetpointMin, kSetpointMax);
    std::uniform_real_distribution<double> when(100.0, 600.0);
    std::uniform_real_distribution<double> feed(kFeedMin, kFeedMax);
    std::vector<StepAttemptPlan> plans;
    plans.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        StepAttemptPlan plan;
        const double setpoint = temp(rng);
        plan.step_time = when(rng);
        plan.step_value = temp(rng);
        plan.recipe = make_recipe(setpoint, derive_seed(master_seed, 0x5e7, i), params);
        plan.recipe.feed = feed(rng);
        plans.push_back(plan);
    }
    return plans;
}

inline Controller exploration_controller(const StepAttemptPlan& plan) {
    return [plan](std::span<const TrajectoryRow> rows, const Recipe& r) {
        const double t = rows.back().time;
        return Action{t < plan.step_time ? r.setpoint : plan.step_value, r.feed};
    };
}

/// One series on the control grid, physical units.
struct GridSeries {
    std::vector<double> time;
    std::vector<std::array<double, kChannels>> rows;

    [[nodiscard]] std::size_t size() const noexcept { return rows.size(); }
};

/// Keeps every `grid`-th 1 s sample starting at t = 0.
inline GridSeries resample_grid(std::span<const TrajectoryRow> trajectory, double grid = 10.0) {
    if (trajectory.empty()) throw Error("cannot resample an empty trajectory");
    GridSeries out;
    const double t0 = trajectory.front().time;
    for (const auto& r : trajectory) {
        const double k = (r.time - t0) / grid;
        if (std::abs(k - std::round(k)) > 1e-9) continue;
        out.time.push_back(r.time);
        std::array<double, kChannels> row{};
        for (std::size_t c = 0; c < kChannels; ++c) row[c] = r.channel(static_cast<Channel>(c));
        out.rows.push_back(row);
    }
    return out;
}

struct NormalizationStats {
    std::array<double, kChannels> mean{};
    std::array<double, kChannels> stddev{};

    [[nodiscard]] double normalize(Channel c, double x) const noexcept {
        return (x - mean[idx(c)]) / stddev[idx(c)];
    }
    [[nodiscard]] double denormalize(Channel c, double z) const noexcept {
        return z * stddev[idx(c)] + mean[idx(c)];
    }
    bool operator==(const NormalizationStats&) const = default;
};

inline void to_json(nlohmann::json& j, const NormalizationStats& s) {
    j = nlohmann::json::object();
    for (std::size_t c = 0; c < kChannels; ++c)
        j[std::string(kChannelNames[c])] = {{"mean", s.mean[c]}, {"std", s.stddev[c]}};
}

inline void from_json(const nlohmann::json& j, NormalizationStats& s) {
    for (std::size_t c = 0; c < kChannels; ++c) {
        const auto& e = j.at(std::string(kChannelNames[c]));
        s.mean[c] = e.at("mean").get<double>();
        s.stddev[c] = e.at("std").get<double>();
        if (!(s.stddev[c] > 0)) throw Error("normalization std must be positive");
    }
}

/// Population statistics per channel; S, T̂ and T pool into one temperature statistic.
inline NormalizationStats fit_normalization(std::span<const GridSeries> series) {
    std::array<double, kChannels> sum{}, sumsq{};
    std::array<std::size_t, kChannels> count{};
    constexpr std::size_t pooled = idx(Channel::T);
    const auto slot = [](std::size_t c) { return is_temperature(static_cast<Channel>(c)) ? pooled : c; };

    // Two passes for numerical stability: means first, then squared deviations.
    for (const auto& s : series)
        for (const auto& row : s.rows)
            for (std::size_t c = 0; c < kChannels; ++c) {
                sum[slot(c)] += row[c];
                ++count[slot(c)];
            }
    std::array<double, kChannels> mean{};
    for (std::size_t c = 0; c < kChannels; ++c)
        if (count[c] > 0) mean[c] = sum[c] / static_cast<double>(count[c]);
    for (const auto& s : series)
        for (const auto& row : s.rows)
            for (std::size_t c = 0; c < kChannels; ++c) {
                const double d = row[c] - mean[slot(c)];
                sumsq[slot(c)] += d * d;
            }

    NormalizationStats stats;
    for (std::size_t c = 0; c < kChannels; ++c) {
        const std::size_t k = slot(c);
        if (count[k] == 0) throw Error("degenerate channel " + std::string(kChannelNames[c]));
        const double sd = std::sqrt(sumsq[k] / static_cast<double>(count[k]));
        if (!(sd > 1e-12 * std::max(1.0, std::abs(mean[k]))))
            throw Error("degenerate channel " + std::string(kChannelNames[c]));
        stats.mean[c] = mean[k];
        stats.stddev[c] = sd;
    }
    return stats;
}

inline GridSeries normalize_series(const GridSeries& s, const NormalizationStats& stats) {
    GridSeries out = s;
    for (auto& row : out.rows)
        for (std::size_t c = 0; c < kChannels; ++c) row[c] = stats.normalize(static_cast<Channel>(c), row[c]);
    return out;
}

/// Normalized surrogate input row: (T, M, P, UA, Q, T̂, M̂).
using StepRow = std::array<double, kStepDim>;

inline StepRow step_row(const std::array<double, kChannels>& row) {
    StepRow r{};
    for (std::size_t i = 0; i < kStateDim; ++i) r[i] = row[idx(kStateChannels[i])];
    for (std::size_t i = 0; i < kActionDim; ++i) r[kStateDim + i] = row[idx(kActionChannels[i])];
    return r;
}

/// A training sample anchored at grid index t: history rows t-H+1..t, and
/// rows t+1..t+F split into their actions (inputs) and states (targets).
/// Each row's action is the one that drove the plant into that row's state.
struct Window {
    std::size_t horizon_past = 0;
    std::size_t horizon_future = 0;
    std::vector<double> history;         // H x 7
    std::vector<double> future_actions;  // F x 2
    std::vector<double> future_states;   // F x 5
    double setpoint = 0;                 // S, same units as the rows
};

inline std::vector<Window> windowize(const GridSeries& s, std::size_t H = 10, std::size_t F = 10) {
    std::vector<Window> out;
    if (H == 0 || F == 0 || s.size() < H + F) return out;
    const std::size_t count = s.size() - H - F + 1;
    out.reserve(count);
    for (std::size_t first = 0; first < count; ++first) {
        Window w;
        w.horizon_past = H;
        w.horizon_future = F;
        w.history.reserve(H * kStepDim);
        for (std::size_t k = 0; k < H; ++k) {
            const auto r = step_row(s.rows[first + k]);
            w.history.insert(w.history.end(), r.begin(), r.end());
        }
        for (std::size_t k = 0; k < F; ++k) {
            const auto r = step_row(s.rows[first + H + k]);
            w.future_states.insert(w.future_states.end(), r.begin(), r.begin() + kStateDim);
            w.future_actions.insert(w.future_actions.end(), r.begin() + kStateDim, r.end());
        }
        w.setpoint = s.rows[first + H - 1][idx(Channel::S)];
        out.push_back(std::move(w));
    }
    return out;
}

enum class Split { Train, Validation, Generalization };

inline std::string_view split_name(Split s) {
    switch (s) {
    case Split::Train: return "train";
    case Split::Validation: return "validation";
    case Split::Generalization: return "generalization";
    }
    return "train";
}

inline Split parse_split(std::string_view name) {
    if (name == "train") return Split::Train;
    if (name == "validation") return Split::Validation;
    if (name == "generalization") return Split::Generalization;
    throw Error("unknown split tag: " + std::string(name));
}

/// Assigns whole series to train/validation/generalization 70/20/10.
inline std::vector<Split> split_series(std::size_t n, std::uint64_t seed) {
    if (n < 3) throw Error("split needs at least 3 series");
    auto counts = apportion<3>(n, {0.7, 0.2, 0.1});
    // every split must be populated
    for (auto& c : counts)
        if (c == 0) {
            auto& largest = *std::max_element(counts.begin(), counts.end());
            --largest;
            c = 1;
        }
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::mt19937_64 rng(derive_seed(seed, 0x5b1));
    for (std::size_t i = n - 1; i > 0; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i);
        std::swap(perm[i], perm[pick(rng)]);
    }
    std::vector<Split> tags(n);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t series = perm[k];
        tags[series] = k < counts[0] ? Split::Train : k < counts[0] + counts[1] ? Split::Validation
                                                                                 : Split::Generalization;
    }
    return tags;
}

/// The exploration batch: raw grid series, split tags and training-split stats.
struct Dataset {
    std::vector<GridSeries> series;
    std::vector<Split> tags;
    NormalizationStats stats;
    double grid = 10.0;

    [[nodiscard]] std::vector<GridSeries> normalized(Split which) const {
        std::vector<GridSeries> out;
        for (std::size_t i = 0; i < series.size(); ++i)
            if (tags[i] == which) out.push_back(normalize_series(series[i], stats));
        return out;
    }
    [[nodiscard]] std::vector<Window> windows(Split which, std::size_t H = 10, std::size_t F = 10) const {
        std::vector<Window> out;
        for (const auto& s : normalized(which)) {
            auto w = windowize(s, H, F);
            std::move(w.begin(), w.end(), std::back_inserter(out));
        }
        return out;
    }
    [[nodiscard]] std::size_t count(Split which) const {
        return static_cast<std::size_t>(std::count(tags.begin(), tags.end(), which));
    }
};

inline Dataset assemble_dataset(std::vector<GridSeries> series, std::uint64_t seed, double grid = 10.0) {
    Dataset d;
    d.grid = grid;
    d.tags = split_series(series.size(), seed);
    d.series = std::move(series);
    std::vector<GridSeries> train;
    for (std::size_t i = 0; i < d.series.size(); ++i)
        if (d.tags[i] == Split::Train) train.push_back(d.series[i]);
    d.stats = fit_normalization(train);
    return d;
}

/// Simulates every plan and builds the dataset. Batches are independent, so
/// this could fan out; it is cheap enough to run in order.
inline Dataset generate_dataset(std::span<const StepAttemptPlan> plans, const ReactorParams& params,
                                std::uint64_t seed, double grid = 10.0) {
    std::vector<GridSeries> series;
    series.reserve(plans.size());
    for (const auto& plan : plans) {
        const auto traj = run_batch(plan.recipe, exploration_controller(plan), params);
        series.push_back(resample_grid(traj.rows, grid));
    }
    return assemble_dataset(std::move(series), seed, grid);
}

// ---- on-disk layout -------------------------------------------------------

inline std::string series_filename(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "series_%03zu.csv", i);
    return buf;
}

inline void write_series_csv(const std::string& path, const GridSeries& s) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write " + path);
    os << kTrajectoryHeader << '\n';
    for (std::size_t i = 0; i < s.size(); ++i) {
        os << format_double(s.time[i]);
        for (double v : s.rows[i]) os << ',' << format_double(v);
        os << '\n';
    }
}

inline GridSeries read_series_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot read " + path);
    std::string line;
    if (!std::getline(is, line) || line != kTrajectoryHeader) throw Error("bad series header in " + path);
    GridSeries s;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string cell;
        std::array<double, kChannels + 1> vals{};
        std::size_t k = 0;
        while (std::getline(ls, cell, ',')) {
            if (k >= vals.size()) throw Error(path + ":" + std::to_string(lineno) + ": too many columns");
            vals[k++] = std::stod(cell);
        }
        if (k != vals.size()) throw Error(path + ":" + std::to_string(lineno) + ": expected 9 columns");
        s.time.push_back(vals[0]);
        std::array<double, kChannels> row{};
        std::copy(vals.begin() + 1, vals.end(), row.begin());
        s.rows.push_back(row);
    }
    return s;
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write " + path.string());
    os << j.dump(2) << '\n';
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot read " + path.string());
    try {
        return nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw Error(path.string() + ": " + e.what());
    }
}

/// Writes series_###.csv, manifest.json and normalization.json into `dir`.
inline void save_dataset(const Dataset& d, const std::filesystem::path& dir, const nlohmann::json& extra = {}) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["grid_s"] = d.grid;
    manifest["series"] = nlohmann::json::array();
    for (std::size_t i = 0; i < d.series.size(); ++i) {
        write_series_csv((dir / series_filename(i)).string(), d.series[i]);
        manifest["series"].push_back({{"file", series_filename(i)}, {"split", split_name(d.tags[i])}});
    }
    if (!extra.is_null()) manifest["meta"] = extra;
    write_json(dir / "manifest.json", manifest);
    write_json(dir / "normalization.json", d.stats);
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
    const auto manifest = read_json(dir / "manifest.json");
    Dataset d;
    d.grid = manifest.at("grid_s").get<double>();
    for (const auto& e : manifest.at("series")) {
        d.series.push_back(read_series_csv((dir / e.at("file").get<std::string>()).string()));
        d.tags.push_back(parse_split(e.at("split").get<std::string>()));
    }
    d.stats = read_json(dir / "normalization.json").get<NormalizationStats>();
    return d;
}

} // namespace gprl
