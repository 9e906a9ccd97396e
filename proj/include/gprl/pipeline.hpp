#pragma once

/// @file pipeline.hpp
/// Run configuration and the on-disk stages: gen-data, train-surrogate,
/// evolve, select, codegen, evaluate and simulate.
///
/// Each stage writes `meta.json` next to its artifacts with a hash of every
/// configuration value it depends on, chained through its inputs. A stage
/// recomputes the hash its inputs should carry and refuses to run on a
/// mismatch, so stale artifacts are never mixed with a changed config.

#include <cstdio>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "codegen.hpp"
#include "core.hpp"
#include "data.hpp"
#include "evaluation.hpp"
#include "fitness.hpp"
#include "gp.hpp"
#include "reactor.hpp"
#include "surrogate.hpp"

namespace gprl {

/// A stage could not run or failed; the CLI maps this to exit status 2.
class StageError : public Error {
public:
    using Error::Error;
};

struct DataConfig {
    std::size_t recipes = 100;
    double grid = 10.0;  // s
};

struct FitnessConfig {
    std::size_t start_states = 50;
    std::size_t horizon = 10;
    double discount = 1.0;
    bool steady_starts = false;  // see steady_windows
};

/// Automatic selection: among front points up to `max_complexity`, the
/// simplest one whose penalty is within `tolerance` (relative) of the best.
struct SelectionConfig {
    std::size_t max_complexity = 12;
    double tolerance = 0.01;
};

struct RunConfig {
    std::optional<std::uint64_t> seed;
    ReactorParams reactor;
    DataConfig data;
    Architecture architecture;
    TrainingConfig training = desk_training();
    GAConfig ga = desk_ga();
    FitnessConfig fitness;
    SelectionConfig selection;
    std::vector<double> setpoints = default_eval_setpoints();

    static TrainingConfig desk_training() {
        TrainingConfig t;
        t.episodes = 100;
        return t;
    }

    static GAConfig desk_ga() {
        GAConfig g;
        g.population = 100;
        g.iterations = 30;
        return g;
    }

    [[nodiscard]] std::uint64_t master_seed() const {
        if (!seed) throw Error("a seed is required (config \"seed\" or --seed)");
        return *seed;
    }

    void validate() const {
        reactor.validate();
        ga.validate();
        if (data.recipes < 3) throw Error("data.recipes must be at least 3");
        if (!(data.grid > 0)) throw Error("data.grid must be positive");
        if (!(selection.tolerance >= 0)) throw Error("selection.tolerance must be non-negative");
        if (fitness.start_states < 1 || fitness.horizon < 1) throw Error("fitness sizes must be positive");
        if (!(fitness.discount >= 0 && fitness.discount <= 1)) throw Error("fitness.discount must lie in [0, 1]");
        if (setpoints.empty()) throw Error("evaluation needs at least one setpoint");
        for (double s : setpoints)
            if (!(s >= kSetpointMin && s <= kSetpointMax)) throw Error("evaluation setpoint out of range");
    }
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<std::string_view> keys,
                           std::string_view section) {
    if (!j.is_object()) throw Error("config section " + std::string(section) + " must be an object");
    for (const auto& [key, value] : j.items())
        if (std::find(keys.begin(), keys.end(), key) == keys.end())
            throw Error("unknown config key " + std::string(section) + "." + key);
}

} // namespace detail

inline nlohmann::json to_json(const RunConfig& c) {
    nlohmann::json j;
    if (c.seed) j["seed"] = *c.seed;
    j["reactor"] = c.reactor;
    j["data"] = {{"recipes", c.data.recipes}, {"grid_s", c.data.grid}};
    j["surrogate"] = {{"architecture", c.architecture}, {"training", c.training}};
    j["ga"] = c.ga;
    j["fitness"] = {{"start_states", c.fitness.start_states},
                    {"horizon", c.fitness.horizon},
                    {"discount", c.fitness.discount},
                    {"steady_starts", c.fitness.steady_starts}};
    j["selection"] = {{"max_complexity", c.selection.max_complexity}, {"tolerance", c.selection.tolerance}};
    j["evaluation"] = {{"setpoints", c.setpoints}};
    return j;
}

/// Overlays a JSON document on the desk defaults. Unknown keys are errors.
inline RunConfig run_config_from_json(const nlohmann::json& j, RunConfig c = {}) {
    detail::reject_unknown(j, {"seed", "reactor", "data", "surrogate", "ga", "fitness", "selection", "evaluation"},
                           "config");
    try {
        if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("reactor")) from_json(j["reactor"], c.reactor);
        if (j.contains("data")) {
            const auto& d = j["data"];
            detail::reject_unknown(d, {"recipes", "grid_s"}, "data");
            c.data.recipes = d.value("recipes", c.data.recipes);
            c.data.grid = d.value("grid_s", c.data.grid);
        }
        if (j.contains("surrogate")) {
            const auto& s = j["surrogate"];
            detail::reject_unknown(s, {"architecture", "training"}, "surrogate");
            if (s.contains("architecture")) from_json(s["architecture"], c.architecture);
            if (s.contains("training")) from_json(s["training"], c.training);
        }
        if (j.contains("ga")) from_json(j["ga"], c.ga);
        if (j.contains("fitness")) {
            const auto& f = j["fitness"];
            detail::reject_unknown(f, {"start_states", "horizon", "discount", "steady_starts"}, "fitness");
            c.fitness.start_states = f.value("start_states", c.fitness.start_states);
            c.fitness.horizon = f.value("horizon", c.fitness.horizon);
            c.fitness.discount = f.value("discount", c.fitness.discount);
            c.fitness.steady_starts = f.value("steady_starts", c.fitness.steady_starts);
        }
        if (j.contains("selection")) {
            detail::reject_unknown(j["selection"], {"max_complexity", "tolerance"}, "selection");
            c.selection.max_complexity = j["selection"].value("max_complexity", c.selection.max_complexity);
            c.selection.tolerance = j["selection"].value("tolerance", c.selection.tolerance);
        }
        if (j.contains("evaluation")) {
            detail::reject_unknown(j["evaluation"], {"setpoints"}, "evaluation");
            c.setpoints = j["evaluation"].value("setpoints", c.setpoints);
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) { return run_config_from_json(read_json(path)); }

// ---- stage layout and metadata --------------------------------------------

struct Workspace {
    std::filesystem::path root;

    [[nodiscard]] std::filesystem::path data() const { return root / "data"; }
    [[nodiscard]] std::filesystem::path surrogate() const { return root / "surrogate"; }
    [[nodiscard]] std::filesystem::path evolve() const { return root / "evolve"; }
    [[nodiscard]] std::filesystem::path policy() const { return root / "policy"; }
    [[nodiscard]] std::filesystem::path codegen() const { return root / "codegen"; }
    [[nodiscard]] std::filesystem::path eval() const { return root / "eval"; }
    [[nodiscard]] std::filesystem::path simulate() const { return root / "simulate"; }
};

inline std::string config_hash(const nlohmann::json& j) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
    return buf;
}

/// Sub-seeds for each consumer of randomness.
enum class SeedStream : std::uint64_t { Plans = 1, Split, Training, Evolution, StartStates, Evaluation, Simulation };

inline std::uint64_t stream_seed(const RunConfig& c, SeedStream s) {
    return derive_seed(c.master_seed(), static_cast<std::uint64_t>(s));
}

inline std::string data_hash(const RunConfig& c) {
    return config_hash({{"stage", "gen-data"}, {"seed", c.master_seed()}, {"reactor", c.reactor},
                        {"recipes", c.data.recipes}, {"grid_s", c.data.grid}});
}
inline std::string surrogate_hash(const RunConfig& c) {
    return config_hash({{"stage", "train-surrogate"}, {"data", data_hash(c)}, {"architecture", c.architecture},
                        {"training", c.training}});
}
inline std::string evolve_hash(const RunConfig& c) {
    return config_hash({{"stage", "evolve"},
                        {"surrogate", surrogate_hash(c)},
                        {"ga", c.ga},
                        {"start_states", c.fitness.start_states},
                        {"horizon", c.fitness.horizon},
                        {"discount", c.fitness.discount},
                        {"steady_starts", c.fitness.steady_starts}});
}

struct StageMeta {
    std::string stage;
    std::string hash;
    nlohmann::json inputs = nlohmann::json::object();
    nlohmann::json info = nlohmann::json::object();
};

inline void write_meta(const std::filesystem::path& dir, const RunConfig& c, const StageMeta& m) {
    write_json(dir / "meta.json", {{"stage", m.stage},
                                   {"seed", c.master_seed()},
                                   {"config_hash", m.hash},
                                   {"inputs", m.inputs},
                                   {"info", m.info}});
}

/// Reads the meta record of an upstream stage and checks its hash.
inline nlohmann::json require_stage(const std::filesystem::path& dir, std::string_view command,
                                    const std::optional<std::string>& expected_hash) {
    const auto meta_path = dir / "meta.json";
    if (!std::filesystem::exists(meta_path))
        throw StageError("missing artifacts in " + dir.string() + "; run `gprl " + std::string(command) + "` first");
    nlohmann::json meta;
    try {
        meta = read_json(meta_path);
    } catch (const Error& e) {
        throw StageError(e.what());
    }
    if (expected_hash && meta.value("config_hash", "") != *expected_hash)
        throw StageError(dir.string() + " was produced with a different configuration or seed; rerun `gprl " +
                         std::string(command) + "`");
    return meta;
}

// ---- stages ---------------------------------------------------------------

inline void stage_gen_data(const RunConfig& c, const Workspace& ws, std::ostream& log) {
    const auto plans = plan_exploration(c.data.recipes, stream_seed(c, SeedStream::Plans), c.reactor);
    const Dataset d = generate_dataset(plans, c.reactor, stream_seed(c, SeedStream::Split), c.data.grid);
    std::filesystem::create_directories(ws.data());
    save_dataset(d, ws.data());
    nlohmann::json recipes = nlohmann::json::array();
    for (const auto& p : plans)
        recipes.push_back({{"setpoint", p.recipe.setpoint},
                           {"impurity", p.recipe.impurity},
                           {"feed", p.recipe.feed},
                           {"step_time_s", p.step_time},
                           {"step_value", p.step_value}});
    write_meta(ws.data(), c,
               {"gen-data", data_hash(c), {},
                {{"recipes", recipes},
                 {"train_series", d.count(Split::Train)},
                 {"validation_series", d.count(Split::Validation)},
                 {"generalization_series", d.count(Split::Generalization)}}});
    log << "gen-data: " << d.series.size() << " series -> " << ws.data().string() << '\n';
}

inline Dataset load_stage_dataset(const RunConfig& c, const Workspace& ws) {
    require_stage(ws.data(), "gen-data", data_hash(c));
    return load_dataset(ws.data());
}

inline constexpr std::string_view kCurveHeader = "episode,train_mse,validation_mse,generalization_mse";

inline std::string curve_csv(const LearningCurve& curve) {
    std::string out(kCurveHeader);
    out += '\n';
    for (const auto& p : curve)
        out += std::to_string(p.episode) + "," + format_double(p.train) + "," + format_double(p.validation) + "," +
               format_double(p.generalization) + "\n";
    return out;
}

inline void stage_train(const RunConfig& c, const Workspace& ws, std::size_t workers, std::ostream& log) {
    const Dataset d = load_stage_dataset(c, ws);
    const auto& a = c.architecture;
    TrainingSplits splits{d.windows(Split::Train, a.horizon_past, a.horizon_future),
                          d.windows(Split::Validation, a.horizon_past, a.horizon_future),
                          d.windows(Split::Generalization, a.horizon_past, a.horizon_future)};
    TrainingConfig tc = c.training;
    tc.seed = stream_seed(c, SeedStream::Training);
    std::filesystem::create_directories(ws.surrogate());
    TrainingResult res;
    try {
        res = train(splits, a, tc, workers);
    } catch (const TrainingDiverged& e) {
        write_text(ws.surrogate() / "learning_curve.csv", curve_csv(e.curve()));
        throw StageError(std::string(e.what()) + "; partial learning curve written");
    }
    write_text(ws.surrogate() / "learning_curve.csv", curve_csv(res.curve));
    save_checkpoint(ws.surrogate() / "model.json", res.model, d.stats);

    const auto stepwise = stepwise_abs_error(res.model, splits.validation);
    std::string err = "step,validation_mean_abs_T_error\n";
    for (std::size_t k = 0; k < stepwise.size(); ++k) err += std::to_string(k + 1) + "," + format_double(stepwise[k]) + "\n";
    write_text(ws.surrogate() / "stepwise_error.csv", err);

    const double val = mean_loss(res.model, splits.validation, workers);
    write_meta(ws.surrogate(), c,
               {"train-surrogate", surrogate_hash(c), {{"data", data_hash(c)}},
                {{"windows", {splits.train.size(), splits.validation.size(), splits.generalization.size()}},
                 {"validation_mse", val},
                 {"generalization_mse", mean_loss(res.model, splits.generalization, workers)}}});
    log << "train-surrogate: validation MSE " << format_double(val) << " -> " << ws.surrogate().string() << '\n';
}

inline std::string policy_filename(std::size_t complexity) {
    return "complexity_" + std::to_string(complexity) + ".txt";
}

inline void stage_evolve(const RunConfig& c, const Workspace& ws, std::size_t workers, std::ostream& log) {
    const Dataset d = load_stage_dataset(c, ws);
    require_stage(ws.surrogate(), "train-surrogate", surrogate_hash(c));
    const Checkpoint ck = load_checkpoint(ws.surrogate() / "model.json", &d.stats);

    FitnessSpec spec;
    spec.horizon = c.fitness.horizon;
    spec.discount = c.fitness.discount;
    auto anchors = d.windows(Split::Train, ck.model.arch.horizon_past, 1);
    if (c.fitness.steady_starts) anchors = steady_windows(std::move(anchors));
    spec.starts = select_start_states(anchors, c.fitness.start_states, stream_seed(c, SeedStream::StartStates));
    spec.validate();

    const FitnessFn fitness = [&](const Expr& e) {
        std::string why;
        const double r = estimate_return(PolicyBinding{e, d.stats}, ck.model, spec, &why);
        if (!why.empty()) throw Error(why);
        return r;
    };
    GAConfig ga = c.ga;
    ga.seed = stream_seed(c, SeedStream::Evolution);
    const auto res = evolve(ga, fitness, workers, [&](std::size_t gen, std::span<const Individual>, const ParetoArchive& ar) {
        log << "evolve: generation " << gen << ", archive levels " << ar.size() << '\n';
    });

    const auto dir = ws.evolve();
    std::filesystem::create_directories(dir / "policies");
    write_text(dir / "archive.csv", archive_csv(res.archive));
    std::string front(kArchiveHeader);
    front += '\n';
    for (const auto& p : pareto_front(res.archive))
        front += std::to_string(p.complexity) + "," + format_double(p.penalty) + "," + print_policy(p.expr) + "\n";
    write_text(dir / "front.csv", front);
    std::string runlog;
    for (const auto& r : res.log) runlog += to_json_line(r).dump() + "\n";
    write_text(dir / "run_log.jsonl", runlog);
    for (const auto& [k, ind] : res.archive.levels())
        write_text(dir / "policies" / policy_filename(k), print_policy(ind.expr) + "\n");
    write_meta(dir, c,
               {"evolve", evolve_hash(c), {{"surrogate", surrogate_hash(c)}},
                {{"start_states", spec.starts.size()}, {"levels", res.archive.size()}}});
    log << "evolve: " << res.archive.size() << " complexity levels -> " << dir.string() << '\n';
}

inline ParetoArchive load_stage_archive(const RunConfig& c, const Workspace& ws) {
    require_stage(ws.evolve(), "evolve", evolve_hash(c));
    std::ifstream is(ws.evolve() / "archive.csv", std::ios::binary);
    if (!is) throw StageError("cannot read " + (ws.evolve() / "archive.csv").string());
    std::ostringstream text;
    text << is.rdbuf();
    return parse_archive_csv(text.str());
}

/// The automatic choice described by `SelectionConfig`, or nullptr when no
/// front point is simple enough.
inline const Individual* select_policy(const ParetoArchive& archive, const SelectionConfig& sel) {
    std::vector<FrontPoint> eligible;
    for (auto& p : pareto_front(archive))
        if (p.complexity <= sel.max_complexity) eligible.push_back(std::move(p));
    if (eligible.empty()) return nullptr;
    const double best = eligible.back().penalty;
    for (const auto& p : eligible)
        if (p.penalty <= best + sel.tolerance * std::abs(best)) return archive.at(p.complexity);
    return archive.at(eligible.back().complexity);
}

/// Picks the archive level `complexity`, or the automatic choice.
inline void stage_select(const RunConfig& c, const Workspace& ws, std::optional<std::size_t> complexity,
                         std::ostream& log) {
    const ParetoArchive archive = load_stage_archive(c, ws);
    const Individual* chosen = nullptr;
    if (complexity) {
        chosen = archive.at(*complexity);
        if (!chosen) {
            std::string levels;
            for (const auto& [k, ind] : archive.levels()) levels += (levels.empty() ? "" : ", ") + std::to_string(k);
            throw StageError("archive has no policy of complexity " + std::to_string(*complexity) +
                             "; available levels: " + levels);
        }
    } else {
        chosen = select_policy(archive, c.selection);
        if (!chosen)
            throw StageError("no archive policy with complexity <= " + std::to_string(c.selection.max_complexity));
    }
    const std::string text = print_policy(chosen->expr);
    std::filesystem::create_directories(ws.policy());
    write_text(ws.policy() / "policy.txt", text + "\n");
    write_meta(ws.policy(), c,
               {"select",
                config_hash({{"stage", "select"}, {"evolve", evolve_hash(c)}, {"policy", text}}),
                {{"evolve", evolve_hash(c)}},
                {{"complexity", chosen->complexity}, {"penalty", chosen->penalty()}, {"policy", text}}});
    log << "select: complexity " << chosen->complexity << ", penalty " << format_double(chosen->penalty()) << ": "
        << text << '\n';
}

/// The policy to act on: an explicit file, or the output of `select`.
struct PolicySource {
    Expr expr;
    std::string text;
    std::string hash;
};

inline PolicySource load_policy(const RunConfig& c, const Workspace& ws,
                                const std::optional<std::filesystem::path>& file) {
    std::filesystem::path path;
    if (file) {
        path = *file;
    } else {
        const auto meta = require_stage(ws.policy(), "select", std::nullopt);
        if (meta.at("inputs").value("evolve", "") != evolve_hash(c))
            throw StageError(ws.policy().string() + " was selected from a different evolution run; rerun `gprl select`");
        path = ws.policy() / "policy.txt";
    }
    std::ifstream is(path, std::ios::binary);
    if (!is) throw StageError("cannot read policy " + path.string());
    std::ostringstream text;
    text << is.rdbuf();
    PolicySource p;
    try {
        p.expr = parse_policy(text.str());
    } catch (const ParseError& e) {
        throw StageError(path.string() + ": " + e.what());
    }
    p.text = print_policy(p.expr);
    p.hash = config_hash({{"policy", p.text}});
    return p;
}

inline void stage_codegen(const RunConfig& c, const Workspace& ws, const std::optional<std::filesystem::path>& file,
                          std::ostream& log) {
    const PolicySource p = load_policy(c, ws, file);
    const Dataset d = load_stage_dataset(c, ws);
    const auto art = emit_structured_text(p.expr, d.stats);
    std::filesystem::create_directories(ws.codegen());
    write_text(ws.codegen() / "policy.st", art.source);
    write_text(ws.codegen() / "taps.csv", taps_csv(art.taps));
    write_meta(ws.codegen(), c,
               {"codegen", config_hash({{"stage", "codegen"}, {"policy", p.hash}, {"data", data_hash(c)}}),
                {{"policy", p.hash}, {"data", data_hash(c)}},
                {{"policy", p.text}, {"taps", art.taps.size()}}});
    log << "codegen: " << art.taps.size() << " taps -> " << ws.codegen().string() << '\n';
}

inline EvalReport stage_evaluate(const RunConfig& c, const Workspace& ws,
                                 const std::optional<std::filesystem::path>& file, std::size_t workers,
                                 std::ostream& log) {
    const PolicySource p = load_policy(c, ws, file);
    const Dataset d = load_stage_dataset(c, ws);
    const EvalReport report =
        evaluate_pair(PolicyBinding{p.expr, d.stats}, c.reactor, c.setpoints, stream_seed(c, SeedStream::Evaluation), workers);
    save_report(report, p.text, ws.eval());
    const std::string hash = config_hash({{"stage", "evaluate"},
                                          {"policy", p.hash},
                                          {"data", data_hash(c)},
                                          {"reactor", c.reactor},
                                          {"setpoints", c.setpoints},
                                          {"seed", c.master_seed()}});
    write_meta(ws.eval(), c,
               {"evaluate", hash, {{"policy", p.hash}, {"data", data_hash(c)}},
                {{"policy", p.text},
                 {"mean_reduction_pct", report.mean_reduction()},
                 {"improved_setpoints", report.improved_count()}}});
    log << summary_text(report, p.text);
    return report;
}

/// One batch at `setpoint`, driven by the default policy or a policy file.
inline std::filesystem::path stage_simulate(const RunConfig& c, const Workspace& ws, double setpoint,
                                            const std::optional<std::filesystem::path>& file, std::ostream& log) {
    const Recipe recipe = make_recipe(setpoint, stream_seed(c, SeedStream::Simulation), c.reactor);
    Controller controller = default_controller();
    std::string label = "default";
    if (file) {
        const PolicySource p = load_policy(c, ws, file);
        const Dataset d = load_stage_dataset(c, ws);
        controller = policy_controller(PolicyBinding{p.expr, d.stats}, c.data.grid, c.reactor.dt);
        label = "policy";
    }
    const Trajectory t = run_batch(recipe, controller, c.reactor);
    std::filesystem::create_directories(ws.simulate());
    const auto path = ws.simulate() / ("traj_" + setpoint_label(setpoint) + "_" + label + ".csv");
    write_trajectory_csv(path.string(), t.rows);
    const Deviation dev = control_deviation(t.rows, setpoint, c.reactor.dt);
    log << "simulate: " << t.rows.size() << " rows, duration " << format_double(t.duration()) << " s, deviation "
        << format_double(dev.integral) << " K^2 s -> " << path.string() << '\n';
    return path;
}

/// gen-data, train-surrogate, evolve, select, codegen and evaluate in order.
inline EvalReport stage_all(const RunConfig& c, const Workspace& ws, std::size_t workers, std::ostream& log) {
    stage_gen_data(c, ws, log);
    stage_train(c, ws, workers, log);
    stage_evolve(c, ws, workers, log);
    stage_select(c, ws, std::nullopt, log);
    stage_codegen(c, ws, std::nullopt, log);
    return stage_evaluate(c, ws, std::nullopt, workers, log);
}

} // namespace gprl
