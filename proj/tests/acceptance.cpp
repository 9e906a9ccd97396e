// Acceptance run: prints one PASS/FAIL line per criterion and exits non-zero
// if any criterion fails.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include <sys/wait.h>

#include "CLI11.hpp"
#include "gprl/pipeline.hpp"

using namespace gprl;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw Error("cannot read " + p.string());
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

Window random_window(std::mt19937_64& rng, std::size_t H, std::size_t F) {
    std::normal_distribution<double> n(0.0, 1.0);
    Window w;
    w.horizon_past = H;
    w.horizon_future = F;
    for (std::size_t i = 0; i < H * kStepDim; ++i) w.history.push_back(n(rng));
    for (std::size_t i = 0; i < F * kActionDim; ++i) w.future_actions.push_back(n(rng));
    for (std::size_t i = 0; i < F * kStateDim; ++i) w.future_states.push_back(n(rng));
    return w;
}

double plain_loss(const SurrogateModel& m, const std::vector<Window>& ws) {
    double l = 0;
    for (const auto& w : ws) {
        const auto y = forward(m, w.history, w.future_actions);
        for (std::size_t k = 0; k < y.size(); ++k) l += (y[k] - w.future_states[k]) * (y[k] - w.future_states[k]);
    }
    return l / static_cast<double>(ws.size() * m.arch.horizon_future * kStateDim);
}

Outcome gradient_oracle() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(2024);
    std::size_t checked = 0;
    double worst = 0;
    for (int trial = 0; trial < 5; ++trial) {
        SurrogateModel m = init_model(Architecture{2, 3, 3, trial % 2 == 0}, 10 + static_cast<std::uint64_t>(trial));
        std::normal_distribution<double> n(0.0, 0.3);
        for (auto& p : m.params) p += n(rng);
        const std::vector<Window> ws{random_window(rng, 3, 3), random_window(rng, 3, 3)};
        const std::vector<const Window*> batch{&ws[0], &ws[1]};
        const auto lg = loss_and_grad(m, batch);
        for (std::size_t k = 0; k < m.params.size(); ++k) {
            const double h = 1e-5, saved = m.params[k];
            m.params[k] = saved + h;
            const double up = plain_loss(m, ws);
            m.params[k] = saved - h;
            const double down = plain_loss(m, ws);
            m.params[k] = saved;
            const double fd = (up - down) / (2 * h);
            const double scale = std::max({std::abs(fd), std::abs(lg.grad[k]), 1e-6});
            worst = std::max(worst, std::abs(fd - lg.grad[k]) / scale);
            ++checked;
        }
    }
    const double secs = seconds_since(t0);
    return {checked >= 200 && worst <= 1e-4 && secs < 10,
            fmt("%zu coordinates, worst relative error %.2e, %.2f s", checked, worst, secs)};
}

Outcome rollout_oracle() {
    std::mt19937_64 rng(77);
    const auto m = init_model(Architecture{4, 3, 3}, 5, 1.2);
    NormalizationStats st;
    st.mean.fill(0);
    st.stddev.fill(1);
    for (Channel c : {Channel::S, Channel::T, Channel::That}) {
        st.mean[idx(c)] = 358.5;
        st.stddev[idx(c)] = 4.0;
    }
    st.mean[idx(Channel::Mhat)] = 0.01;
    st.stddev[idx(Channel::Mhat)] = 0.003;
    const PolicyBinding b{parse_policy("(- (+ (var T -20) (* 2 (- (var S 0) (var T 0)))) 0.3)"), st};

    FitnessSpec spec;
    spec.horizon = 3;
    spec.discount = 0.9;
    std::normal_distribution<double> n(0.0, 0.5);
    for (int s = 0; s < 2; ++s) {
        RolloutHistory h;
        h.setpoint = n(rng);
        h.rows.resize(3);
        for (auto& r : h.rows)
            for (auto& x : r) x = n(rng);
        spec.starts.push_back(h);
    }
    const double got = estimate_return(b, m, spec);

    double want = 0;
    for (const auto& start : spec.starts) {
        std::vector<double> past;
        for (const auto& r : start.rows) past.insert(past.end(), r.begin(), r.end());
        RolloutHistory h = start;
        std::vector<double> future;
        double g = 0, w = 1;
        for (std::size_t k = 0; k < 3; ++k) {
            const Action a = policy_action(b, h);
            const double na[2] = {(a.That - 358.5) / 4.0, (a.Mhat - 0.01) / 0.003};
            future.insert(future.end(), na, na + 2);
            const auto y = forward(m, past, future);
            StepRow row{};
            std::copy(y.end() - kStateDim, y.end(), row.begin());
            row[5] = na[0];
            row[6] = na[1];
            h.rows.push_back(row);
            g += w * -(start.setpoint - row[0]) * (start.setpoint - row[0]);
            w *= 0.9;
        }
        want += g / 2;
    }
    const double diff = std::abs(got - want);
    return {diff <= 1e-9, fmt("estimate %.12f, brute force %.12f, difference %.1e", got, want, diff)};
}

Outcome surrogate_quality(const fs::path& work) {
    const auto t0 = Clock::now();
    RunConfig c;
    c.seed = 1;
    c.data.recipes = 30;
    c.training.episodes = 300;
    const Workspace ws{work / "surrogate_quality"};
    fs::remove_all(ws.root);
    std::ostringstream log;
    stage_gen_data(c, ws, log);
    stage_train(c, ws, 1, log);
    const double secs = seconds_since(t0);
    const double val = read_json(ws.surrogate() / "meta.json")["info"]["validation_mse"].get<double>();
    std::istringstream err(slurp(ws.surrogate() / "stepwise_error.csv"));
    std::string line;
    std::vector<double> steps;
    std::getline(err, line);
    while (std::getline(err, line)) steps.push_back(std::stod(line.substr(line.find(',') + 1)));
    const bool shape = steps.size() == 10 && steps.back() >= steps.front();
    return {val < 0.01 && shape && secs < 180,
            fmt("validation MSE %.5f, T error step 1 %.4f, step 10 %.4f, %.0f s", val, steps.empty() ? 0.0 : steps.front(),
                steps.empty() ? 0.0 : steps.back(), secs)};
}

// Surrogate-free fitness so the invariants are checked on the engine alone.
double proxy_fitness(const Expr& e) {
    LaggedValues v;
    for (std::size_t k = 0; k < kVariables; ++k)
        for (std::size_t l = 0; l < kLagCount; ++l)
            v.set_index(static_cast<Variable>(k), l, std::sin(static_cast<double>(3 * k + l)));
    const double y = eval_expr(e, v);
    return -(y - 0.7) * (y - 0.7);
}

Outcome ga_invariants() {
    GAConfig cfg;
    cfg.population = 100;
    cfg.iterations = 10;
    cfg.seed = 3;
    const auto slots = cfg.slot_counts();
    bool sizes = true, monotone = true;
    std::size_t generations = 0;
    std::map<std::size_t, double> best;
    evolve(cfg, proxy_fitness, 1, [&](std::size_t, std::span<const Individual> pop, const ParetoArchive& a) {
        ++generations;
        sizes = sizes && pop.size() == 100;
        for (const auto& [k, ind] : a.levels()) {
            if (best.contains(k) && ind.fitness < best[k]) monotone = false;
            best[k] = ind.fitness;
        }
    });
    const std::size_t sum = slots[0] + slots[1] + slots[2] + slots[3] + slots[4];
    return {sizes && monotone && sum == 100 && generations == 11,
            fmt("%zu generations observed, sizes %s, archive %s, slots sum %zu", generations, sizes ? "exact" : "wrong",
                monotone ? "monotone" : "worsened", sum)};
}

Outcome semantics_preservation() {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> u(-3, 3);
    std::size_t compared = 0, skipped = 0;
    double worst = 0;
    for (int i = 0; i < 1000; ++i) {
        Expr e = random_tree(rng, 2, 6);
        if (i % 3 == 0) e = Expr::binary(static_cast<Op>(i % 4), e, e);
        const Expr s = auto_cancel(e);
        for (int k = 0; k < 100; ++k) {
            LaggedValues v;
            for (std::size_t a = 0; a < kVariables; ++a)
                for (std::size_t l = 0; l < kLagCount; ++l) v.set_index(static_cast<Variable>(a), l, u(rng));
            bool edge = false;
            const auto nodes = e.nodes();
            for (std::size_t j = 0; j < nodes.size() && !edge; ++j)
                if (nodes[j].op == Op::Div && std::abs(eval_expr(e.subtree(e.subtree_end(j + 1)), v)) < 1e-3) edge = true;
            const double a = eval_expr(e, v);
            if (edge || !std::isfinite(a)) {
                ++skipped;
                continue;
            }
            worst = std::max(worst, std::abs(a - eval_expr(s, v)) / std::max(1.0, std::abs(a)));
            ++compared;
        }
    }
    return {worst <= 1e-9 && compared > 90000,
            fmt("%zu comparisons (%zu edge bindings excluded), worst error %.1e", compared, skipped, worst)};
}

Outcome complexity_anchor() {
    const Expr e = parse_policy("(- (+ (var T -30) (* 2 (- (var S 0) (var T 0)))) 1)");
    return {complexity(e) == 9, fmt("complexity %zu", complexity(e))};
}

int run_cli(const std::string& cli, const std::string& args, const fs::path& log) {
    const std::string cmd = "\"" + cli + "\" " + args + " >\"" + log.string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

struct PipelineRun {
    int exit_code = -1;
    double seconds = 0;
    Workspace ws;
};

PipelineRun run_all(const std::string& cli, const fs::path& config, const fs::path& dir, std::size_t workers) {
    fs::remove_all(dir);
    fs::create_directories(dir);
    PipelineRun r{-1, 0, {dir}};
    const auto t0 = Clock::now();
    r.exit_code = run_cli(cli,
                          "--config \"" + config.string() + "\" --workers " + std::to_string(workers) + " --out \"" +
                              dir.string() + "\" all",
                          dir / "all.log");
    r.seconds = seconds_since(t0);
    return r;
}

Outcome closed_loop(const PipelineRun& run, const fs::path& config) {
    if (run.exit_code != 0) return {false, fmt("`all` exited with %d", run.exit_code)};
    const auto meta = read_json(run.ws.policy() / "meta.json");
    const std::size_t k = meta["info"]["complexity"].get<std::size_t>();
    const RunConfig c = load_run_config(config);
    const Dataset d = load_dataset(run.ws.data());
    const Expr policy = parse_policy(slurp(run.ws.policy() / "policy.txt"));
    const EvalReport rep = evaluate_pair(PolicyBinding{policy, d.stats}, c.reactor, default_eval_setpoints(),
                                         stream_seed(c, SeedStream::Evaluation));
    const std::vector<double> upper{358, 362, 365};
    const double mean = rep.mean_reduction(upper);
    std::string per;
    for (const auto& r : rep.results) per += fmt(" %g:%.1f%%", r.setpoint, r.reduction());
    return {k <= 12 && rep.improved_count() >= 3 && mean >= 10 && run.seconds < 600,
            fmt("complexity %zu, improved %zu of 4, mean over 358-365 K %.1f%% (%s ), pipeline %.0f s", k,
                rep.improved_count(), mean, per.c_str() + 1, run.seconds)};
}

Outcome determinism(const PipelineRun& a, const PipelineRun& b) {
    if (a.exit_code != 0 || b.exit_code != 0) return {false, "a pipeline run failed"};
    std::vector<std::string> differ;
    std::size_t files = 0;
    const std::vector<fs::path> dirs{"evolve", "policy", "codegen", "eval"};
    for (const auto& sub : dirs)
        for (const auto& entry : fs::recursive_directory_iterator(a.ws.root / sub)) {
            if (!entry.is_regular_file() || entry.path().filename() == "meta.json") continue;
            const auto rel = fs::relative(entry.path(), a.ws.root);
            ++files;
            if (!fs::exists(b.ws.root / rel) || slurp(entry.path()) != slurp(b.ws.root / rel)) differ.push_back(rel.string());
        }
    return {differ.empty() && files > 0,
            differ.empty() ? fmt("%zu files byte-identical across --workers 1 and 3", files)
                           : "differs: " + differ.front()};
}

Outcome round_trip() {
    std::mt19937_64 rng(5150);
    std::size_t bad = 0;
    for (int i = 0; i < 1000; ++i) {
        const Expr e = random_tree(rng, 1, 8);
        if (!(parse_policy(print_policy(e)) == e)) ++bad;
    }
    NormalizationStats st;
    st.mean.fill(0.5);
    st.stddev.fill(2);
    const Expr p = parse_policy("(/ (var T -30) (- (var S 0) (var Q -10)))");
    const bool stable = emit_structured_text(p, st).source == emit_structured_text(parse_policy(print_policy(p)), st).source;
    return {bad == 0 && stable, fmt("%zu of 1000 trees changed, structured text %s", bad, stable ? "stable" : "unstable")};
}

Outcome mass_conservation(const PipelineRun& run, const fs::path& config) {
    const RunConfig c = load_run_config(config);
    std::vector<Trajectory> trajectories;
    for (const auto& plan : plan_exploration(10, 31, c.reactor))
        trajectories.push_back(run_batch(plan.recipe, exploration_controller(plan), c.reactor));
    if (run.exit_code == 0) {
        const Dataset d = load_dataset(run.ws.data());
        const Expr policy = parse_policy(slurp(run.ws.policy() / "policy.txt"));
        const auto rep = evaluate_pair(PolicyBinding{policy, d.stats}, c.reactor, default_eval_setpoints(),
                                       stream_seed(c, SeedStream::Evaluation));
        for (const auto& r : rep.results) {
            trajectories.push_back(r.baseline);
            trajectories.push_back(r.candidate);
        }
    }
    double worst = 0;
    std::size_t rows = 0;
    for (const auto& t : trajectories)
        for (const auto& r : t.rows) {
            worst = std::max(worst, std::abs(r.fed - (r.M + r.P)));
            ++rows;
        }
    return {worst <= 1e-6 && rows > 0,
            fmt("%zu trajectories, %zu rows, worst |fed - (M + P)| %.2e kg", trajectories.size(), rows, worst)};
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria"};
    std::string cli;
    fs::path work = "acceptance_runs", config;
    app.add_option("--cli", cli, "path to the gprl executable")->required();
    app.add_option("--config", config, "desk configuration")->required()->check(CLI::ExistingFile);
    app.add_option("--work", work, "scratch directory");
    CLI11_PARSE(app, argc, argv);
    fs::create_directories(work);

    int failed = 0;
    const auto report = [&](int n, const std::string& name, const std::function<Outcome()>& f) {
        Outcome o;
        try {
            o = f();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        std::cout << "criterion " << n << " (" << name << "): " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail
                  << std::endl;
        if (!o.pass) ++failed;
    };

    report(1, "gradient oracle", gradient_oracle);
    report(2, "rollout oracle", rollout_oracle);
    report(3, "surrogate quality", [&] { return surrogate_quality(work); });
    report(4, "GA invariants", ga_invariants);
    report(5, "semantics preservation", semantics_preservation);
    report(6, "complexity anchor", complexity_anchor);

    const PipelineRun first = run_all(cli, config, work / "all_w1", 1);
    const PipelineRun second = run_all(cli, config, work / "all_w3", 3);
    report(7, "closed-loop improvement", [&] { return closed_loop(first, config); });
    report(8, "determinism", [&] { return determinism(first, second); });
    report(9, "round trip", round_trip);
    report(10, "mass conservation", [&] { return mass_conservation(first, config); });

    std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
    return failed == 0 ? 0 : 1;
}
