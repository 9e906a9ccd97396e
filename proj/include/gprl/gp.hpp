#pragma once

/// @file gp.hpp
/// Genetic programming over policy expressions: tournament selection, the
/// generational loop with its five sub-populations, and the per-complexity
/// Pareto archive.

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "codegen.hpp"
#include "core.hpp"
#include "expr.hpp"

namespace gprl {

struct Individual {
    Expr expr;
    double fitness = kWorstFitness;  // average return, higher is better
    std::size_t complexity = 1;

    [[nodiscard]] double penalty() const noexcept { return -fitness; }
};

inline Individual make_individual(Expr e, double fitness) {
    const std::size_t c = complexity(e);
    return Individual{std::move(e), fitness, c};
}

/// Ranking used everywhere a "best" is needed: higher fitness, then fewer
/// nodes. Callers break remaining ties by position.
inline bool ranks_before(const Individual& a, const Individual& b) noexcept {
    if (a.fitness != b.fitness) return a.fitness > b.fitness;
    return a.complexity < b.complexity;
}

struct GAConfig {
    std::size_t population = 500;
    std::size_t iterations = 100;
    double crossover = 0.45;
    double reproduction = 0.05;
    double mutation = 0.1;
    double cancelation = 0.1;
    double fresh = 0.3;
    std::size_t tournament = 3;
    std::size_t depth_min = 2;
    std::size_t depth_max = 6;
    std::size_t max_depth = 17;
    std::uint64_t seed = 0;

    void validate() const {
        if (population < 2) throw Error("GA population must be at least 2");
        const std::array<double, 5> r{crossover, reproduction, mutation, cancelation, fresh};
        for (double x : r)
            if (!(x >= 0) || !std::isfinite(x)) throw Error("GA ratios must be non-negative");
        if (std::abs(r[0] + r[1] + r[2] + r[3] + r[4] - 1.0) > 1e-12) throw Error("GA ratios must sum to 1");
        if (tournament < 1) throw Error("tournament size must be at least 1");
        if (depth_min < 1 || depth_min > depth_max) throw Error("GA needs 1 <= depth_min <= depth_max");
        if (depth_max > max_depth) throw Error("GA depth_max exceeds max_depth");
    }

    /// Slot counts in listing order: crossover, reproduction, cancelation,
    /// mutation, fresh. They always sum to `population`.
    [[nodiscard]] std::array<std::size_t, 5> slot_counts() const {
        return apportion<5>(population, {crossover, reproduction, cancelation, mutation, fresh});
    }
};

inline void to_json(nlohmann::json& j, const GAConfig& c) {
    j = nlohmann::json{{"population", c.population},   {"iterations", c.iterations},
                       {"crossover", c.crossover},     {"reproduction", c.reproduction},
                       {"mutation", c.mutation},       {"cancelation", c.cancelation},
                       {"fresh", c.fresh},             {"tournament", c.tournament},
                       {"depth_min", c.depth_min},     {"depth_max", c.depth_max},
                       {"max_depth", c.max_depth}};
}

inline void from_json(const nlohmann::json& j, GAConfig& c) {
    nlohmann::json known;
    to_json(known, c);
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) throw Error("unknown GA parameter: " + key);
        if (!value.is_number()) throw Error("GA parameter must be numeric: " + key);
        known[key] = value;
    }
    c.population = known["population"];
    c.iterations = known["iterations"];
    c.crossover = known["crossover"];
    c.reproduction = known["reproduction"];
    c.mutation = known["mutation"];
    c.cancelation = known["cancelation"];
    c.fresh = known["fresh"];
    c.tournament = known["tournament"];
    c.depth_min = known["depth_min"];
    c.depth_max = known["depth_max"];
    c.max_depth = known["max_depth"];
}

/// Draws `k` indices uniformly with replacement and returns the index of the
/// best one. Equal fitness goes to the simpler tree, then the earlier index.
template <class Rng>
std::size_t tournament_select(std::span<const Individual> population, std::size_t k, Rng& rng) {
    if (population.empty()) throw Error("tournament on an empty population");
    if (k < 1) throw Error("tournament size must be at least 1");
    std::uniform_int_distribution<std::size_t> pick(0, population.size() - 1);
    std::size_t best = pick(rng);
    for (std::size_t i = 1; i < k; ++i) {
        const std::size_t c = pick(rng);
        const Individual& a = population[c];
        const Individual& b = population[best];
        if (ranks_before(a, b) || (!ranks_before(b, a) && c < best)) best = c;
    }
    return best;
}

/// Best individual seen so far at each complexity level.
class ParetoArchive {
public:
    /// Stores `ind` if its level is empty or it is strictly fitter than the
    /// incumbent. Returns whether it was stored.
    bool offer(const Individual& ind) {
        auto it = levels_.find(ind.complexity);
        if (it == levels_.end()) {
            levels_.emplace(ind.complexity, ind);
            return true;
        }
        if (ind.fitness > it->second.fitness) {
            it->second = ind;
            return true;
        }
        return false;
    }

    [[nodiscard]] const std::map<std::size_t, Individual>& levels() const noexcept { return levels_; }
    [[nodiscard]] bool empty() const noexcept { return levels_.empty(); }
    [[nodiscard]] std::size_t size() const noexcept { return levels_.size(); }
    [[nodiscard]] const Individual* at(std::size_t complexity) const {
        const auto it = levels_.find(complexity);
        return it == levels_.end() ? nullptr : &it->second;
    }

private:
    std::map<std::size_t, Individual> levels_;
};

struct FrontPoint {
    std::size_t complexity;
    double penalty;
    Expr expr;
};

/// Archive levels in ascending complexity whose penalty beats every simpler level.
inline std::vector<FrontPoint> pareto_front(const ParetoArchive& archive) {
    if (archive.empty()) throw Error("pareto_front on an empty archive");
    std::vector<FrontPoint> front;
    for (const auto& [c, ind] : archive.levels())
        if (front.empty() || ind.penalty() < front.back().penalty) front.push_back({c, ind.penalty(), ind.expr});
    return front;
}

struct GenerationRecord {
    std::size_t generation = 0;
    double best_penalty = 0;
    double mean_penalty = 0;
    std::size_t evaluations = 0;  // fitness calls, cache hits excluded
    std::size_t failures = 0;
    std::string first_failure;
};

inline nlohmann::json to_json_line(const GenerationRecord& r) {
    nlohmann::json j{{"generation", r.generation},
                     {"best_penalty", r.best_penalty},
                     {"mean_penalty", r.mean_penalty},
                     {"evaluations", r.evaluations},
                     {"failures", r.failures}};
    if (!r.first_failure.empty()) j["first_failure"] = r.first_failure;
    return j;
}

using FitnessFn = std::function<double(const Expr&)>;
using GenerationObserver =
    std::function<void(std::size_t generation, std::span<const Individual> population, const ParetoArchive& archive)>;

struct EvolutionResult {
    ParetoArchive archive;
    std::vector<GenerationRecord> log;
    std::vector<Individual> population;  // final generation
};

namespace detail {

/// Memoizing, parallel fitness evaluation. A throwing or non-finite fitness
/// becomes the worst fitness and is counted as a failure.
class Evaluator {
public:
    Evaluator(const FitnessFn& fn, std::size_t workers) : fn_(fn), workers_(workers) {}

    std::vector<double> evaluate(std::span<const Expr> exprs, GenerationRecord& rec) {
        std::vector<const Expr*> todo;
        std::unordered_set<Expr, ExprHash> queued;
        for (const Expr& e : exprs)
            if (!cache_.contains(e) && queued.insert(e).second) todo.push_back(&e);

        std::vector<double> values(todo.size());
        std::vector<std::string> errors(todo.size());
        parallel_for(todo.size(), workers_, [&](std::size_t i) {
            try {
                const double v = fn_(*todo[i]);
                if (std::isfinite(v)) {
                    values[i] = v;
                } else {
                    values[i] = kWorstFitness;
                    errors[i] = "non-finite fitness";
                }
            } catch (const std::exception& ex) {
                values[i] = kWorstFitness;
                errors[i] = ex.what();
            }
        });
        for (std::size_t i = 0; i < todo.size(); ++i) {
            cache_.emplace(*todo[i], values[i]);
            if (!errors[i].empty()) {
                if (rec.failures++ == 0) rec.first_failure = print_policy(*todo[i]) + ": " + errors[i];
            }
        }
        rec.evaluations += todo.size();

        std::vector<double> out;
        out.reserve(exprs.size());
        for (const Expr& e : exprs) out.push_back(cache_.at(e));
        return out;
    }

private:
    const FitnessFn& fn_;
    std::size_t workers_;
    std::unordered_map<Expr, double, ExprHash> cache_;
};

/// Indices of `pop` from best to worst, ties by position.
inline std::vector<std::size_t> ranking(std::span<const Individual> pop) {
    std::vector<std::size_t> order(pop.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return ranks_before(pop[a], pop[b]); });
    return order;
}

inline void summarize(std::span<const Individual> pop, GenerationRecord& rec) {
    double best = pop.front().penalty(), sum = 0;
    for (const auto& ind : pop) {
        best = std::min(best, ind.penalty());
        sum += ind.penalty();
    }
    rec.best_penalty = best;
    rec.mean_penalty = sum / static_cast<double>(pop.size());
}

inline std::mt19937_64 slot_rng(std::uint64_t seed, std::size_t generation, std::size_t slot) {
    return std::mt19937_64(derive_seed(seed, 0x69a, generation, slot));
}

} // namespace detail

/// Runs the generational loop. Every random decision draws from a stream
/// keyed by (seed, generation, slot), and evaluation results are merged in
/// slot order, so the outcome does not depend on `workers`.
inline EvolutionResult evolve(const GAConfig& cfg, const FitnessFn& fitness, std::size_t workers = 1,
                              const GenerationObserver& observer = {}) {
    cfg.validate();
    const std::size_t N = cfg.population;
    const auto [n_cross, n_repro, n_cancel, n_mutate, n_fresh] = cfg.slot_counts();
    detail::Evaluator evaluator(fitness, workers);
    EvolutionResult res;

    const auto fresh_tree = [&](std::size_t generation, std::size_t slot) {
        auto rng = detail::slot_rng(cfg.seed, generation, slot);
        return random_tree(rng, cfg.depth_min, cfg.depth_max);
    };
    const auto assess = [&](std::vector<Expr> exprs, GenerationRecord& rec) {
        const auto f = evaluator.evaluate(exprs, rec);
        std::vector<Individual> pop;
        pop.reserve(exprs.size());
        for (std::size_t i = 0; i < exprs.size(); ++i) pop.push_back(make_individual(std::move(exprs[i]), f[i]));
        return pop;
    };

    {
        GenerationRecord rec;
        std::vector<Expr> init;
        init.reserve(N);
        for (std::size_t i = 0; i < N; ++i) init.push_back(fresh_tree(0, i));
        res.population = assess(std::move(init), rec);
        for (const auto& ind : res.population) res.archive.offer(ind);
        detail::summarize(res.population, rec);
        res.log.push_back(rec);
        if (observer) observer(0, res.population, res.archive);
    }

    for (std::size_t gen = 1; gen <= cfg.iterations; ++gen) {
        GenerationRecord rec;
        rec.generation = gen;
        const std::span<const Individual> old(res.population);
        const auto order = detail::ranking(old);
        std::vector<Expr> next;
        next.reserve(N);

        // (a) crossover offspring of tournament parents, two per draw
        while (next.size() < n_cross) {
            auto rng = detail::slot_rng(cfg.seed, gen, next.size());
            const auto& a = old[tournament_select(old, cfg.tournament, rng)].expr;
            const auto& b = old[tournament_select(old, cfg.tournament, rng)].expr;
            auto [c1, c2] = crossover(a, b, rng, cfg.max_depth);
            next.push_back(std::move(c1));
            if (next.size() < n_cross) next.push_back(std::move(c2));
        }
        // (b) reproduction of tournament winners
        for (std::size_t i = 0; i < n_repro; ++i) {
            auto rng = detail::slot_rng(cfg.seed, gen, next.size());
            next.push_back(old[tournament_select(old, cfg.tournament, rng)].expr);
        }
        // (c) the fittest individuals, simplified
        for (std::size_t i = 0; i < n_cancel; ++i) next.push_back(auto_cancel(old[order[i % order.size()]].expr));

        // (d) constant mutants of the best individual per complexity level;
        //     each level yields N * r_a variants, the best distinct ones survive
        std::map<std::size_t, std::size_t> best_per_level;
        for (std::size_t i : order) best_per_level.try_emplace(old[i].complexity, i);
        std::vector<Expr> variants;
        for (const auto& [level, i] : best_per_level) {
            auto rng = detail::slot_rng(cfg.seed, gen, N + level);
            for (std::size_t v = 0; v < n_cancel; ++v) variants.push_back(mutate_constants(old[i].expr, rng));
        }
        if (n_mutate > 0 && !variants.empty()) {
            const auto mutants = assess(variants, rec);
            for (const auto& ind : mutants) res.archive.offer(ind);
            std::unordered_set<Expr, ExprHash> kept;
            for (std::size_t i : detail::ranking(mutants)) {
                if (kept.size() == n_mutate) break;
                if (kept.insert(mutants[i].expr).second) next.push_back(mutants[i].expr);
            }
        }
        // (e) fresh random trees fill the rest, including any mutation shortfall
        while (next.size() < N) next.push_back(fresh_tree(gen, next.size()));

        res.population = assess(std::move(next), rec);
        for (const auto& ind : res.population) res.archive.offer(ind);
        detail::summarize(res.population, rec);
        res.log.push_back(rec);
        if (observer) observer(gen, res.population, res.archive);
    }
    return res;
}

// ---- archive files --------------------------------------------------------

inline constexpr std::string_view kArchiveHeader = "complexity,penalty,expression";

inline std::string archive_csv(const ParetoArchive& archive) {
    std::string out(kArchiveHeader);
    out += '\n';
    for (const auto& [c, ind] : archive.levels())
        out += std::to_string(c) + "," + format_double(ind.penalty()) + "," + print_policy(ind.expr) + "\n";
    return out;
}

inline ParetoArchive parse_archive_csv(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    if (!std::getline(in, line) || line != kArchiveHeader) throw Error("archive CSV header mismatch");
    ParetoArchive archive;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto c1 = line.find(',');
        const auto c2 = c1 == std::string::npos ? c1 : line.find(',', c1 + 1);
        if (c2 == std::string::npos) throw Error("archive CSV line " + std::to_string(lineno) + ": expected 3 fields");
        try {
            Expr e = parse_policy(std::string_view(line).substr(c2 + 1));
            const std::size_t level = std::stoul(line.substr(0, c1));
            if (level != complexity(e)) throw Error("complexity does not match the expression");
            archive.offer(make_individual(std::move(e), -std::stod(line.substr(c1 + 1, c2 - c1 - 1))));
        } catch (const std::exception& ex) {
            throw Error("archive CSV line " + std::to_string(lineno) + ": " + ex.what());
        }
    }
    if (archive.empty()) throw Error("archive CSV has no entries");
    return archive;
}

} // namespace gprl
