#pragma once

/// @file surrogate.hpp
/// Recurrent multi-step dynamics model. Two stacked tanh layers are unrolled
/// over H history rows (state + action input) and then over future rows that
/// feed only the action. Each future step emits a predicted state. The two
/// branches have separate input matrices and share everything else.
///
/// Parameters live in one flat vector, matrices column-major (entry (i, j) of
/// an r x c block at offset + j * r + i):
///   Wp[h x 7] Wf[h x 2] U1[h x h] b1[h] W2[h x h] U2[h x h] b2[h] V[5 x h] c[5]

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include <json.hpp>

#include "core.hpp"
#include "data.hpp"

namespace gprl {

struct Architecture {
    std::size_t hidden = 20;
    std::size_t horizon_past = 10;
    std::size_t horizon_future = 10;
    bool residual = true;  // outputs are offsets from the last observed state

    [[nodiscard]] std::size_t parameter_count() const noexcept {
        const std::size_t h = hidden;
        return h * kStepDim + h * kActionDim + h * h + h + h * h + h * h + h + kStateDim * h + kStateDim;
    }
    bool operator==(const Architecture&) const = default;
};

/// Offsets of each parameter block in the flat vector.
struct ParamLayout {
    std::size_t wp, wf, u1, b1, w2, u2, b2, v, c, total;

    explicit ParamLayout(const Architecture& a) {
        const std::size_t h = a.hidden;
        wp = 0;
        wf = wp + h * kStepDim;
        u1 = wf + h * kActionDim;
        b1 = u1 + h * h;
        w2 = b1 + h;
        u2 = w2 + h * h;
        b2 = u2 + h * h;
        v = b2 + h;
        c = v + kStateDim * h;
        total = c + kStateDim;
    }
};

struct SurrogateModel {
    Architecture arch;
    std::vector<double> params;

    [[nodiscard]] bool finite() const noexcept {
        return std::all_of(params.begin(), params.end(), [](double v) { return std::isfinite(v); });
    }
};

/// Uniform init in ±gain/sqrt(fan_in) per weight matrix; biases start at zero.
inline SurrogateModel init_model(const Architecture& arch, std::uint64_t seed, double gain = 1.0) {
    if (!(gain >= 0)) throw Error("init gain must be non-negative");
    SurrogateModel m{arch, std::vector<double>(arch.parameter_count(), 0.0)};
    const ParamLayout L(arch);
    std::mt19937_64 rng(derive_seed(seed, 0x1417));
    const auto fill = [&](std::size_t offset, std::size_t count, std::size_t fan_in) {
        const double bound = gain / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (std::size_t i = 0; i < count; ++i) m.params[offset + i] = bound > 0 ? u(rng) : 0.0;
    };
    const std::size_t h = arch.hidden;
    fill(L.wp, h * kStepDim, kStepDim);
    fill(L.wf, h * kActionDim, kActionDim);
    fill(L.u1, h * h, h);
    fill(L.w2, h * h, h);
    fill(L.u2, h * h, h);
    fill(L.v, kStateDim * h, h);
    return m;
}

#if defined(__GNUC__) || defined(__clang__)
#define GPRL_RESTRICT __restrict__
#else
#define GPRL_RESTRICT
#endif

namespace detail {

/// y += alpha * x over n contiguous entries.
inline void axpy(std::size_t n, double alpha, const double* GPRL_RESTRICT x, double* GPRL_RESTRICT y) noexcept {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

/// Activations of one unrolled sequence, kept for backpropagation.
struct Unroll {
    std::size_t steps = 0;
    std::vector<double> h1, h2;  // (steps + 1) x hidden, row 0 is the zero initial state
    std::vector<double> out;     // future x 5

    void resize(std::size_t n_steps, std::size_t hidden, std::size_t future) {
        steps = n_steps;
        h1.assign((n_steps + 1) * hidden, 0.0);
        h2.assign((n_steps + 1) * hidden, 0.0);
        out.assign(future * kStateDim, 0.0);
    }
};

inline void check_shapes(const Architecture& a, std::span<const double> history, std::span<const double> future) {
    if (history.size() != a.horizon_past * kStepDim) throw Error("history shape mismatch");
    if (future.empty() || future.size() % kActionDim != 0 || future.size() / kActionDim > a.horizon_future)
        throw Error("future action shape mismatch");
}

inline void run_forward(const SurrogateModel& m, std::span<const double> history, std::span<const double> future,
                        Unroll& u) {
    const auto& a = m.arch;
    const std::size_t h = a.hidden, H = a.horizon_past, F = future.size() / kActionDim;
    const ParamLayout L(a);
    const double* p = m.params.data();
    u.resize(H + F, h, F);
    for (std::size_t t = 0; t < H + F; ++t) {
        const bool past = t < H;
        const double* x = past ? history.data() + t * kStepDim : future.data() + (t - H) * kActionDim;
        const std::size_t nx = past ? kStepDim : kActionDim;
        const double* win = p + (past ? L.wp : L.wf);
        const double* h1p = u.h1.data() + t * h;
        const double* h2p = u.h2.data() + t * h;
        double* GPRL_RESTRICT h1 = u.h1.data() + (t + 1) * h;
        double* GPRL_RESTRICT h2 = u.h2.data() + (t + 1) * h;

        std::copy_n(p + L.b1, h, h1);
        for (std::size_t j = 0; j < nx; ++j) axpy(h, x[j], win + j * h, h1);
        for (std::size_t j = 0; j < h; ++j) axpy(h, h1p[j], p + L.u1 + j * h, h1);
        for (std::size_t i = 0; i < h; ++i) h1[i] = std::tanh(h1[i]);

        std::copy_n(p + L.b2, h, h2);
        for (std::size_t j = 0; j < h; ++j) axpy(h, h1[j], p + L.w2 + j * h, h2);
        for (std::size_t j = 0; j < h; ++j) axpy(h, h2p[j], p + L.u2 + j * h, h2);
        for (std::size_t i = 0; i < h; ++i) h2[i] = std::tanh(h2[i]);

        if (!past) {
            double* y = u.out.data() + (t - H) * kStateDim;
            std::copy_n(p + L.c, kStateDim, y);
            if (a.residual)
                for (std::size_t o = 0; o < kStateDim; ++o) y[o] += history[(H - 1) * kStepDim + o];
            for (std::size_t j = 0; j < h; ++j) axpy(kStateDim, h2[j], p + L.v + j * kStateDim, y);
        }
    }
}

/// Row-major copies of the recurrent and output matrices for the transposed
/// products in backpropagation.
struct Transposed {
    std::vector<double> u1, w2, u2, v;

    explicit Transposed(const SurrogateModel& m) {
        const std::size_t h = m.arch.hidden;
        const ParamLayout L(m.arch);
        const auto copy = [&](std::size_t offset, std::size_t rows, std::size_t cols) {
            std::vector<double> out(rows * cols);
            for (std::size_t j = 0; j < cols; ++j)
                for (std::size_t i = 0; i < rows; ++i) out[i * cols + j] = m.params[offset + j * rows + i];
            return out;
        };
        u1 = copy(L.u1, h, h);
        w2 = copy(L.w2, h, h);
        u2 = copy(L.u2, h, h);
        v = copy(L.v, kStateDim, h);
    }
};

/// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(out) in `dout`.
inline void run_backward(const SurrogateModel& m, const Transposed& tr, std::span<const double> history,
                         std::span<const double> future, const Unroll& u, std::span<const double> dout,
                         std::span<double> grad) {
    const auto& a = m.arch;
    const std::size_t h = a.hidden, H = a.horizon_past, F = future.size() / kActionDim;
    const ParamLayout L(a);
    double* g = grad.data();
    std::vector<double> buf(6 * h, 0.0);
    double* GPRL_RESTRICT dh1_next = buf.data();
    double* GPRL_RESTRICT dh2_next = dh1_next + h;
    double* GPRL_RESTRICT dh1 = dh2_next + h;
    double* GPRL_RESTRICT dh2 = dh1 + h;
    double* GPRL_RESTRICT da1 = dh2 + h;
    double* GPRL_RESTRICT da2 = da1 + h;
    for (std::size_t t = H + F; t-- > 0;) {
        const bool past = t < H;
        const double* x = past ? history.data() + t * kStepDim : future.data() + (t - H) * kActionDim;
        const std::size_t nx = past ? kStepDim : kActionDim;
        const std::size_t win = past ? L.wp : L.wf;
        const double* h1 = u.h1.data() + (t + 1) * h;
        const double* h2 = u.h2.data() + (t + 1) * h;
        const double* h1p = u.h1.data() + t * h;
        const double* h2p = u.h2.data() + t * h;

        std::copy_n(dh2_next, h, dh2);
        if (!past) {
            const double* dy = dout.data() + (t - H) * kStateDim;
            for (std::size_t o = 0; o < kStateDim; ++o) g[L.c + o] += dy[o];
            for (std::size_t j = 0; j < h; ++j) axpy(kStateDim, h2[j], dy, g + L.v + j * kStateDim);
            for (std::size_t o = 0; o < kStateDim; ++o) axpy(h, dy[o], tr.v.data() + o * h, dh2);
        }
        for (std::size_t i = 0; i < h; ++i) da2[i] = dh2[i] * (1 - h2[i] * h2[i]);

        std::copy_n(dh1_next, h, dh1);
        std::fill_n(dh2_next, h, 0.0);
        for (std::size_t i = 0; i < h; ++i) g[L.b2 + i] += da2[i];
        for (std::size_t j = 0; j < h; ++j) {
            axpy(h, h1[j], da2, g + L.w2 + j * h);
            axpy(h, h2p[j], da2, g + L.u2 + j * h);
        }
        for (std::size_t i = 0; i < h; ++i) {
            axpy(h, da2[i], tr.w2.data() + i * h, dh1);
            axpy(h, da2[i], tr.u2.data() + i * h, dh2_next);
        }
        for (std::size_t i = 0; i < h; ++i) da1[i] = dh1[i] * (1 - h1[i] * h1[i]);

        std::fill_n(dh1_next, h, 0.0);
        for (std::size_t i = 0; i < h; ++i) g[L.b1 + i] += da1[i];
        for (std::size_t j = 0; j < nx; ++j) axpy(h, x[j], da1, g + win + j * h);
        for (std::size_t j = 0; j < h; ++j) axpy(h, h1p[j], da1, g + L.u1 + j * h);
        for (std::size_t i = 0; i < h; ++i) axpy(h, da1[i], tr.u1.data() + i * h, dh1_next);
    }
}

} // namespace detail

/// Predicts one state per future action (k x 5, k <= F).
inline std::vector<double> forward(const SurrogateModel& m, std::span<const double> history,
                                   std::span<const double> future_actions) {
    detail::check_shapes(m.arch, history, future_actions);
    detail::Unroll u;
    detail::run_forward(m, history, future_actions, u);
    return u.out;
}

struct LossGrad {
    double loss = 0;
    std::vector<double> grad;
};

/// Mean squared error over windows, future steps and state channels, with
/// its exact gradient by backpropagation through time.
inline LossGrad loss_and_grad(const SurrogateModel& m, std::span<const Window* const> batch,
                              std::size_t workers = 1) {
    if (batch.empty()) throw Error("loss_and_grad needs a non-empty minibatch");
    const std::size_t P = m.params.size();
    const std::size_t n = batch.size();
    std::vector<double> losses(n, 0.0);
    std::vector<double> grads(n * P, 0.0);
    const double scale = 1.0 / static_cast<double>(n * m.arch.horizon_future * kStateDim);
    const detail::Transposed tr(m);

    detail::parallel_for(n, workers, [&](std::size_t i) {
        const Window& w = *batch[i];
        if (w.future_actions.size() != m.arch.horizon_future * kActionDim ||
            w.future_states.size() != m.arch.horizon_future * kStateDim)
            throw Error("window shape mismatch");
        detail::check_shapes(m.arch, w.history, w.future_actions);
        detail::Unroll u;
        detail::run_forward(m, w.history, w.future_actions, u);
        std::vector<double> dout(u.out.size());
        double l = 0;
        for (std::size_t k = 0; k < u.out.size(); ++k) {
            const double e = u.out[k] - w.future_states[k];
            l += e * e;
            dout[k] = 2 * e * scale;
        }
        losses[i] = l * scale;
        detail::run_backward(m, tr, w.history, w.future_actions, u, dout, std::span<double>(grads.data() + i * P, P));
    });

    LossGrad out;
    out.grad.assign(P, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        out.loss += losses[i];
        const double* gi = grads.data() + i * P;
        for (std::size_t k = 0; k < P; ++k) out.grad[k] += gi[k];
    }
    if (!std::isfinite(out.loss)) throw Error("training diverged");
    return out;
}

/// Mean squared prediction error over a window set (no gradient).
inline double mean_loss(const SurrogateModel& m, std::span<const Window> windows, std::size_t workers = 1) {
    if (windows.empty()) return 0.0;
    std::vector<double> losses(windows.size(), 0.0);
    detail::parallel_for(windows.size(), workers, [&](std::size_t i) {
        const auto y = forward(m, windows[i].history, windows[i].future_actions);
        double l = 0;
        for (std::size_t k = 0; k < y.size(); ++k) {
            const double e = y[k] - windows[i].future_states[k];
            l += e * e;
        }
        losses[i] = l / static_cast<double>(y.size());
    });
    return std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(windows.size());
}

/// Mean absolute error of one state channel at each future step (F entries).
inline std::vector<double> stepwise_abs_error(const SurrogateModel& m, std::span<const Window> windows,
                                              std::size_t state_index = 0) {
    std::vector<double> err(m.arch.horizon_future, 0.0);
    for (const auto& w : windows) {
        const auto y = forward(m, w.history, w.future_actions);
        for (std::size_t k = 0; k < err.size(); ++k)
            err[k] += std::abs(y[k * kStateDim + state_index] - w.future_states[k * kStateDim + state_index]);
    }
    if (!windows.empty())
        for (auto& e : err) e /= static_cast<double>(windows.size());
    return err;
}

enum class Optimizer { Sgd, Adam };

struct TrainingConfig {
    Optimizer optimizer = Optimizer::Sgd;
    std::size_t episodes = 300;
    double learning_rate = 1e-2;
    double momentum = 0.9;
    std::size_t minibatch = 32;
    double clip_norm = 5.0;
    std::size_t eval_every = 10;
    std::uint64_t seed = 1;
    double init_gain = 1.0;
};

/// The seed is not part of the document; the pipeline derives it from the run seed.
inline void to_json(nlohmann::json& j, const TrainingConfig& c) {
    j = {{"optimizer", c.optimizer == Optimizer::Adam ? "adam" : "sgd"},
         {"episodes", c.episodes},
         {"learning_rate", c.learning_rate},
         {"momentum", c.momentum},
         {"minibatch", c.minibatch},
         {"clip_norm", c.clip_norm},
         {"eval_every", c.eval_every},
         {"init_gain", c.init_gain}};
}

inline void from_json(const nlohmann::json& j, TrainingConfig& c) {
    nlohmann::json known;
    to_json(known, c);
    for (const auto& [key, value] : j.items())
        if (!known.contains(key)) throw Error("unknown training parameter: " + key);
    known.update(j);
    const auto opt = known["optimizer"].get<std::string>();
    if (opt != "sgd" && opt != "adam") throw Error("optimizer must be \"sgd\" or \"adam\"");
    c.optimizer = opt == "adam" ? Optimizer::Adam : Optimizer::Sgd;
    c.episodes = known["episodes"].get<std::size_t>();
    c.learning_rate = known["learning_rate"].get<double>();
    c.momentum = known["momentum"].get<double>();
    c.minibatch = known["minibatch"].get<std::size_t>();
    c.clip_norm = known["clip_norm"].get<double>();
    c.eval_every = known["eval_every"].get<std::size_t>();
    c.init_gain = known["init_gain"].get<double>();
}

inline void to_json(nlohmann::json& j, const Architecture& a) {
    j = {{"hidden", a.hidden},
         {"horizon_past", a.horizon_past},
         {"horizon_future", a.horizon_future},
         {"residual", a.residual}};
}

inline void from_json(const nlohmann::json& j, Architecture& a) {
    nlohmann::json known;
    to_json(known, a);
    for (const auto& [key, value] : j.items())
        if (!known.contains(key)) throw Error("unknown architecture parameter: " + key);
    known.update(j);
    a.hidden = known["hidden"].get<std::size_t>();
    a.horizon_past = known["horizon_past"].get<std::size_t>();
    a.horizon_future = known["horizon_future"].get<std::size_t>();
    a.residual = known["residual"].get<bool>();
    if (a.hidden == 0 || a.horizon_past == 0 || a.horizon_future == 0)
        throw Error("architecture sizes must be positive");
}

struct CurvePoint {
    std::size_t episode = 0;
    double train = 0;
    double validation = 0;
    double generalization = 0;
};

using LearningCurve = std::vector<CurvePoint>;

class TrainingDiverged : public Error {
public:
    TrainingDiverged(const std::string& what, LearningCurve curve) : Error(what), curve_(std::move(curve)) {}
    [[nodiscard]] const LearningCurve& curve() const noexcept { return curve_; }

private:
    LearningCurve curve_;
};

struct TrainingSplits {
    std::vector<Window> train, validation, generalization;
};

struct TrainingResult {
    SurrogateModel model;
    LearningCurve curve;
};

/// SGD with momentum; the learning rate halves after each third of the run.
/// Returns the parameters with the best validation loss among evaluated points.
inline TrainingResult train(const TrainingSplits& data, const Architecture& arch, const TrainingConfig& cfg,
                            std::size_t workers = 1) {
    if (data.train.empty() || data.validation.empty() || data.generalization.empty())
        throw Error("training needs non-empty train, validation and generalization splits");
    if (!(cfg.learning_rate > 0) || cfg.minibatch == 0 || !(cfg.clip_norm > 0) || cfg.eval_every == 0)
        throw Error("invalid training config");

    TrainingResult res{init_model(arch, cfg.seed, cfg.init_gain), {}};
    SurrogateModel& m = res.model;
    const auto evaluate = [&](std::size_t ep) {
        CurvePoint pt{ep, mean_loss(m, data.train, workers), mean_loss(m, data.validation, workers),
                      mean_loss(m, data.generalization, workers)};
        if (!std::isfinite(pt.train) || !std::isfinite(pt.validation))
            throw TrainingDiverged("training diverged", res.curve);
        res.curve.push_back(pt);
        return pt;
    };

    SurrogateModel best = m;
    double best_val = evaluate(0).validation;
    std::vector<double> velocity(m.params.size(), 0.0), second(m.params.size(), 0.0);
    std::size_t adam_t = 0;
    constexpr double kAdamBeta1 = 0.9, kAdamBeta2 = 0.999;
    std::vector<std::size_t> order(data.train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<const Window*> batch;

    for (std::size_t ep = 1; ep <= cfg.episodes; ++ep) {
        const std::size_t third = std::min<std::size_t>(2, 3 * (ep - 1) / cfg.episodes);
        const double lr = cfg.learning_rate * std::pow(0.5, static_cast<double>(third));
        std::mt19937_64 rng(derive_seed(cfg.seed, 0x5407, ep));
        for (std::size_t i = order.size() - 1; i > 0; --i) {
            std::uniform_int_distribution<std::size_t> pick(0, i);
            std::swap(order[i], order[pick(rng)]);
        }
        for (std::size_t start = 0; start < order.size(); start += cfg.minibatch) {
            batch.clear();
            for (std::size_t k = start; k < std::min(order.size(), start + cfg.minibatch); ++k)
                batch.push_back(&data.train[order[k]]);
            LossGrad lg;
            try {
                lg = loss_and_grad(m, batch, workers);
            } catch (const Error&) {
                throw TrainingDiverged("training diverged", res.curve);
            }
            double norm = 0;
            for (double g : lg.grad) norm += g * g;
            norm = std::sqrt(norm);
            const double clip = norm > cfg.clip_norm ? cfg.clip_norm / norm : 1.0;
            if (cfg.optimizer == Optimizer::Sgd) {
                for (std::size_t k = 0; k < m.params.size(); ++k) {
                    velocity[k] = cfg.momentum * velocity[k] - lr * clip * lg.grad[k];
                    m.params[k] += velocity[k];
                }
            } else {
                ++adam_t;
                const double c1 = 1 - std::pow(kAdamBeta1, static_cast<double>(adam_t));
                const double c2 = 1 - std::pow(kAdamBeta2, static_cast<double>(adam_t));
                for (std::size_t k = 0; k < m.params.size(); ++k) {
                    const double g = clip * lg.grad[k];
                    velocity[k] = kAdamBeta1 * velocity[k] + (1 - kAdamBeta1) * g;
                    second[k] = kAdamBeta2 * second[k] + (1 - kAdamBeta2) * g * g;
                    m.params[k] -= lr * (velocity[k] / c1) / (std::sqrt(second[k] / c2) + 1e-8);
                }
            }
        }
        if (ep % cfg.eval_every == 0 || ep == cfg.episodes) {
            const auto pt = evaluate(ep);
            if (pt.validation < best_val) {
                best_val = pt.validation;
                best = m;
            }
        }
    }
    res.model = std::move(best);
    return res;
}

// ---- closed-loop rollout --------------------------------------------------

/// Normalized rolling history for closed-loop simulation.
struct RolloutHistory {
    std::vector<StepRow> rows;  // oldest first
    double setpoint = 0;        // normalized S
};

/// Maps the current history to a normalized action (T̂, M̂).
using RolloutPolicy = std::function<std::array<double, kActionDim>(const RolloutHistory&)>;

struct RolloutTrace {
    std::vector<std::array<double, kStateDim>> states;
    std::vector<std::array<double, kActionDim>> actions;
    std::vector<double> rewards;
};

/// Closed-loop rollout. Each step asks the policy for an action, which
/// extends the future branch of the current segment; the model predicts the
/// next state from the segment's H-row history plus all actions so far, the
/// way it was trained. The prediction is appended to the history the policy
/// sees. After F steps a new segment starts from the last H rows.
inline RolloutTrace rollout(const SurrogateModel& m, RolloutHistory history, const RolloutPolicy& policy,
                            std::size_t horizon) {
    if (horizon < 1) throw Error("rollout horizon must be >= 1");
    const std::size_t H = m.arch.horizon_past, F = m.arch.horizon_future;
    if (history.rows.size() < H) throw Error("rollout needs at least H history rows");
    RolloutTrace trace;
    trace.states.reserve(horizon);
    trace.actions.reserve(horizon);
    trace.rewards.reserve(horizon);
    std::vector<double> past(H * kStepDim), future;
    future.reserve(F * kActionDim);
    detail::Unroll u;
    for (std::size_t k = 0; k < horizon; ++k) {
        if (k % F == 0) {
            const std::size_t first = history.rows.size() - H;
            for (std::size_t r = 0; r < H; ++r)
                std::copy(history.rows[first + r].begin(), history.rows[first + r].end(), past.begin() + r * kStepDim);
            future.clear();
        }
        const auto a = policy(history);
        future.insert(future.end(), a.begin(), a.end());
        detail::run_forward(m, past, future, u);
        std::array<double, kStateDim> s{};
        std::copy(u.out.end() - kStateDim, u.out.end(), s.begin());
        StepRow row{};
        std::copy(s.begin(), s.end(), row.begin());
        std::copy(a.begin(), a.end(), row.begin() + kStateDim);
        history.rows.push_back(row);
        trace.states.push_back(s);
        trace.actions.push_back(a);
        trace.rewards.push_back(reward(history.setpoint, s[0]));
    }
    return trace;
}

// ---- checkpoint -----------------------------------------------------------

inline nlohmann::json checkpoint_json(const SurrogateModel& m, const NormalizationStats& stats) {
    return {{"architecture",
             {{"cell", "tanh-rnn"},
              {"layers", 2},
              {"hidden", m.arch.hidden},
              {"state_dim", kStateDim},
              {"action_dim", kActionDim},
              {"horizon_past", m.arch.horizon_past},
              {"horizon_future", m.arch.horizon_future},
              {"residual", m.arch.residual}}},
            {"parameters", m.params},
            {"normalization", stats}};
}

inline void save_checkpoint(const std::filesystem::path& path, const SurrogateModel& m,
                            const NormalizationStats& stats) {
    write_json(path, checkpoint_json(m, stats));
}

struct Checkpoint {
    SurrogateModel model;
    NormalizationStats stats;
};

/// Loads a checkpoint; if `expected` is given its stats must match exactly.
inline Checkpoint load_checkpoint(const std::filesystem::path& path,
                                  const NormalizationStats* expected = nullptr) {
    const auto j = read_json(path);
    Checkpoint ck;
    const auto& a = j.at("architecture");
    if (a.at("state_dim").get<std::size_t>() != kStateDim || a.at("action_dim").get<std::size_t>() != kActionDim ||
        a.at("layers").get<int>() != 2)
        throw Error("checkpoint architecture not supported: " + path.string());
    ck.model.arch.hidden = a.at("hidden").get<std::size_t>();
    ck.model.arch.horizon_past = a.at("horizon_past").get<std::size_t>();
    ck.model.arch.horizon_future = a.at("horizon_future").get<std::size_t>();
    ck.model.arch.residual = a.value("residual", true);
    ck.model.params = j.at("parameters").get<std::vector<double>>();
    if (ck.model.params.size() != ck.model.arch.parameter_count())
        throw Error("checkpoint parameter count mismatch: " + path.string());
    ck.stats = j.at("normalization").get<NormalizationStats>();
    if (expected && !(ck.stats == *expected))
        throw Error("checkpoint normalization stats do not match the dataset: " + path.string());
    return ck;
}

} // namespace gprl
