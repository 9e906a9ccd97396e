#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "gprl/surrogate.hpp"

using namespace gprl;

namespace {

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

// Straightforward re-statement of the network, indexing blocks by (row, col).
std::vector<double> reference_forward(const SurrogateModel& m, const std::vector<double>& hist,
                                      const std::vector<double>& fut) {
    const std::size_t h = m.arch.hidden, H = m.arch.horizon_past, F = fut.size() / kActionDim;
    const ParamLayout L(m.arch);
    const auto at = [&](std::size_t off, std::size_t rows, std::size_t i, std::size_t j) {
        return m.params[off + j * rows + i];
    };
    std::vector<double> h1(h, 0.0), h2(h, 0.0), out;
    for (std::size_t t = 0; t < H + F; ++t) {
        std::vector<double> n1(h), n2(h);
        for (std::size_t i = 0; i < h; ++i) {
            double a = m.params[L.b1 + i];
            if (t < H)
                for (std::size_t j = 0; j < kStepDim; ++j) a += at(L.wp, h, i, j) * hist[t * kStepDim + j];
            else
                for (std::size_t j = 0; j < kActionDim; ++j) a += at(L.wf, h, i, j) * fut[(t - H) * kActionDim + j];
            for (std::size_t j = 0; j < h; ++j) a += at(L.u1, h, i, j) * h1[j];
            n1[i] = std::tanh(a);
        }
        for (std::size_t i = 0; i < h; ++i) {
            double a = m.params[L.b2 + i];
            for (std::size_t j = 0; j < h; ++j) a += at(L.w2, h, i, j) * n1[j] + at(L.u2, h, i, j) * h2[j];
            n2[i] = std::tanh(a);
        }
        h1 = n1;
        h2 = n2;
        if (t >= H)
            for (std::size_t o = 0; o < kStateDim; ++o) {
                double y = m.params[L.c + o] + (m.arch.residual ? hist[(H - 1) * kStepDim + o] : 0.0);
                for (std::size_t j = 0; j < h; ++j) y += at(L.v, kStateDim, o, j) * h2[j];
                out.push_back(y);
            }
    }
    return out;
}

double batch_loss(const SurrogateModel& m, const std::vector<Window>& ws) {
    double l = 0;
    for (const auto& w : ws) {
        const auto y = forward(m, w.history, w.future_actions);
        for (std::size_t k = 0; k < y.size(); ++k) l += (y[k] - w.future_states[k]) * (y[k] - w.future_states[k]);
    }
    return l / static_cast<double>(ws.size() * m.arch.horizon_future * kStateDim);
}

} // namespace

TEST(Architecture, ParameterCount) {
    Architecture a;
    // 20x7 + 20x2 + 20x20 + 20 + 20x20 + 20x20 + 20 + 5x20 + 5
    EXPECT_EQ(a.parameter_count(), 140u + 40 + 400 + 20 + 400 + 400 + 20 + 100 + 5);
    EXPECT_EQ(ParamLayout(a).total, a.parameter_count());
}

TEST(Init, BoundsAndZeroBiases) {
    Architecture a;
    const auto m = init_model(a, 3);
    const ParamLayout L(a);
    for (std::size_t i = 0; i < a.hidden; ++i) {
        EXPECT_EQ(m.params[L.b1 + i], 0.0);
        EXPECT_EQ(m.params[L.b2 + i], 0.0);
    }
    for (std::size_t i = L.u1; i < L.b1; ++i) EXPECT_LE(std::abs(m.params[i]), 1 / std::sqrt(20.0));
    for (std::size_t i = L.wp; i < L.wf; ++i) EXPECT_LE(std::abs(m.params[i]), 1 / std::sqrt(7.0));
    EXPECT_EQ(init_model(a, 3).params, m.params);
    EXPECT_NE(init_model(a, 4).params, m.params);
}

TEST(Forward, MatchesManualUnroll) {
    std::mt19937_64 rng(5);
    for (bool residual : {false, true}) {
        Architecture a{4, 3, 3, residual};
        auto m = init_model(a, 9, 1.5);
        for (std::size_t i = 0; i < a.hidden; ++i) m.params[ParamLayout(a).b1 + i] = 0.1 * static_cast<double>(i);
        const Window w = random_window(rng, 3, 3);
        const auto got = forward(m, w.history, w.future_actions);
        const auto want = reference_forward(m, w.history, w.future_actions);
        ASSERT_EQ(got.size(), want.size());
        for (std::size_t k = 0; k < got.size(); ++k) EXPECT_NEAR(got[k], want[k], 1e-12);
    }
}

TEST(Forward, ShorterFutureGivesPrefix) {
    std::mt19937_64 rng(6);
    const auto m = init_model(Architecture{5, 3, 4}, 2);
    const Window w = random_window(rng, 3, 4);
    const auto full = forward(m, w.history, w.future_actions);
    const std::vector<double> two(w.future_actions.begin(), w.future_actions.begin() + 2 * kActionDim);
    const auto part = forward(m, w.history, two);
    ASSERT_EQ(part.size(), 2 * kStateDim);
    for (std::size_t k = 0; k < part.size(); ++k) EXPECT_EQ(part[k], full[k]);
}

TEST(Forward, ShapeErrors) {
    const auto m = init_model(Architecture{3, 3, 3}, 1);
    std::vector<double> hist(3 * kStepDim), fut(3 * kActionDim);
    EXPECT_THROW(forward(m, std::vector<double>(2 * kStepDim), fut), Error);
    EXPECT_THROW(forward(m, hist, std::vector<double>(4 * kActionDim)), Error);
    EXPECT_THROW(forward(m, hist, std::vector<double>{}), Error);
}

TEST(Gradient, MatchesCentralDifferences) {
    std::mt19937_64 rng(17);
    std::size_t checked = 0;
    for (int trial = 0; trial < 6; ++trial) {
        Architecture a{2, 3, 3, trial % 2 == 0};
        SurrogateModel m = init_model(a, 100 + static_cast<std::uint64_t>(trial), 1.0);
        std::normal_distribution<double> n(0.0, 0.3);
        for (auto& p : m.params) p += n(rng);
        std::vector<Window> ws{random_window(rng, 3, 3), random_window(rng, 3, 3)};
        std::vector<const Window*> batch{&ws[0], &ws[1]};
        const auto lg = loss_and_grad(m, batch);
        EXPECT_NEAR(lg.loss, batch_loss(m, ws), 1e-12);
        for (std::size_t k = 0; k < m.params.size(); ++k) {
            const double h = 1e-5, saved = m.params[k];
            m.params[k] = saved + h;
            const double up = batch_loss(m, ws);
            m.params[k] = saved - h;
            const double down = batch_loss(m, ws);
            m.params[k] = saved;
            const double fd = (up - down) / (2 * h);
            const double scale = std::max({std::abs(fd), std::abs(lg.grad[k]), 1e-6});
            EXPECT_LE(std::abs(fd - lg.grad[k]) / scale, 1e-4) << "trial " << trial << " coord " << k;
            ++checked;
        }
    }
    EXPECT_GE(checked, 200u);
}

TEST(Gradient, IndependentOfWorkerCount) {
    std::mt19937_64 rng(8);
    const auto m = init_model(Architecture{6, 4, 4}, 4);
    std::vector<Window> ws;
    for (int i = 0; i < 9; ++i) ws.push_back(random_window(rng, 4, 4));
    std::vector<const Window*> batch;
    for (const auto& w : ws) batch.push_back(&w);
    const auto one = loss_and_grad(m, batch, 1);
    const auto four = loss_and_grad(m, batch, 4);
    EXPECT_EQ(one.loss, four.loss);
    EXPECT_EQ(one.grad, four.grad);
}

TEST(Loss, EmptyBatchAndMeanLoss) {
    const auto m = init_model(Architecture{3, 3, 3}, 1);
    EXPECT_THROW(loss_and_grad(m, std::span<const Window* const>{}), Error);
    std::mt19937_64 rng(3);
    std::vector<Window> ws{random_window(rng, 3, 3), random_window(rng, 3, 3)};
    EXPECT_NEAR(mean_loss(m, ws), batch_loss(m, ws), 1e-12);
    EXPECT_EQ(mean_loss(m, std::vector<Window>{}), 0.0);
}

TEST(StepwiseError, PerStepMeanAbsoluteError) {
    std::mt19937_64 rng(4);
    const auto m = init_model(Architecture{3, 3, 3}, 1);
    std::vector<Window> ws{random_window(rng, 3, 3), random_window(rng, 3, 3)};
    const auto err = stepwise_abs_error(m, ws, 0);
    ASSERT_EQ(err.size(), 3u);
    double want = 0;
    for (const auto& w : ws) {
        const auto y = forward(m, w.history, w.future_actions);
        want += std::abs(y[2 * kStateDim] - w.future_states[2 * kStateDim]);
    }
    EXPECT_NEAR(err[2], want / 2, 1e-12);
}

namespace {

// Synthetic dynamics: each state channel decays toward the first action.
TrainingSplits synthetic_splits(std::size_t H, std::size_t F) {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(-1, 1);
    const auto make = [&](std::size_t n) {
        std::vector<Window> out;
        for (std::size_t i = 0; i < n; ++i) {
            Window w;
            w.horizon_past = H;
            w.horizon_future = F;
            std::array<double, kStateDim> s{};
            for (auto& x : s) x = u(rng);
            const double a = u(rng);
            for (std::size_t t = 0; t < H + F; ++t) {
                for (auto& x : s) x = 0.8 * x + 0.2 * a;
                if (t < H) {
                    w.history.insert(w.history.end(), s.begin(), s.end());
                    w.history.push_back(a);
                    w.history.push_back(0.0);
                } else {
                    w.future_actions.push_back(a);
                    w.future_actions.push_back(0.0);
                    w.future_states.insert(w.future_states.end(), s.begin(), s.end());
                }
            }
            out.push_back(std::move(w));
        }
        return out;
    };
    return {make(96), make(32), make(16)};
}

} // namespace

TEST(Train, ReducesValidationLossAndKeepsBest) {
    const auto data = synthetic_splits(3, 3);
    TrainingConfig cfg;
    cfg.episodes = 100;
    cfg.learning_rate = 0.1;
    cfg.eval_every = 20;
    const auto res = train(data, Architecture{8, 3, 3}, cfg);
    ASSERT_EQ(res.curve.size(), 6u);
    EXPECT_LT(res.curve.back().validation, 0.5 * res.curve.front().validation);
    double best = res.curve.front().validation;
    for (const auto& p : res.curve) best = std::min(best, p.validation);
    EXPECT_DOUBLE_EQ(mean_loss(res.model, data.validation), best);
}

TEST(Train, DeterministicAcrossWorkers) {
    const auto data = synthetic_splits(3, 3);
    TrainingConfig cfg;
    cfg.episodes = 4;
    cfg.eval_every = 2;
    const auto a = train(data, Architecture{5, 3, 3}, cfg, 1);
    const auto b = train(data, Architecture{5, 3, 3}, cfg, 3);
    EXPECT_EQ(a.model.params, b.model.params);
    cfg.optimizer = Optimizer::Adam;
    cfg.learning_rate = 1e-3;
    EXPECT_EQ(train(data, Architecture{5, 3, 3}, cfg, 1).model.params,
              train(data, Architecture{5, 3, 3}, cfg, 2).model.params);
}

TEST(Train, DivergenceIsReported) {
    const auto data = synthetic_splits(3, 3);
    TrainingConfig cfg;
    cfg.episodes = 3;
    cfg.learning_rate = 1e300;
    cfg.clip_norm = 1e300;
    cfg.momentum = 0;
    EXPECT_THROW(train(data, Architecture{4, 3, 3}, cfg), TrainingDiverged);
}

TEST(Train, ConfigJsonIsStrict) {
    TrainingConfig c;
    from_json(nlohmann::json{{"episodes", 7}, {"optimizer", "adam"}}, c);
    EXPECT_EQ(c.episodes, 7u);
    EXPECT_EQ(c.optimizer, Optimizer::Adam);
    EXPECT_THROW(from_json(nlohmann::json{{"epochs", 7}}, c), Error);
    EXPECT_THROW(from_json(nlohmann::json{{"optimizer", "rmsprop"}}, c), Error);
    Architecture a;
    EXPECT_THROW(from_json(nlohmann::json{{"hidden", 0}}, a), Error);
}

TEST(Rollout, SegmentsEqualManualComposition) {
    // each segment keeps its H-row history fixed and grows the action branch;
    // after F steps a fresh segment starts from the newest H rows
    std::mt19937_64 rng(12);
    const auto m = init_model(Architecture{4, 3, 3}, 7, 1.2);
    const Window w = random_window(rng, 3, 3);
    RolloutHistory start;
    start.setpoint = 0.4;
    for (std::size_t r = 0; r < 3; ++r) {
        StepRow row{};
        std::copy_n(w.history.begin() + static_cast<std::ptrdiff_t>(r * kStepDim), kStepDim, row.begin());
        start.rows.push_back(row);
    }
    const auto policy = [](const RolloutHistory& h) {
        return std::array<double, kActionDim>{h.setpoint - 0.5 * h.rows.back()[0], 0.2};
    };
    const auto trace = rollout(m, start, policy, 5);
    ASSERT_EQ(trace.rewards.size(), 5u);

    std::vector<StepRow> rows = start.rows;
    std::vector<double> past, future;
    for (std::size_t k = 0; k < 5; ++k) {
        if (k % 3 == 0) {
            past.clear();
            future.clear();
            for (std::size_t r = rows.size() - 3; r < rows.size(); ++r) past.insert(past.end(), rows[r].begin(), rows[r].end());
        }
        const std::array<double, kActionDim> a{0.4 - 0.5 * rows.back()[0], 0.2};
        future.insert(future.end(), a.begin(), a.end());
        const auto y = forward(m, past, future);
        ASSERT_EQ(y.size(), (k % 3 + 1) * kStateDim);
        StepRow next{};
        std::copy(y.end() - kStateDim, y.end(), next.begin());
        next[5] = a[0];
        next[6] = a[1];
        rows.push_back(next);
        EXPECT_EQ(trace.states[k][0], next[0]) << k;
        EXPECT_EQ(trace.rewards[k], -(0.4 - next[0]) * (0.4 - next[0])) << k;
    }
}

TEST(Rollout, HorizonOneIsOneCall) {
    const auto m = init_model(Architecture{3, 2, 2}, 7);
    RolloutHistory start;
    start.rows.resize(2);
    const auto trace = rollout(m, start, [](const RolloutHistory&) { return std::array<double, kActionDim>{}; }, 1);
    EXPECT_EQ(trace.states.size(), 1u);
    EXPECT_THROW(rollout(m, start, [](const RolloutHistory&) { return std::array<double, kActionDim>{}; }, 0), Error);
    start.rows.resize(1);
    EXPECT_THROW(rollout(m, start, [](const RolloutHistory&) { return std::array<double, kActionDim>{}; }, 1), Error);
}

TEST(Checkpoint, RoundTripAndStatsMismatch) {
    const auto m = init_model(Architecture{3, 4, 5, false}, 11);
    NormalizationStats st;
    st.mean.fill(1.5);
    st.stddev.fill(0.25);
    const auto path = std::filesystem::temp_directory_path() / "gprl_test_model.json";
    save_checkpoint(path, m, st);
    const auto ck = load_checkpoint(path, &st);
    EXPECT_EQ(ck.model.arch, m.arch);
    EXPECT_EQ(ck.model.params, m.params);
    EXPECT_EQ(ck.stats, st);
    NormalizationStats other = st;
    other.mean[0] = 2;
    EXPECT_THROW(load_checkpoint(path, &other), Error);
    std::filesystem::remove(path);
}
