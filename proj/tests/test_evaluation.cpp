#include <gtest/gtest.h>

#include "gprl/codegen.hpp"
#include "gprl/evaluation.hpp"

using namespace gprl;

namespace {

NormalizationStats stats() {
    NormalizationStats st;
    st.mean.fill(0);
    st.stddev.fill(1);
    for (Channel c : {Channel::S, Channel::T, Channel::That}) {
        st.mean[idx(c)] = 358;
        st.stddev[idx(c)] = 4;
    }
    return st;
}

std::vector<TrajectoryRow> rows_with(std::initializer_list<double> temps, std::size_t feed_from) {
    std::vector<TrajectoryRow> rows;
    for (double t : temps) {
        TrajectoryRow r;
        r.time = static_cast<double>(rows.size());
        r.T = t;
        r.feeding = rows.size() >= feed_from;
        rows.push_back(r);
    }
    return rows;
}

} // namespace

TEST(Deviation, CountsFromFeedStart) {
    const auto d = control_deviation(rows_with({350, 352, 354, 356}, 2), 354);
    EXPECT_EQ(d.integral, 4.0);
    EXPECT_EQ(d.duration, 2.0);
    EXPECT_DOUBLE_EQ(d.rmse, std::sqrt(2.0));
    EXPECT_TRUE(d.from_feed_start);
}

TEST(Deviation, WholeBatchWithoutFeed) {
    const auto d = control_deviation(rows_with({350, 352, 354, 356}, 99), 354);
    EXPECT_EQ(d.integral, 24.0);
    EXPECT_EQ(d.duration, 4.0);
    EXPECT_FALSE(d.from_feed_start);
    EXPECT_EQ(control_deviation(rows_with({350, 352}, 0), 351, 0.5).integral, 1.0);
    EXPECT_THROW(control_deviation(std::vector<TrajectoryRow>{}, 354), Error);
}

TEST(PolicyController, HoldsActionForTheCycle) {
    // That = S + 0.01 (T - 358) stays inside the clip range while T moves
    const PolicyBinding b{parse_policy("(+ (var S 0) (* 0.01 (var T 0)))"), stats()};
    const ReactorParams p;
    const auto t = run_batch(make_recipe(360, 4, p), policy_controller(b, 10.0, p.dt), p);
    ASSERT_GT(t.rows.size(), 40u);
    for (std::size_t block = 0; block < 3; ++block)
        for (std::size_t i = 10 * block + 2; i <= 10 * block + 10; ++i)
            EXPECT_EQ(t.rows[i].That, t.rows[10 * block + 1].That) << i;
    EXPECT_NE(t.rows[11].That, t.rows[21].That);
}

TEST(EvaluatePair, SetpointPolicyMatchesDefault) {
    const PolicyBinding b{Expr::variable(Variable::S), stats()};
    const auto report = evaluate_pair(b, ReactorParams{}, default_eval_setpoints(), 5);
    ASSERT_EQ(report.results.size(), 4u);
    for (const auto& r : report.results) {
        ASSERT_TRUE(r.ok) << r.error;
        EXPECT_NEAR(r.reduction(), 0.0, 1e-9);
        EXPECT_TRUE(r.baseline_dev.from_feed_start);
    }
    EXPECT_NEAR(report.mean_reduction(), 0.0, 1e-9);
    EXPECT_EQ(report.improved_count(), 0u);
}

TEST(EvaluatePair, DeterministicAcrossWorkers) {
    const PolicyBinding b{parse_policy("(+ (var S 0) (* 0.5 (- (var S 0) (var T -20))))"), stats()};
    const auto a = evaluate_pair(b, ReactorParams{}, default_eval_setpoints(), 9, 1);
    const auto c = evaluate_pair(b, ReactorParams{}, default_eval_setpoints(), 9, 4);
    EXPECT_EQ(report_csv(a), report_csv(c));
    EXPECT_NE(report_csv(a), report_csv(evaluate_pair(b, ReactorParams{}, default_eval_setpoints(), 10)));
}

TEST(EvaluatePair, StarvedPolicyIsPenalisedAndNoted) {
    const PolicyBinding b{Expr::constant(-10), stats()};
    const std::vector<double> sp{365};
    const auto report = evaluate_pair(b, ReactorParams{}, sp, 1);
    const auto& r = report.results.front();
    EXPECT_FALSE(r.candidate_dev.from_feed_start);
    EXPECT_LT(r.reduction(), -100.0);
    EXPECT_NE(summary_text(report, "-10").find("at 365 K the policy never reached the feed condition"),
              std::string::npos);
}

TEST(EvalReport, MeanOverSubsetSkipsFailures) {
    EvalReport rep;
    rep.results.resize(3);
    const double base[] = {100, 200, 100};
    const double cand[] = {50, 300, 0};
    for (std::size_t i = 0; i < 3; ++i) {
        rep.results[i].setpoint = 352.0 + static_cast<double>(i);
        rep.results[i].ok = i != 2;
        rep.results[i].baseline_dev.integral = base[i];
        rep.results[i].candidate_dev.integral = cand[i];
    }
    EXPECT_DOUBLE_EQ(rep.mean_reduction(), 0.0);
    const std::vector<double> first{352};
    EXPECT_DOUBLE_EQ(rep.mean_reduction(first), 50.0);
    EXPECT_EQ(rep.improved_count(), 1u);
    rep.results[2].error = "boom";
    const std::string csv = report_csv(rep);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), kReportHeader);
    EXPECT_NE(csv.find("\n354,failed,,,,,,,\n"), std::string::npos);
}
