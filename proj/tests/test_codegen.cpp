#include <gtest/gtest.h>

#include <random>

#include "gprl/codegen.hpp"

using namespace gprl;

namespace {

constexpr const char* kFeedback = "(- (+ (var T -30) (* 2 (- (var S 0) (var T 0)))) 1)";

NormalizationStats stats() {
    NormalizationStats st;
    st.mean.fill(0);
    st.stddev.fill(1);
    for (Channel c : {Channel::S, Channel::T, Channel::That}) {
        st.mean[idx(c)] = 359.12;
        st.stddev[idx(c)] = 6.47;
    }
    return st;
}

ParseError parse_error(const char* text) {
    try {
        parse_policy(text);
    } catch (const ParseError& e) {
        return e;
    }
    ADD_FAILURE() << "no error for " << text;
    return ParseError(0, 0, "");
}

} // namespace

TEST(PolicyText, RoundTripsRandomTrees) {
    std::mt19937_64 rng(17);
    for (int i = 0; i < 1000; ++i) {
        const Expr e = random_tree(rng, 1, 6);
        const std::string text = print_policy(e);
        const Expr back = parse_policy(text);
        ASSERT_EQ(back, e) << text;
        EXPECT_EQ(print_policy(back), text);
    }
}

TEST(PolicyText, CanonicalSpacing) {
    EXPECT_EQ(print_policy(parse_policy("  (-   (+ (var T -30)\n (* 2 (- (var S 0) (var T 0))))   1 ) ")), kFeedback);
    EXPECT_EQ(print_policy(parse_policy("-0.25")), "-0.25");
}

TEST(PolicyText, ErrorsCarryPosition) {
    auto e = parse_error("(var X 0)");
    EXPECT_EQ(e.line(), 1u);
    EXPECT_EQ(e.column(), 6u);
    e = parse_error("(+ 1\n  (var T -15))");
    EXPECT_EQ(e.line(), 2u);
    EXPECT_EQ(e.column(), 10u);
    EXPECT_NE(std::string(e.what()).find("illegal lag -15"), std::string::npos);
    e = parse_error("(^ 1 2)");
    EXPECT_EQ(e.column(), 2u);
    parse_error("(+ 1 2) 3");
    parse_error("(+ 1");
    parse_error("(var T 10)");
    parse_error("abc");
    parse_error("");
}

TEST(StructuredText, TapsAreDistinctAndSorted) {
    const auto taps = collect_taps(parse_policy(kFeedback));
    ASSERT_EQ(taps.size(), 3u);
    EXPECT_EQ(taps[0], (Tap{Variable::S, 0}));
    EXPECT_EQ(taps[1], (Tap{Variable::T, 0}));
    EXPECT_EQ(taps[2], (Tap{Variable::T, 30}));
    EXPECT_EQ(taps_csv(taps), "variable,delay_s\nS,0\nT,0\nT,30\n");
    EXPECT_EQ(tap_input_name(taps[2]), "T_D30");
}

TEST(StructuredText, BlockLayout) {
    const auto art = emit_structured_text(parse_policy(kFeedback), stats());
    const std::string& s = art.source;
    EXPECT_EQ(s.rfind(std::string("// Setpoint policy: ") + kFeedback + "\n", 0), 0u);
    for (const char* line : {"FUNCTION_BLOCK GPRL_POLICY\n", "    T_D30 : REAL;  // DeadTime 30 s\n",
                             "    TEMP_MEAN := 359.12;\n", "    TEMP_STD := 6.47;\n",
                             "    n_T_D30 := (T_D30 - TEMP_MEAN) / TEMP_STD;\n",
                             "    y := ((n_T_D30 + (2.0 * (n_S - n_T))) - 1.0);\n",
                             "    That_OUT := y * TEMP_STD + TEMP_MEAN;\n", "END_FUNCTION_BLOCK\n"})
        EXPECT_NE(s.find(line), std::string::npos) << line;
    EXPECT_EQ(emit_structured_text(parse_policy(kFeedback), stats()).source, s);
}

TEST(StructuredText, DivisionIsGuarded) {
    const auto art = emit_structured_text(parse_policy("(/ (var Q -10) (- (var T 0) -0.5))"), stats());
    EXPECT_NE(art.source.find("    d1 := (n_T - (-0.5));\n"), std::string::npos);
    EXPECT_NE(art.source.find("IF ABS(d1) < 1.0E-6 THEN q1 := 1.0; ELSE q1 := n_Q_D10 / d1; END_IF;"),
              std::string::npos);
    EXPECT_NE(art.source.find("    y := q1;\n"), std::string::npos);
    EXPECT_NE(art.source.find("QR_MEAN := 0.0;"), std::string::npos);
}
