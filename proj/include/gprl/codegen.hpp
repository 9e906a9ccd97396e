#pragma once

/// @file codegen.hpp
/// Canonical policy text (prefix s-expressions) and structured-text emission.
///
/// Grammar of the canonical form:
///   expr := NUMBER | "(var" NAME LAG ")" | "(" OP expr expr ")"
///   OP   := + | - | * | /        LAG := 0 | -10 | -20 | -30 | -40 | -50

#include <algorithm>
#include <cctype>
#include <charconv>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "core.hpp"
#include "data.hpp"
#include "expr.hpp"

namespace gprl {

namespace detail {

inline void print_at(const Expr& e, std::size_t i, std::string& out) {
    const Node& n = e.nodes()[i];
    switch (n.op) {
    case Op::Const: out += format_double(n.value); return;
    case Op::Var:
        out += "(var ";
        out += kVariableNames[static_cast<std::size_t>(n.var)];
        out += n.lag == 0 ? " 0)" : " -" + std::to_string(kLags[n.lag]) + ")";
        return;
    default:
        out += '(';
        out += op_symbol(n.op);
        out += ' ';
        print_at(e, i + 1, out);
        out += ' ';
        print_at(e, e.subtree_end(i + 1), out);
        out += ')';
    }
}

} // namespace detail

inline std::string print_policy(const Expr& e) {
    std::string out;
    detail::print_at(e, 0, out);
    return out;
}

class ParseError : public Error {
public:
    ParseError(std::size_t line, std::size_t column, const std::string& msg)
        : Error("line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + msg),
          line_(line), column_(column) {}
    [[nodiscard]] std::size_t line() const noexcept { return line_; }
    [[nodiscard]] std::size_t column() const noexcept { return column_; }

private:
    std::size_t line_, column_;
};

namespace detail {

class PolicyParser {
public:
    explicit PolicyParser(std::string_view text) : text_(text) {}

    Expr parse() {
        std::vector<Node> nodes;
        parse_expr(nodes);
        skip_space();
        if (pos_ < text_.size()) fail("unexpected trailing input");
        return Expr(std::move(nodes));
    }

private:
    struct Token {
        std::string_view text;
        std::size_t line, column;
    };

    [[noreturn]] void fail(const std::string& msg) const { throw ParseError(line_, col_, msg); }
    [[noreturn]] static void fail_at(const Token& t, const std::string& msg) { throw ParseError(t.line, t.column, msg); }

    void advance() {
        if (text_[pos_] == '\n') {
            ++line_;
            col_ = 1;
        } else {
            ++col_;
        }
        ++pos_;
    }
    void skip_space() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) advance();
    }
    bool at(char c) {
        skip_space();
        return pos_ < text_.size() && text_[pos_] == c;
    }
    void expect(char c) {
        if (!at(c)) fail(std::string("expected '") + c + "'");
        advance();
    }
    Token word() {
        skip_space();
        Token t{{}, line_, col_};
        const std::size_t start = pos_;
        while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_])) && text_[pos_] != '(' &&
               text_[pos_] != ')')
            advance();
        if (pos_ == start) fail(pos_ < text_.size() ? "unexpected '" + std::string(1, text_[pos_]) + "'"
                                                     : "unexpected end of input");
        t.text = text_.substr(start, pos_ - start);
        return t;
    }
    static bool number(std::string_view s, double& v) {
        const char* b = s.data();
        const char* e = s.data() + s.size();
        const auto r = std::from_chars(b, e, v);
        return r.ec == std::errc{} && r.ptr == e && std::isfinite(v);
    }

    void parse_expr(std::vector<Node>& out) {
        if (!at('(')) {
            const Token t = word();
            double v = 0;
            if (!number(t.text, v)) fail_at(t, "expected number, got '" + std::string(t.text) + "'");
            out.push_back(Node{Op::Const, Variable::S, 0, v});
            return;
        }
        expect('(');
        const Token head = word();
        if (head.text == "var") {
            const Token name = word();
            const auto it = std::find(kVariableNames.begin(), kVariableNames.end(), name.text);
            if (it == kVariableNames.end()) fail_at(name, "unknown variable " + std::string(name.text));
            const Token lag = word();
            int seconds = 1;
            const auto r = std::from_chars(lag.text.data(), lag.text.data() + lag.text.size(), seconds);
            if (r.ec != std::errc{} || r.ptr != lag.text.data() + lag.text.size() || seconds > 0 || seconds < -50 ||
                seconds % 10 != 0)
                fail_at(lag, "illegal lag " + std::string(lag.text));
            out.push_back(Node{Op::Var, static_cast<Variable>(it - kVariableNames.begin()),
                               static_cast<std::uint8_t>(lag_index(-seconds)), 0});
            expect(')');
            return;
        }
        Op op;
        if (head.text == "+") op = Op::Add;
        else if (head.text == "-") op = Op::Sub;
        else if (head.text == "*") op = Op::Mul;
        else if (head.text == "/") op = Op::Div;
        else fail_at(head, "unknown operator '" + std::string(head.text) + "'");
        out.push_back(Node{op, Variable::S, 0, 0});
        parse_expr(out);
        parse_expr(out);
        expect(')');
    }

    std::string_view text_;
    std::size_t pos_ = 0, line_ = 1, col_ = 1;
};

} // namespace detail

/// Parses canonical policy text; errors carry line and column.
inline Expr parse_policy(std::string_view text) { return detail::PolicyParser(text).parse(); }

// ---- structured text ------------------------------------------------------

struct Tap {
    Variable variable;
    int delay_s;
    auto operator<=>(const Tap&) const = default;
};

struct StructuredTextArtifact {
    std::string source;
    std::vector<Tap> taps;  // sorted by variable, then delay
};

/// Distinct (variable, delay) pairs referenced by the expression.
inline std::vector<Tap> collect_taps(const Expr& e) {
    std::set<Tap> taps;
    for (const Node& n : e.nodes())
        if (n.op == Op::Var) taps.insert(Tap{n.var, kLags[n.lag]});
    return {taps.begin(), taps.end()};
}

inline std::string tap_input_name(const Tap& t) {
    std::string name(kVariableNames[static_cast<std::size_t>(t.variable)]);
    if (t.delay_s != 0) name += "_D" + std::to_string(t.delay_s);
    return name;
}

namespace detail {

inline std::string st_real(double v) {
    std::string s = format_double(v);
    const auto e = s.find_first_of("eE");
    if (s.find('.') == std::string::npos) s.insert(e == std::string::npos ? s.size() : e, ".0");
    for (char& c : s)
        if (c == 'e') c = 'E';
    return v < 0 || std::signbit(v) ? "(" + s + ")" : s;
}

inline std::string_view stats_prefix(Channel c) {
    if (is_temperature(c)) return "TEMP";
    switch (c) {
    case Channel::Mhat: return "MHAT";
    case Channel::M: return "MONO";
    case Channel::P: return "POLY";
    case Channel::UA: return "UA";
    case Channel::Q: return "QR";
    default: return "TEMP";
    }
}

/// Emits the expression body; divisions become guarded temporaries in `pre`.
class StEmitter {
public:
    explicit StEmitter(const Expr& e) : e_(e) {}

    std::string emit(std::size_t i, std::vector<std::string>& pre) {
        const Node& n = e_.nodes()[i];
        if (n.op == Op::Const) return st_real(n.value);
        if (n.op == Op::Var) return "n_" + tap_input_name(Tap{n.var, kLags[n.lag]});
        const std::string lhs = emit(i + 1, pre);
        const std::string rhs = emit(e_.subtree_end(i + 1), pre);
        if (n.op != Op::Div) return "(" + lhs + " " + op_symbol(n.op) + " " + rhs + ")";
        const std::size_t k = ++divisions_;
        const std::string d = "d" + std::to_string(k), q = "q" + std::to_string(k);
        pre.push_back(d + " := " + rhs + ";");
        pre.push_back("IF ABS(" + d + ") < 1.0E-6 THEN " + q + " := 1.0; ELSE " + q + " := " + lhs + " / " + d +
                      "; END_IF;");
        return q;
    }
    [[nodiscard]] std::size_t divisions() const noexcept { return divisions_; }

private:
    const Expr& e_;
    std::size_t divisions_ = 0;
};

} // namespace detail

/// SCL-flavoured function block: one input per tap, normalization with the
/// embedded statistics, the policy body, then denormalization and clipping
/// of the setpoint to [352, 365] K.
inline StructuredTextArtifact emit_structured_text(const Expr& e, const NormalizationStats& stats,
                                                   std::string_view block_name = "GPRL_POLICY") {
    StructuredTextArtifact art;
    art.taps = collect_taps(e);

    std::set<std::string_view> prefixes{"TEMP"};
    std::vector<std::pair<std::string_view, Channel>> consts{{"TEMP", Channel::T}};
    for (const auto& t : art.taps) {
        const Channel c = kVariableChannels[static_cast<std::size_t>(t.variable)];
        if (prefixes.insert(detail::stats_prefix(c)).second) consts.emplace_back(detail::stats_prefix(c), c);
    }

    std::vector<std::string> pre;
    detail::StEmitter em(e);
    const std::string body = em.emit(0, pre);

    std::ostringstream os;
    os << "// Setpoint policy: " << print_policy(e) << "\n";
    os << "FUNCTION_BLOCK " << block_name << "\n";
    os << "VAR_INPUT\n";
    for (const auto& t : art.taps) {
        os << "    " << tap_input_name(t) << " : REAL;";
        if (t.delay_s != 0) os << "  // DeadTime " << t.delay_s << " s";
        os << "\n";
    }
    os << "END_VAR\nVAR_OUTPUT\n    That_OUT : REAL;  // reactor temperature setpoint, K\nEND_VAR\n";
    os << "VAR_TEMP\n";
    for (const auto& t : art.taps) os << "    n_" << tap_input_name(t) << " : REAL;\n";
    for (std::size_t k = 1; k <= em.divisions(); ++k) os << "    d" << k << " : REAL;\n    q" << k << " : REAL;\n";
    os << "    y : REAL;\nEND_VAR\n";
    os << "CONST\n";
    for (const auto& [prefix, c] : consts) {
        os << "    " << prefix << "_MEAN := " << detail::st_real(stats.mean[idx(c)]) << ";\n";
        os << "    " << prefix << "_STD := " << detail::st_real(stats.stddev[idx(c)]) << ";\n";
    }
    os << "    THAT_MIN := " << detail::st_real(kSetpointMin) << ";\n";
    os << "    THAT_MAX := " << detail::st_real(kSetpointMax) << ";\n";
    os << "END_CONST\nBEGIN\n";
    for (const auto& t : art.taps) {
        const auto prefix = detail::stats_prefix(kVariableChannels[static_cast<std::size_t>(t.variable)]);
        const auto name = tap_input_name(t);
        os << "    n_" << name << " := (" << name << " - " << prefix << "_MEAN) / " << prefix << "_STD;\n";
    }
    for (const auto& line : pre) os << "    " << line << "\n";
    os << "    y := " << body << ";\n";
    os << "    That_OUT := y * TEMP_STD + TEMP_MEAN;\n";
    os << "    IF That_OUT > THAT_MAX THEN That_OUT := THAT_MAX; END_IF;\n";
    os << "    IF That_OUT < THAT_MIN THEN That_OUT := THAT_MIN; END_IF;\n";
    os << "END_FUNCTION_BLOCK\n";
    art.source = os.str();
    return art;
}

inline std::string taps_csv(std::span<const Tap> taps) {
    std::string out = "variable,delay_s\n";
    for (const auto& t : taps)
        out += std::string(kVariableNames[static_cast<std::size_t>(t.variable)]) + "," + std::to_string(t.delay_s) + "\n";
    return out;
}

} // namespace gprl
