#pragma once

/// @file expr.hpp
/// Policy expression trees over {+, -, *, /}, lagged process variables and
/// float constants. Trees are stored in prefix order, so a subtree is a
/// contiguous node range and the node count is the complexity.

#include <algorithm>
#include <array>
#include <bitset>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <cstring>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "core.hpp"

namespace gprl {

enum class Op : std::uint8_t { Add, Sub, Mul, Div, Var, Const };

enum class Variable : std::uint8_t { S, T, M, P, UA, Q, That, Mhat };
inline constexpr std::size_t kVariables = 8;
inline constexpr std::array<std::string_view, kVariables> kVariableNames{"S", "T", "M", "P", "UA", "Q", "That", "Mhat"};
inline constexpr std::array<Channel, kVariables> kVariableChannels{
    Channel::S, Channel::T, Channel::M, Channel::P, Channel::UA, Channel::Q, Channel::That, Channel::Mhat};

/// Dead-time taps in seconds.
inline constexpr std::array<int, 6> kLags{0, 10, 20, 30, 40, 50};
inline constexpr std::size_t kLagCount = kLags.size();

inline constexpr double kProtectedDivisionThreshold = 1e-6;

constexpr bool is_binary(Op op) noexcept { return op <= Op::Div; }

constexpr char op_symbol(Op op) noexcept {
    switch (op) {
    case Op::Add: return '+';
    case Op::Sub: return '-';
    case Op::Mul: return '*';
    case Op::Div: return '/';
    default: return '?';
    }
}

inline std::size_t lag_index(int lag_seconds) {
    for (std::size_t i = 0; i < kLagCount; ++i)
        if (kLags[i] == lag_seconds) return i;
    throw Error("illegal lag " + std::to_string(lag_seconds));
}

inline double apply_op(Op op, double a, double b) noexcept {
    switch (op) {
    case Op::Add: return a + b;
    case Op::Sub: return a - b;
    case Op::Mul: return a * b;
    case Op::Div: return std::abs(b) < kProtectedDivisionThreshold ? 1.0 : a / b;
    default: return 0.0;
    }
}

struct Node {
    Op op = Op::Const;
    Variable var = Variable::S;
    std::uint8_t lag = 0;  // index into kLags
    double value = 0;

    bool operator==(const Node& o) const noexcept {
        if (op != o.op) return false;
        if (op == Op::Var) return var == o.var && lag == o.lag;
        if (op == Op::Const) return value == o.value && std::signbit(value) == std::signbit(o.value);
        return true;
    }
};

class Expr {
public:
    Expr() : nodes_{Node{}} {}
    explicit Expr(std::vector<Node> nodes) : nodes_(std::move(nodes)) {}

    static Expr constant(double v) { return Expr({Node{Op::Const, Variable::S, 0, v}}); }
    static Expr variable(Variable v, int lag_seconds = 0) {
        return Expr({Node{Op::Var, v, static_cast<std::uint8_t>(lag_index(lag_seconds)), 0}});
    }
    static Expr binary(Op op, const Expr& lhs, const Expr& rhs) {
        std::vector<Node> n;
        n.reserve(1 + lhs.size() + rhs.size());
        n.push_back(Node{op, Variable::S, 0, 0});
        n.insert(n.end(), lhs.nodes_.begin(), lhs.nodes_.end());
        n.insert(n.end(), rhs.nodes_.begin(), rhs.nodes_.end());
        return Expr(std::move(n));
    }

    [[nodiscard]] std::span<const Node> nodes() const noexcept { return nodes_; }
    [[nodiscard]] std::vector<Node>& mutable_nodes() noexcept { return nodes_; }
    [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }
    [[nodiscard]] const Node& root() const noexcept { return nodes_.front(); }

    /// One past the last node of the subtree rooted at `i`.
    [[nodiscard]] std::size_t subtree_end(std::size_t i) const noexcept {
        std::size_t need = 1;
        while (need > 0) {
            need += is_binary(nodes_[i].op) ? 2 : 0;
            --need;
            ++i;
        }
        return i;
    }

    [[nodiscard]] Expr subtree(std::size_t i) const {
        return Expr(std::vector<Node>(nodes_.begin() + static_cast<std::ptrdiff_t>(i),
                                      nodes_.begin() + static_cast<std::ptrdiff_t>(subtree_end(i))));
    }

    /// Root-only tree has depth 1.
    [[nodiscard]] std::size_t depth() const {
        std::size_t best = 0;
        std::vector<std::size_t> open;  // remaining children per open binary node
        for (const Node& n : nodes_) {
            const std::size_t d = open.size() + 1;
            best = std::max(best, d);
            if (is_binary(n.op)) {
                open.push_back(2);
            } else {
                while (!open.empty() && --open.back() == 0) open.pop_back();
            }
        }
        return best;
    }

    /// Structural validity: arity closes exactly, finite constants, legal lags.
    [[nodiscard]] bool valid() const noexcept {
        if (nodes_.empty()) return false;
        std::size_t need = 1;
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            if (need == 0) return false;
            const Node& n = nodes_[i];
            if (n.op == Op::Const && !std::isfinite(n.value)) return false;
            if (n.op == Op::Var && (n.lag >= kLagCount || static_cast<std::size_t>(n.var) >= kVariables)) return false;
            need += is_binary(n.op) ? 2 : 0;
            --need;
        }
        return need == 0;
    }

    bool operator==(const Expr& o) const noexcept { return nodes_ == o.nodes_; }

private:
    std::vector<Node> nodes_;
};

struct ExprHash {
    std::size_t operator()(const Expr& e) const noexcept {
        std::uint64_t h = 0x84222325cbf29ce4ULL;
        for (const Node& n : e.nodes()) {
            std::uint64_t k = static_cast<std::uint64_t>(n.op);
            if (n.op == Op::Var) k |= (static_cast<std::uint64_t>(n.var) << 8) | (static_cast<std::uint64_t>(n.lag) << 16);
            if (n.op == Op::Const) {
                std::uint64_t bits;
                std::memcpy(&bits, &n.value, sizeof bits);
                k ^= bits;
            }
            h = mix_seed(h ^ k);
        }
        return static_cast<std::size_t>(h);
    }
};

inline std::size_t complexity(const Expr& e) noexcept { return e.size(); }

/// Values of lagged variables, indexed by (variable, lag).
class LaggedValues {
public:
    void set(Variable v, int lag_seconds, double value) { set_index(v, lag_index(lag_seconds), value); }
    void set_index(Variable v, std::size_t lag, double value) noexcept {
        const std::size_t k = slot(v, lag);
        values_[k] = value;
        present_.set(k);
    }
    [[nodiscard]] bool has(Variable v, std::size_t lag) const noexcept { return present_.test(slot(v, lag)); }
    [[nodiscard]] double get(Variable v, std::size_t lag) const {
        if (!has(v, lag))
            throw Error("missing binding " + std::string(kVariableNames[static_cast<std::size_t>(v)]) + "@-" +
                        std::to_string(kLags[lag]));
        return values_[slot(v, lag)];
    }

private:
    static constexpr std::size_t slot(Variable v, std::size_t lag) noexcept {
        return static_cast<std::size_t>(v) * kLagCount + lag;
    }
    std::array<double, kVariables * kLagCount> values_{};
    std::bitset<kVariables * kLagCount> present_;
};

/// Evaluates with a lookup `(Variable, lag_index) -> double`. Division by a
/// denominator smaller than 1e-6 in magnitude yields 1.
template <class Lookup>
    requires std::invocable<Lookup&, Variable, std::size_t>
double eval_expr(const Expr& e, Lookup&& lookup) {
    const auto nodes = e.nodes();
    double stack_buf[64] = {};
    std::vector<double> heap;
    double* stack = stack_buf;
    if (nodes.size() > 64) {
        heap.resize(nodes.size());
        stack = heap.data();
    }
    std::size_t top = 0;
    for (std::size_t i = nodes.size(); i-- > 0;) {
        const Node& n = nodes[i];
        switch (n.op) {
        case Op::Const: stack[top++] = n.value; break;
        case Op::Var: stack[top++] = lookup(n.var, static_cast<std::size_t>(n.lag)); break;
        default: {
            const double lhs = stack[--top];
            const double rhs = stack[--top];
            stack[top++] = apply_op(n.op, lhs, rhs);
        }
        }
    }
    return stack[0];
}

inline double eval_expr(const Expr& e, const LaggedValues& values) {
    return eval_expr(e, [&](Variable v, std::size_t lag) { return values.get(v, lag); });
}

// ---- random generation and variation --------------------------------------

inline constexpr double kConstMin = -2.0;
inline constexpr double kConstMax = 2.0;

template <class Rng>
Node random_terminal(Rng& rng) {
    // 8 variables plus one constant symbol, drawn uniformly
    std::uniform_int_distribution<std::size_t> symbol(0, kVariables);
    const std::size_t s = symbol(rng);
    if (s == kVariables) {
        std::uniform_real_distribution<double> c(kConstMin, kConstMax);
        return Node{Op::Const, Variable::S, 0, c(rng)};
    }
    std::uniform_int_distribution<std::size_t> lag(0, kLagCount - 1);
    return Node{Op::Var, static_cast<Variable>(s), static_cast<std::uint8_t>(lag(rng)), 0};
}

template <class Rng>
Node random_function(Rng& rng) {
    std::uniform_int_distribution<int> op(0, 3);
    return Node{static_cast<Op>(op(rng)), Variable::S, 0, 0};
}

namespace detail {

template <class Rng>
void grow_into(std::vector<Node>& out, Rng& rng, std::size_t depth, std::size_t target, bool full) {
    bool terminal = depth >= target;
    if (!terminal && !full && depth > 1) {
        // terminal odds follow the symbol counts: 9 terminal symbols vs 4 operators
        std::uniform_int_distribution<int> pick(0, 12);
        terminal = pick(rng) < 9;
    }
    if (terminal) {
        out.push_back(random_terminal(rng));
        return;
    }
    out.push_back(random_function(rng));
    grow_into(out, rng, depth + 1, target, full);
    grow_into(out, rng, depth + 1, target, full);
}

} // namespace detail

/// Ramped half-and-half: depth uniform in [depth_min, depth_max], then "full"
/// or "grow" with equal odds.
template <class Rng>
Expr random_tree(Rng& rng, std::size_t depth_min, std::size_t depth_max) {
    if (depth_min < 1 || depth_min > depth_max) throw Error("random_tree needs 1 <= depth_min <= depth_max");
    std::uniform_int_distribution<std::size_t> depth(depth_min, depth_max);
    std::bernoulli_distribution full(0.5);
    const std::size_t target = depth(rng);
    const bool use_full = full(rng);
    std::vector<Node> nodes;
    detail::grow_into(nodes, rng, 1, target, use_full);
    return Expr(std::move(nodes));
}

/// Swaps uniformly chosen subtrees. A child deeper than `max_depth` is
/// replaced by its parent.
template <class Rng>
std::pair<Expr, Expr> crossover(const Expr& a, const Expr& b, Rng& rng, std::size_t max_depth = 17) {
    std::uniform_int_distribution<std::size_t> pa(0, a.size() - 1);
    std::uniform_int_distribution<std::size_t> pb(0, b.size() - 1);
    const std::size_t ia = pa(rng), ib = pb(rng);
    const std::size_t ea = a.subtree_end(ia), eb = b.subtree_end(ib);
    const auto an = a.nodes(), bn = b.nodes();
    const auto splice = [](std::span<const Node> host, std::size_t from, std::size_t to, std::span<const Node> donor,
                           std::size_t dfrom, std::size_t dto) {
        std::vector<Node> n(host.begin(), host.begin() + static_cast<std::ptrdiff_t>(from));
        n.insert(n.end(), donor.begin() + static_cast<std::ptrdiff_t>(dfrom), donor.begin() + static_cast<std::ptrdiff_t>(dto));
        n.insert(n.end(), host.begin() + static_cast<std::ptrdiff_t>(to), host.end());
        return Expr(std::move(n));
    };
    Expr c1 = splice(an, ia, ea, bn, ib, eb);
    Expr c2 = splice(bn, ib, eb, an, ia, ea);
    if (c1.depth() > max_depth) c1 = a;
    if (c2.depth() > max_depth) c2 = b;
    return {std::move(c1), std::move(c2)};
}

/// z' = z + 0.1 z n with n ~ N(0, 1), independently per constant.
template <class Rng>
Expr mutate_constants(const Expr& e, Rng& rng) {
    std::normal_distribution<double> noise(0.0, 1.0);
    Expr out = e;
    for (Node& n : out.mutable_nodes())
        if (n.op == Op::Const) n.value = n.value + 0.1 * n.value * noise(rng);
    return out;
}

// ---- automatic cancelation ------------------------------------------------

namespace detail {

inline bool is_const(const Expr& e, double v) noexcept {
    return e.size() == 1 && e.root().op == Op::Const && e.root().value == v;
}

inline Expr cancel_at(const Expr& e, std::size_t i) {
    const Node& n = e.nodes()[i];
    if (!is_binary(n.op)) return Expr({n});
    const std::size_t left_end = e.subtree_end(i + 1);
    Expr lhs = cancel_at(e, i + 1);
    Expr rhs = cancel_at(e, left_end);
    const bool lc = lhs.size() == 1 && lhs.root().op == Op::Const;
    const bool rc = rhs.size() == 1 && rhs.root().op == Op::Const;
    if (lc && rc) {
        const double v = apply_op(n.op, lhs.root().value, rhs.root().value);
        if (std::isfinite(v)) return Expr::constant(v);
    }
    switch (n.op) {
    case Op::Add:
        if (is_const(rhs, 0.0)) return lhs;
        if (is_const(lhs, 0.0)) return rhs;
        break;
    case Op::Sub:
        if (is_const(rhs, 0.0)) return lhs;
        if (lhs == rhs) return Expr::constant(0.0);
        break;
    case Op::Mul:
        if (is_const(rhs, 1.0)) return lhs;
        if (is_const(lhs, 1.0)) return rhs;
        if (is_const(lhs, 0.0) || is_const(rhs, 0.0)) return Expr::constant(0.0);
        break;
    case Op::Div:
        if (is_const(rhs, 1.0)) return lhs;
        if (lhs == rhs) return Expr::constant(1.0);
        break;
    default: break;
    }
    return Expr::binary(n.op, lhs, rhs);
}

} // namespace detail

/// Algebraic simplification to a fixed point: constant folding, neutral
/// elements (x+0, x-0, x*1, x/1), annihilation (x*0), and x-x -> 0, x/x -> 1
/// for syntactically identical operands. Never grows the tree.
inline Expr auto_cancel(const Expr& e) {
    Expr cur = e;
    for (;;) {
        Expr next = detail::cancel_at(cur, 0);
        if (next == cur) return next;
        cur = std::move(next);
    }
}

} // namespace gprl
