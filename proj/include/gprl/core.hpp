#pragma once

/// @file core.hpp
/// Shared vocabulary: error type, channel layout, seed derivation and the
/// decimal formatting used by every on-disk artifact.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace gprl {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Channels of a logged batch row, in CSV column order after `time_s`.
enum class Channel : std::size_t { S = 0, That, Mhat, T, M, P, UA, Q };
inline constexpr std::size_t kChannels = 8;
inline constexpr std::array<std::string_view, kChannels> kChannelNames{
    "S", "That", "Mhat", "T", "M", "P", "UA", "Q"};

constexpr std::size_t idx(Channel c) noexcept { return static_cast<std::size_t>(c); }

/// Temperature channels share one pooled normalization statistic.
constexpr bool is_temperature(Channel c) noexcept {
    return c == Channel::S || c == Channel::That || c == Channel::T;
}

// Surrogate layout: state s = (T, M, P, UA, Q), action a = (That, Mhat).
inline constexpr std::size_t kStateDim = 5;
inline constexpr std::size_t kActionDim = 2;
inline constexpr std::size_t kStepDim = kStateDim + kActionDim;
inline constexpr std::array<Channel, kStateDim> kStateChannels{
    Channel::T, Channel::M, Channel::P, Channel::UA, Channel::Q};
inline constexpr std::array<Channel, kActionDim> kActionChannels{Channel::That, Channel::Mhat};

// Action bounds of the reactor template.
inline constexpr double kSetpointMin = 352.0;
inline constexpr double kSetpointMax = 365.0;
inline constexpr double kFeedMin = 0.005;
inline constexpr double kFeedMax = 0.015;

/// Lowest fitness handed to individuals whose evaluation failed.
inline constexpr double kWorstFitness = -1.0e12;

/// Reward on normalized temperatures: -(S - T)^2.
inline double reward(double setpoint_norm, double temperature_norm) noexcept {
    const double d = setpoint_norm - temperature_norm;
    return -(d * d);
}

/// SplitMix64 finalizer; derives independent seed streams from a master seed.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0,
                                    std::uint64_t c = 0) noexcept {
    return mix_seed(mix_seed(mix_seed(mix_seed(master) ^ a) ^ b) ^ c);
}

/// Shortest-enough decimal that round-trips a double (17 significant digits).
/// Shortest text that reads back to the same double.
inline std::string format_double(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

/// FNV-1a, used for config fingerprints in stage metadata.
constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Largest-remainder apportionment of `n` over `ratios` (sum 1). Ties go to
/// the earlier entry.
template <std::size_t K>
std::array<std::size_t, K> apportion(std::size_t n, const std::array<double, K>& ratios) {
    std::array<std::size_t, K> counts{};
    std::array<double, K> frac{};
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < K; ++i) {
        const double exact = ratios[i] * static_cast<double>(n);
        counts[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
        frac[i] = exact - static_cast<double>(counts[i]);
        assigned += counts[i];
    }
    std::array<std::size_t, K> order{};
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
    for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++counts[order[k % K]];
    return counts;
}

namespace detail {

/// Runs `body(i)` for i in [0, n) on up to `workers` threads. Each index
/// writes only its own output slot, so results do not depend on `workers`.
template <class Body>
void parallel_for(std::size_t n, std::size_t workers, Body&& body) {
    workers = std::max<std::size_t>(1, std::min(workers, n));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    std::exception_ptr failure;
    std::mutex failure_mutex;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += workers) {
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

} // namespace detail

} // namespace gprl
