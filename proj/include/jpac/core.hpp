#pragma once

/**
 * \file   jpac/core.hpp
 * \brief  Common aliases, error types and the portable random stream.
 */

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace jpac {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Positions into the rows of a (possibly restricted) problem, ascending.
using IndexSet = std::vector<int>;

/// Raised when an input violates a documented precondition.
class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when a numerical routine cannot produce a result.
class SolverFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string &what) {
    if (!cond) throw InvalidInput(what);
}

// ---------------------------------------------------------------------------
// Random streams
//
// All randomness flows through Stream: std::mt19937_64 (whose output sequence
// is fixed by the standard) seeded through SplitMix64, with uniform doubles
// built from the top 53 bits. std::uniform_real_distribution is avoided since
// its output differs between standard library implementations.
//
// Child streams: child_seed(parent, i) = splitmix64(parent ^ splitmix64(i + 1)).
// A Monte-Carlo batch gives instance i the stream child_seed(master, i), and a
// multistart driver gives start s the stream child_seed(seed, s).
// ---------------------------------------------------------------------------

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t child_seed(std::uint64_t parent, std::uint64_t index) noexcept {
    return splitmix64(parent ^ splitmix64(index + 1));
}

class Stream {
public:
    explicit Stream(std::uint64_t seed) : engine_(splitmix64(seed)) {}

    /// Uniform on [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform on [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    std::uint64_t next() { return engine_(); }

private:
    std::mt19937_64 engine_;
};

} // namespace jpac
