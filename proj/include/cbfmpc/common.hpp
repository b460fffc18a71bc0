#ifndef CBFMPC_COMMON_HPP
#define CBFMPC_COMMON_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace cbfmpc {

using Eigen::MatrixXd;
using Eigen::Vector2d;
using Eigen::VectorXd;

/// Invalid configuration (dimension mismatch, parameter out of range, ...).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Failure to read or write an external file.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Scenario sampling could not satisfy its constraints.
class ScenarioError : public std::runtime_error {
public:
    explicit ScenarioError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Penalty-weight estimation found no feasible sample.
class EstimationError : public std::runtime_error {
public:
    explicit EstimationError(const std::string& msg) : std::runtime_error(msg) {}
};

/**
 * Seeded random stream with a platform-independent uniform mapping.
 *
 * std::uniform_real_distribution is implementation-defined, so scenario
 * generation uses this instead: identical seeds give identical doubles on
 * any conforming platform.
 */
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    /// Uniform double in [0, 1).
    double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Uniform integer in [0, n).
    int uniform_int(int n) { return static_cast<int>(uniform01() * n) % n; }

    std::mt19937_64& engine() { return gen_; }

private:
    std::mt19937_64 gen_;
};

inline constexpr double kPi = 3.14159265358979323846;

/// Wrap an angle to (-pi, pi].
inline double normalize_angle(double theta) {
    double t = std::remainder(theta, 2.0 * kPi);
    if (t <= -kPi) t += 2.0 * kPi;
    return t;
}

}  // namespace cbfmpc

#endif  // CBFMPC_COMMON_HPP
