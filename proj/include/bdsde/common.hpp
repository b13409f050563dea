#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace bdsde {

/// Invalid or inconsistent configuration. Maps to CLI exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A configuration that is valid in principle but has no implementation
/// (e.g. a closed form that only exists for conservative generators).
class UnsupportedError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

/// NaN, non-convergence, loss of ellipticity. Maps to CLI exit code 3.
class NumericalError : public std::runtime_error {
public:
    NumericalError(const std::string& stage, const std::string& what)
        : std::runtime_error(stage + ": " + what), stage_(stage) {}

    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

/// Iterative scheme failed to meet its tolerance. Carries the per-iteration
/// metric history so callers can report it.
class ConvergenceError : public NumericalError {
public:
    ConvergenceError(const std::string& stage, const std::string& what,
                     std::vector<double> history)
        : NumericalError(stage, what), history_(std::move(history)) {}

    const std::vector<double>& history() const noexcept { return history_; }

private:
    std::vector<double> history_;
};

/// Uniform time grid. Node i is t_start + i*dt, computed by multiplication.
class TimeGrid {
public:
    TimeGrid(double t_start, double t_end, std::size_t n_steps);

    double t_start() const noexcept { return t_start_; }
    double t_end() const noexcept { return t_end_; }
    std::size_t n_steps() const noexcept { return n_steps_; }
    std::size_t n_nodes() const noexcept { return n_steps_ + 1; }
    double dt() const noexcept { return dt_; }
    double horizon() const noexcept { return t_end_ - t_start_; }

    double node(std::size_t i) const noexcept {
        return t_start_ + static_cast<double>(i) * dt_;
    }

    /// Index of the node equal to t (within 1e-9 dt), if any.
    std::optional<std::size_t> index_of(double t) const noexcept;

    /// Smallest node index with node(i) >= t (within 1e-9 dt).
    std::size_t first_node_at_or_after(double t) const;

    bool operator==(const TimeGrid&) const = default;

private:
    double t_start_;
    double t_end_;
    std::size_t n_steps_;
    double dt_;
};

/// Monte Carlo estimate with its standard error.
struct Estimate {
    double value = 0.0;
    double std_error = 0.0;
};

/// Sample mean and standard error of the mean.
Estimate mean_and_stderr(const std::vector<double>& samples);

/// Runs body(i) for i in [0, n) on up to `threads` workers with a static
/// partition. Each index must write only its own outputs; the result is then
/// independent of the thread count. The first exception (lowest index) is
/// rethrown on the calling thread.
void parallel_for(std::size_t n, std::size_t threads,
                  const std::function<void(std::size_t)>& body);

/// Exact integral of exp(-beta*t) times the piecewise-linear interpolant of
/// (times, values) over [times.front(), times.back()]. Reduces to the
/// trapezoidal rule at beta = 0.
double exp_weighted_trapezoid(const double* times, const double* values,
                              std::size_t n, double beta);

/// Formats a double with 17 significant digits for byte-stable CSV output.
std::string format_double(double v);

}  // namespace bdsde
