#include "bdsde/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <thread>

namespace bdsde {

TimeGrid::TimeGrid(double t_start, double t_end, std::size_t n_steps)
    : t_start_(t_start), t_end_(t_end), n_steps_(n_steps), dt_(0.0) {
    if (!(t_end > t_start) || !std::isfinite(t_start) || !std::isfinite(t_end)) {
        throw ConfigError("time grid: t_end must exceed t_start");
    }
    if (n_steps == 0) {
        throw ConfigError("time grid: n_steps must be positive");
    }
    dt_ = (t_end - t_start) / static_cast<double>(n_steps);
}

std::optional<std::size_t> TimeGrid::index_of(double t) const noexcept {
    const double k = (t - t_start_) / dt_;
    const double r = std::round(k);
    if (r < 0.0 || r > static_cast<double>(n_steps_)) return std::nullopt;
    if (std::abs(k - r) > 1e-9) return std::nullopt;
    return static_cast<std::size_t>(r);
}

std::size_t TimeGrid::first_node_at_or_after(double t) const {
    if (t < t_start_ - 1e-9 * dt_ || t > t_end_ + 1e-9 * dt_) {
        throw ConfigError("time grid: start time outside the grid");
    }
    if (auto i = index_of(t)) return *i;
    const double k = std::ceil((t - t_start_) / dt_);
    return std::min(static_cast<std::size_t>(std::max(k, 0.0)), n_steps_);
}

Estimate mean_and_stderr(const std::vector<double>& samples) {
    Estimate e;
    const std::size_t n = samples.size();
    if (n == 0) return e;
    double sum = 0.0;
    for (double v : samples) sum += v;
    e.value = sum / static_cast<double>(n);
    if (n > 1) {
        double ss = 0.0;
        for (double v : samples) ss += (v - e.value) * (v - e.value);
        e.std_error = std::sqrt(ss / static_cast<double>(n - 1) / static_cast<double>(n));
    }
    return e;
}

void parallel_for(std::size_t n, std::size_t threads,
                  const std::function<void(std::size_t)>& body) {
    if (n == 0) return;
    threads = std::clamp<std::size_t>(threads, 1, n);
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::size_t> error_index(threads, n);
    {
        std::vector<std::jthread> workers;
        workers.reserve(threads);
        for (std::size_t w = 0; w < threads; ++w) {
            workers.emplace_back([&, w] {
                const std::size_t begin = n * w / threads;
                const std::size_t end = n * (w + 1) / threads;
                for (std::size_t i = begin; i < end; ++i) {
                    try {
                        body(i);
                    } catch (...) {
                        errors[w] = std::current_exception();
                        error_index[w] = i;
                        return;
                    }
                }
            });
        }
    }
    std::size_t first = n;
    std::exception_ptr err;
    for (std::size_t w = 0; w < threads; ++w) {
        if (errors[w] && error_index[w] < first) {
            first = error_index[w];
            err = errors[w];
        }
    }
    if (err) std::rethrow_exception(err);
}

namespace {

// Integrals over s in [0,1] of exp(-z s)(1-s) and exp(-z s) s.
void exp_hat_weights(double z, double& w0, double& w1) {
    if (std::abs(z) < 1e-3) {
        // Series: sum (-z)^n / (n! (n+1)(n+2)) and sum (-z)^n / (n! (n+2)).
        double term = 1.0;
        w0 = 0.0;
        w1 = 0.0;
        for (int k = 0; k < 8; ++k) {
            w0 += term / ((k + 1.0) * (k + 2.0));
            w1 += term / (k + 2.0);
            term *= -z / (k + 1.0);
        }
        return;
    }
    const double e = std::exp(-z);
    w1 = (1.0 - e * (1.0 + z)) / (z * z);
    w0 = (1.0 - e) / z - w1;
}

}  // namespace

double exp_weighted_trapezoid(const double* times, const double* values,
                              std::size_t n, double beta) {
    double total = 0.0;
    for (std::size_t j = 0; j + 1 < n; ++j) {
        const double h = times[j + 1] - times[j];
        if (h <= 0.0) continue;
        double w0 = 0.0;
        double w1 = 0.0;
        exp_hat_weights(beta * h, w0, w1);
        total += std::exp(-beta * times[j]) * h * (w0 * values[j] + w1 * values[j + 1]);
    }
    return total;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace bdsde
