#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "bdsde/coefficients.hpp"
#include "bdsde/markov.hpp"
#include "bdsde/noise.hpp"
#include "bdsde/regression.hpp"

namespace bdsde {

struct SolverConfig {
    RegressionConfig regression;
    /// Relative Picard tolerance on sup_i mean |Y^{n+1}_i - Y^n_i|.
    double picard_tol = 1e-10;
    std::size_t max_iter = 200;
    std::size_t threads = 1;
    bool record_log = true;
};

struct LogRow {
    std::size_t iter = 0;
    std::size_t node = 0;
    std::string metric;
    double value = 0.0;
};

class IterationLog {
public:
    void add(std::size_t iter, std::size_t node, std::string metric, double value) {
        rows.push_back({iter, node, std::move(metric), value});
    }
    void append(const IterationLog& other, const std::string& prefix);
    /// CSV with header iter,node,metric,value.
    void write_csv(std::ostream& out, bool header = true) const;

    std::vector<LogRow> rows;
};

/// Per-path backward solution on a path ensemble. Node arrays are indexed
/// by (i - first_node) * n_paths + p; interval arrays likewise for i < N.
struct BdsdeSolution {
    TimeGrid grid{0.0, 1.0, 1};
    std::size_t n_paths = 0;
    std::size_t first = 0;

    std::vector<double> Y;
    std::vector<double> Z;
    std::vector<double> dM;
    /// y value the driver saw at node i (used on interval i - 1)
    std::vector<double> drive_y;
    /// z value the driver saw on interval i
    std::vector<double> drive_z;
    /// regression standard error at each node (index i - first)
    std::vector<double> reg_stderr;
    std::vector<FittedFunction> fits;

    IterationLog log;
    std::size_t iterations = 0;
    std::size_t fallback_nodes = 0;

    std::size_t node_index(std::size_t p, std::size_t i) const noexcept {
        return (i - first) * n_paths + p;
    }
    double y(std::size_t p, std::size_t i) const noexcept { return Y[node_index(p, i)]; }
    double dm(std::size_t p, std::size_t i) const noexcept { return dM[node_index(p, i)]; }
    double z(std::size_t p, std::size_t i) const noexcept {
        return Z.empty() ? 0.0 : Z[node_index(p, i)];
    }
    bool has_z() const noexcept { return !Z.empty(); }

    /// [M] over nodes from..N-1 of path p.
    double bracket(std::size_t p, std::size_t from) const noexcept;
};

/// Backward regression with frozen driver inputs. frozen_y / frozen_z point
/// at node / interval arrays in the solution layout, or are null (current Y,
/// z = 0).
BdsdeSolution backward_sweep(const CoefficientSpec& data, const PathEnsemble& paths,
                             const BackwardNoise& noise, const SolverConfig& cfg,
                             const std::vector<double>* frozen_y,
                             const std::vector<double>* frozen_z);

/// One backward sweep; f and g must not depend on (y, z).
BdsdeSolution solve_linear(const CoefficientSpec& data, const PathEnsemble& paths,
                           const BackwardNoise& noise, const SolverConfig& cfg);

/// Picard iteration from Y = 0 with the driver frozen at the previous iterate.
/// frozen_z (optional) fixes the z argument.
BdsdeSolution solve_lipschitz_picard(const CoefficientSpec& data, const PathEnsemble& paths,
                                     const BackwardNoise& noise, const SolverConfig& cfg,
                                     const std::vector<double>* frozen_z = nullptr);

/// Discrete inf-convolution f_n(y) = min_x { n |y - x| + f(x) - L x } + L y
/// with x ranging over the grid x_j = -R + j h and the point y itself.
/// Evaluated exactly (prefix/suffix minima), not interpolated.
class InfConvolution {
public:
    InfConvolution(const AutonomousFn& f, double n, double L, double R, double h);

    double operator()(double y) const;

    double n() const noexcept { return n_; }
    double L() const noexcept { return L_; }
    /// min_j f(x_j)
    double lower_bound() const noexcept { return lambda_; }
    std::size_t grid_size() const noexcept { return x_.size(); }
    double grid_point(std::size_t j) const noexcept { return x_[j]; }
    double f_at(std::size_t j) const noexcept { return f_[j]; }

private:
    double n_, L_, R_, h_;
    AutonomousFn fn_;
    double lambda_ = 0.0;
    std::vector<double> x_;
    std::vector<double> f_;
    std::vector<double> prefix_;  // min_{k<=j} (f_k - L x_k - n x_k)
    std::vector<double> suffix_;  // min_{k>=j} (f_k - L x_k + n x_k)
};

InfConvolution inf_convolution(const AutonomousFn& f, double n, double L_mono, double R, double h);

struct InfConvCertificate {
    std::size_t probes = 0;
    /// violations of (a) Lipschitz <= L + n, (b) lambda <= f_n <= f,
    /// (c) f_n <= f_{n'} for n < n', (d) monotonicity with constant L
    std::size_t violations[4] = {0, 0, 0, 0};
    double worst_excess[4] = {0, 0, 0, 0};
    bool pass = false;
};

/// Probes the four properties on grid points with a rounding allowance of a
/// few ulp of the values involved.
InfConvCertificate certify_inf_convolution(const AutonomousFn& f, const std::vector<double>& n_ladder,
                                           double L_mono, double R, double h, std::size_t probes,
                                           std::uint64_t seed);

struct MonotoneOptions {
    std::vector<double> truncation_ladder{4, 8, 16, 32};
    std::vector<double> n_ladder{4, 8, 16, 32};
    /// 0 selects 4 sqrt(a priori rhs) of the truncated problem
    double R = 0.0;
    double h = 1e-4;
    double eps_factor = 3.0;
    /// relative stabilization tolerance between the last two truncation levels
    double stabilization_tol = 1e-2;
};

struct MonotoneResult {
    BdsdeSolution solution;
    double R = 0.0;
    std::vector<double> stage_y0;  // mean Y at the first node per stage, inf-conv stage first
    double infconv_order_fraction = 1.0;
    double truncation_order_fraction = 1.0;
    double stabilization = 0.0;
    /// the regularized data of the returned solution (for residual_check)
    CoefficientSpec effective;
    IterationLog log;
};

/// Truncation f v (-n_t) followed by inf-convolution f_n, each solved by
/// Picard; returns the (max n_t, max n) solution and ordering statistics.
MonotoneResult solve_monotone(const CoefficientSpec& data, const PathEnsemble& paths,
                              const BackwardNoise& noise, const SolverConfig& cfg,
                              const MonotoneOptions& opt = {});

struct GradientOptions {
    /// 0 selects alpha = (1 - m) / 2
    double alpha = 0.0;
    /// 0 selects beta = 2L + (2L)^2 / alpha + l + 1
    double beta = 0.0;
    double tol = 1e-6;
    std::size_t max_stages = 30;
};

struct GradientResult {
    BdsdeSolution solution;
    double alpha = 0.0;
    double beta = 0.0;
    double c = 1.0;
    /// predicted contraction constant alpha + m
    double predicted_ratio = 0.0;
    std::vector<double> ratios;
    std::vector<double> weighted_diffs;
    IterationLog log;
};

/// Outer fixed point on (Y, Z): Picard in y with z frozen, then
/// Z_i = E[dM_i dW_i | X_i] / dt by regression.
GradientResult solve_with_gradient(const CoefficientSpec& data, const PathEnsemble& paths,
                                   const BackwardNoise& noise, const SolverConfig& cfg,
                                   const GradientOptions& opt = {});

struct ComparisonReport {
    std::size_t violations = 0;
    std::size_t pairs = 0;
    double fraction = 0.0;
    double max_excess = 0.0;
};

/// Counts alive (path, node) pairs with Y'_t > Y_t + eps_i, where eps_i is
/// eps_factor times the larger regression standard error at node i.
ComparisonReport comparison_report(const BdsdeSolution& sol, const BdsdeSolution& sol_prime,
                                   const PathEnsemble& paths, double eps_factor);

struct Sides {
    Estimate lhs;
    Estimate rhs;
    double ratio() const noexcept { return rhs.value != 0.0 ? lhs.value / rhs.value : 0.0; }
};

/// lhs = E sup|Y|^2 + E[M]_T + E sup|int f|^2,
/// rhs = E(|xi|^2 + int |f(.,0)|^2 + ||g(.,0)||^2).
Sides apriori_sides(const BdsdeSolution& sol, const CoefficientSpec& data,
                    const PathEnsemble& paths, const BackwardNoise& noise);

struct ResidualReport {
    double max_abs = 0.0;
    double mean_abs = 0.0;
    /// max over paths at each node (index i - first)
    std::vector<double> node_max;
};

/// Y_t - [xi + sum (f dt + g dbeta - dM)] along every alive path, using the
/// driver states stored in the solution.
ResidualReport residual_check(const BdsdeSolution& sol, const CoefficientSpec& data,
                              const PathEnsemble& paths, const BackwardNoise& noise);

}  // namespace bdsde
