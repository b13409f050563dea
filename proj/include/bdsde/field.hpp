#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "bdsde/coefficients.hpp"
#include "bdsde/markov.hpp"
#include "bdsde/solver.hpp"

namespace bdsde {

/// u(s_i, x_j) per outer noise realization. Index (outer * n_s + i) * n_x + j.
struct FieldEstimate {
    std::vector<double> s;
    std::vector<double> x;
    std::size_t outer = 0;
    Domain domain = Domain::torus(1.0);
    std::vector<double> value;
    std::vector<double> std_error;
    /// small-t slope of E <M>_t from each start (empty unless retained);
    /// the s = T slice is extrapolated from the two before it
    std::vector<double> bracket_rate;
    std::vector<double> bracket_rate_se;
    std::size_t failed = 0;
    bool fast_mode = false;
    /// largest scheme residual over the underlying solves
    double max_residual = 0.0;

    std::size_t index(std::size_t o, std::size_t i, std::size_t j) const noexcept {
        return (o * s.size() + i) * x.size() + j;
    }
    double at(std::size_t o, std::size_t i, std::size_t j) const noexcept { return value[index(o, i, j)]; }

    /// Piecewise-linear in s and x; periodic on the torus, 0 at interval ends.
    Field interpolant(std::size_t o) const;

    /// Columns outer_id, s, x, value, stderr.
    void write_csv(std::ostream& out) const;
};

/// s_i = t0 + i T / n_time, i = 0..n_time; each must be a grid node.
std::vector<double> time_mesh(const TimeGrid& grid, std::size_t n_time);

/// Space-time trapezoid weights in s (over the time mesh).
std::vector<double> time_weights(const std::vector<double>& s);

/// Samples fn(outer, s, x) on the mesh (deterministic fields, oracles).
FieldEstimate field_from_function(const std::function<double(std::size_t, double, double)>& fn,
                                  const Domain& domain, const std::vector<double>& s,
                                  const std::vector<double>& x, std::size_t outer);

/// L2(ds dm) norm of u_outer - ref over the mesh, divided by the norm of
/// ref when relative is set.
double field_l2_error(const FieldEstimate& u, std::size_t outer,
                      const std::function<double(double s, double x)>& ref, bool relative);

enum class SolverKind { automatic, linear, picard, monotone, gradient };

SolverKind parse_solver_kind(const std::string& name);
std::string solver_kind_name(SolverKind k);

/// The entry point solve_for picks for `data` under `kind`.
SolverKind resolve_solver_kind(const CoefficientSpec& data, SolverKind kind);

struct FieldOptions {
    std::size_t n_time = 16;
    std::size_t n_space = 16;
    std::size_t inner_paths = 1000;
    std::size_t outer = 1;
    std::uint64_t seed = 1;
    std::size_t threads = 1;
    /// one regression solve with mesh-distributed starts instead of per-point solves
    bool fast_mode = false;
    SolverKind solver = SolverKind::automatic;
    MonotoneOptions monotone;
    GradientOptions gradient;
    /// fraction of mesh points that must solve without numerical failure
    double min_coverage = 0.95;
    /// grid steps used for the small-t bracket slope
    std::size_t bracket_steps = 4;
};

/// Noise of outer realization o: sample_backward_noise(grid, K, seed, o).
BackwardNoise outer_noise(const TimeGrid& grid, std::size_t modes, std::uint64_t seed, std::size_t o);

/// Runs the chosen solver; `effective` receives the data whose residual the
/// solution satisfies (the regularized driver for monotone problems).
BdsdeSolution solve_for(const CoefficientSpec& data, const PathEnsemble& paths,
                        const BackwardNoise& noise, const SolverConfig& cfg, SolverKind kind,
                        const MonotoneOptions& mono, const GradientOptions& grad,
                        CoefficientSpec* effective = nullptr);

/// Per-point solves from every mesh start (s_i, x_j) with inner_paths paths,
/// recording Y at the start, its Monte Carlo standard error and the bracket
/// slope. The s = T slice is phi.
FieldEstimate feynman_kac_field(const CoefficientSpec& data, const GeneratorSpec& gen,
                                const TimeGrid& grid, const FieldOptions& opt,
                                const SolverConfig& cfg);

enum class AfConvention { frozen, killed };

/// One additive-functional trajectory: A at times (relative to the start,
/// first 0, last the lifetime), quadrature weight, u at the start (used by
/// the killed convention) and outer realization group.
struct AfSample {
    std::vector<double> times;
    std::vector<double> values;
    double weight = 1.0;
    double u0 = 0.0;
    std::size_t group = 0;
};

struct LadderPoint {
    double alpha = 0.0;
    Estimate value;
};

/// e(A; alpha) = 1/2 alpha^2 E_{m_T} int_0^inf e^{-alpha t} A_t^2 dt with the
/// closed-form tail after the lifetime: A frozen at its last value, or
/// A = -u0 (u = 0 at the cemetery). Group totals are averaged over groups.
std::vector<LadderPoint> energy_af(const std::vector<AfSample>& samples,
                                   const std::vector<double>& alpha_ladder, AfConvention convention);

/// Extrapolation to 1/alpha = 0: linear through the two largest ladder
/// entries, or a degree-`order` polynomial in 1/alpha through the top
/// order + 1 entries.
Estimate richardson(const std::vector<LadderPoint>& ladder, std::size_t order = 1);

/// 1/2 E int int sum_k g_k(t, x, u(t, x))^2 dt dm over the mesh.
Estimate energy_N_closed(const CoefficientSpec& data, const FieldEstimate& u);

struct EnergyOptions {
    /// m_T start samples per side (eqe1) or per outer realization (e(N))
    std::size_t starts = 4096;
    std::size_t outer = 1;
    std::uint64_t seed = 1;
    std::size_t threads = 1;
    /// eqe1 uses dt = dt_factor / beta
    double dt_factor = 1.0 / 16.0;
};

/// N_t = -int f(X, u(X)) dt - int g(X, u(X)) d^dagger beta along paths started
/// at every grid node s_i and space node, one path per start, for `outer`
/// noise realizations; trapezoid weights in s and dm in x.
std::vector<AfSample> n_functional_samples(const CoefficientSpec& data, const GeneratorSpec& gen,
                                           const TimeGrid& grid,
                                           const std::function<Field(std::size_t)>& u_of_outer,
                                           std::size_t n_space, const EnergyOptions& opt);

/// Finite-beta identity beta^2 E_{m_T} int e^{-beta t} A_t^2 dt
///   = 2 beta (u - beta R_beta u, u)_{m_T} - (u^2, k^beta),  A_t = u(X_t) - u(X_0),
/// with independent m_T start samples for the two sides (start times stratified
/// in pairs) and the killing pairing by quadrature.
Sides eqe1_sides(const Field& u, double beta, const GeneratorSpec& gen, const Domain& domain,
                 double T, const EnergyOptions& opt);

/// int int u^2 beta e^{-beta s} ds dm for the s-piecewise-linear interpolant
/// of outer realization o (exact in s).
double killing_pairing(const FieldEstimate& u, std::size_t o, double beta);

/// B^{0,T}(u, u) = int int a (du/dx)^2 ds dm; spectral derivative on the
/// torus, central differences (one-sided at the ends) otherwise. Mean over outer
/// realizations.
Estimate bform_norm(const FieldEstimate& u, const GeneratorSpec& gen);
double bform_norm_one(const FieldEstimate& u, std::size_t o, const GeneratorSpec& gen);

struct IdentityReport {
    Estimate lhs;        // E e(M)
    Estimate rhs_i;      // E(||u(0)||^2 + B - 1/2 (u^2, k))
    Estimate rhs_ii;     // E(1/2 ||u(0)||^2 + B - 1/2 (u^2, k))
    Estimate u0_norm;    // E ||u(0)||^2
    Estimate b_norm;     // E B(u, u)
    Estimate k_pairing;  // E lim (u^2, k^beta)
    std::vector<LadderPoint> k_ladder;
    double tolerance = 0.0;
    bool pass_ii = false;
};

/// e(M) from the retained bracket slopes (2 e(M) = m_T-integral of the
/// slope) against both forms of the right-hand side.
IdentityReport energy_identity_sides(const FieldEstimate& u, const GeneratorSpec& gen,
                                     const std::vector<double>& k_ladder);

/// lhs = sup_s E||u(s)||^2 + E B(u, u), rhs = ||phi||^2 + ||f(., 0)||^2 + sum_k ||g_k(., 0)||^2.
Sides energy_estimate_sides(const FieldEstimate& u, const CoefficientSpec& data,
                            const GeneratorSpec& gen);

struct EnergyRow {
    double parameter = 0.0;
    std::string quantity;
    Estimate estimate;
};

/// Columns alpha_or_beta, quantity, estimate, stderr.
void write_energy_csv(std::ostream& out, const std::vector<EnergyRow>& rows);

}  // namespace bdsde
