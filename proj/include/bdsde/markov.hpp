#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "bdsde/common.hpp"
#include "bdsde/domain.hpp"

namespace bdsde {

/// Generator presets. Diffusions are isotropic, a_ij = a(t, x) delta_ij, with
/// a depending on the first coordinate only.
///   "const:<a>"          constant a
///   "sin_field:<amp>"    a = (1 + amp sin x) / 2
///   "time_sin:<amp>"     a = (1 + amp sin(2 pi t) sin x) / 2
///   "fractional:<alpha>" symmetric alpha-stable jumps, generator -(-Laplacian)^(alpha/2)
struct GeneratorSpec {
    enum class Kind { const_diffusion, div_form, fractional };

    Kind kind = Kind::const_diffusion;
    std::string name = "const:0.5";
    double a0 = 0.5;
    double amplitude = 0.0;
    bool time_dependent = false;
    double alpha = 2.0;

    static GeneratorSpec parse(const std::string& preset);

    double a(double t, double x) const noexcept;
    /// d a / d x_1 when the preset has a closed form.
    std::optional<double> analytic_da(double t, double x) const noexcept;

    /// Ellipticity bounds lambda <= a <= Lambda over all (t, x).
    double ellipticity_lower() const noexcept;
    double ellipticity_upper() const noexcept;

    bool gradient_form() const noexcept { return kind != Kind::fractional; }
    bool time_constant() const noexcept { return !time_dependent; }
};

struct DriftOptions {
    /// Central-difference step; 0 selects 1e-4 times the domain size.
    double h = 0.0;
    bool use_analytic = true;
};

/// b_1 = d a / d x_1 (other components vanish for the isotropic presets).
/// Central differences are clamped to the closure on bounded domains.
double drift_from_divergence_form(const GeneratorSpec& gen, const Domain& domain, double t,
                                  double x, const DriftOptions& opt = {});

struct Start {
    double s = 0.0;
    std::vector<double> x;
};

/// Forward paths on a global time grid. A path started at s is born at the
/// first node >= s (a partial step covers [s, t_birth]); it is alive on nodes
/// birth <= i < lifetime. lifetime == n_nodes means it survived to T. Positions
/// are stored for nodes first_node..N only.
class PathEnsemble {
public:
    PathEnsemble() : grid_(0.0, 1.0, 1) {}
    PathEnsemble(TimeGrid grid, std::size_t dim, std::size_t n_paths, std::size_t first_node,
                 bool keep_increments);

    const TimeGrid& grid() const noexcept { return grid_; }
    std::size_t dim() const noexcept { return dim_; }
    std::size_t size() const noexcept { return n_paths_; }
    std::size_t first_node() const noexcept { return first_; }
    std::size_t last_node() const noexcept { return grid_.n_steps(); }
    bool has_increments() const noexcept { return !dw_.empty(); }

    bool alive(std::size_t p, std::size_t i) const noexcept {
        return i >= birth_[p] && i < lifetime_[p];
    }
    std::size_t birth(std::size_t p) const noexcept { return birth_[p]; }
    std::size_t lifetime(std::size_t p) const noexcept { return lifetime_[p]; }
    double start_time(std::size_t p) const noexcept { return start_time_[p]; }
    /// First coordinate of the start point.
    double start_x(std::size_t p) const noexcept { return start_x_[p]; }

    /// First coordinate at node i.
    double x(std::size_t p, std::size_t i) const noexcept {
        return x_[((i - first_) * n_paths_ + p) * dim_];
    }
    const double* point(std::size_t p, std::size_t i) const noexcept {
        return &x_[((i - first_) * n_paths_ + p) * dim_];
    }
    double* point(std::size_t p, std::size_t i) noexcept {
        return &x_[((i - first_) * n_paths_ + p) * dim_];
    }
    /// First coordinate of the driving increment over [t_i, t_{i+1}] (0 before birth).
    double dw(std::size_t p, std::size_t i) const noexcept {
        return dw_[((i - first_) * n_paths_ + p) * dim_];
    }
    double* dw_ptr(std::size_t p, std::size_t i) noexcept {
        return &dw_[((i - first_) * n_paths_ + p) * dim_];
    }

    void set_lifecycle(std::size_t p, double s, double x0, std::size_t birth,
                       std::size_t lifetime) noexcept {
        start_time_[p] = s;
        start_x_[p] = x0;
        birth_[p] = static_cast<std::uint32_t>(birth);
        lifetime_[p] = static_cast<std::uint32_t>(lifetime);
    }

    std::uint64_t seed = 0;
    std::uint64_t stream_id = 0;

    void write(std::ostream& out) const;
    static PathEnsemble read(std::istream& in);

    bool operator==(const PathEnsemble& other) const;

private:
    TimeGrid grid_;
    std::size_t dim_ = 1;
    std::size_t n_paths_ = 0;
    std::size_t first_ = 0;
    std::vector<double> x_;
    std::vector<double> dw_;
    std::vector<double> start_time_;
    std::vector<double> start_x_;
    std::vector<std::uint32_t> birth_;
    std::vector<std::uint32_t> lifetime_;
};

struct SimulationOptions {
    std::size_t threads = 1;
    DriftOptions drift;
    /// Keep driving increments (needed for Z regression).
    bool keep_increments = true;
};

/// Euler-Maruyama with drift da/dx and diffusion sqrt(2a) (generator
/// d/dx(a d/dx)); alpha-stable steps dt^(1/alpha) S for the fractional preset.
/// Paths leaving the closure of an interval/box die at that node; torus
/// coordinates wrap. Path p uses start p / paths_per_start.
PathEnsemble simulate_paths(const GeneratorSpec& gen, const Domain& domain,
                            const std::vector<Start>& starts, const TimeGrid& grid,
                            std::size_t paths_per_start, std::uint64_t seed,
                            std::uint64_t stream_id, const SimulationOptions& opt = {});

/// Symmetric alpha-stable variate with characteristic function exp(-|u|^alpha)
/// (Chambers-Mallows-Stuck), from two uniforms in (0, 1).
double stable_variate(double alpha, double u1, double u2) noexcept;

/// Space-time field v(t, x).
using Field = std::function<double(double t, double x)>;

/// Per-path value of  int_0^{horizon} e^{-beta r} v(s + r, X_{s+r}) dr  over the
/// alive part of the path (partial first step included), exact for the
/// piecewise-linear interpolant of v along the path.
double path_resolvent(const PathEnsemble& paths, std::size_t p, const Field& v, double beta);

/// Monte Carlo estimate of R^{0,T}_beta v at each start, from an ensemble built
/// with paths_per_start paths per start.
std::vector<Estimate> resolvent_mc(const PathEnsemble& paths, const std::vector<Start>& starts,
                                   std::size_t paths_per_start, const Field& v, double beta);

/// (1 - e^{-beta s}) / beta; conservative domains only.
double dual_resolvent_one(const Domain& domain, double beta, double s);

/// Density of k^beta with respect to ds dm: beta e^{-beta s}.
double killing_density(const Domain& domain, double beta, double s);

}  // namespace bdsde
