#include "bdsde/mild.hpp"

#include <cmath>

namespace bdsde {

namespace {

constexpr double kTwoPi = 2.0 * M_PI;

}  // namespace

SpectralBasis::SpectralBasis(const Domain& domain, double a, std::size_t J)
    : domain_(domain), a_(a), J_(J) {
    if (J == 0) throw ConfigError("spectral basis: truncation J must be positive");
    if (!(a > 0.0) || !std::isfinite(a)) throw ConfigError("spectral basis: diffusion must be positive");
    const auto kind = domain.kind();
    if (kind != Domain::Kind::torus && kind != Domain::Kind::interval) {
        throw UnsupportedError("spectral basis: torus or interval domains only");
    }
    const double L = domain.length();
    std::size_t Q = 0;
    if (kind == Domain::Kind::torus) {
        mu_.push_back(0.0);
        for (std::size_t k = 1; k <= J; ++k) {
            const double w = kTwoPi * static_cast<double>(k) / L;
            mu_.push_back(a * w * w);
            mu_.push_back(a * w * w);
        }
        // products up to frequency 3J resolved
        Q = 3 * J + 1;
        wq_ = L / static_cast<double>(Q);
        for (std::size_t q = 0; q < Q; ++q) xq_.push_back(domain.lower() + static_cast<double>(q) * wq_);
    } else {
        for (std::size_t k = 1; k <= J; ++k) {
            const double w = M_PI * static_cast<double>(k) / L;
            mu_.push_back(a * w * w);
        }
        Q = (3 * J + 1) / 2 + 1;
        wq_ = L / static_cast<double>(Q + 1);
        for (std::size_t q = 1; q <= Q; ++q) xq_.push_back(domain.lower() + static_cast<double>(q) * wq_);
    }
    const std::size_t n = mu_.size();
    V_.resize(Q, n);
    Vdx_.resize(Q, n);
    for (std::size_t q = 0; q < Q; ++q)
        for (std::size_t k = 0; k < n; ++k) {
            V_(q, k) = mode(k, xq_[q]);
            Vdx_(q, k) = mode_dx(k, xq_[q]);
        }
    P_ = wq_ * V_.transpose();
}

SpectralBasis SpectralBasis::for_generator(const Domain& domain, const GeneratorSpec& gen, std::size_t J) {
    if (gen.kind != GeneratorSpec::Kind::const_diffusion || !gen.time_constant()) {
        throw UnsupportedError("mild solver: needs a constant, time-independent diffusion generator");
    }
    return SpectralBasis(domain, gen.a0, J);
}

double SpectralBasis::mode(std::size_t k, double x) const {
    const double L = domain_.length();
    const double r = x - domain_.lower();
    if (domain_.kind() == Domain::Kind::torus) {
        if (k == 0) return 1.0 / std::sqrt(L);
        const double w = kTwoPi * static_cast<double>((k + 1) / 2) / L;
        return std::sqrt(2.0 / L) * (k % 2 ? std::cos(w * r) : std::sin(w * r));
    }
    const double w = M_PI * static_cast<double>(k + 1) / L;
    return std::sqrt(2.0 / L) * std::sin(w * r);
}

double SpectralBasis::mode_dx(std::size_t k, double x) const {
    const double L = domain_.length();
    const double r = x - domain_.lower();
    if (domain_.kind() == Domain::Kind::torus) {
        if (k == 0) return 0.0;
        const double w = kTwoPi * static_cast<double>((k + 1) / 2) / L;
        return std::sqrt(2.0 / L) * w * (k % 2 ? -std::sin(w * r) : std::cos(w * r));
    }
    const double w = M_PI * static_cast<double>(k + 1) / L;
    return std::sqrt(2.0 / L) * w * std::cos(w * r);
}

Eigen::VectorXd SpectralBasis::project(const Field& fn, double t) const {
    Eigen::VectorXd v(static_cast<Eigen::Index>(xq_.size()));
    for (std::size_t q = 0; q < xq_.size(); ++q) v(static_cast<Eigen::Index>(q)) = fn(t, xq_[q]);
    return project(v);
}

double SpectralBasis::evaluate(const Eigen::VectorXd& c, double x) const {
    double s = 0.0;
    for (std::size_t k = 0; k < size(); ++k) s += c(static_cast<Eigen::Index>(k)) * mode(k, x);
    return s;
}

double SpectralBasis::orthonormality_residual() const {
    const Eigen::MatrixXd G = P_ * V_;
    return (G - Eigen::MatrixXd::Identity(G.rows(), G.cols())).cwiseAbs().maxCoeff();
}

Eigen::VectorXd semigroup_apply(const SpectralBasis& basis, double t, const Eigen::VectorXd& c) {
    if (!(t >= 0.0)) throw ConfigError("semigroup: negative time " + format_double(t));
    if (static_cast<std::size_t>(c.size()) != basis.size()) throw ConfigError("semigroup: coefficient size mismatch");
    Eigen::VectorXd out(c.size());
    const auto& mu = basis.eigenvalues();
    for (Eigen::Index k = 0; k < c.size(); ++k) out(k) = std::exp(-mu[static_cast<std::size_t>(k)] * t) * c(k);
    return out;
}

std::vector<double> spectral_gradient(const SpectralBasis& basis, const Eigen::VectorXd& c,
                                      const std::vector<double>& x) {
    std::vector<double> out(x.size(), 0.0);
    for (std::size_t j = 0; j < x.size(); ++j)
        for (std::size_t k = 0; k < basis.size(); ++k) out[j] += c(static_cast<Eigen::Index>(k)) * basis.mode_dx(k, x[j]);
    return out;
}

MildMethod parse_mild_method(const std::string& name) {
    if (name == "stepper") return MildMethod::stepper;
    if (name == "global_picard") return MildMethod::global_picard;
    throw ConfigError("unknown mild method '" + name + "' (stepper, global_picard)");
}

namespace {

// Coefficients of dt F(t, u) + G(t, u) dbeta_i with dbeta the noise of
// interval i; `sign` flips the noise term for the reversed recursion.
class Increment {
public:
    Increment(const CoefficientSpec& data, const SpectralBasis& basis, double dt)
        : data_(data), basis_(basis), dt_(dt), sigma_(std::sqrt(2.0 * basis.diffusion())) {}

    Eigen::VectorXd operator()(const Eigen::VectorXd& u, double t, const BackwardNoise& noise, std::size_t i,
                               double sign) const {
        const auto& xq = basis_.quad_points();
        const Eigen::VectorXd v = basis_.synthesize(u);
        Eigen::VectorXd dz;
        if (data_.depends_on_z) dz = sigma_ * basis_.synthesize_dx(u);
        Eigen::VectorXd out(v.size());
        const bool has_g = !data_.g.zero();
        for (Eigen::Index q = 0; q < v.size(); ++q) {
            const double x = xq[static_cast<std::size_t>(q)];
            const double z = data_.depends_on_z ? dz(q) : 0.0;
            const double F = data_.f ? data_.f(t, x, v(q), z) : 0.0;
            const double G = has_g ? data_.g.contract(noise, i, t, x, v(q), z) : 0.0;
            out(q) = dt_ * F - sign * G;
        }
        return basis_.project(out);
    }

private:
    const CoefficientSpec& data_;
    const SpectralBasis& basis_;
    double dt_;
    double sigma_;
};

void check_mild_inputs(const CoefficientSpec& data, const SpectralBasis& basis, const TimeGrid& grid,
                       const BackwardNoise& noise) {
    if (!(noise.grid() == grid)) throw ConfigError("mild: noise grid differs from the time grid");
    if (!data.phi) throw ConfigError("mild: terminal condition missing");
    if (!data.g.zero() && noise.modes() < data.g.modes()) {
        throw ConfigError("mild: noise has fewer modes than the coefficient family");
    }
    if (data.domain.kind() != basis.domain().kind() || data.domain.length() != basis.domain().length()) {
        throw ConfigError("mild: basis and coefficient domains differ");
    }
}

Eigen::VectorXd terminal(const CoefficientSpec& data, const SpectralBasis& basis) {
    const auto& xq = basis.quad_points();
    Eigen::VectorXd v(static_cast<Eigen::Index>(xq.size()));
    for (std::size_t q = 0; q < xq.size(); ++q) v(static_cast<Eigen::Index>(q)) = data.phi(xq[q]);
    return basis.project(v);
}

// S_i = P_dt(S_{i+1} + inc(u_{i+1})), S_N = phi; the right-hand side at u
std::vector<Eigen::VectorXd> rhs_at(const std::vector<Eigen::VectorXd>& u, const CoefficientSpec& data,
                                    const SpectralBasis& basis, const TimeGrid& grid, const BackwardNoise& noise) {
    const std::size_t N = grid.n_steps();
    const Increment inc(data, basis, grid.dt());
    std::vector<Eigen::VectorXd> S(N + 1);
    S[N] = terminal(data, basis);
    for (std::size_t i = N; i-- > 0;) {
        S[i] = semigroup_apply(basis, grid.dt(), S[i + 1] + inc(u[i + 1], grid.node(i + 1), noise, i, -1.0));
    }
    return S;
}

double l2_dt(const std::vector<Eigen::VectorXd>& a, const std::vector<Eigen::VectorXd>& b, double dt) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double w = (i == 0 || i + 1 == a.size()) ? 0.5 * dt : dt;
        s += w * (a[i] - b[i]).squaredNorm();
    }
    return std::sqrt(s);
}

}  // namespace

MildSolution solve_mild(const CoefficientSpec& data, const SpectralBasis& basis, const TimeGrid& grid,
                        const BackwardNoise& noise, const MildOptions& opt) {
    check_mild_inputs(data, basis, grid, noise);
    MildSolution sol;
    sol.grid = grid;
    if (data.f_y_degree > 2 || data.f_y_degree < 0) {
        sol.warnings.push_back("driver of y-degree " +
                               (data.f_y_degree < 0 ? std::string("unbounded") : std::to_string(data.f_y_degree)) +
                               " aliases on the 3/2-padded quadrature grid");
    }
    const std::size_t N = grid.n_steps();
    const Increment inc(data, basis, grid.dt());
    if (opt.method == MildMethod::stepper) {
        sol.coeffs.resize(N + 1);
        sol.coeffs[N] = terminal(data, basis);
        for (std::size_t i = N; i-- > 0;) {
            sol.coeffs[i] = semigroup_apply(
                basis, grid.dt(), sol.coeffs[i + 1] + inc(sol.coeffs[i + 1], grid.node(i + 1), noise, i, -1.0));
            if (!sol.coeffs[i].allFinite()) {
                throw NumericalError("mild", "non-finite coefficients at node " + std::to_string(i));
            }
        }
        sol.iterations = 1;
        return sol;
    }

    std::vector<Eigen::VectorXd> u(N + 1, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(basis.size())));
    double last = 0.0;
    std::vector<double> history;
    for (std::size_t it = 1; it <= opt.max_iter; ++it) {
        auto next = rhs_at(u, data, basis, grid, noise);
        const double d = l2_dt(next, u, grid.dt());
        const double scale = l2_dt(next, std::vector<Eigen::VectorXd>(N + 1, Eigen::VectorXd::Zero(next[0].size())),
                                   grid.dt());
        sol.log.add(it, 0, "mild_change", d);
        if (it > 1 && last > 0.0) sol.log.add(it, 0, "mild_ratio", d / last);
        history.push_back(d);
        u = std::move(next);
        if (!std::isfinite(d)) throw NumericalError("mild", "non-finite Picard iterate");
        if (d <= opt.tol * std::max(1.0, scale)) {
            sol.coeffs = std::move(u);
            sol.iterations = it;
            return sol;
        }
        last = d;
    }
    throw ConvergenceError("mild", "global Picard did not reach tol " + format_double(opt.tol) + " in " +
                                       std::to_string(opt.max_iter) + " iterations",
                           history);
}

double mild_residual(const MildSolution& u, const CoefficientSpec& data, const SpectralBasis& basis,
                     const BackwardNoise& noise) {
    check_mild_inputs(data, basis, u.grid, noise);
    return l2_dt(u.coeffs, rhs_at(u.coeffs, data, basis, u.grid, noise), u.grid.dt());
}

double time_reversal_check(const MildSolution& u, const CoefficientSpec& data, const SpectralBasis& basis,
                           const BackwardNoise& noise) {
    check_mild_inputs(data, basis, u.grid, noise);
    const TimeGrid& grid = u.grid;
    const std::size_t N = grid.n_steps();
    const BackwardNoise rev = reverse_noise(noise);
    const Increment inc(data, basis, grid.dt());
    // ubar_k = u_{N-k}; forward step k -> k+1 uses the reversed increment of interval k
    std::vector<Eigen::VectorXd> ubar(N + 1), S(N + 1);
    for (std::size_t k = 0; k <= N; ++k) ubar[k] = u.coeffs[N - k];
    S[0] = terminal(data, basis);
    for (std::size_t k = 0; k < N; ++k) {
        S[k + 1] = semigroup_apply(basis, grid.dt(), S[k] + inc(ubar[k], grid.node(N - k), rev, k, 1.0));
    }
    return l2_dt(ubar, S, grid.dt());
}

MildFieldResult mild_field(const CoefficientSpec& data, const GeneratorSpec& gen, const TimeGrid& grid,
                           std::size_t n_time, std::size_t n_space, std::size_t outer, std::uint64_t seed,
                           const MildOptions& opt) {
    const SpectralBasis basis = SpectralBasis::for_generator(data.domain, gen, opt.modes);
    MildFieldResult res;
    FieldEstimate& u = res.field;
    u.s = time_mesh(grid, n_time);
    u.x = space_mesh(data.domain, n_space);
    u.outer = outer;
    u.domain = data.domain;
    u.value.assign(outer * u.s.size() * u.x.size(), 0.0);
    u.std_error.assign(u.value.size(), 0.0);
    const std::size_t modes = std::max<std::size_t>(data.q.modes(), 1);
    for (std::size_t o = 0; o < outer; ++o) {
        const BackwardNoise noise = outer_noise(grid, modes, seed, o);
        MildSolution sol = solve_mild(data, basis, grid, noise, opt);
        if (o == 0) res.warnings = sol.warnings;
        res.log.append(sol.log, "outer" + std::to_string(o) + "_");
        res.max_residual = std::max(res.max_residual, mild_residual(sol, data, basis, noise));
        for (std::size_t i = 0; i < u.s.size(); ++i) {
            const std::size_t node = *grid.index_of(u.s[i]);
            for (std::size_t j = 0; j < u.x.size(); ++j) u.value[u.index(o, i, j)] = sol.value(basis, node, u.x[j]);
        }
    }
    return res;
}

}  // namespace bdsde
