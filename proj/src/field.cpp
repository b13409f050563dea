#include "bdsde/field.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <ostream>

#include "bdsde/rng.hpp"

namespace bdsde {

namespace {

std::vector<double> space_quadrature(const FieldEstimate& u) {
    const auto kind = u.domain.kind();
    if (kind == Domain::Kind::torus || kind == Domain::Kind::interval) {
        return space_weights(u.domain, u.x.size());
    }
    // nonuniform trapezoid on whatever mesh was supplied
    const std::size_t n = u.x.size();
    std::vector<double> w(n, 0.0);
    if (n == 1) {
        w[0] = 1.0;
        return w;
    }
    for (std::size_t j = 0; j + 1 < n; ++j) {
        const double h = u.x[j + 1] - u.x[j];
        w[j] += 0.5 * h;
        w[j + 1] += 0.5 * h;
    }
    return w;
}

// int_0^h e^{-beta r} r^k dr for k = 0, 1, 2
void exp_moments(double beta, double h, double out[3]) {
    const double bh = beta * h;
    if (bh < 1.0) {
        for (int k = 0; k < 3; ++k) {
            double term = std::pow(h, k + 1);  // (-beta)^m h^{m+k+1} / m!
            double s = 0.0;
            for (int m = 0; m < 40; ++m) {
                s += term / static_cast<double>(m + k + 1);
                term *= -bh / static_cast<double>(m + 1);
            }
            out[k] = s;
        }
        return;
    }
    const double e = std::exp(-bh);
    out[0] = -std::expm1(-bh) / beta;
    out[1] = (1.0 - e * (1.0 + bh)) / (beta * beta);
    out[2] = (2.0 - e * (2.0 + 2.0 * bh + bh * bh)) / (beta * beta * beta);
}

// 1/2 alpha^2 (int_0^tau e^{-alpha t} A^2 dt + A_after^2 e^{-alpha tau} / alpha)
double af_density(const double* times, const double* squares, std::size_t n, double alpha,
                  double after_sq) {
    const double body = n >= 2 ? exp_weighted_trapezoid(times, squares, n, alpha) : 0.0;
    const double tau = n ? times[n - 1] : 0.0;
    return 0.5 * alpha * alpha * (body + after_sq * std::exp(-alpha * tau) / alpha);
}

// trigonometric interpolant derivative on a uniform periodic mesh; the
// unpaired Nyquist mode of an even mesh is dropped
void spectral_derivative(const std::vector<double>& v, double length, std::vector<double>& dv) {
    const std::size_t n = v.size();
    std::vector<std::complex<double>> c(n);
    for (std::size_t k = 0; k < n; ++k) {
        std::complex<double> acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            acc += v[j] * std::polar(1.0, -2.0 * M_PI * static_cast<double>(k * j % n) / static_cast<double>(n));
        }
        c[k] = acc / static_cast<double>(n);
    }
    const double w0 = 2.0 * M_PI / length;
    for (std::size_t k = 0; k < n; ++k) {
        if (2 * k == n) {
            c[k] = 0.0;
            continue;
        }
        const double freq = 2 * k < n ? static_cast<double>(k) : static_cast<double>(k) - static_cast<double>(n);
        c[k] *= std::complex<double>(0.0, w0 * freq);
    }
    for (std::size_t j = 0; j < n; ++j) {
        std::complex<double> acc = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            acc += c[k] * std::polar(1.0, 2.0 * M_PI * static_cast<double>(k * j % n) / static_cast<double>(n));
        }
        dv[j] = acc.real();
    }
}

double max_step(const std::vector<double>& t) {
    double m = 0.0;
    for (std::size_t k = 1; k < t.size(); ++k) m = std::max(m, t[k] - t[k - 1]);
    return m;
}

// int_0^h e^{-beta r} [(A0 + dA r/h)^2 + (r/h)(1 - r/h) q] dr: linear A plus a
// bridge term carrying the step's quadratic variation q
double bridge_step(double A0, double dA, double q, double h, double beta) {
    if (!(h > 0.0)) return 0.0;
    double m[3];
    exp_moments(beta, h, m);
    return A0 * A0 * m[0] + (2.0 * A0 * dA + q) * m[1] / h + (dA * dA - q) * m[2] / (h * h);
}

// Two samples per stratum: mean with the paired-difference variance estimate.
Estimate paired_strata(const std::vector<double>& v) {
    const std::size_t H = v.size() / 2;
    double sum = 0.0, var = 0.0;
    for (std::size_t h = 0; h < H; ++h) {
        sum += v[2 * h] + v[2 * h + 1];
        const double d = v[2 * h] - v[2 * h + 1];
        var += 0.25 * d * d;
    }
    const double n = static_cast<double>(H);
    return {sum / (2.0 * n), std::sqrt(var) / n};
}

// int_0^T int u(s, x)^2 k^beta(s) dx ds: Simpson in s, graded to the 1/beta
// layer at s = 0, periodic trapezoid in x
double killing_quadrature(const Field& u, double beta, const Domain& domain, double T) {
    constexpr std::size_t kX = 256;
    const auto xs = space_mesh(domain, kX);
    const auto wx = space_weights(domain, kX);
    auto inner = [&](double s) {
        double acc = 0.0;
        for (std::size_t j = 0; j < kX; ++j) {
            const double v = u(s, xs[j]);
            acc += wx[j] * v * v;
        }
        return acc * killing_density(domain, beta, s);
    };
    auto simpson = [&](double a, double b, std::size_t n) {
        if (!(b > a)) return 0.0;
        const double h = (b - a) / static_cast<double>(n);
        double acc = inner(a) + inner(b);
        for (std::size_t i = 1; i < n; ++i) acc += (i % 2 ? 4.0 : 2.0) * inner(a + static_cast<double>(i) * h);
        return acc * h / 3.0;
    };
    const double cut = std::min(T, 50.0 / beta);
    return simpson(0.0, cut, 2048) + simpson(cut, T, 512);
}

Estimate across(const std::vector<double>& v) {
    if (v.size() == 1) return {v[0], 0.0};
    return mean_and_stderr(v);
}

}  // namespace

Field FieldEstimate::interpolant(std::size_t o) const {
    if (o >= outer) throw ConfigError("field: outer index out of range");
    std::vector<double> vals(value.begin() + static_cast<std::ptrdiff_t>(index(o, 0, 0)),
                             value.begin() + static_cast<std::ptrdiff_t>(index(o, 0, 0) + s.size() * x.size()));
    std::vector<double> xs = x;
    const std::size_t nx = x.size();
    const Domain dom = domain;
    std::vector<double> ss = s;
    return [vals = std::move(vals), xs = std::move(xs), ss = std::move(ss), nx, dom](double t, double xq) {
        // time cell
        std::size_t i = 0;
        double wt = 0.0;
        if (ss.size() > 1) {
            const double tc = std::clamp(t, ss.front(), ss.back());
            auto it = std::upper_bound(ss.begin(), ss.end(), tc);
            i = std::min<std::size_t>(static_cast<std::size_t>(it - ss.begin()), ss.size() - 1);
            i = i == 0 ? 0 : i - 1;
            if (i + 1 >= ss.size()) i = ss.size() - 2;
            wt = (tc - ss[i]) / (ss[i + 1] - ss[i]);
        }
        auto at_x = [&](std::size_t ti) {
            const double* row = vals.data() + ti * nx;
            if (dom.periodic()) {
                const double L = dom.length();
                const double h = L / static_cast<double>(nx);
                double r = (xq - dom.lower()) / h;
                r -= std::floor(r / static_cast<double>(nx)) * static_cast<double>(nx);
                auto j = static_cast<std::size_t>(std::floor(r));
                if (j >= nx) j = nx - 1;
                const double w = r - static_cast<double>(j);
                return (1.0 - w) * row[j] + w * row[(j + 1) % nx];
            }
            // extended nodes: interval ends carry 0
            const bool killed = dom.kind() == Domain::Kind::interval;
            if (killed && (xq <= dom.lower() || xq >= dom.upper())) return 0.0;
            auto node = [&](std::size_t k, double& xv) {
                if (!killed) {
                    xv = xs[k];
                    return row[k];
                }
                if (k == 0) {
                    xv = dom.lower();
                    return 0.0;
                }
                if (k == nx + 1) {
                    xv = dom.upper();
                    return 0.0;
                }
                xv = xs[k - 1];
                return row[k - 1];
            };
            const std::size_t m = killed ? nx + 2 : nx;
            if (m == 1) return row[0];
            std::size_t lo = 0, hi = m - 1;
            double xl, xh;
            node(lo, xl);
            node(hi, xh);
            if (xq <= xl) return node(0, xl);
            if (xq >= xh) return node(m - 1, xh);
            while (hi - lo > 1) {
                const std::size_t mid = (lo + hi) / 2;
                double xm;
                node(mid, xm);
                if (xm <= xq) lo = mid;
                else hi = mid;
            }
            const double vl = node(lo, xl);
            const double vh = node(hi, xh);
            const double w = (xq - xl) / (xh - xl);
            return (1.0 - w) * vl + w * vh;
        };
        if (ss.size() == 1) return at_x(0);
        return (1.0 - wt) * at_x(i) + wt * at_x(i + 1);
    };
}

void FieldEstimate::write_csv(std::ostream& out) const {
    out << "outer_id,s,x,value,stderr\n";
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < s.size(); ++i)
            for (std::size_t j = 0; j < x.size(); ++j) {
                const std::size_t k = index(o, i, j);
                out << o << ',' << format_double(s[i]) << ',' << format_double(x[j]) << ','
                    << format_double(value[k]) << ',' << format_double(std_error[k]) << '\n';
            }
}

std::vector<double> time_mesh(const TimeGrid& grid, std::size_t n_time) {
    if (n_time == 0) throw ConfigError("field: n_time must be positive");
    std::vector<double> s(n_time + 1);
    for (std::size_t i = 0; i <= n_time; ++i) {
        const double t = grid.t_start() + grid.horizon() * static_cast<double>(i) / static_cast<double>(n_time);
        const auto idx = grid.index_of(t);
        if (!idx) {
            throw ConfigError("field: time mesh of " + std::to_string(n_time) +
                              " cells is not aligned with " + std::to_string(grid.n_steps()) + " steps");
        }
        s[i] = grid.node(*idx);
    }
    return s;
}

std::vector<double> time_weights(const std::vector<double>& s) {
    std::vector<double> w(s.size(), 0.0);
    for (std::size_t i = 0; i + 1 < s.size(); ++i) {
        const double h = s[i + 1] - s[i];
        w[i] += 0.5 * h;
        w[i + 1] += 0.5 * h;
    }
    return w;
}

FieldEstimate field_from_function(const std::function<double(std::size_t, double, double)>& fn,
                                  const Domain& domain, const std::vector<double>& s,
                                  const std::vector<double>& x, std::size_t outer) {
    FieldEstimate u;
    u.s = s;
    u.x = x;
    u.outer = outer;
    u.domain = domain;
    u.value.resize(outer * s.size() * x.size());
    u.std_error.assign(u.value.size(), 0.0);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < s.size(); ++i)
            for (std::size_t j = 0; j < x.size(); ++j) u.value[u.index(o, i, j)] = fn(o, s[i], x[j]);
    return u;
}

double field_l2_error(const FieldEstimate& u, std::size_t outer,
                      const std::function<double(double s, double x)>& ref, bool relative) {
    const auto ws = time_weights(u.s);
    const auto wx = space_quadrature(u);
    double err = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < u.s.size(); ++i)
        for (std::size_t j = 0; j < u.x.size(); ++j) {
            const double r = ref(u.s[i], u.x[j]);
            const double w = ws[i] * wx[j];
            err += w * std::pow(u.at(outer, i, j) - r, 2);
            norm += w * r * r;
        }
    if (!relative) return std::sqrt(err);
    return norm > 0.0 ? std::sqrt(err / norm) : std::sqrt(err);
}

SolverKind parse_solver_kind(const std::string& name) {
    if (name == "auto") return SolverKind::automatic;
    if (name == "linear") return SolverKind::linear;
    if (name == "picard") return SolverKind::picard;
    if (name == "monotone") return SolverKind::monotone;
    if (name == "gradient") return SolverKind::gradient;
    throw ConfigError("unknown solver '" + name + "' (auto, linear, picard, monotone, gradient)");
}

std::string solver_kind_name(SolverKind k) {
    switch (k) {
        case SolverKind::automatic: return "auto";
        case SolverKind::linear: return "linear";
        case SolverKind::picard: return "picard";
        case SolverKind::monotone: return "monotone";
        case SolverKind::gradient: return "gradient";
    }
    return "?";
}

SolverKind resolve_solver_kind(const CoefficientSpec& data, SolverKind kind) {
    if (kind != SolverKind::automatic) return kind;
    if (data.depends_on_z) return SolverKind::gradient;
    if (data.monotone_only || (data.f_depends_on_y && !std::isfinite(data.constants.L_lip_y))) {
        return SolverKind::monotone;
    }
    if (data.linear()) return SolverKind::linear;
    return SolverKind::picard;
}

BackwardNoise outer_noise(const TimeGrid& grid, std::size_t modes, std::uint64_t seed, std::size_t o) {
    return sample_backward_noise(grid, std::max<std::size_t>(modes, 1), seed, o);
}

BdsdeSolution solve_for(const CoefficientSpec& data, const PathEnsemble& paths,
                        const BackwardNoise& noise, const SolverConfig& cfg, SolverKind kind,
                        const MonotoneOptions& mono, const GradientOptions& grad,
                        CoefficientSpec* effective) {
    if (effective) *effective = data;
    switch (resolve_solver_kind(data, kind)) {
        case SolverKind::linear: return solve_linear(data, paths, noise, cfg);
        case SolverKind::picard: return solve_lipschitz_picard(data, paths, noise, cfg);
        case SolverKind::monotone: {
            MonotoneResult r = solve_monotone(data, paths, noise, cfg, mono);
            if (effective) *effective = r.effective;
            return std::move(r.solution);
        }
        case SolverKind::gradient: return solve_with_gradient(data, paths, noise, cfg, grad).solution;
        case SolverKind::automatic: break;
    }
    throw ConfigError("solver kind not resolved");
}

FieldEstimate feynman_kac_field(const CoefficientSpec& data, const GeneratorSpec& gen,
                                const TimeGrid& grid, const FieldOptions& opt,
                                const SolverConfig& cfg) {
    if (opt.inner_paths == 0 || opt.outer == 0 || opt.n_space == 0) {
        throw ConfigError("field: inner paths, outer realizations and n_space must be positive");
    }
    const Domain& dom = data.domain;
    const SolverKind kind = resolve_solver_kind(data, opt.solver);
    FieldEstimate u;
    u.s = time_mesh(grid, opt.n_time);
    u.x = space_mesh(dom, opt.n_space);
    u.outer = opt.outer;
    u.domain = dom;
    u.fast_mode = opt.fast_mode;
    const std::size_t ns = u.s.size();
    const std::size_t nx = u.x.size();
    u.value.assign(opt.outer * ns * nx, 0.0);
    u.std_error.assign(u.value.size(), 0.0);
    if (!opt.fast_mode) {
        u.bracket_rate.assign(u.value.size(), 0.0);
        u.bracket_rate_se.assign(u.value.size(), 0.0);
    }
    std::vector<std::size_t> node_of(ns);
    for (std::size_t i = 0; i < ns; ++i) node_of[i] = *grid.index_of(u.s[i]);
    const std::size_t N = grid.n_steps();
    const double dt = grid.dt();
    const std::size_t modes = std::max<std::size_t>(data.q.modes(), 1);

    SolverConfig inner_cfg = cfg;
    inner_cfg.threads = 1;
    SimulationOptions sim;
    sim.threads = 1;
    sim.keep_increments = kind == SolverKind::gradient;

    for (std::size_t o = 0; o < opt.outer; ++o) {
        const BackwardNoise noise = outer_noise(grid, modes, opt.seed, o);
        for (std::size_t j = 0; j < nx; ++j) u.value[u.index(o, ns - 1, j)] = data.phi(u.x[j]);

        if (opt.fast_mode) {
            std::vector<Start> starts;
            for (double xj : u.x) starts.push_back({grid.t_start(), {xj}});
            const std::size_t per = std::max<std::size_t>(1, opt.inner_paths / nx);
            SimulationOptions fsim = sim;
            fsim.threads = opt.threads;
            SolverConfig fcfg = cfg;
            fcfg.threads = opt.threads;
            const PathEnsemble paths = simulate_paths(gen, dom, starts, grid, per, opt.seed,
                                                      derive_stream(stream_tag::start, o, ~0ULL), fsim);
            CoefficientSpec eff;
            const BdsdeSolution sol = solve_for(data, paths, noise, fcfg, kind, opt.monotone, opt.gradient, &eff);
            u.max_residual = std::max(u.max_residual, residual_check(sol, eff, paths, noise).max_abs);
            for (std::size_t i = 0; i + 1 < ns; ++i) {
                const std::size_t k = node_of[i] - sol.first;
                for (std::size_t j = 0; j < nx; ++j) {
                    u.value[u.index(o, i, j)] = sol.fits[k](u.x[j]);
                    u.std_error[u.index(o, i, j)] = sol.reg_stderr[k];
                }
            }
            continue;
        }

        const std::size_t points = (ns - 1) * nx;
        std::vector<unsigned char> failed(points, 0);
        std::vector<double> residual(points, 0.0);
        parallel_for(points, opt.threads, [&](std::size_t q) {
            const std::size_t i = q / nx;
            const std::size_t j = q % nx;
            const std::size_t b = node_of[i];
            const std::size_t cell = u.index(o, i, j);
            try {
                const PathEnsemble paths =
                    simulate_paths(gen, dom, {{u.s[i], {u.x[j]}}}, grid, opt.inner_paths, opt.seed,
                                   derive_stream(stream_tag::start, o, i, j), sim);
                CoefficientSpec eff;
                const BdsdeSolution sol =
                    solve_for(data, paths, noise, inner_cfg, kind, opt.monotone, opt.gradient, &eff);
                residual[q] = residual_check(sol, eff, paths, noise).max_abs;
                const std::size_t M = paths.size();
                const std::size_t k = std::min(opt.bracket_steps, N - b);
                std::vector<double> total(M, 0.0), rate(M, 0.0);
                double mean = 0.0;
                for (std::size_t p = 0; p < M; ++p) {
                    if (!paths.alive(p, b)) continue;
                    const double y = sol.y(p, b);
                    mean += y;
                    double acc = y;
                    for (std::size_t n = b; n < N; ++n) acc += sol.dm(p, n);
                    total[p] = acc;
                    double br = 0.0;
                    for (std::size_t n = b; n < b + k; ++n) br += sol.dm(p, n) * sol.dm(p, n);
                    rate[p] = k ? br / (static_cast<double>(k) * dt) : 0.0;
                }
                u.value[cell] = mean / static_cast<double>(M);
                u.std_error[cell] = mean_and_stderr(total).std_error;
                const Estimate r = mean_and_stderr(rate);
                u.bracket_rate[cell] = r.value;
                u.bracket_rate_se[cell] = r.std_error;
            } catch (const NumericalError&) {
                failed[q] = 1;
                u.value[cell] = std::nan("");
                u.std_error[cell] = std::nan("");
            }
        });
        for (auto f : failed) u.failed += f;
        for (double r : residual) u.max_residual = std::max(u.max_residual, r);
        // no paths run from s = T; extend the slope linearly from the last two slices
        for (std::size_t j = 0; j < nx && ns >= 2; ++j) {
            const std::size_t last = u.index(o, ns - 1, j);
            const std::size_t a = u.index(o, ns - 2, j);
            if (ns >= 3) {
                const std::size_t b = u.index(o, ns - 3, j);
                const double w = (u.s[ns - 1] - u.s[ns - 2]) / (u.s[ns - 2] - u.s[ns - 3]);
                u.bracket_rate[last] = (1.0 + w) * u.bracket_rate[a] - w * u.bracket_rate[b];
                u.bracket_rate_se[last] =
                    std::hypot((1.0 + w) * u.bracket_rate_se[a], w * u.bracket_rate_se[b]);
            } else {
                u.bracket_rate[last] = u.bracket_rate[a];
                u.bracket_rate_se[last] = u.bracket_rate_se[a];
            }
        }
    }
    const double total_points = static_cast<double>(opt.outer * (ns - 1) * nx);
    if (u.failed > 0 && 1.0 - static_cast<double>(u.failed) / total_points < opt.min_coverage) {
        throw NumericalError("field", std::to_string(u.failed) + " of " +
                                          std::to_string(static_cast<std::size_t>(total_points)) +
                                          " mesh points failed");
    }
    return u;
}

std::vector<LadderPoint> energy_af(const std::vector<AfSample>& samples,
                                   const std::vector<double>& alpha_ladder, AfConvention convention) {
    if (alpha_ladder.empty()) throw ConfigError("energy: empty ladder");
    for (std::size_t k = 0; k < alpha_ladder.size(); ++k) {
        if (!(alpha_ladder[k] > 0.0)) throw ConfigError("energy: ladder entries must be positive");
        if (k > 0 && !(alpha_ladder[k] > alpha_ladder[k - 1])) {
            throw ConfigError("energy: ladder must be strictly increasing");
        }
    }
    double dt_max = 0.0;
    std::size_t groups = 0;
    for (const auto& s : samples) {
        if (s.times.size() != s.values.size()) throw ConfigError("energy: times and values differ in length");
        dt_max = std::max(dt_max, max_step(s.times));
        groups = std::max(groups, s.group + 1);
    }
    if (alpha_ladder.back() * dt_max > 0.5) {
        throw ConfigError("energy: alpha dt = " + format_double(alpha_ladder.back() * dt_max) +
                          " > 0.5, exponential under-resolved");
    }
    std::vector<std::vector<double>> squares(samples.size());
    for (std::size_t n = 0; n < samples.size(); ++n) {
        squares[n].resize(samples[n].values.size());
        for (std::size_t k = 0; k < samples[n].values.size(); ++k) {
            squares[n][k] = samples[n].values[k] * samples[n].values[k];
        }
    }
    std::vector<LadderPoint> out;
    for (double alpha : alpha_ladder) {
        std::vector<double> group_total(groups, 0.0);
        std::vector<double> contrib(samples.size(), 0.0);
        for (std::size_t n = 0; n < samples.size(); ++n) {
            const auto& s = samples[n];
            const double after = convention == AfConvention::frozen
                                     ? (squares[n].empty() ? 0.0 : squares[n].back())
                                     : s.u0 * s.u0;
            contrib[n] = s.weight * af_density(s.times.data(), squares[n].data(), s.times.size(), alpha, after);
            group_total[s.group] += contrib[n];
        }
        LadderPoint lp;
        lp.alpha = alpha;
        if (groups >= 2) {
            lp.value = mean_and_stderr(group_total);
        } else if (!samples.empty()) {
            // one group of iid weighted samples
            const Estimate e = mean_and_stderr(contrib);
            const double n = static_cast<double>(samples.size());
            lp.value = {e.value * n, e.std_error * n};
        }
        out.push_back(lp);
    }
    return out;
}

Estimate richardson(const std::vector<LadderPoint>& ladder, std::size_t order) {
    if (ladder.empty()) throw ConfigError("richardson: empty ladder");
    if (order == 0) throw ConfigError("richardson: order must be positive");
    if (ladder.size() == 1) return ladder[0].value;
    std::vector<LadderPoint> l = ladder;
    std::sort(l.begin(), l.end(), [](const LadderPoint& a, const LadderPoint& b) { return a.alpha < b.alpha; });
    if (order >= 2 && l.size() >= 3) {
        // polynomial in h = 1/alpha through the top order + 1 points, evaluated at 0
        const std::size_t m = std::min(order + 1, l.size());
        double v = 0.0, var = 0.0;
        for (std::size_t a = l.size() - m; a < l.size(); ++a) {
            double w = 1.0;
            for (std::size_t b = l.size() - m; b < l.size(); ++b) {
                if (b == a) continue;
                const double ha = 1.0 / l[a].alpha, hb = 1.0 / l[b].alpha;
                w *= hb / (hb - ha);
            }
            v += w * l[a].value.value;
            var += std::pow(w * l[a].value.std_error, 2);
        }
        return {v, std::sqrt(var)};
    }
    const LadderPoint& p1 = l[l.size() - 2];
    const LadderPoint& p2 = l.back();
    const double d = p2.alpha - p1.alpha;
    return {(p2.alpha * p2.value.value - p1.alpha * p1.value.value) / d,
            std::hypot(p2.alpha * p2.value.std_error, p1.alpha * p1.value.std_error) / d};
}

Estimate energy_N_closed(const CoefficientSpec& data, const FieldEstimate& u) {
    const auto ws = time_weights(u.s);
    const auto wx = space_quadrature(u);
    std::vector<double> per(u.outer, 0.0);
    if (data.g.zero()) return {0.0, 0.0};
    for (std::size_t o = 0; o < u.outer; ++o) {
        double s = 0.0;
        for (std::size_t i = 0; i < u.s.size(); ++i)
            for (std::size_t j = 0; j < u.x.size(); ++j)
                s += ws[i] * wx[j] * data.g.squared_norm(u.s[i], u.x[j], u.at(o, i, j), 0.0);
        per[o] = 0.5 * s;
    }
    return across(per);
}

std::vector<AfSample> n_functional_samples(const CoefficientSpec& data, const GeneratorSpec& gen,
                                           const TimeGrid& grid,
                                           const std::function<Field(std::size_t)>& u_of_outer,
                                           std::size_t n_space, const EnergyOptions& opt) {
    const Domain& dom = data.domain;
    const auto xs = space_mesh(dom, n_space);
    const auto wx = space_weights(dom, n_space);
    const std::size_t N = grid.n_steps();
    const double dt = grid.dt();
    const std::size_t modes = std::max<std::size_t>(data.q.modes(), 1);
    const bool has_g = !data.g.zero();
    std::vector<Start> starts;
    std::vector<double> start_w;
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < xs.size(); ++j) {
            starts.push_back({grid.node(i), {xs[j]}});
            start_w.push_back((i == 0 ? 0.5 * dt : dt) * wx[j]);
        }
    std::vector<AfSample> out;
    out.reserve(opt.outer * starts.size());
    SimulationOptions sim;
    sim.threads = opt.threads;
    sim.keep_increments = false;
    for (std::size_t o = 0; o < opt.outer; ++o) {
        const BackwardNoise noise = outer_noise(grid, modes, opt.seed, o);
        const Field u = u_of_outer(o);
        const PathEnsemble paths = simulate_paths(gen, dom, starts, grid, 1, opt.seed,
                                                  derive_stream(stream_tag::start, o, 0x4e), sim);
        std::vector<AfSample> batch(starts.size());
        parallel_for(starts.size(), opt.threads, [&](std::size_t p) {
            AfSample& a = batch[p];
            a.weight = start_w[p];
            a.group = o;
            const std::size_t b = paths.birth(p);
            const double s = paths.start_time(p);
            const double x0 = paths.start_x(p);
            a.u0 = u(s, x0);
            a.times.push_back(0.0);
            a.values.push_back(0.0);
            double n_val = 0.0;
            for (std::size_t i = b; i < N && paths.alive(p, i + 1); ++i) {
                const double t1 = grid.node(i + 1);
                const double x1 = paths.x(p, i + 1);
                const double uv = u(t1, x1);
                const double F = data.f ? data.f(t1, x1, uv, 0.0) : 0.0;
                const double G = has_g ? data.g.contract(noise, i, t1, x1, uv, 0.0) : 0.0;
                n_val -= F * dt + G;
                a.times.push_back(t1 - s);
                a.values.push_back(n_val);
            }
        });
        for (auto& a : batch) out.push_back(std::move(a));
    }
    return out;
}

Sides eqe1_sides(const Field& u, double beta, const GeneratorSpec& gen, const Domain& domain,
                 double T, const EnergyOptions& opt) {
    if (!domain.periodic()) {
        throw UnsupportedError("eqe1: the killing density needs a conservative bounded domain (torus)");
    }
    if (!(beta > 0.0) || !(T > 0.0)) throw ConfigError("eqe1: beta and T must be positive");
    if (opt.starts < 2 || opt.starts % 2) throw ConfigError("eqe1: starts must be even and at least 2");
    const auto n_steps = static_cast<std::size_t>(std::ceil(T * beta / opt.dt_factor - 1e-9));
    const TimeGrid grid(0.0, T, std::max<std::size_t>(n_steps, 1));
    const double mass = T * domain.length();
    const CounterRng rng(opt.seed);
    constexpr std::size_t kBatch = 1024;
    const bool diffusive = gen.kind != GeneratorSpec::Kind::fractional;
    const double dx = 1e-5 * domain.length();
    SimulationOptions sim;
    sim.threads = opt.threads;
    sim.keep_increments = false;

    std::vector<double> lhs(opt.starts), rhs(opt.starts);
    for (int side = 0; side < 2; ++side) {
        const std::uint64_t sstream = derive_stream(stream_tag::start, 0xe9e1, static_cast<std::uint64_t>(side));
        for (std::size_t b0 = 0; b0 < opt.starts; b0 += kBatch) {
            const std::size_t nb = std::min(kBatch, opt.starts - b0);
            std::vector<Start> starts(nb);
            for (std::size_t k = 0; k < nb; ++k) {
                // start time stratified in pairs: stratum (b0 + k) / 2 of starts / 2
                const auto [u1, u2] = rng.uniform_pair(sstream, b0 + k);
                const double stratum = static_cast<double>((b0 + k) / 2);
                starts[k] = {T * (stratum + u1) / static_cast<double>(opt.starts / 2),
                             {domain.lower() + domain.length() * u2}};
            }
            const PathEnsemble paths = simulate_paths(
                gen, domain, starts, grid, 1, opt.seed,
                derive_stream(stream_tag::start, 0xe9e2 + static_cast<std::uint64_t>(side), b0), sim);
            parallel_for(nb, opt.threads, [&](std::size_t p) {
                const double s = paths.start_time(p);
                const double x0 = paths.start_x(p);
                const double u0 = u(s, x0);
                if (side == 0) {
                    // quadratic variation density a u_x^2 at a node (diffusions only)
                    auto qv = [&](double t, double x) {
                        const double d = (u(t, x + dx) - u(t, x - dx)) / (2.0 * dx);
                        return gen.a(t, x) * d * d;
                    };
                    double t_prev = 0.0, A_prev = 0.0, q_prev = diffusive ? qv(s, x0) : 0.0;
                    double body = 0.0;
                    for (std::size_t i = paths.birth(p); i < paths.lifetime(p); ++i) {
                        const double tn = grid.node(i);
                        const double t = tn - s;
                        const double A = u(tn, paths.x(p, i)) - u0;
                        const double h = t - t_prev;
                        if (h <= 0.0) {
                            A_prev = A;
                            continue;
                        }
                        const double dA = A - A_prev;
                        const double q_next = diffusive ? qv(tn, paths.x(p, i)) : 0.0;
                        const double q = diffusive ? h * (q_prev + q_next) : dA * dA;
                        body += std::exp(-beta * t_prev) * bridge_step(A_prev, dA, q, h, beta);
                        t_prev = t;
                        A_prev = A;
                        q_prev = q_next;
                    }
                    // beta^2 E int e^{-beta t} A^2 = 2 e(A; beta), A = -u0 after the lifetime
                    lhs[b0 + p] = mass * beta * beta * (body + u0 * u0 * std::exp(-beta * t_prev) / beta);
                } else {
                    const double R = path_resolvent(paths, p, u, beta);
                    rhs[b0 + p] = mass * 2.0 * beta * (u0 - beta * R) * u0;
                }
            });
        }
    }
    Estimate r = paired_strata(rhs);
    r.value -= killing_quadrature(u, beta, domain, T);
    return {paired_strata(lhs), r};
}

double killing_pairing(const FieldEstimate& u, std::size_t o, double beta) {
    if (!(beta > 0.0)) throw ConfigError("killing pairing: beta must be positive");
    const auto wx = space_quadrature(u);
    const double s0 = u.s.front();
    double total = 0.0;
    double m[3];
    for (std::size_t j = 0; j < u.x.size(); ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i + 1 < u.s.size(); ++i) {
            const double h = u.s[i + 1] - u.s[i];
            const double ua = u.at(o, i, j);
            const double d = u.at(o, i + 1, j) - ua;
            exp_moments(beta, h, m);
            const double cell = ua * ua * m[0] + 2.0 * ua * d / h * m[1] + d * d / (h * h) * m[2];
            acc += beta * std::exp(-beta * (u.s[i] - s0)) * cell;
        }
        total += wx[j] * acc;
    }
    return total;
}

double bform_norm_one(const FieldEstimate& u, std::size_t o, const GeneratorSpec& gen) {
    if (!gen.gradient_form()) {
        throw UnsupportedError("bform: no quadratic-form quadrature for the fractional generator");
    }
    const auto ws = time_weights(u.s);
    const auto wx = space_quadrature(u);
    const std::size_t nx = u.x.size();
    const Domain& dom = u.domain;
    double total = 0.0;
    std::vector<double> row(nx), drow(nx);
    for (std::size_t i = 0; i < u.s.size(); ++i) {
        if (dom.periodic()) {
            for (std::size_t j = 0; j < nx; ++j) row[j] = u.at(o, i, j);
            spectral_derivative(row, dom.length(), drow);
        }
        for (std::size_t j = 0; j < nx; ++j) {
            double du = 0.0;
            if (dom.periodic()) {
                du = drow[j];
            } else if (nx > 1) {
                if (j == 0) du = (u.at(o, i, 1) - u.at(o, i, 0)) / (u.x[1] - u.x[0]);
                else if (j + 1 == nx) du = (u.at(o, i, j) - u.at(o, i, j - 1)) / (u.x[j] - u.x[j - 1]);
                else du = (u.at(o, i, j + 1) - u.at(o, i, j - 1)) / (u.x[j + 1] - u.x[j - 1]);
            }
            total += ws[i] * wx[j] * gen.a(u.s[i], u.x[j]) * du * du;
        }
    }
    return total;
}

Estimate bform_norm(const FieldEstimate& u, const GeneratorSpec& gen) {
    std::vector<double> per(u.outer);
    for (std::size_t o = 0; o < u.outer; ++o) per[o] = bform_norm_one(u, o, gen);
    return across(per);
}

IdentityReport energy_identity_sides(const FieldEstimate& u, const GeneratorSpec& gen,
                                     const std::vector<double>& k_ladder) {
    if (!u.domain.periodic()) {
        throw UnsupportedError("energy identity: the killing density needs a conservative domain (torus)");
    }
    if (u.bracket_rate.size() != u.value.size()) {
        throw ConfigError("energy identity: field carries no martingale brackets");
    }
    if (k_ladder.empty()) throw ConfigError("energy identity: empty beta ladder");
    const auto ws = time_weights(u.s);
    const auto wx = space_quadrature(u);
    const std::size_t O = u.outer;
    std::vector<double> lhs(O), r1(O), r2(O), u0(O), B(O), K(O);
    std::vector<std::vector<double>> kl(k_ladder.size(), std::vector<double>(O));
    double lhs_var_inner = 0.0;
    for (std::size_t o = 0; o < O; ++o) {
        double e = 0.0;
        for (std::size_t i = 0; i < u.s.size(); ++i)
            for (std::size_t j = 0; j < u.x.size(); ++j) {
                const std::size_t c = u.index(o, i, j);
                e += 0.5 * ws[i] * wx[j] * u.bracket_rate[c];
                lhs_var_inner += std::pow(0.5 * ws[i] * wx[j] * u.bracket_rate_se[c], 2);
            }
        lhs[o] = e;
        double n0 = 0.0;
        for (std::size_t j = 0; j < u.x.size(); ++j) n0 += wx[j] * u.at(o, 0, j) * u.at(o, 0, j);
        u0[o] = n0;
        B[o] = bform_norm_one(u, o, gen);
        std::vector<LadderPoint> lad;
        for (std::size_t k = 0; k < k_ladder.size(); ++k) {
            kl[k][o] = killing_pairing(u, o, k_ladder[k]);
            lad.push_back({k_ladder[k], {kl[k][o], 0.0}});
        }
        K[o] = richardson(lad, 2).value;
        r1[o] = n0 + B[o] - 0.5 * K[o];
        r2[o] = 0.5 * n0 + B[o] - 0.5 * K[o];
    }
    IdentityReport rep;
    rep.lhs = across(lhs);
    if (O == 1) rep.lhs.std_error = std::sqrt(lhs_var_inner);
    rep.rhs_i = across(r1);
    rep.rhs_ii = across(r2);
    rep.u0_norm = across(u0);
    rep.b_norm = across(B);
    rep.k_pairing = across(K);
    for (std::size_t k = 0; k < k_ladder.size(); ++k) rep.k_ladder.push_back({k_ladder[k], across(kl[k])});
    // combined Monte Carlo error with a relative rounding floor
    rep.tolerance = std::max(3.0 * std::hypot(rep.lhs.std_error, rep.rhs_ii.std_error),
                             1e-12 * std::max(1.0, rep.u0_norm.value));
    rep.pass_ii = std::abs(rep.lhs.value - rep.rhs_ii.value) <= rep.tolerance;
    return rep;
}

Sides energy_estimate_sides(const FieldEstimate& u, const CoefficientSpec& data,
                            const GeneratorSpec& gen) {
    const auto ws = time_weights(u.s);
    const auto wx = space_quadrature(u);
    std::vector<double> lhs(u.outer);
    for (std::size_t o = 0; o < u.outer; ++o) {
        double sup = 0.0;
        for (std::size_t i = 0; i < u.s.size(); ++i) {
            double n = 0.0;
            for (std::size_t j = 0; j < u.x.size(); ++j) n += wx[j] * u.at(o, i, j) * u.at(o, i, j);
            sup = std::max(sup, n);
        }
        lhs[o] = sup + bform_norm_one(u, o, gen);
    }
    double rhs = 0.0;
    for (std::size_t j = 0; j < u.x.size(); ++j) rhs += wx[j] * std::pow(data.phi(u.x[j]), 2);
    for (std::size_t i = 0; i < u.s.size(); ++i)
        for (std::size_t j = 0; j < u.x.size(); ++j) {
            const double f0 = data.f ? data.f(u.s[i], u.x[j], 0.0, 0.0) : 0.0;
            const double g0 = data.g.zero() ? 0.0 : data.g.squared_norm(u.s[i], u.x[j], 0.0, 0.0);
            rhs += ws[i] * wx[j] * (f0 * f0 + g0);
        }
    return {across(lhs), {rhs, 0.0}};
}

void write_energy_csv(std::ostream& out, const std::vector<EnergyRow>& rows) {
    out << "alpha_or_beta,quantity,estimate,stderr\n";
    for (const auto& r : rows) {
        out << format_double(r.parameter) << ',' << r.quantity << ',' << format_double(r.estimate.value)
            << ',' << format_double(r.estimate.std_error) << '\n';
    }
}

}  // namespace bdsde
