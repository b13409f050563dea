#include "bdsde/solver.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <memory>
#include <ostream>
#include <sstream>

#include "bdsde/rng.hpp"

namespace bdsde {

namespace {

constexpr std::size_t kChunk = 512;

void check_inputs(const CoefficientSpec& data, const PathEnsemble& paths,
                  const BackwardNoise& noise, const SolverConfig& cfg) {
    if (!(paths.grid() == noise.grid())) throw ConfigError("solver: noise grid differs from path grid");
    if (paths.size() == 0) throw ConfigError("solver: empty path ensemble");
    if (paths.dim() != 1) throw UnsupportedError("solver: one-dimensional state only");
    if (!data.g.zero() && data.g.modes() > noise.modes()) {
        throw ConfigError("solver: noise has " + std::to_string(noise.modes()) + " modes, g needs " +
                          std::to_string(data.g.modes()));
    }
    if (!data.phi) throw ConfigError("solver: terminal value missing");
    cfg.regression.validate(data.domain);
}

void require_finite(double v, std::size_t node, const char* what) {
    if (!std::isfinite(v)) {
        throw NumericalError("solver", std::string("non-finite ") + what + " at node " +
                                           std::to_string(node));
    }
}

// sup over nodes of the alive mean of (a - b)^2, and the node attaining it
std::pair<double, std::size_t> sup_mean_sq(const std::vector<double>& a, const std::vector<double>* b,
                                           const PathEnsemble& paths) {
    const std::size_t n = paths.size();
    double best = 0.0;
    std::size_t arg = paths.last_node();
    for (std::size_t i = paths.first_node(); i <= paths.last_node(); ++i) {
        double s = 0.0;
        std::size_t cnt = 0;
        const std::size_t base = (i - paths.first_node()) * n;
        for (std::size_t p = 0; p < n; ++p) {
            if (!paths.alive(p, i)) continue;
            const double d = a[base + p] - (b ? (*b)[base + p] : 0.0);
            s += d * d;
            ++cnt;
        }
        if (cnt == 0) continue;
        s /= static_cast<double>(cnt);
        if (s > best) {
            best = s;
            arg = i;
        }
    }
    return {best, arg};
}

}  // namespace

void IterationLog::append(const IterationLog& other, const std::string& prefix) {
    for (const auto& r : other.rows) rows.push_back({r.iter, r.node, prefix + r.metric, r.value});
}

void IterationLog::write_csv(std::ostream& out, bool header) const {
    if (header) out << "iter,node,metric,value\n";
    for (const auto& r : rows) {
        out << r.iter << ',' << r.node << ',' << r.metric << ',' << format_double(r.value) << '\n';
    }
}

double BdsdeSolution::bracket(std::size_t p, std::size_t from) const noexcept {
    double s = 0.0;
    const std::size_t N = grid.n_steps();
    for (std::size_t i = std::max(from, first); i < N; ++i) {
        const double d = dM[node_index(p, i)];
        s += d * d;
    }
    return s;
}

BdsdeSolution backward_sweep(const CoefficientSpec& data, const PathEnsemble& paths,
                             const BackwardNoise& noise, const SolverConfig& cfg,
                             const std::vector<double>* frozen_y,
                             const std::vector<double>* frozen_z) {
    check_inputs(data, paths, noise, cfg);
    const TimeGrid& grid = paths.grid();
    const std::size_t N = grid.n_steps();
    const std::size_t first = paths.first_node();
    const std::size_t n = paths.size();
    const std::size_t nodes = N - first + 1;
    const double dt = grid.dt();
    if (frozen_y && frozen_y->size() != nodes * n) throw ConfigError("solver: frozen y has wrong size");
    if (frozen_z && frozen_z->size() != nodes * n) throw ConfigError("solver: frozen z has wrong size");

    BdsdeSolution sol;
    sol.grid = grid;
    sol.n_paths = n;
    sol.first = first;
    sol.Y.assign(nodes * n, 0.0);
    sol.dM.assign(nodes * n, 0.0);
    sol.drive_y.assign(nodes * n, 0.0);
    sol.drive_z.assign(nodes * n, 0.0);
    sol.reg_stderr.assign(nodes, 0.0);
    sol.fits.resize(nodes);

    const std::size_t top = (N - first) * n;
    for (std::size_t p = 0; p < n; ++p) {
        if (!paths.alive(p, N)) continue;
        const double v = data.phi(paths.x(p, N));
        require_finite(v, N, "terminal value");
        sol.Y[top + p] = v;
    }

    std::vector<double> arg(n, 0.0);
    std::vector<unsigned char> mask(n, 0);
    const bool has_g = !data.g.zero();
    const std::size_t chunks = (n + kChunk - 1) / kChunk;

    for (std::size_t i = N; i-- > first;) {
        const double t1 = grid.node(i + 1);
        const std::size_t row = (i - first) * n;
        const std::size_t next = row + n;
        parallel_for(chunks, cfg.threads, [&](std::size_t c) {
            const std::size_t end = std::min(n, (c + 1) * kChunk);
            for (std::size_t p = c * kChunk; p < end; ++p) {
                mask[p] = paths.alive(p, i) ? 1 : 0;
                arg[p] = 0.0;
                if (!mask[p] || !paths.alive(p, i + 1)) continue;
                const double x1 = paths.x(p, i + 1);
                const double yv = frozen_y ? (*frozen_y)[next + p] : sol.Y[next + p];
                const double zv = frozen_z ? (*frozen_z)[row + p] : 0.0;
                sol.drive_y[next + p] = yv;
                sol.drive_z[row + p] = zv;
                const double F = data.f ? data.f(t1, x1, yv, zv) : 0.0;
                const double G = has_g ? data.g.contract(noise, i, t1, x1, yv, zv) : 0.0;
                const double a = sol.Y[next + p] + F * dt + G;
                require_finite(a, i, "regression target");
                arg[p] = a;
            }
        });
        RegressionResult r = regress_conditional(arg, std::span<const double>(paths.point(0, i), n),
                                                 mask, cfg.regression, data.domain);
        for (std::size_t p = 0; p < n; ++p) {
            if (!mask[p]) continue;
            sol.Y[row + p] = r.fitted[p];
            sol.dM[row + p] = arg[p] - r.fitted[p];
        }
        sol.reg_stderr[i - first] = r.std_error;
        if (r.fn.status() == FittedFunction::Status::mean_fallback) ++sol.fallback_nodes;
        sol.fits[i - first] = std::move(r.fn);
    }
    sol.iterations = 1;
    return sol;
}

BdsdeSolution solve_linear(const CoefficientSpec& data, const PathEnsemble& paths,
                           const BackwardNoise& noise, const SolverConfig& cfg) {
    if (!data.linear()) throw ConfigError("solve_linear: f and g must not depend on (y, z)");
    return backward_sweep(data, paths, noise, cfg, nullptr, nullptr);
}

BdsdeSolution solve_lipschitz_picard(const CoefficientSpec& data, const PathEnsemble& paths,
                                     const BackwardNoise& noise, const SolverConfig& cfg,
                                     const std::vector<double>* frozen_z) {
    if (data.f_depends_on_y && !std::isfinite(data.constants.L_lip_y)) {
        throw ConfigError("solve_lipschitz_picard: driver '" + data.f_name +
                          "' has no finite Lipschitz constant in y");
    }
    if (cfg.max_iter == 0) throw ConfigError("solve_lipschitz_picard: max_iter must be positive");
    const std::size_t nodes = paths.last_node() - paths.first_node() + 1;
    std::vector<double> prev(nodes * paths.size(), 0.0);
    std::vector<double> history;
    IterationLog log;
    double last = 0.0;
    for (std::size_t it = 1; it <= cfg.max_iter; ++it) {
        BdsdeSolution sol = backward_sweep(data, paths, noise, cfg, &prev, frozen_z);
        const auto [d, node] = sup_mean_sq(sol.Y, &prev, paths);
        const double scale = sup_mean_sq(sol.Y, nullptr, paths).first;
        history.push_back(d);
        if (cfg.record_log) {
            log.add(it, node, "picard_msd", d);
            if (it > 1 && last > 0.0) log.add(it, node, "picard_ratio", std::sqrt(d / last));
        }
        last = d;
        if (d == 0.0 || std::sqrt(d) <= cfg.picard_tol * std::max(1.0, std::sqrt(scale))) {
            sol.iterations = it;
            sol.log = std::move(log);
            return sol;
        }
        prev = std::move(sol.Y);
    }
    throw ConvergenceError("picard", "no convergence in " + std::to_string(cfg.max_iter) +
                                         " iterations (last msd " + format_double(last) + ")",
                           std::move(history));
}

InfConvolution::InfConvolution(const AutonomousFn& f, double n, double L, double R, double h)
    : n_(n), L_(L), R_(R), h_(h), fn_(f) {
    if (!f) throw ConfigError("inf_convolution: driver missing");
    if (!(n >= 1.0) || !std::isfinite(n)) throw ConfigError("inf_convolution: n must be >= 1");
    if (!(R > 0.0) || !(h > 0.0) || !std::isfinite(R) || !std::isfinite(h)) {
        throw ConfigError("inf_convolution: empty search grid");
    }
    if (std::abs(L) > n) throw ConfigError("inf_convolution: need n >= |L|");
    const auto G = static_cast<std::size_t>(std::llround(2.0 * R / h));
    if (G < 2) throw ConfigError("inf_convolution: empty search grid");
    h_ = 2.0 * R / static_cast<double>(G);
    x_.resize(G + 1);
    f_.resize(G + 1);
    for (std::size_t j = 0; j <= G; ++j) {
        x_[j] = j == G ? R : -R + static_cast<double>(j) * h_;
        f_[j] = f(x_[j]);
        if (!std::isfinite(f_[j])) throw NumericalError("inf_convolution", "driver not finite on the grid");
    }
    // outward descent steeper than n: the infimum lies outside [-R, R]
    const double right = (f_[G] - f_[G - 1]) / h_ - L;
    const double left = (f_[0] - f_[1]) / h_ + L;
    if (right < -n || left < -n) {
        throw ConfigError("inf_convolution: driver unbounded below near the grid edge; truncate first");
    }
    lambda_ = *std::min_element(f_.begin(), f_.end());
    prefix_.resize(G + 1);
    suffix_.resize(G + 1);
    for (std::size_t j = 0; j <= G; ++j) {
        const double v = f_[j] - L * x_[j] - n * x_[j];
        prefix_[j] = j == 0 ? v : std::min(prefix_[j - 1], v);
    }
    for (std::size_t j = G + 1; j-- > 0;) {
        const double v = f_[j] - L * x_[j] + n * x_[j];
        suffix_[j] = j == G ? v : std::min(suffix_[j + 1], v);
    }
}

double InfConvolution::operator()(double y) const {
    const std::size_t G = x_.size() - 1;
    double best;
    if (y <= -R_) {
        best = suffix_[0] - n_ * y;
    } else if (y >= R_) {
        best = prefix_[G] + n_ * y;
    } else {
        auto j = static_cast<std::size_t>(std::floor((y + R_) / h_));
        j = std::min(j, G);
        // keep x_j <= y < x_{j+1} despite rounding in the division
        while (j > 0 && x_[j] > y) --j;
        while (j < G && x_[j + 1] <= y) ++j;
        best = prefix_[j] + n_ * y;
        if (j < G) best = std::min(best, suffix_[j + 1] - n_ * y);
    }
    // the point y itself is always a candidate (x = y gives f(y))
    return std::min(best + L_ * y, fn_(y));
}

InfConvolution inf_convolution(const AutonomousFn& f, double n, double L_mono, double R, double h) {
    return InfConvolution(f, n, L_mono, R, h);
}

InfConvCertificate certify_inf_convolution(const AutonomousFn& f, const std::vector<double>& n_ladder,
                                           double L_mono, double R, double h, std::size_t probes,
                                           std::uint64_t seed) {
    if (n_ladder.empty()) throw ConfigError("inf_convolution: empty n ladder");
    std::vector<double> ladder = n_ladder;
    std::sort(ladder.begin(), ladder.end());
    std::vector<InfConvolution> fns;
    fns.reserve(ladder.size());
    for (double n : ladder) fns.emplace_back(f, n, L_mono, R, h);

    InfConvCertificate cert;
    cert.probes = probes;
    const CounterRng rng(seed);
    const std::uint64_t stream = derive_stream(stream_tag::probe, 0x1c);
    const std::size_t G = fns.front().grid_size();
    double fmax = 0.0;
    for (std::size_t j = 0; j < G; ++j) fmax = std::max(fmax, std::abs(fns.front().f_at(j)));

    auto record = [&](int k, double excess) {
        if (excess > 0.0) {
            ++cert.violations[k];
            cert.worst_excess[k] = std::max(cert.worst_excess[k], excess);
        }
    };
    for (std::size_t q = 0; q < probes; ++q) {
        const auto [u1, u2] = rng.uniform_pair(stream, 2 * q);
        const double u3 = rng.uniform(stream, 2 * q + 1);
        const auto i = std::min(G - 1, static_cast<std::size_t>(u1 * static_cast<double>(G)));
        const auto ip = std::min(G - 1, static_cast<std::size_t>(u2 * static_cast<double>(G)));
        const auto k = std::min(ladder.size() - 1, static_cast<std::size_t>(u3 * static_cast<double>(ladder.size())));
        const InfConvolution& fn = fns[k];
        const double n = ladder[k];
        // rounding allowance: a few ulp of the largest term entering the minimum
        const double tol = 16.0 * DBL_EPSILON * (fmax + (n + std::abs(L_mono)) * R + 1.0);
        const double y = fn.grid_point(i);
        const double yp = fn.grid_point(ip);
        const double a = fn(y);
        const double b = fn(yp);
        const double dy = std::abs(y - yp);
        record(0, std::abs(a - b) - (std::abs(L_mono) + n) * dy - tol);
        record(1, std::max(fn.lower_bound() - a, a - fn.f_at(i)) - tol);
        if (k + 1 < ladder.size()) record(2, a - fns[k + 1](y) - tol);
        record(3, (a - b) * (y - yp) - L_mono * dy * dy - tol * dy);
    }
    cert.pass = cert.violations[0] + cert.violations[1] + cert.violations[2] + cert.violations[3] == 0;
    return cert;
}

namespace {

double mean_first_node(const BdsdeSolution& sol, const PathEnsemble& paths) {
    double s = 0.0;
    std::size_t c = 0;
    const std::size_t i = paths.first_node();
    for (std::size_t p = 0; p < paths.size(); ++p) {
        if (!paths.alive(p, std::max(i, paths.birth(p)))) continue;
        s += sol.y(p, std::max(i, paths.birth(p)));
        ++c;
    }
    return c ? s / static_cast<double>(c) : 0.0;
}

// fraction of alive (path, node) pairs with sign * (Y_a - Y_b) <= eps
double order_fraction(const BdsdeSolution& a, const BdsdeSolution& b, const PathEnsemble& paths,
                      double sign, double eps_factor) {
    std::size_t ok = 0, total = 0;
    for (std::size_t i = paths.first_node(); i <= paths.last_node(); ++i) {
        const std::size_t k = i - paths.first_node();
        const double eps = eps_factor * std::max(a.reg_stderr[k], b.reg_stderr[k]) +
                           1e-12 * (1.0 + std::abs(a.y(0, i)));
        for (std::size_t p = 0; p < paths.size(); ++p) {
            if (!paths.alive(p, i)) continue;
            ++total;
            if (sign * (a.y(p, i) - b.y(p, i)) <= eps) ++ok;
        }
    }
    return total ? static_cast<double>(ok) / static_cast<double>(total) : 1.0;
}

}  // namespace

MonotoneResult solve_monotone(const CoefficientSpec& data, const PathEnsemble& paths,
                              const BackwardNoise& noise, const SolverConfig& cfg,
                              const MonotoneOptions& opt) {
    if (!data.f_of_y) {
        throw UnsupportedError("solve_monotone: driver '" + data.f_name + "' is not autonomous in y");
    }
    if (data.depends_on_z) throw UnsupportedError("solve_monotone: driver depends on z");
    if (opt.truncation_ladder.empty() || opt.n_ladder.empty()) {
        throw ConfigError("solve_monotone: empty ladder");
    }
    std::vector<double> trunc = opt.truncation_ladder;
    std::vector<double> ladder = opt.n_ladder;
    std::sort(trunc.begin(), trunc.end());
    std::sort(ladder.begin(), ladder.end());
    const double L = data.constants.L_mono;

    MonotoneResult res;
    res.R = opt.R;
    if (res.R <= 0.0) {
        // a priori bound of the truncated problem with its y-free part
        const double nt = trunc.back();
        CoefficientSpec probe = data.with_autonomous_driver(
            [fy = data.f_of_y, nt](double y) { return std::max(fy(y), -nt); }, "truncated", 1.0, L);
        probe.f_depends_on_y = false;
        BdsdeSolution zero_sol;
        zero_sol.grid = paths.grid();
        zero_sol.n_paths = paths.size();
        zero_sol.first = paths.first_node();
        const std::size_t nodes = paths.last_node() - paths.first_node() + 1;
        zero_sol.Y.assign(nodes * paths.size(), 0.0);
        zero_sol.dM = zero_sol.drive_y = zero_sol.drive_z = zero_sol.Y;
        const Sides s = apriori_sides(zero_sol, probe, paths, noise);
        res.R = std::max(4.0 * std::sqrt(s.rhs.value), 1.0);
    }

    std::vector<BdsdeSolution> row_prev;  // previous truncation level, per n
    double inf_ok = 1.0, trunc_ok = 1.0;
    BdsdeSolution prev_top;
    bool have_prev_top = false;
    std::size_t stage = 0;
    for (std::size_t a = 0; a < trunc.size(); ++a) {
        const double nt = trunc[a];
        AutonomousFn ft = [fy = data.f_of_y, nt](double y) { return std::max(fy(y), -nt); };
        BdsdeSolution prev_n;
        bool have_prev_n = false;
        for (std::size_t b = 0; b < ladder.size(); ++b) {
            const double n = ladder[b];
            auto conv = std::make_shared<InfConvolution>(ft, n, L, res.R, opt.h);
            CoefficientSpec reg = data.with_autonomous_driver(
                [conv](double y) { return (*conv)(y); },
                data.f_name + "|trunc=" + format_double(nt) + "|n=" + format_double(n), n + std::abs(L), L);
            BdsdeSolution sol = solve_lipschitz_picard(reg, paths, noise, cfg);
            ++stage;
            res.log.append(sol.log, "t" + format_double(nt) + "_n" + format_double(n) + "_");
            res.stage_y0.push_back(mean_first_node(sol, paths));
            if (have_prev_n) {
                // inf-convolution stage: Y^n <= Y^{n+1}
                inf_ok = std::min(inf_ok, order_fraction(prev_n, sol, paths, 1.0, opt.eps_factor));
            }
            if (b + 1 == ladder.size()) {
                if (have_prev_top) {
                    // truncation stage: Y^{n_t} >= Y^{n_t+1}
                    trunc_ok = std::min(trunc_ok, order_fraction(prev_top, sol, paths, -1.0, opt.eps_factor));
                    const auto [d, node] = sup_mean_sq(sol.Y, &prev_top.Y, paths);
                    const double scale = sup_mean_sq(sol.Y, nullptr, paths).first;
                    res.stabilization = std::sqrt(d / std::max(scale, 1e-300));
                    res.log.add(stage, node, "truncation_msd", d);
                }
                prev_top = sol;
                have_prev_top = true;
                if (a + 1 == trunc.size()) {
                    res.solution = std::move(sol);
                    res.effective = reg;
                }
            } else {
                prev_n = std::move(sol);
                have_prev_n = true;
            }
        }
    }
    res.infconv_order_fraction = inf_ok;
    res.truncation_order_fraction = trunc_ok;
    res.log.add(stage, paths.first_node(), "infconv_order_fraction", inf_ok);
    res.log.add(stage, paths.first_node(), "truncation_order_fraction", trunc_ok);
    if (trunc.size() > 1 && res.stabilization > opt.stabilization_tol) {
        throw ConvergenceError("monotone", "truncation ladder not stabilized (relative change " +
                                               format_double(res.stabilization) + ")",
                               res.stage_y0);
    }
    res.solution.log = res.log;
    return res;
}

GradientResult solve_with_gradient(const CoefficientSpec& data, const PathEnsemble& paths,
                                   const BackwardNoise& noise, const SolverConfig& cfg,
                                   const GradientOptions& opt) {
    if (!paths.has_increments()) throw ConfigError("solve_with_gradient: paths carry no W increments");
    const StructuralConstants& k = data.constants;
    const double m = k.m_grad;
    if (!(m < 1.0)) throw ConfigError("solve_with_gradient: m_grad must be < 1");
    GradientResult res;
    res.alpha = opt.alpha > 0.0 ? opt.alpha : 0.5 * (1.0 - m);
    if (!(res.alpha + m < 1.0)) throw ConfigError("solve_with_gradient: need alpha + m_grad < 1");
    const double L = std::max(k.L_mono, k.L_lip_z);
    const double base = 2.0 * L + 4.0 * L * L / res.alpha + k.l_bound;
    res.beta = opt.beta > 0.0 ? opt.beta : base + 1.0;
    res.c = res.beta - base;
    if (!(res.c > 0.0)) {
        throw ConfigError("solve_with_gradient: beta = " + format_double(res.beta) +
                          " leaves c <= 0 (need beta > " + format_double(base) + ")");
    }
    res.predicted_ratio = res.alpha + m;
    const auto constants_text = [&] {
        std::ostringstream s;
        s << "alpha=" << format_double(res.alpha) << " beta=" << format_double(res.beta)
          << " c=" << format_double(res.c) << " L=" << format_double(L)
          << " l=" << format_double(k.l_bound) << " m=" << format_double(m);
        return s.str();
    };

    const TimeGrid& grid = paths.grid();
    const std::size_t n = paths.size();
    const std::size_t first = paths.first_node();
    const std::size_t N = grid.n_steps();
    const std::size_t nodes = N - first + 1;
    const double dt = grid.dt();

    std::vector<double> U(nodes * n, 0.0), V(nodes * n, 0.0);
    std::vector<double> zvals(n), history;
    std::vector<unsigned char> mask(n);
    double last = 0.0;
    std::size_t above = 0;
    for (std::size_t stage = 1; stage <= opt.max_stages; ++stage) {
        BdsdeSolution sol = solve_lipschitz_picard(data, paths, noise, cfg, &V);
        res.log.append(sol.log, "stage" + std::to_string(stage) + "_");
        sol.Z.assign(nodes * n, 0.0);
        for (std::size_t i = first; i < N; ++i) {
            const std::size_t row = (i - first) * n;
            for (std::size_t p = 0; p < n; ++p) {
                mask[p] = paths.alive(p, i) ? 1 : 0;
                zvals[p] = mask[p] ? sol.dM[row + p] * paths.dw(p, i) / dt : 0.0;
            }
            RegressionResult r = regress_conditional(zvals, std::span<const double>(paths.point(0, i), n),
                                                     mask, cfg.regression, data.domain);
            for (std::size_t p = 0; p < n; ++p) sol.Z[row + p] = r.fitted[p];
        }
        double diff = 0.0, norm = 0.0;
        for (std::size_t i = first; i <= N; ++i) {
            const std::size_t row = (i - first) * n;
            double dy = 0.0, dz = 0.0, ny = 0.0, nz = 0.0;
            std::size_t cnt = 0;
            for (std::size_t p = 0; p < n; ++p) {
                if (!paths.alive(p, i)) continue;
                ++cnt;
                const double ey = sol.Y[row + p] - U[row + p];
                const double ez = sol.Z[row + p] - V[row + p];
                dy += ey * ey;
                dz += ez * ez;
                ny += sol.Y[row + p] * sol.Y[row + p];
                nz += sol.Z[row + p] * sol.Z[row + p];
            }
            if (cnt == 0) continue;
            const double w = std::exp(res.beta * (grid.node(i) - grid.t_start())) * dt / static_cast<double>(cnt);
            diff += w * (res.c * dy + dz);
            norm += w * (res.c * ny + nz);
        }
        history.push_back(diff);
        res.weighted_diffs.push_back(diff);
        res.log.add(stage, first, "weighted_diff", diff);
        if (stage > 1) {
            // squared-norm contraction, compared with alpha + m
            const double ratio = last > 0.0 ? diff / last : 0.0;
            res.ratios.push_back(ratio);
            res.log.add(stage, first, "contraction_ratio", ratio);
            above = ratio >= 1.0 ? above + 1 : 0;
            if (above >= 3) {
                throw NumericalError("gradient", "non-contraction for 3 consecutive stages (" +
                                                     constants_text() + ")");
            }
        }
        last = diff;
        U = sol.Y;
        V = sol.Z;
        if (diff == 0.0 || std::sqrt(diff) <= opt.tol * std::max(1.0, std::sqrt(norm))) {
            sol.iterations = stage;
            res.solution = std::move(sol);
            res.solution.log = res.log;
            return res;
        }
    }
    throw ConvergenceError("gradient", "no convergence in " + std::to_string(opt.max_stages) +
                                           " stages (" + constants_text() + ")",
                           std::move(history));
}

ComparisonReport comparison_report(const BdsdeSolution& sol, const BdsdeSolution& sol_prime,
                                   const PathEnsemble& paths, double eps_factor) {
    if (!(sol.grid == sol_prime.grid) || sol.n_paths != sol_prime.n_paths || sol.first != sol_prime.first ||
        sol.n_paths != paths.size() || !(sol.grid == paths.grid())) {
        throw ConfigError("comparison: solutions live on different grids or ensembles");
    }
    ComparisonReport rep;
    for (std::size_t i = sol.first; i <= sol.grid.n_steps(); ++i) {
        const std::size_t k = i - sol.first;
        const double eps = eps_factor * std::max(sol.reg_stderr[k], sol_prime.reg_stderr[k]);
        for (std::size_t p = 0; p < sol.n_paths; ++p) {
            if (!paths.alive(p, i)) continue;
            ++rep.pairs;
            const double excess = sol_prime.y(p, i) - sol.y(p, i) - eps;
            if (excess > 0.0) {
                ++rep.violations;
                rep.max_excess = std::max(rep.max_excess, excess);
            }
        }
    }
    rep.fraction = rep.pairs ? static_cast<double>(rep.violations) / static_cast<double>(rep.pairs) : 0.0;
    return rep;
}

Sides apriori_sides(const BdsdeSolution& sol, const CoefficientSpec& data,
                    const PathEnsemble& paths, const BackwardNoise& noise) {
    const TimeGrid& grid = paths.grid();
    const std::size_t N = grid.n_steps();
    const double dt = grid.dt();
    const bool has_g = !data.g.zero();
    std::vector<double> lhs(paths.size(), 0.0), rhs(paths.size(), 0.0);
    (void)noise;
    for (std::size_t p = 0; p < paths.size(); ++p) {
        const std::size_t b = std::max(paths.birth(p), paths.first_node());
        const std::size_t life = paths.lifetime(p);
        if (b >= life) continue;
        double sup_y = 0.0, bracket = 0.0, cum = 0.0, sup_int = 0.0;
        double r = life == N + 1 ? std::pow(data.phi(paths.x(p, N)), 2) : 0.0;
        for (std::size_t i = b; i < life; ++i) {
            sup_y = std::max(sup_y, sol.y(p, i) * sol.y(p, i));
            if (i == N) break;
            bracket += sol.dm(p, i) * sol.dm(p, i);
            if (i + 1 >= life) continue;
            const double t1 = grid.node(i + 1);
            const double x1 = paths.x(p, i + 1);
            const std::size_t nx = sol.node_index(p, i + 1);
            const std::size_t ni = sol.node_index(p, i);
            const double F = data.f ? data.f(t1, x1, sol.drive_y[nx], sol.drive_z[ni]) : 0.0;
            cum += F * dt;
            sup_int = std::max(sup_int, cum * cum);
            const double f0 = data.f ? data.f(t1, x1, 0.0, 0.0) : 0.0;
            const double g0 = has_g ? data.g.squared_norm(t1, x1, 0.0, 0.0) : 0.0;
            r += (f0 * f0 + g0) * dt;
        }
        lhs[p] = sup_y + bracket + sup_int;
        rhs[p] = r;
    }
    return {mean_and_stderr(lhs), mean_and_stderr(rhs)};
}

ResidualReport residual_check(const BdsdeSolution& sol, const CoefficientSpec& data,
                              const PathEnsemble& paths, const BackwardNoise& noise) {
    const TimeGrid& grid = paths.grid();
    const std::size_t N = grid.n_steps();
    const double dt = grid.dt();
    const bool has_g = !data.g.zero();
    ResidualReport rep;
    rep.node_max.assign(N - paths.first_node() + 1, 0.0);
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t p = 0; p < paths.size(); ++p) {
        const std::size_t b = std::max(paths.birth(p), paths.first_node());
        const std::size_t life = paths.lifetime(p);
        if (b >= life) continue;
        double S = 0.0;
        for (std::size_t i = std::min(life - 1, N) + 1; i-- > b;) {
            if (i == N) {
                S = data.phi(paths.x(p, N));
            } else if (i + 1 < life) {
                const double t1 = grid.node(i + 1);
                const double x1 = paths.x(p, i + 1);
                const double yv = sol.drive_y[sol.node_index(p, i + 1)];
                const double zv = sol.drive_z[sol.node_index(p, i)];
                const double F = data.f ? data.f(t1, x1, yv, zv) : 0.0;
                const double G = has_g ? data.g.contract(noise, i, t1, x1, yv, zv) : 0.0;
                S = S + F * dt + G - sol.dm(p, i);
            } else {
                S = 0.0 - sol.dm(p, i);
            }
            const double e = std::abs(sol.y(p, i) - S);
            rep.max_abs = std::max(rep.max_abs, e);
            rep.node_max[i - paths.first_node()] = std::max(rep.node_max[i - paths.first_node()], e);
            total += e;
            ++count;
        }
    }
    rep.mean_abs = count ? total / static_cast<double>(count) : 0.0;
    return rep;
}

}  // namespace bdsde
