#include "bdsde/markov.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <numbers>
#include <ostream>

#include "bdsde/rng.hpp"

namespace bdsde {

namespace {

double parse_param(const std::string& preset, const std::string& text) {
    try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used != text.size() || !std::isfinite(v)) throw std::invalid_argument("bad");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("generator '" + preset + "': bad parameter '" + text + "'");
    }
}

}  // namespace

GeneratorSpec GeneratorSpec::parse(const std::string& preset) {
    const auto colon = preset.find(':');
    if (colon == std::string::npos) {
        throw ConfigError("generator '" + preset + "': expected <kind>:<parameter>");
    }
    const std::string head = preset.substr(0, colon);
    const double v = parse_param(preset, preset.substr(colon + 1));
    GeneratorSpec g;
    g.name = preset;
    if (head == "const") {
        if (!(v > 0.0)) throw ConfigError("generator '" + preset + "': a must be positive");
        g.kind = Kind::const_diffusion;
        g.a0 = v;
    } else if (head == "sin_field" || head == "time_sin") {
        if (!(std::abs(v) < 1.0)) {
            throw ConfigError("generator '" + preset + "': |amp| < 1 needed for ellipticity");
        }
        g.kind = Kind::div_form;
        g.a0 = 0.5;
        g.amplitude = v;
        g.time_dependent = head == "time_sin";
    } else if (head == "fractional") {
        if (!(v > 0.0 && v <= 2.0)) {
            throw ConfigError("generator '" + preset + "': alpha must lie in (0, 2]");
        }
        g.kind = Kind::fractional;
        g.alpha = v;
    } else {
        throw ConfigError("unknown generator preset '" + preset + "'");
    }
    return g;
}

double GeneratorSpec::a(double t, double x) const noexcept {
    switch (kind) {
        case Kind::const_diffusion: return a0;
        case Kind::div_form: {
            const double tf = time_dependent ? std::sin(2.0 * std::numbers::pi * t) : 1.0;
            return a0 * (1.0 + amplitude * tf * std::sin(x));
        }
        case Kind::fractional: return 0.0;
    }
    return 0.0;
}

std::optional<double> GeneratorSpec::analytic_da(double t, double x) const noexcept {
    switch (kind) {
        case Kind::const_diffusion: return 0.0;
        case Kind::div_form: {
            const double tf = time_dependent ? std::sin(2.0 * std::numbers::pi * t) : 1.0;
            return a0 * amplitude * tf * std::cos(x);
        }
        case Kind::fractional: return std::nullopt;
    }
    return std::nullopt;
}

double GeneratorSpec::ellipticity_lower() const noexcept {
    switch (kind) {
        case Kind::const_diffusion: return a0;
        case Kind::div_form: return a0 * (1.0 - std::abs(amplitude));
        case Kind::fractional: return 0.0;
    }
    return 0.0;
}

double GeneratorSpec::ellipticity_upper() const noexcept {
    switch (kind) {
        case Kind::const_diffusion: return a0;
        case Kind::div_form: return a0 * (1.0 + std::abs(amplitude));
        case Kind::fractional: return 0.0;
    }
    return 0.0;
}

double drift_from_divergence_form(const GeneratorSpec& gen, const Domain& domain, double t,
                                  double x, const DriftOptions& opt) {
    if (!gen.gradient_form()) throw UnsupportedError("drift: fractional generator has no drift");
    if (opt.use_analytic) {
        if (auto d = gen.analytic_da(t, x)) return *d;
    }
    const double size = domain.bounded() && domain.dim() == 1 ? domain.length() : 1.0;
    const double h = opt.h > 0.0 ? opt.h : 1e-4 * size;
    double lo = x - h;
    double hi = x + h;
    if (domain.bounded() && !domain.periodic()) {
        lo = std::max(lo, domain.lower());
        hi = std::min(hi, domain.upper());
    }
    if (!(hi > lo)) throw NumericalError("drift", "degenerate difference stencil");
    return (gen.a(t, hi) - gen.a(t, lo)) / (hi - lo);
}

PathEnsemble::PathEnsemble(TimeGrid grid, std::size_t dim, std::size_t n_paths,
                           std::size_t first_node, bool keep_increments)
    : grid_(grid), dim_(dim), n_paths_(n_paths), first_(first_node) {
    if (dim == 0) throw ConfigError("paths: dimension must be positive");
    if (first_node > grid.n_steps()) throw ConfigError("paths: first node beyond the grid");
    const std::size_t nodes = grid.n_steps() - first_node + 1;
    x_.assign(nodes * n_paths * dim, 0.0);
    if (keep_increments) dw_.assign(nodes * n_paths * dim, 0.0);
    start_time_.assign(n_paths, grid.t_start());
    start_x_.assign(n_paths, 0.0);
    birth_.assign(n_paths, static_cast<std::uint32_t>(first_node));
    lifetime_.assign(n_paths, static_cast<std::uint32_t>(grid.n_nodes()));
}

namespace {

constexpr std::uint64_t kPathMagic = 0x31485441'50444442ULL;  // "BDDPATH1"

void put_u64(std::ostream& out, std::uint64_t u) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw ConfigError("paths: truncated binary stream");
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return u;
}

void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }
double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }

}  // namespace

void PathEnsemble::write(std::ostream& out) const {
    put_u64(out, kPathMagic);
    put_f64(out, grid_.t_start());
    put_f64(out, grid_.t_end());
    put_u64(out, grid_.n_steps());
    put_u64(out, dim_);
    put_u64(out, n_paths_);
    put_u64(out, first_);
    put_u64(out, dw_.empty() ? 0 : 1);
    put_u64(out, seed);
    put_u64(out, stream_id);
    for (std::size_t p = 0; p < n_paths_; ++p) {
        put_f64(out, start_time_[p]);
        put_f64(out, start_x_[p]);
        put_u64(out, birth_[p]);
        put_u64(out, lifetime_[p]);
    }
    for (double v : x_) put_f64(out, v);
    for (double v : dw_) put_f64(out, v);
}

PathEnsemble PathEnsemble::read(std::istream& in) {
    if (get_u64(in) != kPathMagic) throw ConfigError("paths: bad magic");
    const double t0 = get_f64(in);
    const double t1 = get_f64(in);
    const auto steps = get_u64(in);
    const auto dim = get_u64(in);
    const auto n = get_u64(in);
    const auto first = get_u64(in);
    const bool keep = get_u64(in) != 0;
    if (steps == 0 || steps > (1u << 30) || dim == 0 || dim > 64 || n > (1ULL << 32)) {
        throw ConfigError("paths: implausible header");
    }
    PathEnsemble e(TimeGrid(t0, t1, steps), dim, n, first, keep);
    e.seed = get_u64(in);
    e.stream_id = get_u64(in);
    for (std::size_t p = 0; p < n; ++p) {
        e.start_time_[p] = get_f64(in);
        e.start_x_[p] = get_f64(in);
        e.birth_[p] = static_cast<std::uint32_t>(get_u64(in));
        e.lifetime_[p] = static_cast<std::uint32_t>(get_u64(in));
    }
    for (double& v : e.x_) v = get_f64(in);
    for (double& v : e.dw_) v = get_f64(in);
    return e;
}

bool PathEnsemble::operator==(const PathEnsemble& o) const {
    auto same = [](const std::vector<double>& a, const std::vector<double>& b) {
        return a.size() == b.size() &&
               std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
    };
    return grid_ == o.grid_ && dim_ == o.dim_ && n_paths_ == o.n_paths_ && first_ == o.first_ &&
           seed == o.seed && stream_id == o.stream_id && same(x_, o.x_) && same(dw_, o.dw_) &&
           same(start_time_, o.start_time_) && same(start_x_, o.start_x_) &&
           birth_ == o.birth_ && lifetime_ == o.lifetime_;
}

double stable_variate(double alpha, double u1, double u2) noexcept {
    const double v = std::numbers::pi * (u1 - 0.5);
    const double w = -std::log(u2);
    if (alpha == 1.0) return std::tan(v);
    return std::sin(alpha * v) / std::pow(std::cos(v), 1.0 / alpha) *
           std::pow(std::cos(v - alpha * v) / w, (1.0 - alpha) / alpha);
}

PathEnsemble simulate_paths(const GeneratorSpec& gen, const Domain& domain,
                            const std::vector<Start>& starts, const TimeGrid& grid,
                            std::size_t paths_per_start, std::uint64_t seed,
                            std::uint64_t stream_id, const SimulationOptions& opt) {
    if (starts.empty() || paths_per_start == 0) {
        throw ConfigError("simulate_paths: need at least one start and one path");
    }
    const std::size_t d = domain.dim();
    if (gen.kind == GeneratorSpec::Kind::fractional && d != 1) {
        throw UnsupportedError("simulate_paths: fractional paths are one-dimensional only");
    }
    std::vector<std::size_t> births(starts.size());
    std::size_t first = grid.n_steps();
    for (std::size_t k = 0; k < starts.size(); ++k) {
        const auto& st = starts[k];
        if (st.x.size() != d) throw ConfigError("simulate_paths: start has wrong dimension");
        if (!domain.contains(st.x)) {
            throw ConfigError("simulate_paths: start point outside the domain");
        }
        births[k] = grid.first_node_at_or_after(st.s);
        first = std::min(first, births[k]);
    }

    const bool keep = opt.keep_increments && gen.gradient_form();
    PathEnsemble ens(grid, d, starts.size() * paths_per_start, first, keep);
    ens.seed = seed;
    ens.stream_id = stream_id;
    const CounterRng rng(seed);
    const double lower = gen.ellipticity_lower();
    const bool fractional = gen.kind == GeneratorSpec::Kind::fractional;
    const std::size_t n_paths = ens.size();
    const std::size_t N = grid.n_steps();

    parallel_for(n_paths, opt.threads, [&](std::size_t p) {
        const std::size_t k = p / paths_per_start;
        const Start& st = starts[k];
        const std::size_t b = births[k];
        std::vector<double> pos(st.x);
        std::vector<double> dw(d, 0.0);
        for (std::size_t i = first; i <= b; ++i) std::copy(pos.begin(), pos.end(), ens.point(p, i));

        NormalSequence normals(rng, derive_stream(stream_tag::path, stream_id, p));
        UniformSequence uniforms(rng, derive_stream(stream_tag::path, stream_id, p));

        auto step = [&](double t, double h) {
            if (fractional) {
                const auto [u1, u2] = uniforms.next_pair();
                pos[0] += std::pow(h, 1.0 / gen.alpha) * stable_variate(gen.alpha, u1, u2);
            } else {
                const double a = gen.a(t, pos[0]);
                if (!(a >= lower * (1.0 - 1e-12)) || !std::isfinite(a) || !(a > 0.0)) {
                    throw NumericalError("simulate_paths",
                                         "ellipticity lost at x = " + format_double(pos[0]));
                }
                const double sigma = std::sqrt(2.0 * a);
                const double b1 = drift_from_divergence_form(gen, domain, t, pos[0], opt.drift);
                const double sh = std::sqrt(h);
                for (std::size_t c = 0; c < d; ++c) {
                    dw[c] = sh * normals.next();
                    pos[c] += (c == 0 ? b1 * h : 0.0) + sigma * dw[c];
                }
            }
            domain.wrap(pos);
            for (double v : pos) {
                if (!std::isfinite(v)) throw NumericalError("simulate_paths", "non-finite position");
            }
        };

        std::size_t life = N + 1;
        if (st.s < grid.node(b)) {
            step(st.s, grid.node(b) - st.s);
            std::copy(pos.begin(), pos.end(), ens.point(p, b));
            if (!domain.contains(pos)) life = b;
        }
        if (life == N + 1) {
            for (std::size_t i = b; i < N; ++i) {
                step(grid.node(i), grid.dt());
                if (keep) std::copy(dw.begin(), dw.end(), ens.dw_ptr(p, i));
                std::copy(pos.begin(), pos.end(), ens.point(p, i + 1));
                if (!domain.contains(pos)) {
                    life = i + 1;
                    break;
                }
            }
        }
        // Cemetery: hold the exit position.
        if (life <= N) {
            for (std::size_t i = life + 1; i <= N; ++i) {
                std::copy(pos.begin(), pos.end(), ens.point(p, i));
            }
        }
        ens.set_lifecycle(p, st.s, st.x[0], b, life);
    });
    return ens;
}

double path_resolvent(const PathEnsemble& paths, std::size_t p, const Field& v, double beta) {
    const TimeGrid& g = paths.grid();
    const double s = paths.start_time(p);
    const std::size_t b = paths.birth(p);
    const std::size_t life = paths.lifetime(p);
    thread_local std::vector<double> times;
    thread_local std::vector<double> vals;
    times.clear();
    vals.clear();
    const double t_b = g.node(b);
    if (s < t_b) {
        if (life <= b) return 0.0;
        times.push_back(0.0);
        vals.push_back(v(s, paths.start_x(p)));
    }
    for (std::size_t i = b; i < life; ++i) {
        times.push_back(g.node(i) - s);
        vals.push_back(v(g.node(i), paths.x(p, i)));
    }
    if (times.size() < 2) return 0.0;
    return exp_weighted_trapezoid(times.data(), vals.data(), times.size(), beta);
}

std::vector<Estimate> resolvent_mc(const PathEnsemble& paths, const std::vector<Start>& starts,
                                   std::size_t paths_per_start, const Field& v, double beta) {
    if (!(beta >= 0.0)) throw ConfigError("resolvent: beta must be >= 0");
    if (paths.size() != starts.size() * paths_per_start) {
        throw ConfigError("resolvent: ensemble does not match the start list");
    }
    std::vector<Estimate> out(starts.size());
    std::vector<double> samples(paths_per_start);
    for (std::size_t k = 0; k < starts.size(); ++k) {
        for (std::size_t m = 0; m < paths_per_start; ++m) {
            samples[m] = path_resolvent(paths, k * paths_per_start + m, v, beta);
        }
        out[k] = mean_and_stderr(samples);
    }
    return out;
}

double dual_resolvent_one(const Domain& domain, double beta, double s) {
    if (!domain.conservative()) {
        throw UnsupportedError("dual resolvent: closed form needs a conservative domain");
    }
    if (!(beta >= 0.0)) throw ConfigError("dual resolvent: beta must be >= 0");
    if (beta < 1e-8) return s - 0.5 * beta * s * s;
    return -std::expm1(-beta * s) / beta;
}

double killing_density(const Domain& domain, double beta, double s) {
    if (!domain.conservative()) {
        throw UnsupportedError("killing density: closed form needs a conservative domain");
    }
    return beta * std::exp(-beta * s);
}

}  // namespace bdsde
