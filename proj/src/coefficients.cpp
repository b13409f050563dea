#include "bdsde/coefficients.hpp"

#include <algorithm>
#include <cmath>

#include "bdsde/common.hpp"
#include "bdsde/rng.hpp"

namespace bdsde {

namespace {

struct Preset {
    std::string head;
    std::vector<double> args;
};

Preset split_preset(const std::string& text, const std::string& what) {
    Preset p;
    const auto colon = text.find(':');
    p.head = text.substr(0, colon);
    if (colon == std::string::npos) return p;
    std::string rest = text.substr(colon + 1);
    std::size_t pos = 0;
    while (pos <= rest.size()) {
        const auto comma = rest.find(',', pos);
        const std::string tok = rest.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        try {
            std::size_t used = 0;
            const double v = std::stod(tok, &used);
            if (used != tok.size() || !std::isfinite(v)) throw std::invalid_argument("bad");
            p.args.push_back(v);
        } catch (const std::exception&) {
            throw ConfigError(what + " preset '" + text + "': bad parameter '" + tok + "'");
        }
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return p;
}

void expect_args(const Preset& p, std::size_t n, const std::string& what, const std::string& text) {
    if (p.args.size() != n) {
        throw ConfigError(what + " preset '" + text + "' takes " + std::to_string(n) + " parameter(s)");
    }
}

std::vector<double> component_mesh(const Domain& domain) {
    if (domain.kind() == Domain::Kind::torus || domain.kind() == Domain::Kind::interval) {
        return space_mesh(domain, 256);
    }
    return {};
}

}  // namespace

void CoefficientSpec::rebuild_components() {
    if (!g_tilde) {
        g = ComponentFamily();
        constants.l_bound = 0.0;
        constants.m_grad = 0.0;
        return;
    }
    if (q.modes() == 0) throw ConfigError("coefficients: noise coefficient needs at least one Q mode");
    g = g_components(g_tilde, g_lip_y, g_lip_z, q, domain, component_mesh(domain));
    constants.l_bound = g.l_bound;
    constants.m_grad = g.m_bound;
}

CoefficientSpec CoefficientSpec::scaled(double lambda) const {
    if (!(lambda > 0.0)) throw ConfigError("coefficients: scale must be positive");
    CoefficientSpec s = *this;
    if (phi) s.phi = [p = phi, lambda](double x) { return lambda * p(x); };
    if (f) {
        s.f = [fn = f, lambda](double t, double x, double y, double z) {
            return lambda * fn(t, x, y / lambda, z / lambda);
        };
    }
    if (f_of_y) s.f_of_y = [fn = f_of_y, lambda](double y) { return lambda * fn(y / lambda); };
    if (g_tilde) {
        s.g_tilde = [gt = g_tilde, lambda](double t, double x, double y, double z) {
            return lambda * gt(t, x, y / lambda, z / lambda);
        };
    }
    s.phi_name = phi_name + "*" + format_double(lambda);
    s.rebuild_components();
    return s;
}

CoefficientSpec CoefficientSpec::with_terminal_shift(double delta) const {
    CoefficientSpec s = *this;
    s.phi = [p = phi, delta](double x) { return (p ? p(x) : 0.0) + delta; };
    s.phi_name = phi_name + "+" + format_double(delta);
    return s;
}

CoefficientSpec CoefficientSpec::with_driver_shift(double delta) const {
    CoefficientSpec s = *this;
    s.f = [fn = f, delta](double t, double x, double y, double z) {
        return (fn ? fn(t, x, y, z) : 0.0) + delta;
    };
    if (f_of_y) s.f_of_y = [fn = f_of_y, delta](double y) { return fn(y) + delta; };
    s.f_name = f_name + "+" + format_double(delta);
    return s;
}

CoefficientSpec CoefficientSpec::with_autonomous_driver(AutonomousFn fy, const std::string& name,
                                                        double lip_y, double l_mono) const {
    CoefficientSpec s = *this;
    s.f_of_y = fy;
    s.f = [fy](double, double, double y, double) { return fy(y); };
    s.f_name = name;
    s.f_depends_on_y = true;
    s.depends_on_z = false;
    s.constants.L_lip_y = lip_y;
    s.constants.L_mono = l_mono;
    s.constants.L_lip_z = 0.0;
    s.monotone_only = !std::isfinite(lip_y);
    return s;
}

CoefficientSpec make_coefficients(const std::string& phi, const std::string& f,
                                  const std::string& g_tilde, const QSpec& q,
                                  const Domain& domain) {
    CoefficientSpec s;
    s.phi_name = phi;
    s.f_name = f;
    s.g_name = g_tilde;
    s.q = q;
    s.domain = domain;

    const Preset pp = split_preset(phi, "terminal");
    if (pp.head == "zero") {
        expect_args(pp, 0, "terminal", phi);
        s.phi = [](double) { return 0.0; };
    } else if (pp.head == "const") {
        expect_args(pp, 1, "terminal", phi);
        const double c = pp.args[0];
        s.phi = [c](double) { return c; };
    } else if (pp.head == "sin" || pp.head == "cos") {
        expect_args(pp, 1, "terminal", phi);
        const double j = pp.args[0];
        if (pp.head == "sin") s.phi = [j](double x) { return std::sin(j * x); };
        else s.phi = [j](double x) { return std::cos(j * x); };
    } else if (pp.head == "identity") {
        expect_args(pp, 0, "terminal", phi);
        s.phi = [](double x) { return x; };
    } else {
        throw ConfigError("unknown terminal preset '" + phi + "'");
    }

    const Preset fp = split_preset(f, "driver");
    auto& k = s.constants;
    if (fp.head == "zero") {
        expect_args(fp, 0, "driver", f);
        s.f = [](double, double, double, double) { return 0.0; };
        s.f_of_y = [](double) { return 0.0; };
        k.L_lip_y = 0.0;
    } else if (fp.head == "const") {
        expect_args(fp, 1, "driver", f);
        const double c = fp.args[0];
        s.f = [c](double, double, double, double) { return c; };
        s.f_of_y = [c](double) { return c; };
        k.L_lip_y = 0.0;
    } else if (fp.head == "linear") {
        expect_args(fp, 1, "driver", f);
        const double c = fp.args[0];
        s.f = [c](double, double, double y, double) { return -c * y; };
        s.f_of_y = [c](double y) { return -c * y; };
        s.f_depends_on_y = true;
        s.f_y_degree = 1;
        k.L_lip_y = std::abs(c);
        k.L_mono = std::max(0.0, -c);
    } else if (fp.head == "linear_forced") {
        expect_args(fp, 2, "driver", f);
        const double c = fp.args[0];
        const double h = fp.args[1];
        s.f = [c, h](double, double x, double y, double) { return -c * y + h * std::cos(x); };
        s.f_depends_on_y = true;
        s.f_y_degree = 1;
        k.L_lip_y = std::abs(c);
        k.L_mono = std::max(0.0, -c);
    } else if (fp.head == "cubic_monotone") {
        expect_args(fp, 0, "driver", f);
        s.f = [](double, double, double y, double) { return -y * y * y; };
        s.f_of_y = [](double y) { return -y * y * y; };
        s.f_depends_on_y = true;
        s.monotone_only = true;
        s.f_y_degree = 3;
        k.L_mono = 0.0;
    } else if (fp.head == "cubic_truncated") {
        expect_args(fp, 1, "driver", f);
        const double n = fp.args[0];
        if (!(n > 0.0)) throw ConfigError("driver preset '" + f + "': level must be positive");
        s.f = [n](double, double, double y, double) { return std::max(-y * y * y, -n); };
        s.f_of_y = [n](double y) { return std::max(-y * y * y, -n); };
        s.f_depends_on_y = true;
        s.monotone_only = true;
        s.f_y_degree = 99;
        k.L_mono = 0.0;
    } else if (fp.head == "grad_linear") {
        expect_args(fp, 1, "driver", f);
        const double theta = fp.args[0];
        s.f = [theta](double, double, double, double z) { return theta * z; };
        s.depends_on_z = true;
        k.L_lip_y = 0.0;
        k.L_lip_z = std::abs(theta);
    } else {
        throw ConfigError("unknown driver preset '" + f + "'");
    }

    const Preset gp = split_preset(g_tilde, "noise");
    if (gp.head == "zero") {
        expect_args(gp, 0, "noise", g_tilde);
    } else if (gp.head == "const") {
        expect_args(gp, 1, "noise", g_tilde);
        const double c = gp.args[0];
        s.g_tilde = [c](double, double, double, double) { return c; };
    } else if (gp.head == "linear") {
        expect_args(gp, 1, "noise", g_tilde);
        const double c = gp.args[0];
        s.g_tilde = [c](double, double, double y, double) { return c * y; };
        s.g_lip_y = std::abs(c);
        s.g_depends_on_y = c != 0.0;
    } else if (gp.head == "affine") {
        expect_args(gp, 2, "noise", g_tilde);
        const double c0 = gp.args[0];
        const double c1 = gp.args[1];
        s.g_tilde = [c0, c1](double, double, double y, double) { return c0 + c1 * y; };
        s.g_lip_y = std::abs(c1);
        s.g_depends_on_y = c1 != 0.0;
    } else {
        throw ConfigError("unknown noise preset '" + g_tilde + "'");
    }
    s.rebuild_components();
    return s;
}

std::vector<PresetInfo> list_presets() {
    return {
        {"terminal", "zero", "", "", "phi = 0"},
        {"terminal", "const", "c", "", "phi = c"},
        {"terminal", "sin", "j", "", "phi = sin(j x)"},
        {"terminal", "cos", "j", "", "phi = cos(j x)"},
        {"terminal", "identity", "", "", "phi = x"},
        {"driver", "zero", "", "L_mono=0 L_lip_y=0", "f = 0"},
        {"driver", "const", "c", "L_mono=0 L_lip_y=0", "f = c"},
        {"driver", "linear", "c", "L_mono=max(0,-c) L_lip_y=|c|", "f = -c y"},
        {"driver", "linear_forced", "c,h", "L_mono=max(0,-c) L_lip_y=|c|", "f = -c y + h cos x"},
        {"driver", "cubic_monotone", "", "L_mono=0", "f = -y^3 (monotone, not Lipschitz)"},
        {"driver", "cubic_truncated", "n", "L_mono=0", "f = max(-y^3, -n)"},
        {"driver", "grad_linear", "theta", "L_lip_y=0 L_lip_z=|theta| m_grad=0", "f = theta z"},
        {"noise", "zero", "", "l=0", "g~ = 0"},
        {"noise", "const", "gamma", "l=0", "g~ = gamma"},
        {"noise", "linear", "gamma", "l=gamma^2 S", "g~ = gamma y"},
        {"noise", "affine", "gamma0,gamma1", "l=gamma1^2 S", "g~ = gamma0 + gamma1 y"},
        {"generator", "const", "a", "lambda=Lambda=a", "a(t,x) = a"},
        {"generator", "sin_field", "amp", "lambda=(1-|amp|)/2 Lambda=(1+|amp|)/2",
         "a(t,x) = (1 + amp sin x)/2"},
        {"generator", "time_sin", "amp", "lambda=(1-|amp|)/2 Lambda=(1+|amp|)/2",
         "a(t,x) = (1 + amp sin(2 pi t) sin x)/2"},
        {"generator", "fractional", "alpha", "", "symmetric alpha-stable jumps, alpha in (0,2]"},
        {"q_basis", "constant", "", "", "e = 1/sqrt(|E|)"},
        {"q_basis", "sine", "j", "", "e = sqrt(2/|E|) sin(j k x)"},
        {"q_basis", "cosine", "j", "", "e = sqrt(2/|E|) cos(j k x)"},
        {"regression", "piecewise_constant", "bins", "", ""},
        {"regression", "piecewise_linear", "bins", "", ""},
        {"regression", "polynomial", "degree", "", "Legendre"},
        {"regression", "fourier", "modes", "", "torus only"},
    };
}

ProbeReport probe_constants(const CoefficientSpec& spec, double T, std::size_t n,
                            std::uint64_t seed, double radius) {
    const CounterRng rng(seed);
    const std::uint64_t stream = derive_stream(stream_tag::probe, 0);
    const Domain& dom = spec.domain;
    const bool has_x_range = dom.bounded() && dom.dim() == 1;
    const double x_lo = has_x_range ? dom.lower() : -5.0;
    const double x_hi = has_x_range ? dom.upper() : 5.0;

    ProbeResult mono{"L_mono", spec.constants.L_mono, -std::numeric_limits<double>::infinity(), true};
    ProbeResult lip_y{"L_lip_y", spec.constants.L_lip_y, 0.0, true};
    ProbeResult lip_z{"L_lip_z", spec.constants.L_lip_z, 0.0, true};
    ProbeResult l{"l_bound", spec.constants.l_bound, 0.0, true};
    ProbeResult m{"m_grad", spec.constants.m_grad, 0.0, true};
    auto f = [&](double t, double x, double y, double z) { return spec.f ? spec.f(t, x, y, z) : 0.0; };
    auto gdiff = [&](double t, double x, double y, double z, double y2, double z2) {
        double s = 0.0;
        for (std::size_t k = 0; k < spec.g.modes(); ++k) {
            const double d = spec.g.component(k, t, x, y, z) - spec.g.component(k, t, x, y2, z2);
            s += d * d;
        }
        return s;
    };

    for (std::size_t i = 0; i < n; ++i) {
        const auto [u0, u1] = rng.uniform_pair(stream, 3 * i);
        const auto [u2, u3] = rng.uniform_pair(stream, 3 * i + 1);
        const auto [u4, u5] = rng.uniform_pair(stream, 3 * i + 2);
        const double t = T * u0;
        const double x = x_lo + (x_hi - x_lo) * u1;
        const double y = radius * (2.0 * u2 - 1.0);
        const double y2 = radius * (2.0 * u3 - 1.0);
        const double z = radius * (2.0 * u4 - 1.0);
        const double z2 = radius * (2.0 * u5 - 1.0);
        const double dy = y - y2;
        const double dz = z - z2;
        if (dy == 0.0 || dz == 0.0) continue;
        const double df_y = f(t, x, y, z) - f(t, x, y2, z);
        mono.observed = std::max(mono.observed, df_y * dy / (dy * dy));
        lip_y.observed = std::max(lip_y.observed, std::abs(df_y / dy));
        lip_z.observed = std::max(lip_z.observed, std::abs((f(t, x, y, z) - f(t, x, y, z2)) / dz));
        l.observed = std::max(l.observed, gdiff(t, x, y, z, y2, z) / (dy * dy));
        m.observed = std::max(m.observed, gdiff(t, x, y, z, y, z2) / (dz * dz));
    }
    auto judge = [](ProbeResult& r) {
        r.holds = r.observed <= r.declared + 1e-9 * std::abs(r.declared) + 1e-12;
    };
    ProbeReport rep;
    for (ProbeResult* r : {&mono, &lip_y, &lip_z, &l, &m}) {
        judge(*r);
        rep.checks.push_back(*r);
    }
    if (spec.depends_on_z || spec.constants.m_grad > 0.0) {
        rep.checks.push_back({"m_grad<1", 1.0, spec.constants.m_grad, spec.constants.m_grad < 1.0});
    }
    for (const auto& r : rep.checks) rep.pass = rep.pass && r.holds;
    return rep;
}

}  // namespace bdsde
