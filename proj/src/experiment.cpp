#include "bdsde/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

namespace bdsde {

namespace fs = std::filesystem;

const std::vector<std::string>& scenario_names() {
    static const std::vector<std::string> names{"linear-heat",    "additive-noise", "monotone-cubic",
                                                "gradient-coupled", "comparison",   "energy-audit",
                                                "mild-vs-probabilistic", "apriori-scaling"};
    return names;
}

namespace {

const json& member(const json& obj, const char* key, const std::string& where) {
    if (!obj.is_object()) throw ConfigError(where + ": expected an object");
    auto it = obj.find(key);
    if (it == obj.end()) throw ConfigError(where + "." + key + ": missing");
    return *it;
}

template <class T>
T read(const json& obj, const char* key, const T& fallback, const std::string& where) {
    if (!obj.is_object()) throw ConfigError(where + ": expected an object");
    auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) return fallback;
    try {
        if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
            if (!it->is_number_integer() || it->get<long long>() < 0) {
                throw ConfigError(where + "." + key + ": expected a nonnegative integer");
            }
        }
        return it->get<T>();
    } catch (const json::exception&) {
        throw ConfigError(where + "." + key + ": wrong type");
    }
}

std::vector<double> read_list(const json& obj, const char* key, std::vector<double> fallback,
                              const std::string& where) {
    auto it = obj.find(key);
    if (it == obj.end()) return fallback;
    if (!it->is_array() || it->empty()) throw ConfigError(where + "." + key + ": expected a nonempty array");
    std::vector<double> out;
    for (const auto& v : *it) {
        if (!v.is_number()) throw ConfigError(where + "." + key + ": expected numbers");
        out.push_back(v.get<double>());
    }
    return out;
}

Domain parse_domain(const json& d) {
    const std::string kind = read<std::string>(d, "kind", "", "domain");
    if (kind == "torus") return Domain::torus(read<double>(d, "length", 2 * M_PI, "domain"));
    if (kind == "interval") return Domain::interval(read<double>(d, "a", 0.0, "domain"), read<double>(d, "b", 1.0, "domain"));
    if (kind == "line") return Domain::line();
    throw ConfigError("domain.kind: '" + kind + "' is not torus, interval or line");
}

// "head:args" -> numeric argument list
std::pair<std::string, std::vector<double>> split_preset(const std::string& name) {
    const auto colon = name.find(':');
    std::pair<std::string, std::vector<double>> out{name.substr(0, colon), {}};
    if (colon == std::string::npos) return out;
    std::stringstream ss(name.substr(colon + 1));
    std::string item;
    while (std::getline(ss, item, ',')) out.second.push_back(std::stod(item));
    return out;
}

}  // namespace

CoefficientSpec ScenarioConfig::coefficients() const {
    CoefficientSpec s = make_coefficients(phi, f, g, q, domain);
    static const char* keys[] = {"L_mono", "L_lip_y", "L_lip_z", "l_bound", "m_grad"};
    double* slots[] = {&s.constants.L_mono, &s.constants.L_lip_y, &s.constants.L_lip_z, &s.constants.l_bound,
                       &s.constants.m_grad};
    for (const auto& [k, v] : constants.items()) {
        bool known = false;
        for (std::size_t i = 0; i < 5; ++i) {
            if (k == keys[i]) {
                if (!v.is_number()) throw ConfigError("coefficients.constants." + k + ": expected a number");
                *slots[i] = v.get<double>();
                known = true;
            }
        }
        if (!known) throw ConfigError("coefficients.constants." + k + ": unknown constant");
    }
    return s;
}

SolverConfig ScenarioConfig::solver_config(std::size_t threads) const {
    SolverConfig c;
    c.regression = regression;
    c.picard_tol = picard_tol;
    c.max_iter = max_iter;
    c.threads = threads;
    return c;
}

ScenarioConfig parse_config(const json& doc) {
    if (!doc.is_object()) throw ConfigError("config: top level must be an object");
    ScenarioConfig c;
    c.scenario = read<std::string>(doc, "scenario", "", "config");
    const auto& names = scenario_names();
    if (std::find(names.begin(), names.end(), c.scenario) == names.end()) {
        throw ConfigError("scenario: unknown scenario '" + c.scenario + "'");
    }
    c.domain = parse_domain(member(doc, "domain", "config"));
    c.generator = read<std::string>(doc, "generator", "const:0.5", "config");

    const json& co = member(doc, "coefficients", "config");
    c.phi = read<std::string>(co, "phi", "zero", "coefficients");
    c.f = read<std::string>(co, "f", "zero", "coefficients");
    c.g = read<std::string>(co, "g", "zero", "coefficients");
    if (co.contains("constants")) {
        if (!co["constants"].is_object()) throw ConfigError("coefficients.constants: expected an object");
        c.constants = co["constants"];
    }

    if (doc.contains("q")) {
        const json& q = doc["q"];
        const auto lambdas = read_list(q, "lambdas", {}, "q");
        if (!q.contains("basis") || !q["basis"].is_array()) throw ConfigError("q.basis: expected an array");
        for (const auto& b : q["basis"]) {
            if (!b.is_string()) throw ConfigError("q.basis: expected basis ids");
            c.q.basis.push_back(BasisFunction::parse(b.get<std::string>()));
        }
        c.q.lambdas = lambdas;
        if (c.q.lambdas.size() != c.q.basis.size()) throw ConfigError("q: lambdas and basis differ in length");
    }

    const json& gr = member(doc, "grid", "config");
    c.T = read<double>(gr, "T", 1.0, "grid");
    c.n_steps = read<std::size_t>(gr, "n_steps", 64, "grid");
    c.n_time = read<std::size_t>(gr, "n_time", 16, "grid");
    c.n_space = read<std::size_t>(gr, "n_space", 16, "grid");
    if (!(c.T > 0.0) || c.n_steps == 0 || c.n_time == 0 || c.n_space == 0) {
        throw ConfigError("grid: T, n_steps, n_time and n_space must be positive");
    }
    if (c.n_steps % c.n_time != 0) throw ConfigError("grid.n_time: must divide grid.n_steps");

    const json mc = doc.value("mc", json::object());
    c.inner_paths = read<std::size_t>(mc, "inner_paths", 1000, "mc");
    c.outer = read<std::size_t>(mc, "outer_realizations", 1, "mc");
    c.seed = read<std::uint64_t>(mc, "seed", 1, "mc");
    if (c.inner_paths == 0 || c.outer == 0) throw ConfigError("mc: inner_paths and outer_realizations must be positive");

    const json rg = doc.value("regression", json::object());
    c.regression.basis = RegressionConfig::parse_basis(read<std::string>(rg, "basis", RegressionConfig::basis_name(c.regression.basis), "regression"));
    c.regression.size = read<std::size_t>(rg, "size", c.regression.size, "regression");
    c.regression.ridge = read<double>(rg, "ridge", 0.0, "regression");
    c.regression.min_alive_paths = read<std::size_t>(rg, "min_alive_paths", 32, "regression");
    c.regression.validate(c.domain);

    const json sv = doc.value("solver", json::object());
    c.solver = parse_solver_kind(read<std::string>(sv, "kind", "auto", "solver"));
    c.picard_tol = read<double>(sv, "picard_tol", 1e-10, "solver");
    c.max_iter = read<std::size_t>(sv, "max_iter", 200, "solver");
    c.fast_mode = read<bool>(sv, "fast_mode", false, "solver");

    const json mi = doc.value("mild", json::object());
    c.mild.modes = read<std::size_t>(mi, "modes", 16, "mild");
    c.mild.method = parse_mild_method(read<std::string>(mi, "method", "stepper", "mild"));
    c.mild.tol = read<double>(mi, "tol", 1e-10, "mild");

    c.params = doc.value("params", json::object());
    if (!c.params.is_object()) throw ConfigError("params: expected an object");
    c.output = read<std::string>(doc, "output", "", "config");
    return c;
}

json load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config '" + path + "': " + e.what());
    }
}

void apply_override(json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "': expected key=value");
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(text);
    } catch (const json::parse_error&) {
        value = text;
    }
    json* node = &doc;
    std::stringstream ss(key);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) {
        if (part.empty()) throw ConfigError("override '" + assignment + "': empty path segment");
        parts.push_back(part);
    }
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        if (!node->is_object()) throw ConfigError("override '" + key + "': " + parts[i] + " is not an object");
        node = &(*node)[parts[i]];
        if (node->is_null()) *node = json::object();
    }
    if (!node->is_object()) throw ConfigError("override '" + key + "': parent is not an object");
    (*node)[parts.back()] = value;
}

bool ValidationReport::ok() const {
    return std::none_of(diagnostics.begin(), diagnostics.end(), [](const Diagnostic& d) { return d.level == "error"; });
}

json ValidationReport::to_json() const {
    json out;
    out["ok"] = ok();
    out["diagnostics"] = json::array();
    for (const auto& d : diagnostics) out["diagnostics"].push_back({{"level", d.level}, {"where", d.where}, {"message", d.message}});
    return out;
}

namespace {

void require(ValidationReport& r, bool cond, const std::string& where, const std::string& msg) {
    if (!cond) r.diagnostics.push_back({"error", where, msg});
}

bool is_2pi_torus(const Domain& d) {
    return d.kind() == Domain::Kind::torus && std::abs(d.length() - 2 * M_PI) < 1e-12;
}

bool single_constant_mode(const QSpec& q) {
    return q.modes() == 1 && q.basis[0].kind == BasisFunction::Kind::constant;
}

void scenario_requirements(ValidationReport& r, const ScenarioConfig& c, const GeneratorSpec& gen,
                           const CoefficientSpec& data) {
    const std::string& s = c.scenario;
    const bool const_gen = gen.kind == GeneratorSpec::Kind::const_diffusion && gen.time_constant();
    const auto phi = split_preset(c.phi).first;
    const auto f = split_preset(c.f).first;
    const auto g = split_preset(c.g).first;
    if (s == "linear-heat") {
        require(r, is_2pi_torus(c.domain), "domain", "linear-heat needs a torus of length 2 pi");
        require(r, const_gen, "generator", "linear-heat needs a constant diffusion");
        require(r, phi == "sin" || phi == "cos", "coefficients.phi", "linear-heat needs sin:j or cos:j");
        require(r, data.linear() && f == "zero" && g == "zero", "coefficients", "linear-heat needs f = g = 0");
    } else if (s == "additive-noise") {
        require(r, is_2pi_torus(c.domain), "domain", "additive-noise needs a torus of length 2 pi");
        require(r, const_gen, "generator", "additive-noise needs a constant diffusion");
        require(r, phi == "sin" || phi == "cos", "coefficients.phi", "additive-noise needs sin:j or cos:j");
        require(r, f == "zero" && g == "const", "coefficients", "additive-noise needs f = 0 and g~ = const:gamma");
        require(r, single_constant_mode(c.q), "q", "additive-noise needs one constant noise mode");
    } else if (s == "monotone-cubic") {
        require(r, f == "cubic_monotone", "coefficients.f", "monotone-cubic needs f = cubic_monotone");
        require(r, phi == "const", "coefficients.phi", "monotone-cubic needs a constant terminal value");
        require(r, g == "zero", "coefficients.g", "monotone-cubic needs g~ = 0");
        require(r, c.domain.kind() != Domain::Kind::interval, "domain", "monotone-cubic needs a conservative domain");
    } else if (s == "gradient-coupled") {
        require(r, c.domain.kind() == Domain::Kind::line, "domain", "gradient-coupled runs on the line");
        require(r, const_gen && gen.a0 == 0.5, "generator", "gradient-coupled needs const:0.5 (X = W)");
        require(r, phi == "identity", "coefficients.phi", "gradient-coupled needs phi = identity");
        require(r, f == "grad_linear", "coefficients.f", "gradient-coupled needs f = grad_linear:theta");
        require(r, data.depends_on_z, "coefficients.f", "gradient-coupled needs a z-dependent driver");
    } else if (s == "comparison") {
        require(r, !data.monotone_only && !data.depends_on_z, "coefficients.f",
                "comparison needs a Lipschitz driver without z");
    } else if (s == "energy-audit") {
        require(r, is_2pi_torus(c.domain), "domain", "energy-audit needs a torus of length 2 pi");
        require(r, const_gen, "generator", "energy-audit needs a constant diffusion");
        require(r, c.phi == "zero" && f == "zero" && g == "const", "coefficients",
                "energy-audit needs phi = 0, f = 0, g~ = const:gamma");
        require(r, single_constant_mode(c.q), "q", "energy-audit needs one constant noise mode");
        double amax = 64.0;
        try {
            amax = read_list(c.params, "alpha_ladder", {8, 16, 32, 64}, "params").back();
        } catch (const ConfigError& e) {
            r.diagnostics.push_back({"error", "params.alpha_ladder", e.what()});
        }
        require(r, amax / c.T * (c.T / static_cast<double>(c.n_steps)) <= 0.5, "grid.n_steps",
                "alpha * dt must stay <= 0.5 for the largest ladder entry");
    } else if (s == "mild-vs-probabilistic") {
        require(r, is_2pi_torus(c.domain), "domain", "mild-vs-probabilistic needs a torus of length 2 pi");
        require(r, const_gen, "generator", "mild-vs-probabilistic needs a constant diffusion");
        require(r, phi == "sin" || phi == "cos", "coefficients.phi", "mild-vs-probabilistic needs sin:j or cos:j");
        require(r, f == "linear", "coefficients.f", "mild-vs-probabilistic needs f = linear:c");
        require(r, c.q.modes() == 1, "q", "mild-vs-probabilistic needs a single noise mode");
    } else if (s == "apriori-scaling") {
        require(r, !data.monotone_only && !data.depends_on_z, "coefficients.f",
                "apriori-scaling needs a Lipschitz driver without z");
        require(r, c.domain.kind() != Domain::Kind::line, "domain", "apriori-scaling needs a bounded domain");
    }
}

}  // namespace

ValidationReport validate_config(const json& doc) {
    ValidationReport r;
    ScenarioConfig c;
    try {
        c = parse_config(doc);
    } catch (const ConfigError& e) {
        r.diagnostics.push_back({"error", "schema", e.what()});
        return r;
    }
    static const char* known[] = {"scenario", "domain", "generator", "coefficients", "q", "grid", "mc",
                                  "regression", "solver", "mild", "params", "output"};
    for (const auto& [k, v] : doc.items()) {
        (void)v;
        if (std::none_of(std::begin(known), std::end(known), [&](const char* n) { return k == n; })) {
            r.diagnostics.push_back({"warning", k, "unknown key ignored"});
        }
    }
    GeneratorSpec gen;
    try {
        gen = GeneratorSpec::parse(c.generator);
    } catch (const ConfigError& e) {
        r.diagnostics.push_back({"error", "generator", e.what()});
        return r;
    }
    CoefficientSpec data;
    try {
        data = c.coefficients();
    } catch (const ConfigError& e) {
        r.diagnostics.push_back({"error", "coefficients", e.what()});
        return r;
    }
    const auto probes = probe_constants(data, c.T, 10000, c.seed);
    for (const auto& chk : probes.checks) {
        if (!chk.holds) {
            r.diagnostics.push_back({"error", "coefficients.constants",
                                     "constraint " + chk.name + " violated: declared " + format_double(chk.declared) +
                                         ", observed " + format_double(chk.observed)});
        }
    }
    if (c.q.modes() > 0) {
        if (!c.domain.bounded()) {
            for (const auto& b : c.q.basis) {
                require(r, b.kind == BasisFunction::Kind::constant, "q.basis",
                        "only the constant mode is available on the line");
            }
        } else {
            const auto mesh = space_mesh(c.domain, std::max<std::size_t>(c.n_space, 64));
            try {
                const auto rep = validate_qspec(c.q, c.domain, mesh);
                if (!rep.pass) {
                    for (const auto& m : rep.messages) r.diagnostics.push_back({"error", "q", m});
                    if (rep.messages.empty()) r.diagnostics.push_back({"error", "q", "QSpec validation failed"});
                }
            } catch (const ConfigError& e) {
                r.diagnostics.push_back({"error", "q", e.what()});
            }
        }
    }
    if (!data.g.zero() && c.q.modes() == 0) r.diagnostics.push_back({"error", "q", "noise coefficient without modes"});
    if (data.depends_on_z && gen.kind == GeneratorSpec::Kind::fractional) {
        r.diagnostics.push_back({"error", "generator", "z-dependent drivers need a diffusion generator"});
    }
    scenario_requirements(r, c, gen, data);
    return r;
}

bool RunSummary::all_pass() const {
    return status == "ok" && std::all_of(metrics.begin(), metrics.end(), [](const Metric& m) { return m.pass; });
}

const Metric* RunSummary::find(const std::string& name) const {
    for (const auto& m : metrics)
        if (m.name == name) return &m;
    return nullptr;
}

json RunSummary::to_json() const {
    json out;
    out["scenario"] = scenario;
    out["status"] = status;
    out["failed_stage"] = failed_stage.empty() ? json(nullptr) : json(failed_stage);
    if (!message.empty()) out["message"] = message;
    out["metrics"] = json::array();
    for (const auto& m : metrics) {
        out["metrics"].push_back({{"name", m.name},
                                  {"value", std::isfinite(m.value) ? json(m.value) : json(format_double(m.value))},
                                  {"tolerance", m.tolerance},
                                  {"comparator", m.comparator},
                                  {"pass", m.pass}});
    }
    out["warnings"] = warnings;
    out["all_pass"] = all_pass();
    return out;
}

int exit_code(const RunSummary& s) { return s.status == "ok" ? 0 : 3; }

namespace {

struct Artifacts {
    std::optional<FieldEstimate> field;
    std::vector<EnergyRow> energy;
    json identity = json::object();
    IterationLog log;
    RunSummary summary;

    void metric(const std::string& name, double value, double tol, const std::string& cmp) {
        bool pass = true;
        if (cmp == "<=") pass = value <= tol;
        else if (cmp == "<") pass = value < tol;
        else if (cmp == ">=") pass = value >= tol;
        if (!std::isfinite(value) && cmp != "info") pass = false;
        summary.metrics.push_back({name, value, tol, cmp, pass});
    }
    void info(const std::string& name, double value) { metric(name, value, 0.0, "info"); }
};

struct Context {
    ScenarioConfig cfg;
    GeneratorSpec gen;
    CoefficientSpec data;
    TimeGrid grid{0.0, 1.0, 1};
    std::size_t threads = 1;
    SolverConfig solver;
};

std::string label(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

std::size_t noise_modes(const CoefficientSpec& d) { return std::max<std::size_t>(d.q.modes(), 1); }

PathEnsemble mesh_ensemble(const Context& ctx, bool keep_increments) {
    std::vector<Start> starts;
    if (ctx.cfg.domain.kind() == Domain::Kind::line) {
        starts.push_back({0.0, {ctx.cfg.params.value("x0", 0.0)}});
    } else {
        for (double x : space_mesh(ctx.cfg.domain, ctx.cfg.n_space)) starts.push_back({0.0, {x}});
    }
    const std::size_t per = std::max<std::size_t>(1, ctx.cfg.inner_paths / starts.size());
    SimulationOptions sim;
    sim.threads = ctx.threads;
    sim.keep_increments = keep_increments;
    return simulate_paths(ctx.gen, ctx.cfg.domain, starts, ctx.grid, per, ctx.cfg.seed, 1, sim);
}

FieldOptions field_options(const Context& ctx) {
    FieldOptions o;
    o.n_time = ctx.cfg.n_time;
    o.n_space = ctx.cfg.n_space;
    o.inner_paths = ctx.cfg.inner_paths;
    o.outer = ctx.cfg.outer;
    o.seed = ctx.cfg.seed;
    o.threads = ctx.threads;
    o.fast_mode = ctx.cfg.fast_mode;
    o.solver = ctx.cfg.solver;
    return o;
}

double mode_index(const std::string& preset) {
    const auto p = split_preset(preset);
    return p.second.empty() ? 1.0 : p.second[0];
}

// e^{-(a j^2 + c)(T - s)} phi(x) for phi = sin:j / cos:j
std::function<double(double, double)> heat_closed_form(const Context& ctx, double c) {
    const double j = mode_index(ctx.cfg.phi);
    const double rate = ctx.gen.a0 * j * j + c;
    const double T = ctx.cfg.T;
    const TerminalFn phi = ctx.data.phi;
    return [=](double s, double x) { return std::exp(-rate * (T - s)) * phi(x); };
}

double mesh_l2_rel(const FieldEstimate& a, const FieldEstimate& b, std::size_t o) {
    const auto ws = time_weights(a.s);
    const auto wx = space_weights(a.domain, a.x.size());
    double e = 0.0, n = 0.0;
    for (std::size_t i = 0; i < a.s.size(); ++i)
        for (std::size_t j = 0; j < a.x.size(); ++j) {
            const double w = ws[i] * wx[j];
            e += w * std::pow(a.at(o, i, j) - b.at(o, i, j), 2);
            n += w * b.at(o, i, j) * b.at(o, i, j);
        }
    return n > 0.0 ? std::sqrt(e / n) : std::sqrt(e);
}

void record_identity(Artifacts& art, const IdentityReport& rep, const std::string& key) {
    json j;
    j["lhs"] = rep.lhs.value;
    j["lhs_stderr"] = rep.lhs.std_error;
    j["rhs_i"] = rep.rhs_i.value;
    j["rhs_ii"] = rep.rhs_ii.value;
    j["rhs_ii_stderr"] = rep.rhs_ii.std_error;
    j["u0_norm"] = rep.u0_norm.value;
    j["b_norm"] = rep.b_norm.value;
    j["k_pairing"] = rep.k_pairing.value;
    j["tolerance"] = rep.tolerance;
    j["pass_ii"] = rep.pass_ii;
    j["k_ladder"] = json::array();
    for (const auto& p : rep.k_ladder) {
        j["k_ladder"].push_back({{"beta", p.alpha}, {"value", p.value.value}});
        art.energy.push_back({p.alpha, "k_pairing", p.value});
    }
    art.identity[key] = j;
}

std::vector<double> k_ladder(const Context& ctx) {
    auto k = read_list(ctx.cfg.params, "k_ladder", {256, 512, 1024}, "params");
    for (double& v : k) v /= ctx.cfg.T;
    return k;
}

void run_linear_heat(const Context& ctx, Artifacts& art) {
    const auto u = feynman_kac_field(ctx.data, ctx.gen, ctx.grid, field_options(ctx), ctx.solver);
    art.metric("heat_l2_rel", field_l2_error(u, 0, heat_closed_form(ctx, 0.0), true), 0.05, "<=");
    art.metric("scheme_residual", u.max_residual, 1e-12, "<=");
    art.info("failed_points", static_cast<double>(u.failed));
    if (!u.fast_mode) {
        const auto rep = energy_identity_sides(u, ctx.gen, k_ladder(ctx));
        record_identity(art, rep, "identity");
        art.info("identity_lhs", rep.lhs.value);
        art.info("identity_rhs_ii", rep.rhs_ii.value);
    }
    art.field = u;
}

void run_additive_noise(const Context& ctx, Artifacts& art) {
    const auto u = feynman_kac_field(ctx.data, ctx.gen, ctx.grid, field_options(ctx), ctx.solver);
    const auto heat = heat_closed_form(ctx, 0.0);
    const double gamma = split_preset(ctx.cfg.g).second.at(0);
    const double c = gamma * std::sqrt(ctx.cfg.q.lambdas[0] / ctx.cfg.domain.length());
    double worst = 0.0;
    for (std::size_t o = 0; o < u.outer; ++o) {
        const auto noise = outer_noise(ctx.grid, 1, ctx.cfg.seed, o);
        const auto& grid = ctx.grid;
        const double err = field_l2_error(
            u, o, [&](double s, double x) { return heat(s, x) + c * noise.tail(0, *grid.index_of(s)); }, true);
        art.info("additive_l2_rel_outer" + std::to_string(o), err);
        worst = std::max(worst, err);
    }
    art.metric("additive_l2_rel_max", worst, 0.05, "<=");
    const auto mild = mild_field(ctx.data, ctx.gen, ctx.grid, ctx.cfg.n_time, ctx.cfg.n_space, u.outer,
                                 ctx.cfg.seed, ctx.cfg.mild);
    double md = 0.0;
    for (std::size_t o = 0; o < u.outer; ++o) md = std::max(md, mesh_l2_rel(u, mild.field, o));
    art.metric("mild_vs_prob_l2_rel_max", md, 0.05, "<=");
    art.metric("mild_residual", mild.max_residual, 1e-10, "<=");
    art.metric("scheme_residual", u.max_residual, 1e-12, "<=");
    art.log.append(mild.log, "mild_");
    art.field = u;
}

void run_monotone(const Context& ctx, Artifacts& art) {
    const auto paths = mesh_ensemble(ctx, false);
    const auto noise = outer_noise(ctx.grid, noise_modes(ctx.data), ctx.cfg.seed, 0);
    MonotoneOptions mo;
    mo.truncation_ladder = read_list(ctx.cfg.params, "truncation_ladder", mo.truncation_ladder, "params");
    mo.n_ladder = read_list(ctx.cfg.params, "n_ladder", mo.n_ladder, "params");
    mo.h = ctx.cfg.params.value("h", mo.h);
    const auto res = solve_monotone(ctx.data, paths, noise, ctx.solver, mo);
    art.log.append(res.log, "");
    const double c = split_preset(ctx.cfg.phi).second.at(0);
    const double exact = 1.0 / std::sqrt(1.0 / (c * c) + 2.0 * ctx.cfg.T);
    double y0 = 0.0;
    std::size_t n = 0;
    for (std::size_t p = 0; p < paths.size(); ++p) {
        if (!paths.alive(p, 0)) continue;
        y0 += res.solution.y(p, 0);
        ++n;
    }
    y0 /= static_cast<double>(n);
    art.info("monotone_y0", y0);
    art.metric("monotone_rel_error", std::abs(y0 - exact) / exact, 0.02, "<=");
    art.metric("infconv_order_fraction", res.infconv_order_fraction, 0.99, ">=");
    art.metric("truncation_order_fraction", res.truncation_order_fraction, 0.99, ">=");
    art.info("ladder_stabilization", res.stabilization);
    art.metric("scheme_residual", residual_check(res.solution, res.effective, paths, noise).max_abs, 1e-12, "<=");

    // certificate on the truncated cubic, and the dense-grid value f_4(1)
    const double cut = ctx.cfg.params.value("certificate_cut", 8.0);
    const double R = ctx.cfg.params.value("certificate_R", 4.0);
    const auto probes = ctx.cfg.params.value("certificate_probes", std::size_t{10000});
    const AutonomousFn trunc = [cut](double y) { return std::max(-y * y * y, -cut); };
    const auto cert = certify_inf_convolution(trunc, mo.n_ladder, 0.0, R, 1e-4, probes, ctx.cfg.seed);
    double viol = 0.0;
    for (auto v : cert.violations) viol += static_cast<double>(v);
    art.metric("infconv_certificate_violations", viol, 0.0, "<=");
    art.info("infconv_certificate_probes", static_cast<double>(cert.probes));
    const auto f4 = inf_convolution(trunc, 4.0, 0.0, R, 1e-4);
    art.metric("infconv_f4_at_1_error", std::abs(f4(1.0) + 4.0), 1e-3, "<=");

    FieldEstimate u;
    u.s = time_mesh(ctx.grid, ctx.cfg.n_time);
    u.outer = 1;
    u.domain = ctx.cfg.domain;
    if (ctx.cfg.domain.kind() != Domain::Kind::line) {
        u.x = space_mesh(ctx.cfg.domain, ctx.cfg.n_space);
        for (std::size_t i = 0; i < u.s.size(); ++i) {
            const std::size_t k = *ctx.grid.index_of(u.s[i]) - res.solution.first;
            for (double x : u.x) {
                u.value.push_back(res.solution.fits[k](x));
                u.std_error.push_back(res.solution.reg_stderr[k]);
            }
        }
        art.field = u;
    }
}

void run_gradient(const Context& ctx, Artifacts& art) {
    const auto paths = mesh_ensemble(ctx, true);
    const auto noise = outer_noise(ctx.grid, noise_modes(ctx.data), ctx.cfg.seed, 0);
    GradientOptions go;
    go.tol = ctx.cfg.params.value("tol", go.tol);
    const auto res = solve_with_gradient(ctx.data, paths, noise, ctx.solver, go);
    art.log.append(res.log, "");
    const double theta = split_preset(ctx.cfg.f).second.at(0);
    const double T = ctx.cfg.T;
    double sup_err = 0.0, scale = 0.0, zerr = 0.0;
    std::size_t zn = 0;
    for (std::size_t i = 0; i <= ctx.grid.n_steps(); ++i) {
        const double t = ctx.grid.node(i);
        double e = 0.0, m2 = 0.0;
        for (std::size_t p = 0; p < paths.size(); ++p) {
            const double exact = paths.x(p, i) + theta * (T - t);
            e += std::abs(res.solution.y(p, i) - exact);
            m2 += exact * exact;
            if (i < ctx.grid.n_steps()) {
                zerr += std::abs(res.solution.z(p, i) - 1.0);
                ++zn;
            }
        }
        sup_err = std::max(sup_err, e / static_cast<double>(paths.size()));
        scale = std::max(scale, std::sqrt(m2 / static_cast<double>(paths.size())));
    }
    art.info("gradient_scale", scale);
    art.metric("gradient_y_error_rel", sup_err / scale, 0.05, "<=");
    art.metric("gradient_z_mean_abs_error", zerr / static_cast<double>(zn), 0.1, "<=");
    double rmax = 0.0;
    for (double r : res.ratios) rmax = std::max(rmax, r);
    art.metric("gradient_max_contraction_ratio", rmax, 1.0, "<");
    art.info("gradient_predicted_ratio", res.predicted_ratio);
    art.info("gradient_stages", static_cast<double>(res.ratios.size() + 1));
    art.metric("scheme_residual", residual_check(res.solution, ctx.data, paths, noise).max_abs, 1e-12, "<=");
}

void run_comparison(const Context& ctx, Artifacts& art) {
    const auto paths = mesh_ensemble(ctx, false);
    const auto noise = outer_noise(ctx.grid, noise_modes(ctx.data), ctx.cfg.seed, 0);
    const double shift = ctx.cfg.params.value("shift", 0.5);
    const double eps = ctx.cfg.params.value("eps_factor", 3.0);
    const MonotoneOptions mo;
    const GradientOptions go;
    auto solve = [&](const CoefficientSpec& d) { return solve_for(d, paths, noise, ctx.solver, ctx.cfg.solver, mo, go); };
    const auto base = solve(ctx.data);
    const auto lo_xi = ctx.data.with_terminal_shift(-shift);
    const auto lo_f = ctx.data.with_driver_shift(-shift);
    const auto a = solve(lo_xi);
    const auto b = solve(lo_f);
    art.log.append(base.log, "base_");
    art.metric("comparison_fraction_terminal", comparison_report(base, a, paths, eps).fraction, 0.01, "<=");
    art.metric("comparison_fraction_driver", comparison_report(base, b, paths, eps).fraction, 0.01, "<=");
    art.info("comparison_fraction_reversed", comparison_report(a, base, paths, eps).fraction);
    double r = residual_check(base, ctx.data, paths, noise).max_abs;
    r = std::max(r, residual_check(a, lo_xi, paths, noise).max_abs);
    r = std::max(r, residual_check(b, lo_f, paths, noise).max_abs);
    art.metric("scheme_residual", r, 1e-12, "<=");
}

void run_energy_audit(const Context& ctx, Artifacts& art) {
    const double T = ctx.cfg.T;
    // e(N) along the alpha ladder
    auto alphas = read_list(ctx.cfg.params, "alpha_ladder", {8, 16, 32, 64}, "params");
    for (double& a : alphas) a /= T;
    // e(N) averages over the noise itself, so it gets its own (cheaper) outer budget
    auto en_opt = field_options(ctx);
    en_opt.fast_mode = true;
    en_opt.outer = ctx.cfg.params.value("en_outer", ctx.cfg.outer);
    const auto u_en = feynman_kac_field(ctx.data, ctx.gen, ctx.grid, en_opt, ctx.solver);
    const auto u = feynman_kac_field(ctx.data, ctx.gen, ctx.grid, field_options(ctx), ctx.solver);
    art.metric("scheme_residual", std::max(u.max_residual, u_en.max_residual), 1e-12, "<=");
    EnergyOptions eo;
    eo.outer = en_opt.outer;
    eo.seed = ctx.cfg.seed;
    eo.threads = ctx.threads;
    const auto samples = n_functional_samples(
        ctx.data, ctx.gen, ctx.grid, [&](std::size_t o) { return u_en.interpolant(o); },
        ctx.cfg.params.value("en_space", std::size_t{8}), eo);
    const auto ladder = energy_af(samples, alphas, AfConvention::frozen);
    for (const auto& p : ladder) art.energy.push_back({p.alpha, "e_N", p.value});
    const auto rich = richardson(ladder);
    const auto closed = energy_N_closed(ctx.data, u_en);
    art.energy.push_back({0.0, "e_N_richardson", rich});
    art.energy.push_back({0.0, "e_N_closed", closed});
    art.metric("eN_richardson_rel_error", std::abs(rich.value - closed.value) / closed.value, 0.10, "<=");
    art.metric("eN_raw_top_alpha_rel_error", std::abs(ladder.back().value.value - closed.value) / closed.value, 0.15,
               "<=");

    // finite-beta identity on two deterministic fields
    auto betas = read_list(ctx.cfg.params, "beta_ladder", {4, 16, 64}, "params");
    EnergyOptions bo;
    bo.starts = ctx.cfg.params.value("eqe1_starts", std::size_t{20000});
    bo.seed = ctx.cfg.seed;
    bo.threads = ctx.threads;
    const double a = ctx.gen.a0;
    const std::vector<std::pair<std::string, Field>> fields{
        {"time", [T](double s, double) { return T - s; }},
        {"heat", [T, a](double s, double x) { return std::exp(-a * (T - s)) * std::sin(x); }}};
    art.identity["eqe1"] = json::array();
    for (const auto& [name, fld] : fields) {
        for (double b : betas) {
            const double beta = b / T;
            const auto sd = eqe1_sides(fld, beta, ctx.gen, ctx.cfg.domain, T, bo);
            const double se = std::hypot(sd.lhs.std_error, sd.rhs.std_error);
            const double z = se > 0.0 ? std::abs(sd.lhs.value - sd.rhs.value) / se : 0.0;
            art.metric("eqe1_" + name + "_beta" + label(b) + "_z", z, 3.0, "<=");
            art.energy.push_back({beta, "eqe1_" + name + "_lhs", sd.lhs});
            art.energy.push_back({beta, "eqe1_" + name + "_rhs", sd.rhs});
            art.identity["eqe1"].push_back({{"field", name},
                                            {"beta", beta},
                                            {"lhs", sd.lhs.value},
                                            {"lhs_stderr", sd.lhs.std_error},
                                            {"rhs", sd.rhs.value},
                                            {"rhs_stderr", sd.rhs.std_error}});
        }
    }

    // energy identity, both right-hand sides
    const auto rep = energy_identity_sides(u, ctx.gen, k_ladder(ctx));
    record_identity(art, rep, "identity");
    art.info("identity_lhs", rep.lhs.value);
    art.metric("identity_ii_abs_gap", std::abs(rep.lhs.value - rep.rhs_ii.value), rep.tolerance, "<=");
    art.info("identity_i_abs_gap", std::abs(rep.lhs.value - rep.rhs_i.value));
    art.field = u;
}

void run_mild_vs_prob(const Context& ctx, Artifacts& art) {
    const auto u = feynman_kac_field(ctx.data, ctx.gen, ctx.grid, field_options(ctx), ctx.solver);
    const auto mild = mild_field(ctx.data, ctx.gen, ctx.grid, ctx.cfg.n_time, ctx.cfg.n_space, u.outer,
                                 ctx.cfg.seed, ctx.cfg.mild);
    double md = 0.0;
    for (std::size_t o = 0; o < u.outer; ++o) {
        const double d = mesh_l2_rel(u, mild.field, o);
        art.info("mild_vs_prob_l2_rel_outer" + std::to_string(o), d);
        md = std::max(md, d);
    }
    art.metric("mild_vs_prob_l2_rel_max", md, 0.05, "<=");
    art.metric("mild_residual", mild.max_residual, 1e-10, "<=");
    art.metric("scheme_residual", u.max_residual, 1e-12, "<=");
    for (const auto& w : mild.warnings) art.summary.warnings.push_back(w);
    art.log.append(mild.log, "mild_");

    // deterministic part against the scalar mode ODE
    const double c = split_preset(ctx.cfg.f).second.at(0);
    const std::size_t steps = ctx.cfg.params.value("closed_form_steps", std::size_t{128});
    const auto det = make_coefficients(ctx.cfg.phi, ctx.cfg.f, "zero", {}, ctx.cfg.domain);
    const TimeGrid fine(0.0, ctx.cfg.T, steps);
    const SpectralBasis basis = SpectralBasis::for_generator(ctx.cfg.domain, ctx.gen, ctx.cfg.mild.modes);
    const auto noise = sample_backward_noise(fine, 1, ctx.cfg.seed, 0);
    const auto sol = solve_mild(det, basis, fine, noise, ctx.cfg.mild);
    const auto exact = heat_closed_form(ctx, c);
    double worst = 0.0;
    for (std::size_t i = 0; i <= steps; ++i)
        for (double x : space_mesh(ctx.cfg.domain, ctx.cfg.n_space))
            worst = std::max(worst, std::abs(sol.value(basis, i, x) - exact(fine.node(i), x)));
    art.metric("mild_closed_form_max_abs", worst, 1e-3, "<=");

    // reversal defect agrees with the backward one
    const auto noise0 = outer_noise(ctx.grid, noise_modes(ctx.data), ctx.cfg.seed, 0);
    const SpectralBasis b0 = SpectralBasis::for_generator(ctx.cfg.domain, ctx.gen, ctx.cfg.mild.modes);
    const auto s0 = solve_mild(ctx.data, b0, ctx.grid, noise0, ctx.cfg.mild);
    art.metric("mild_time_reversal_gap",
               std::abs(time_reversal_check(s0, ctx.data, b0, noise0) - mild_residual(s0, ctx.data, b0, noise0)),
               1e-12, "<=");
    art.field = u;
}

void run_apriori_scaling(const Context& ctx, Artifacts& art) {
    const auto paths = mesh_ensemble(ctx, false);
    const auto noise = outer_noise(ctx.grid, noise_modes(ctx.data), ctx.cfg.seed, 0);
    const auto scales = read_list(ctx.cfg.params, "scales", {1, 2, 4}, "params");
    const MonotoneOptions mo;
    const GradientOptions go;
    auto fo = field_options(ctx);
    fo.fast_mode = true;
    double r0 = 0.0, e0 = 0.0, drift_a = 0.0, drift_e = 0.0, resid = 0.0;
    for (std::size_t k = 0; k < scales.size(); ++k) {
        const auto d = ctx.data.scaled(scales[k]);
        const auto sol = solve_for(d, paths, noise, ctx.solver, ctx.cfg.solver, mo, go);
        resid = std::max(resid, residual_check(sol, d, paths, noise).max_abs);
        const auto sa = apriori_sides(sol, d, paths, noise);
        const auto u = feynman_kac_field(d, ctx.gen, ctx.grid, fo, ctx.solver);
        const auto se = energy_estimate_sides(u, d, ctx.gen);
        art.energy.push_back({scales[k], "apriori_lhs", sa.lhs});
        art.energy.push_back({scales[k], "apriori_rhs", sa.rhs});
        art.energy.push_back({scales[k], "energy_estimate_lhs", se.lhs});
        art.energy.push_back({scales[k], "energy_estimate_rhs", se.rhs});
        art.info("apriori_ratio_scale" + label(scales[k]), sa.ratio());
        art.info("energy_ratio_scale" + label(scales[k]), se.ratio());
        if (k == 0) {
            r0 = sa.ratio();
            e0 = se.ratio();
            art.log.append(sol.log, "");
            art.field = u;
        } else {
            drift_a = std::max(drift_a, std::abs(sa.ratio() / r0 - 1.0));
            drift_e = std::max(drift_e, std::abs(se.ratio() / e0 - 1.0));
        }
    }
    art.metric("apriori_ratio_drift", drift_a, 0.01, "<=");
    art.metric("energy_ratio_drift", drift_e, 0.01, "<=");
    art.metric("scheme_residual", resid, 1e-12, "<=");
}

template <class Fn>
void write_file(const fs::path& p, Fn&& body) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + p.string() + "'");
    body(out);
}

}  // namespace

RunSummary run_scenario(const json& doc, const std::string& out_dir, std::size_t threads) {
    const auto report = validate_config(doc);
    if (!report.ok()) {
        std::string msg;
        for (const auto& d : report.diagnostics)
            if (d.level == "error") msg += (msg.empty() ? "" : "; ") + d.where + ": " + d.message;
        throw ConfigError(msg);
    }
    Context ctx;
    ctx.cfg = parse_config(doc);
    ctx.gen = GeneratorSpec::parse(ctx.cfg.generator);
    ctx.data = ctx.cfg.coefficients();
    ctx.grid = ctx.cfg.grid();
    ctx.threads = std::max<std::size_t>(threads, 1);
    ctx.solver = ctx.cfg.solver_config(ctx.threads);
    ctx.solver.threads = ctx.threads;

    Artifacts art;
    art.summary.scenario = ctx.cfg.scenario;
    for (const auto& d : report.diagnostics)
        if (d.level == "warning") art.summary.warnings.push_back(d.where + ": " + d.message);
    try {
        const std::string& s = ctx.cfg.scenario;
        if (s == "linear-heat") run_linear_heat(ctx, art);
        else if (s == "additive-noise") run_additive_noise(ctx, art);
        else if (s == "monotone-cubic") run_monotone(ctx, art);
        else if (s == "gradient-coupled") run_gradient(ctx, art);
        else if (s == "comparison") run_comparison(ctx, art);
        else if (s == "energy-audit") run_energy_audit(ctx, art);
        else if (s == "mild-vs-probabilistic") run_mild_vs_prob(ctx, art);
        else if (s == "apriori-scaling") run_apriori_scaling(ctx, art);
    } catch (const NumericalError& e) {
        art.summary.status = "numerical_failure";
        art.summary.failed_stage = e.stage();
        art.summary.message = e.what();
    }

    const fs::path dir(out_dir);
    fs::create_directories(dir);
    write_file(dir / "field.csv", [&](std::ostream& o) {
        if (art.field) art.field->write_csv(o);
        else o << "outer_id,s,x,value,stderr\n";
    });
    write_file(dir / "energy.csv", [&](std::ostream& o) { write_energy_csv(o, art.energy); });
    write_file(dir / "identity.json", [&](std::ostream& o) { o << art.identity.dump(2) << '\n'; });
    write_file(dir / "iterations.csv", [&](std::ostream& o) { art.log.write_csv(o, true); });
    write_file(dir / "summary.json", [&](std::ostream& o) { o << art.summary.to_json().dump(2) << '\n'; });
    write_file(dir / "config.json", [&](std::ostream& o) { o << doc.dump(2) << '\n'; });
    return art.summary;
}

}  // namespace bdsde
