#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "bdsde/coefficients.hpp"
#include "bdsde/field.hpp"
#include "bdsde/mild.hpp"

namespace bdsde {

using json = nlohmann::json;

const std::vector<std::string>& scenario_names();

/// Typed view of a scenario document. Scenario-specific knobs stay in
/// `params` and are read with defaults by the pipeline.
struct ScenarioConfig {
    std::string scenario;
    Domain domain = Domain::torus(1.0);
    std::string generator = "const:0.5";
    std::string phi = "zero";
    std::string f = "zero";
    std::string g = "zero";
    json constants = json::object();
    QSpec q;
    double T = 1.0;
    std::size_t n_steps = 64;
    std::size_t n_time = 16;
    std::size_t n_space = 16;
    std::size_t inner_paths = 1000;
    std::size_t outer = 1;
    std::uint64_t seed = 1;
    RegressionConfig regression;
    SolverKind solver = SolverKind::automatic;
    double picard_tol = 1e-10;
    std::size_t max_iter = 200;
    bool fast_mode = false;
    MildOptions mild;
    json params = json::object();
    std::string output;

    /// Coefficients with any constant overrides applied.
    CoefficientSpec coefficients() const;
    TimeGrid grid() const { return TimeGrid(0.0, T, n_steps); }
    SolverConfig solver_config(std::size_t threads) const;
};

/// Throws ConfigError naming the offending key.
ScenarioConfig parse_config(const json& doc);

json load_config(const std::string& path);

/// "a.b.c=value"; value is read as JSON when it parses, else as a string.
void apply_override(json& doc, const std::string& assignment);

struct Diagnostic {
    std::string level;  // "error" or "warning"
    std::string where;
    std::string message;
};

struct ValidationReport {
    std::vector<Diagnostic> diagnostics;
    bool ok() const;
    json to_json() const;
};

/// Schema, preset lookup, constant probing, QSpec validation and scenario
/// requirements.
ValidationReport validate_config(const json& doc);

struct Metric {
    std::string name;
    double value = 0.0;
    double tolerance = 0.0;
    /// "<=", ">=" or "info" (reported, never fails)
    std::string comparator = "<=";
    bool pass = true;
};

struct RunSummary {
    std::string scenario;
    std::string status = "ok";  // ok | numerical_failure
    std::string failed_stage;
    std::string message;
    std::vector<Metric> metrics;
    std::vector<std::string> warnings;

    bool all_pass() const;
    const Metric* find(const std::string& name) const;
    json to_json() const;
};

/// Runs the pipeline and writes field.csv, energy.csv, identity.json,
/// iterations.csv and summary.json into out_dir (created if needed).
/// Numerical failures are caught and recorded; configuration errors throw.
RunSummary run_scenario(const json& doc, const std::string& out_dir, std::size_t threads);

/// Exit code for a finished run: 0, or 3 after a numerical failure.
int exit_code(const RunSummary& s);

}  // namespace bdsde
