#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "bdsde/experiment.hpp"

using namespace bdsde;
namespace fs = std::filesystem;

namespace {

json small_comparison() {
    return json::parse(R"({
      "scenario": "comparison",
      "domain": {"kind": "torus", "length": 6.283185307179586},
      "generator": "const:0.5",
      "coefficients": {"phi": "sin:1", "f": "linear:1", "g": "linear:0.5"},
      "q": {"lambdas": [0.5], "basis": ["constant"]},
      "grid": {"T": 1.0, "n_steps": 16, "n_time": 4, "n_space": 8},
      "mc": {"inner_paths": 512, "seed": 3},
      "regression": {"basis": "fourier", "size": 2}
    })");
}

json small_heat() {
    return json::parse(R"({
      "scenario": "linear-heat",
      "domain": {"kind": "torus", "length": 6.283185307179586},
      "generator": "const:0.5",
      "coefficients": {"phi": "sin:1"},
      "grid": {"T": 1.0, "n_steps": 16, "n_time": 4, "n_space": 4},
      "mc": {"inner_paths": 200, "seed": 5},
      "regression": {"basis": "fourier", "size": 2}
    })");
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

bool has_error(const ValidationReport& r, const std::string& needle) {
    for (const auto& d : r.diagnostics)
        if (d.level == "error" && (d.message.find(needle) != std::string::npos || d.where.find(needle) != std::string::npos))
            return true;
    return false;
}

}  // namespace

TEST(Config, ParsesSchemaAndDefaults) {
    const auto c = parse_config(small_comparison());
    EXPECT_EQ(c.scenario, "comparison");
    EXPECT_EQ(c.domain.kind(), Domain::Kind::torus);
    EXPECT_EQ(c.q.modes(), 1u);
    EXPECT_EQ(c.n_steps, 16u);
    EXPECT_EQ(c.outer, 1u);
    EXPECT_EQ(c.regression.basis, RegressionConfig::Basis::fourier);
    EXPECT_EQ(c.solver, SolverKind::automatic);
    EXPECT_EQ(c.grid().dt(), 1.0 / 16);
}

TEST(Config, TypeErrorsNameTheKey) {
    auto doc = small_comparison();
    doc["grid"]["n_steps"] = "many";
    try {
        parse_config(doc);
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("grid.n_steps"), std::string::npos);
    }
    doc = small_comparison();
    doc["grid"]["n_time"] = 5;
    EXPECT_THROW(parse_config(doc), ConfigError);
    doc = small_comparison();
    doc["scenario"] = "nope";
    EXPECT_THROW(parse_config(doc), ConfigError);
    doc = small_comparison();
    doc["domain"] = {{"kind", "sphere"}};
    EXPECT_THROW(parse_config(doc), ConfigError);
}

TEST(Config, OverridesParseJsonOrString) {
    auto doc = small_comparison();
    apply_override(doc, "mc.seed=99");
    apply_override(doc, "coefficients.f=linear:2");
    apply_override(doc, "params.scales=[1,3]");
    apply_override(doc, "solver.fast_mode=true");
    EXPECT_EQ(doc["mc"]["seed"], 99);
    EXPECT_EQ(doc["coefficients"]["f"], "linear:2");
    EXPECT_EQ(doc["params"]["scales"].size(), 2u);
    EXPECT_TRUE(parse_config(doc).fast_mode);
    EXPECT_THROW(apply_override(doc, "noequals"), ConfigError);
    EXPECT_THROW(apply_override(doc, "mc.seed.x=1"), ConfigError);
}

TEST(Validate, AcceptsShippedShapeAndWarnsOnUnknownKeys) {
    auto doc = small_comparison();
    doc["colour"] = "blue";
    const auto r = validate_config(doc);
    EXPECT_TRUE(r.ok());
    ASSERT_EQ(r.diagnostics.size(), 1u);
    EXPECT_EQ(r.diagnostics[0].level, "warning");
    EXPECT_TRUE(r.to_json()["ok"].get<bool>());
}

TEST(Validate, RejectsDeclaredGradientConstantAboveOne) {
    auto doc = json::parse(R"({
      "scenario": "gradient-coupled", "domain": {"kind": "line"}, "generator": "const:0.5",
      "coefficients": {"phi": "identity", "f": "grad_linear:0.5", "constants": {"m_grad": 1.2}},
      "grid": {"T": 1.0, "n_steps": 16, "n_time": 4, "n_space": 4},
      "regression": {"basis": "polynomial", "size": 1}
    })");
    const auto r = validate_config(doc);
    EXPECT_FALSE(r.ok());
    EXPECT_TRUE(has_error(r, "m_grad<1"));
    EXPECT_THROW(run_scenario(doc, (fs::temp_directory_path() / "bdsde_mgrad").string(), 1), ConfigError);
    doc["coefficients"].erase("constants");
    EXPECT_TRUE(validate_config(doc).ok());
}

TEST(Validate, MissingPresetsAndScenarioMismatch) {
    auto doc = small_comparison();
    doc["coefficients"]["f"] = "quartic";
    EXPECT_FALSE(validate_config(doc).ok());
    doc = small_comparison();
    doc["generator"] = "brownian";
    EXPECT_TRUE(has_error(validate_config(doc), "generator"));
    doc = small_heat();
    doc["coefficients"]["f"] = "linear:1";
    EXPECT_FALSE(validate_config(doc).ok());
    doc = small_comparison();
    doc["q"]["basis"] = json::array({"sine:0"});
    EXPECT_FALSE(validate_config(doc).ok());
}

TEST(RunScenario, WritesArtifactsAndPasses) {
    const fs::path dir = fs::temp_directory_path() / "bdsde_cmp";
    fs::remove_all(dir);
    const auto s = run_scenario(small_comparison(), dir.string(), 1);
    EXPECT_EQ(s.status, "ok");
    EXPECT_EQ(exit_code(s), 0);
    for (const char* f : {"field.csv", "energy.csv", "identity.json", "iterations.csv", "summary.json"})
        EXPECT_TRUE(fs::exists(dir / f)) << f;
    ASSERT_NE(s.find("scheme_residual"), nullptr);
    EXPECT_LE(s.find("scheme_residual")->value, 1e-12);
    EXPECT_LE(s.find("comparison_fraction_terminal")->value, 0.01);
    const auto j = json::parse(slurp(dir / "summary.json"));
    EXPECT_EQ(j["scenario"], "comparison");
    EXPECT_EQ(slurp(dir / "iterations.csv").rfind("iter,node,metric,value", 0), 0u);
}

TEST(RunScenario, ByteIdenticalAcrossRunsAndThreads) {
    const fs::path a = fs::temp_directory_path() / "bdsde_det_a";
    const fs::path b = fs::temp_directory_path() / "bdsde_det_b";
    fs::remove_all(a);
    fs::remove_all(b);
    run_scenario(small_heat(), a.string(), 1);
    run_scenario(small_heat(), b.string(), 3);
    for (const char* f : {"field.csv", "energy.csv", "iterations.csv", "identity.json"})
        EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
    auto other = small_heat();
    other["mc"]["seed"] = 6;
    run_scenario(other, b.string(), 1);
    EXPECT_NE(slurp(a / "field.csv"), slurp(b / "field.csv"));
}

TEST(Summary, ComparatorsAndStatus) {
    RunSummary s;
    s.metrics.push_back({"a", 0.5, 1.0, "<=", true});
    EXPECT_TRUE(s.all_pass());
    s.status = "numerical_failure";
    s.failed_stage = "picard";
    EXPECT_FALSE(s.all_pass());
    EXPECT_EQ(exit_code(s), 3);
    EXPECT_EQ(s.to_json()["failed_stage"], "picard");
    EXPECT_EQ(s.find("b"), nullptr);
}
