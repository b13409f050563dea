#include <gtest/gtest.h>

#include <cmath>

#include "bdsde/coefficients.hpp"

using namespace bdsde;

namespace {

QSpec one_mode(double lambda) {
    return {{lambda}, {BasisFunction::parse("constant")}};
}

}  // namespace

TEST(Coefficients, TerminalAndDriverPresets) {
    const auto s = make_coefficients("sin:1", "linear:2", "zero", {}, Domain::torus(2 * M_PI));
    EXPECT_DOUBLE_EQ(s.phi(0.5), std::sin(0.5));
    EXPECT_DOUBLE_EQ(s.f(0.0, 0.0, 3.0, 0.0), -6.0);
    EXPECT_TRUE(s.f_depends_on_y);
    EXPECT_FALSE(s.depends_on_z);
    EXPECT_DOUBLE_EQ(s.constants.L_lip_y, 2.0);
    EXPECT_DOUBLE_EQ(s.constants.L_mono, 0.0);
    EXPECT_TRUE(s.g.zero());
}

TEST(Coefficients, UnknownAndMalformedPresetsRejected) {
    const Domain d = Domain::line();
    EXPECT_THROW(make_coefficients("nope", "zero", "zero", {}, d), ConfigError);
    EXPECT_THROW(make_coefficients("const:x", "zero", "zero", {}, d), ConfigError);
    EXPECT_THROW(make_coefficients("zero", "linear", "zero", {}, d), ConfigError);
    EXPECT_THROW(make_coefficients("zero", "zero", "const:1", {}, d), ConfigError);
}

TEST(Coefficients, NoiseComponentsOnTorus) {
    const double L = 2 * M_PI;
    const auto s = make_coefficients("zero", "zero", "linear:0.5", one_mode(0.8), Domain::torus(L));
    ASSERT_EQ(s.g.modes(), 1u);
    // g_1 = 0.5 y sqrt(0.8) / sqrt(L)
    EXPECT_NEAR(s.g.component(0, 0.0, 1.0, 2.0, 0.0), std::sqrt(0.8 / L), 1e-14);
    EXPECT_NEAR(s.constants.l_bound, 0.25 * 0.8 / L, 1e-12);
    EXPECT_TRUE(s.g_depends_on_y);
}

TEST(Coefficients, ScalingIsHomogeneous) {
    const auto s = make_coefficients("cos:1", "linear_forced:1,0.5", "const:0.3", one_mode(1.0),
                                     Domain::torus(2 * M_PI));
    const auto s2 = s.scaled(3.0);
    EXPECT_NEAR(s2.phi(0.4), 3.0 * s.phi(0.4), 1e-14);
    // linear in y with a y-free forcing: f(y) -> 3 f(y / 3)
    EXPECT_NEAR(s2.f(0.1, 0.4, 1.5, 0.0), 3.0 * s.f(0.1, 0.4, 0.5, 0.0), 1e-14);
    EXPECT_NEAR(s2.g.component(0, 0.0, 0.4, 0.0, 0.0), 3.0 * s.g.component(0, 0.0, 0.4, 0.0, 0.0), 1e-14);
    EXPECT_THROW(s.scaled(0.0), ConfigError);
}

TEST(Coefficients, ShiftsMoveDataDownward) {
    const auto s = make_coefficients("const:1", "const:2", "zero", {}, Domain::line());
    EXPECT_DOUBLE_EQ(s.with_terminal_shift(-1.0).phi(3.0), 0.0);
    EXPECT_DOUBLE_EQ(s.with_driver_shift(-1.0).f(0, 0, 0, 0), 1.0);
}

TEST(Probes, DeclaredConstantsHold) {
    const Domain t = Domain::torus(2 * M_PI);
    for (const char* f : {"zero", "const:1", "linear:1", "linear:-0.5", "linear_forced:2,1",
                          "cubic_monotone", "cubic_truncated:8", "grad_linear:0.5"}) {
        const auto s = make_coefficients("zero", f, "affine:0.2,0.4", one_mode(0.5), t);
        const auto rep = probe_constants(s, 1.0);
        EXPECT_TRUE(rep.pass) << f;
    }
}

TEST(Probes, UnderstatedConstantIsCaught) {
    auto s = make_coefficients("zero", "linear:-2", "zero", {}, Domain::line());
    ASSERT_DOUBLE_EQ(s.constants.L_mono, 2.0);
    s.constants.L_mono = 1.0;
    auto rep = probe_constants(s, 1.0);
    EXPECT_FALSE(rep.pass);
    EXPECT_FALSE(rep.checks[0].holds);
    EXPECT_NEAR(rep.checks[0].observed, 2.0, 1e-9);

    auto g = make_coefficients("zero", "zero", "linear:1", one_mode(1.0), Domain::torus(1.0));
    g.constants.l_bound *= 0.5;
    EXPECT_FALSE(probe_constants(g, 1.0).pass);
}

TEST(Probes, GradientCouplingNeedsMBelowOne) {
    auto s = make_coefficients("zero", "grad_linear:1", "zero", {}, Domain::line());
    s.constants.m_grad = 1.0;
    const auto rep = probe_constants(s, 1.0);
    EXPECT_FALSE(rep.pass);
    EXPECT_EQ(rep.checks.back().name, "m_grad<1");
}

TEST(Presets, ListingIsStableAndComplete) {
    const auto a = list_presets();
    const auto b = list_presets();
    ASSERT_EQ(a.size(), b.size());
    bool cubic = false, fractional = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].name, b[i].name);
        if (a[i].name == "cubic_monotone") {
            cubic = true;
            EXPECT_NE(a[i].constants.find("L_mono=0"), std::string::npos);
        }
        if (a[i].name == "fractional") {
            fractional = true;
            EXPECT_EQ(a[i].params, "alpha");
        }
    }
    EXPECT_TRUE(cubic);
    EXPECT_TRUE(fractional);
}
