#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "bdsde/markov.hpp"
#include "bdsde/rng.hpp"

using namespace bdsde;

namespace {

const double kTwoPi = 2.0 * std::numbers::pi;

}  // namespace

TEST(Generator, ParsePresets) {
    EXPECT_EQ(GeneratorSpec::parse("const:0.5").kind, GeneratorSpec::Kind::const_diffusion);
    EXPECT_EQ(GeneratorSpec::parse("sin_field:0.5").kind, GeneratorSpec::Kind::div_form);
    EXPECT_DOUBLE_EQ(GeneratorSpec::parse("fractional:1.5").alpha, 1.5);
    EXPECT_THROW(GeneratorSpec::parse("const:-1"), ConfigError);
    EXPECT_THROW(GeneratorSpec::parse("sin_field:1.5"), ConfigError);
    EXPECT_THROW(GeneratorSpec::parse("levy:1"), ConfigError);
    EXPECT_THROW(GeneratorSpec::parse("const"), ConfigError);
}

TEST(Drift, ConstantHasNoDrift) {
    const auto dom = Domain::torus(kTwoPi);
    EXPECT_EQ(drift_from_divergence_form(GeneratorSpec::parse("const:0.7"), dom, 0.0, 1.0), 0.0);
    DriftOptions fd{0.0, false};
    EXPECT_EQ(drift_from_divergence_form(GeneratorSpec::parse("const:0.7"), dom, 0.0, 1.0, fd), 0.0);
}

TEST(Drift, AnalyticSinField) {
    const auto dom = Domain::torus(kTwoPi);
    const auto gen = GeneratorSpec::parse("sin_field:0.5");
    for (double x : {0.0, 0.4, 2.0, 5.5}) {
        EXPECT_DOUBLE_EQ(drift_from_divergence_form(gen, dom, 0.0, x), 0.25 * std::cos(x));
    }
}

TEST(Drift, CentralDifferenceIsSecondOrder) {
    const auto dom = Domain::torus(kTwoPi);
    const auto gen = GeneratorSpec::parse("sin_field:0.5");
    auto max_err = [&](double h) {
        double e = 0.0;
        for (int j = 0; j < 64; ++j) {
            const double x = kTwoPi * j / 64.0;
            const double fd = drift_from_divergence_form(gen, dom, 0.0, x, {h, false});
            e = std::max(e, std::abs(fd - 0.25 * std::cos(x)));
        }
        return e;
    };
    const double r = max_err(0.02) / max_err(0.01);
    EXPECT_NEAR(r, 4.0, 0.1);
}

TEST(Simulate, BrownianVarianceOnTorus) {
    // Unwrapped displacement is recovered from the increments.
    const auto dom = Domain::torus(kTwoPi);
    const TimeGrid g(0.0, 1.0, 32);
    const auto ens = simulate_paths(GeneratorSpec::parse("const:0.5"), dom, {{0.0, {1.0}}}, g,
                                    10000, 5, 0);
    double ss = 0.0;
    for (std::size_t p = 0; p < ens.size(); ++p) {
        double disp = 0.0;
        for (std::size_t i = 0; i < 32; ++i) disp += ens.dw(p, i);
        ss += disp * disp;
        ASSERT_EQ(ens.lifetime(p), g.n_nodes());
    }
    EXPECT_NEAR(ss / ens.size(), 1.0, 0.05);
}

TEST(Simulate, KilledOnInterval) {
    const auto dom = Domain::interval(0.0, std::numbers::pi);
    const TimeGrid g(0.0, 1.0, 64);
    const auto ens = simulate_paths(GeneratorSpec::parse("const:0.5"), dom,
                                    {{0.0, {std::numbers::pi / 2}}}, g, 2000, 9, 0);
    std::size_t killed = 0;
    for (std::size_t p = 0; p < ens.size(); ++p) {
        const std::size_t life = ens.lifetime(p);
        for (std::size_t i = 0; i < std::min(life, g.n_nodes()); ++i) {
            ASSERT_TRUE(dom.contains(ens.x(p, i)));
        }
        if (life < g.n_nodes()) {
            ++killed;
            ASSERT_FALSE(dom.contains(ens.x(p, life)));
            ASSERT_FALSE(ens.alive(p, life));
        }
    }
    EXPECT_GT(killed, 0u);
    EXPECT_LT(killed, ens.size());
}

TEST(Simulate, StableAlphaTwoIsGaussian) {
    const CounterRng rng(3);
    const int n = 100000;
    double s2 = 0, s4 = 0;
    for (int i = 0; i < n; ++i) {
        const auto [u1, u2] = rng.uniform_pair(7, i);
        const double z = stable_variate(2.0, u1, u2);
        s2 += z * z;
        s4 += z * z * z * z;
    }
    const double var = s2 / n;
    EXPECT_NEAR(var, 2.0, 0.05);
    EXPECT_NEAR(s4 / n / (var * var), 3.0, 0.1);
}

TEST(Simulate, FractionalTwoMatchesDiffusionVariance) {
    const TimeGrid g(0.0, 1.0, 16);
    const auto ens = simulate_paths(GeneratorSpec::parse("fractional:2"), Domain::line(),
                                    {{0.0, {0.0}}}, g, 20000, 1, 0);
    EXPECT_FALSE(ens.has_increments());
    double ss = 0.0;
    for (std::size_t p = 0; p < ens.size(); ++p) ss += ens.x(p, 16) * ens.x(p, 16);
    EXPECT_NEAR(ss / ens.size(), 2.0, 0.08);
}

TEST(Simulate, StartOutsideRejected) {
    EXPECT_THROW(simulate_paths(GeneratorSpec::parse("const:0.5"), Domain::interval(0, 1),
                                {{0.0, {2.0}}}, TimeGrid(0, 1, 4), 2, 1, 0),
                 ConfigError);
}

TEST(Simulate, PartialFirstStepAndBirth) {
    const TimeGrid g(0.0, 1.0, 8);
    const auto ens = simulate_paths(GeneratorSpec::parse("const:0.5"), Domain::line(),
                                    {{0.3, {0.0}}, {0.5, {1.0}}}, g, 3, 1, 0);
    EXPECT_EQ(ens.first_node(), 3u);
    EXPECT_EQ(ens.birth(0), 3u);
    EXPECT_EQ(ens.birth(3), 4u);
    EXPECT_FALSE(ens.alive(0, 2));
    EXPECT_TRUE(ens.alive(0, 3));
    EXPECT_NE(ens.x(0, 3), 0.0);
    EXPECT_EQ(ens.x(3, 4), 1.0);
}

TEST(Simulate, ThreadCountInvariant) {
    const TimeGrid g(0.0, 1.0, 16);
    const auto gen = GeneratorSpec::parse("sin_field:0.3");
    const auto dom = Domain::interval(0.0, 3.0);
    const std::vector<Start> starts{{0.0, {1.0}}, {0.25, {2.0}}};
    SimulationOptions one, four;
    four.threads = 4;
    const auto a = simulate_paths(gen, dom, starts, g, 100, 11, 2, one);
    const auto b = simulate_paths(gen, dom, starts, g, 100, 11, 2, four);
    EXPECT_TRUE(a == b);
    std::stringstream buf;
    a.write(buf);
    EXPECT_TRUE(PathEnsemble::read(buf) == a);
}

TEST(Simulate, MarkovRestartMoments) {
    // One-step moments from a restarted stream match the continuing ensemble.
    const TimeGrid g(0.0, 1.0, 16);
    const auto gen = GeneratorSpec::parse("sin_field:0.5");
    const auto dom = Domain::torus(kTwoPi);
    const double x0 = 1.0;
    const auto fresh = simulate_paths(gen, dom, {{g.node(5), {x0}}}, g, 20000, 4, 77);
    double m = 0.0;
    for (std::size_t p = 0; p < fresh.size(); ++p) m += fresh.dw(p, 5);
    m /= static_cast<double>(fresh.size());
    double mean_step = 0.0;
    for (std::size_t p = 0; p < fresh.size(); ++p) {
        double d = fresh.x(p, 6) - x0;
        if (d > std::numbers::pi) d -= kTwoPi;
        if (d < -std::numbers::pi) d += kTwoPi;
        mean_step += d;
    }
    mean_step /= static_cast<double>(fresh.size());
    const double sigma = std::sqrt(2.0 * gen.a(0.0, x0));
    const double expected = 0.25 * std::cos(x0) * g.dt();
    EXPECT_NEAR(mean_step, expected + sigma * m, 1e-12);
    EXPECT_NEAR(mean_step, expected, 3.0 * sigma * std::sqrt(g.dt() / 20000.0));
}

TEST(Resolvent, ConstantFieldClosedForm) {
    const TimeGrid g(0.0, 1.0, 32);
    const auto dom = Domain::torus(kTwoPi);
    const std::vector<Start> starts{{0.0, {1.0}}, {0.37, {4.0}}};
    const auto ens = simulate_paths(GeneratorSpec::parse("const:0.5"), dom, starts, g, 50, 1, 0);
    const Field one = [](double, double) { return 1.0; };
    const double beta = 3.0;
    const auto est = resolvent_mc(ens, starts, 50, one, beta);
    for (std::size_t k = 0; k < starts.size(); ++k) {
        EXPECT_NEAR(est[k].value, -std::expm1(-beta * (1.0 - starts[k].s)) / beta, 1e-14);
    }
    const auto zero_beta = resolvent_mc(ens, starts, 50, one, 0.0);
    EXPECT_NEAR(zero_beta[1].value, 1.0 - 0.37, 1e-14);
    const auto zero = resolvent_mc(ens, starts, 50, [](double, double) { return 0.0; }, beta);
    EXPECT_EQ(zero[0].value, 0.0);
}

TEST(Resolvent, HeatFieldWithinStderr) {
    // v(t,x) = e^{-(1-t)/2} sin x is space-time harmonic, so R_beta v = v(s,x)(1-e^{-beta(1-s)})/beta.
    const TimeGrid g(0.0, 1.0, 64);
    const auto dom = Domain::torus(kTwoPi);
    const std::vector<Start> starts{{0.0, {1.2}}};
    const auto ens = simulate_paths(GeneratorSpec::parse("const:0.5"), dom, starts, g, 20000, 3, 0);
    const Field v = [](double t, double x) { return std::exp(-(1.0 - t) / 2.0) * std::sin(x); };
    const double beta = 2.0;
    const auto est = resolvent_mc(ens, starts, 20000, v, beta);
    const double exact = v(0.0, 1.2) * -std::expm1(-beta) / beta;
    EXPECT_NEAR(est[0].value, exact, 3.0 * est[0].std_error + 2e-3);
}

TEST(DualResolvent, ClosedForms) {
    const auto dom = Domain::torus(1.0);
    EXPECT_NEAR(dual_resolvent_one(dom, 1.0, 1.0), 1.0 - std::exp(-1.0), 1e-15);
    EXPECT_NEAR(dual_resolvent_one(dom, 1e-10, 0.7), 0.7, 1e-9);
    EXPECT_THROW(dual_resolvent_one(Domain::interval(0, 1), 1.0, 0.5), UnsupportedError);
    // Total mass of k^beta over (0,T] x E.
    const double beta = 5.0, T = 1.0, L = 2.5;
    const auto torus = Domain::torus(L);
    std::vector<double> s(1025), v(1025);
    for (int i = 0; i <= 1024; ++i) {
        s[i] = T * i / 1024.0;
        v[i] = killing_density(torus, beta, s[i]);
    }
    EXPECT_NEAR(exp_weighted_trapezoid(s.data(), v.data(), s.size(), 0.0) * L,
                -std::expm1(-beta * T) * L, 1e-5);
}
