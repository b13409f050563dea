#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "bdsde/coefficients.hpp"
#include "bdsde/solver.hpp"

using namespace bdsde;

namespace {

struct Setup {
    PathEnsemble paths;
    BackwardNoise noise;
    Domain domain;
};

Setup torus_setup(std::size_t n_starts, std::size_t per_start, std::size_t n_steps, std::size_t modes,
                  std::uint64_t seed) {
    const Domain d = Domain::torus(2 * M_PI);
    const TimeGrid grid(0.0, 1.0, n_steps);
    std::vector<Start> starts;
    for (double x : space_mesh(d, n_starts)) starts.push_back({0.0, {x}});
    auto paths = simulate_paths(GeneratorSpec::parse("const:0.5"), d, starts, grid, per_start, seed, 1);
    return {std::move(paths), sample_backward_noise(grid, std::max<std::size_t>(modes, 1), seed, 2), d};
}

Setup line_setup(std::size_t n_paths, std::size_t n_steps, std::uint64_t seed) {
    const Domain d = Domain::line();
    const TimeGrid grid(0.0, 1.0, n_steps);
    auto paths = simulate_paths(GeneratorSpec::parse("const:0.5"), d, {{0.0, {0.0}}}, grid, n_paths, seed, 1);
    return {std::move(paths), sample_backward_noise(grid, 1, seed, 2), d};
}

SolverConfig fourier_cfg(std::size_t modes = 2) {
    SolverConfig cfg;
    cfg.regression.basis = RegressionConfig::Basis::fourier;
    cfg.regression.size = modes;
    return cfg;
}

SolverConfig poly_cfg(std::size_t degree) {
    SolverConfig cfg;
    cfg.regression.basis = RegressionConfig::Basis::polynomial;
    cfg.regression.size = degree;
    return cfg;
}

QSpec one_mode(double lambda) {
    return {{lambda}, {BasisFunction::parse("constant")}};
}

}  // namespace

TEST(SolveLinear, ConstantTerminal) {
    auto s = torus_setup(8, 64, 16, 1, 3);
    const auto data = make_coefficients("const:1.5", "zero", "zero", {}, s.domain);
    const auto sol = solve_linear(data, s.paths, s.noise, fourier_cfg());
    for (std::size_t i = 0; i <= 16; ++i)
        for (std::size_t p = 0; p < s.paths.size(); ++p) EXPECT_NEAR(sol.y(p, i), 1.5, 1e-12);
    double br = 0.0;
    for (std::size_t p = 0; p < s.paths.size(); ++p) br = std::max(br, sol.bracket(p, 0));
    EXPECT_LT(br, 1e-20);
}

TEST(SolveLinear, ConstantDriverIsQuadrature) {
    auto s = torus_setup(8, 64, 32, 1, 4);
    const auto data = make_coefficients("zero", "const:1", "zero", {}, s.domain);
    const auto sol = solve_linear(data, s.paths, s.noise, fourier_cfg());
    for (std::size_t i = 0; i <= 32; ++i) {
        const double exact = 1.0 - s.paths.grid().node(i);
        for (std::size_t p = 0; p < s.paths.size(); p += 17) EXPECT_NEAR(sol.y(p, i), exact, 1e-12);
    }
}

TEST(SolveLinear, RejectsNonlinearData) {
    auto s = torus_setup(4, 16, 4, 1, 5);
    const auto data = make_coefficients("zero", "linear:1", "zero", {}, s.domain);
    EXPECT_THROW(solve_linear(data, s.paths, s.noise, fourier_cfg()), ConfigError);
}

TEST(SolveLinear, HeatSemigroupOnTorus) {
    auto s = torus_setup(32, 300, 64, 1, 6);
    const auto data = make_coefficients("sin:1", "zero", "zero", {}, s.domain);
    const auto sol = solve_linear(data, s.paths, s.noise, fourier_cfg());
    double err = 0.0, norm = 0.0;
    for (std::size_t i = 0; i <= 64; ++i) {
        const double decay = std::exp(-0.5 * (1.0 - s.paths.grid().node(i)));
        for (std::size_t p = 0; p < s.paths.size(); ++p) {
            const double exact = decay * std::sin(s.paths.x(p, i));
            err += std::pow(sol.y(p, i) - exact, 2);
            norm += exact * exact;
        }
    }
    EXPECT_LT(std::sqrt(err / norm), 0.05);
}

TEST(SolveLinear, AdditiveNoiseClosedForm) {
    auto s = torus_setup(8, 64, 32, 1, 7);
    const double lambda = 0.7;
    const auto data = make_coefficients("zero", "zero", "const:1", one_mode(lambda), s.domain);
    const auto sol = solve_linear(data, s.paths, s.noise, fourier_cfg());
    const double c = std::sqrt(lambda / (2 * M_PI));
    for (std::size_t i = 0; i <= 32; ++i) {
        const double exact = c * s.noise.tail(0, i);
        for (std::size_t p = 0; p < s.paths.size(); p += 13) EXPECT_NEAR(sol.y(p, i), exact, 1e-12);
    }
}

TEST(SolveLinear, ThreadCountInvariant) {
    auto s = torus_setup(16, 100, 16, 2, 8);
    QSpec q{{0.5, 0.25}, {BasisFunction::parse("constant"), BasisFunction::parse("sine:1")}};
    const auto data = make_coefficients("cos:1", "const:0.3", "const:1", q, s.domain);
    auto cfg = fourier_cfg();
    const auto a = solve_linear(data, s.paths, s.noise, cfg);
    cfg.threads = 4;
    const auto b = solve_linear(data, s.paths, s.noise, cfg);
    EXPECT_EQ(a.Y, b.Y);
    EXPECT_EQ(a.dM, b.dM);
}

TEST(SolveLinear, ResidualOrthogonalToBasis) {
    auto s = line_setup(2000, 16, 9);
    const auto data = make_coefficients("identity", "zero", "zero", {}, s.domain);
    auto data2 = data;
    data2.phi = [](double x) { return std::sin(x) + x * x; };
    const auto sol = solve_linear(data2, s.paths, s.noise, poly_cfg(2));
    for (std::size_t i = 1; i < 16; ++i) {
        double s0 = 0, s1 = 0, s2 = 0;
        for (std::size_t p = 0; p < s.paths.size(); ++p) {
            const double x = s.paths.x(p, i);
            s0 += sol.dm(p, i);
            s1 += sol.dm(p, i) * x;
            s2 += sol.dm(p, i) * x * x;
        }
        EXPECT_NEAR(s0, 0.0, 1e-9);
        EXPECT_NEAR(s1, 0.0, 1e-9);
        EXPECT_NEAR(s2, 0.0, 1e-9);
    }
}

TEST(Picard, ScalarBackwardOde) {
    auto s = torus_setup(4, 16, 64, 1, 10);
    const auto data = make_coefficients("const:1", "linear:1", "zero", {}, s.domain);
    const auto sol = solve_lipschitz_picard(data, s.paths, s.noise, fourier_cfg());
    for (std::size_t i = 0; i <= 64; ++i) {
        const double exact = std::exp(-(1.0 - s.paths.grid().node(i)));
        EXPECT_NEAR(sol.y(0, i), exact, 1e-2);
    }
    EXPECT_GT(sol.iterations, 2u);
    // ratios decay geometrically after the first iteration
    for (const auto& r : sol.log.rows)
        if (r.metric == "picard_ratio") EXPECT_LT(r.value, 1.0);
}

TEST(Picard, ZeroDataOneIteration) {
    auto s = torus_setup(4, 16, 8, 1, 11);
    const auto data = make_coefficients("zero", "linear:1", "linear:1", one_mode(1.0), s.domain);
    const auto sol = solve_lipschitz_picard(data, s.paths, s.noise, fourier_cfg());
    EXPECT_EQ(sol.iterations, 1u);
    for (double v : sol.Y) EXPECT_EQ(v, 0.0);
    for (double v : sol.dM) EXPECT_EQ(v, 0.0);
}

TEST(Picard, NonConvergenceCarriesLog) {
    auto s = torus_setup(4, 16, 32, 1, 12);
    const auto data = make_coefficients("const:1", "linear:1", "zero", {}, s.domain);
    auto cfg = fourier_cfg();
    cfg.max_iter = 3;
    try {
        solve_lipschitz_picard(data, s.paths, s.noise, cfg);
        FAIL();
    } catch (const ConvergenceError& e) {
        EXPECT_EQ(e.history().size(), 3u);
    }
}

TEST(Picard, RequiresFiniteLipschitz) {
    auto s = torus_setup(4, 16, 8, 1, 13);
    const auto data = make_coefficients("const:1", "cubic_monotone", "zero", {}, s.domain);
    EXPECT_THROW(solve_lipschitz_picard(data, s.paths, s.noise, fourier_cfg()), ConfigError);
}

TEST(InfConvolution, LinearDriverIsFixed) {
    const double L = 0.75;
    const auto fn = inf_convolution([L](double y) { return L * y; }, 4.0, L, 8.0, 1e-3);
    for (double y : {-9.0, -3.2, 0.0, 0.0005, 1.2345, 7.9999, 12.0}) EXPECT_NEAR(fn(y), L * y, 1e-12);
}

TEST(InfConvolution, TruncatedCubicOracle) {
    auto f = [](double y) { return std::max(-y * y * y, -8.0); };
    const auto fn = inf_convolution(f, 4.0, 0.0, 8.0, 1e-4);
    // inf_x 4|1 - x| + max(-x^3, -8) is attained at x = 2
    EXPECT_NEAR(fn(1.0), -4.0, 1e-9);
    EXPECT_NEAR(fn(2.5), -8.0, 1e-9);
    EXPECT_NEAR(fn(-1.0), 1.0, 1e-9);
    EXPECT_DOUBLE_EQ(fn.lower_bound(), -8.0);
}

TEST(InfConvolution, CertificateHolds) {
    auto f = [](double y) { return std::max(-y * y * y, -8.0); };
    const auto cert = certify_inf_convolution(f, {1, 2, 4, 8, 16, 32}, 0.0, 8.0, 1e-3, 10000, 1);
    EXPECT_TRUE(cert.pass);
    for (auto v : cert.violations) EXPECT_EQ(v, 0u);
}

TEST(InfConvolution, Preconditions) {
    auto cubic = [](double y) { return -y * y * y; };
    EXPECT_THROW(inf_convolution(cubic, 4.0, 0.0, 8.0, 1e-3), ConfigError);
    auto flat = [](double) { return 0.0; };
    EXPECT_THROW(inf_convolution(flat, 4.0, 0.0, 0.0, 1e-3), ConfigError);
    EXPECT_THROW(inf_convolution(flat, 0.5, 0.0, 1.0, 1e-3), ConfigError);
}

TEST(Monotone, CubicBackwardOde) {
    auto s = line_setup(128, 64, 14);
    const auto data = make_coefficients("const:2", "cubic_monotone", "zero", {}, s.domain);
    const auto res = solve_monotone(data, s.paths, s.noise, poly_cfg(1));
    for (std::size_t i = 0; i <= 64; ++i) {
        const double exact = 1.0 / std::sqrt(0.25 + 2.0 * (1.0 - s.paths.grid().node(i)));
        EXPECT_NEAR(res.solution.y(0, i) / exact, 1.0, 0.02) << i;
    }
    EXPECT_GE(res.infconv_order_fraction, 0.99);
    EXPECT_GE(res.truncation_order_fraction, 0.99);
    EXPECT_LE(residual_check(res.solution, res.effective, s.paths, s.noise).max_abs, 1e-12);
    // the inf-convolution stage increases, the truncation stage decreases
    ASSERT_EQ(res.stage_y0.size(), 16u);
    EXPECT_LE(res.stage_y0[0], res.stage_y0[3] + 1e-12);
    EXPECT_GE(res.stage_y0[3], res.stage_y0[15] - 1e-12);
}

TEST(Monotone, LipschitzDriverMatchesPicard) {
    auto s = torus_setup(16, 60, 32, 1, 15);
    const auto data = make_coefficients("sin:1", "linear:1", "const:0.5", one_mode(1.0), s.domain);
    const auto cfg = fourier_cfg();
    const auto pic = solve_lipschitz_picard(data, s.paths, s.noise, cfg);
    MonotoneOptions opt;
    opt.h = 1e-4;
    const auto mon = solve_monotone(data, s.paths, s.noise, cfg, opt);
    for (std::size_t i = 0; i <= 32; ++i) {
        const double eps = 3.0 * std::max(pic.reg_stderr[i], mon.solution.reg_stderr[i]);
        for (std::size_t p = 0; p < s.paths.size(); ++p)
            EXPECT_LE(std::abs(pic.y(p, i) - mon.solution.y(p, i)), 2.0 * eps + 1e-12);
    }
}

TEST(Gradient, LinearInZ) {
    auto s = line_setup(8000, 32, 16);
    const double theta = 0.5;
    const auto data = make_coefficients("identity", "grad_linear:0.5", "zero", {}, s.domain);
    const auto res = solve_with_gradient(data, s.paths, s.noise, poly_cfg(1));
    const auto& sol = res.solution;
    ASSERT_TRUE(sol.has_z());
    double ey = 0, ny = 0, ez = 0;
    std::size_t cz = 0;
    for (std::size_t i = 0; i <= 32; ++i) {
        const double t = s.paths.grid().node(i);
        for (std::size_t p = 0; p < s.paths.size(); ++p) {
            const double exact = s.paths.x(p, i) + theta * (1.0 - t);
            ey += std::pow(sol.y(p, i) - exact, 2);
            ny += exact * exact;
            if (i < 32) {
                ez += std::pow(sol.z(p, i) - 1.0, 2);
                ++cz;
            }
        }
    }
    EXPECT_LT(std::sqrt(ey / ny), 0.05);
    EXPECT_LT(std::sqrt(ez / static_cast<double>(cz)), 0.05);
    for (double r : res.ratios) {
        EXPECT_LT(r, 1.0);
        EXPECT_LE(r, 1.2 * res.predicted_ratio);
    }
    EXPECT_DOUBLE_EQ(res.alpha, 0.5);
    EXPECT_DOUBLE_EQ(res.c, 1.0);
    EXPECT_LE(residual_check(sol, data, s.paths, s.noise).max_abs, 1e-12);
}

TEST(Gradient, MartingaleRepresentation) {
    auto s = line_setup(8000, 16, 17);
    const auto data = make_coefficients("identity", "grad_linear:0", "zero", {}, s.domain);
    const auto res = solve_with_gradient(data, s.paths, s.noise, poly_cfg(1));
    double ez = 0;
    for (std::size_t i = 0; i < 16; ++i)
        for (std::size_t p = 0; p < s.paths.size(); ++p) ez += std::pow(res.solution.z(p, i) - 1.0, 2);
    EXPECT_LT(std::sqrt(ez / (16.0 * 8000.0)), 0.05);
    for (std::size_t p = 0; p < s.paths.size(); p += 97)
        EXPECT_NEAR(res.solution.y(p, 8), s.paths.x(p, 8), 0.05);
}

TEST(Gradient, RejectsBadWeights) {
    auto s = line_setup(64, 4, 18);
    const auto data = make_coefficients("identity", "grad_linear:1", "zero", {}, s.domain);
    GradientOptions opt;
    opt.beta = 1.0;
    EXPECT_THROW(solve_with_gradient(data, s.paths, s.noise, poly_cfg(1), opt), ConfigError);
    auto bad = data;
    bad.constants.m_grad = 1.0;
    EXPECT_THROW(solve_with_gradient(bad, s.paths, s.noise, poly_cfg(1)), ConfigError);
}

TEST(Comparison, OrderedDataGiveOrderedSolutions) {
    auto s = torus_setup(16, 100, 32, 1, 19);
    const auto data = make_coefficients("sin:1", "linear:1", "const:0.5", one_mode(1.0), s.domain);
    const auto cfg = fourier_cfg();
    const auto base = solve_lipschitz_picard(data, s.paths, s.noise, cfg);
    const auto same = solve_lipschitz_picard(data, s.paths, s.noise, cfg);
    EXPECT_EQ(comparison_report(base, same, s.paths, 0.0).violations, 0u);
    const auto lower_xi = solve_lipschitz_picard(data.with_terminal_shift(-1.0), s.paths, s.noise, cfg);
    EXPECT_LE(comparison_report(base, lower_xi, s.paths, 3.0).fraction, 0.01);
    const auto lower_f = solve_lipschitz_picard(data.with_driver_shift(-1.0), s.paths, s.noise, cfg);
    EXPECT_LE(comparison_report(base, lower_f, s.paths, 3.0).fraction, 0.01);
    // reversed roles are violated everywhere below the terminal node
    EXPECT_GT(comparison_report(lower_xi, base, s.paths, 3.0).fraction, 0.9);
}

TEST(Apriori, ZeroData) {
    auto s = torus_setup(4, 16, 8, 1, 20);
    const auto data = make_coefficients("zero", "zero", "zero", {}, s.domain);
    const auto sol = solve_linear(data, s.paths, s.noise, fourier_cfg());
    const auto sides = apriori_sides(sol, data, s.paths, s.noise);
    EXPECT_EQ(sides.lhs.value, 0.0);
    EXPECT_EQ(sides.rhs.value, 0.0);
}

TEST(Apriori, ScalingInvariance) {
    auto s = torus_setup(16, 100, 32, 1, 21);
    const auto data = make_coefficients("sin:1", "linear:1", "const:0.5", one_mode(1.0), s.domain);
    const auto cfg = fourier_cfg();
    double ref = 0.0;
    for (double lam : {1.0, 2.0, 4.0}) {
        const auto d = data.scaled(lam);
        const auto sol = solve_lipschitz_picard(d, s.paths, s.noise, cfg);
        const auto sides = apriori_sides(sol, d, s.paths, s.noise);
        EXPECT_GT(sides.lhs.value, 0.0);
        if (lam == 1.0) ref = sides.ratio();
        EXPECT_NEAR(sides.ratio() / ref, 1.0, 0.01);
    }
}

TEST(Residual, ExactForSolversAndLocalizesFaults) {
    auto s = torus_setup(16, 64, 32, 1, 22);
    const auto data = make_coefficients("cos:1", "linear_forced:1,0.5", "affine:0.3,0.2", one_mode(1.0), s.domain);
    auto sol = solve_lipschitz_picard(data, s.paths, s.noise, fourier_cfg());
    const auto clean = residual_check(sol, data, s.paths, s.noise);
    EXPECT_LE(clean.max_abs, 1e-12);
    sol.dM[sol.node_index(5, 20)] += 1e-3;
    const auto bad = residual_check(sol, data, s.paths, s.noise);
    EXPECT_NEAR(bad.node_max[20], 1e-3, 1e-9);
    for (std::size_t i = 21; i <= 32; ++i) EXPECT_LE(bad.node_max[i], 1e-12);
}

TEST(Residual, KilledPathsOnInterval) {
    const Domain d = Domain::interval(0.0, 1.0);
    const TimeGrid grid(0.0, 0.5, 32);
    std::vector<Start> starts;
    for (double x : space_mesh(d, 8)) starts.push_back({0.0, {x}});
    const auto paths = simulate_paths(GeneratorSpec::parse("const:0.5"), d, starts, grid, 64, 23, 1);
    const auto noise = sample_backward_noise(grid, 1, 23, 2);
    const auto data = make_coefficients("sin:3", "linear:1", "const:1", one_mode(1.0), d);
    SolverConfig cfg;
    const auto sol = solve_lipschitz_picard(data, paths, noise, cfg);
    EXPECT_LE(residual_check(sol, data, paths, noise).max_abs, 1e-12);
    for (std::size_t p = 0; p < paths.size(); ++p)
        for (std::size_t i = paths.lifetime(p); i <= 32; ++i) EXPECT_EQ(sol.y(p, i), 0.0);
}

TEST(IterationLog, CsvLayout) {
    IterationLog log;
    log.add(1, 4, "picard_msd", 0.5);
    std::ostringstream out;
    log.write_csv(out);
    EXPECT_EQ(out.str(), "iter,node,metric,value\n1,4,picard_msd,0.5\n");
}
