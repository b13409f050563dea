#include <gtest/gtest.h>

#include <cmath>

#include "bdsde/mild.hpp"

using namespace bdsde;

namespace {

const double kL = 2 * M_PI;

QSpec one_mode(double lambda) {
    return {{lambda}, {BasisFunction::parse("constant")}};
}

Eigen::VectorXd unit(std::size_t n, std::size_t k) {
    Eigen::VectorXd c = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    c(static_cast<Eigen::Index>(k)) = 1.0;
    return c;
}

}  // namespace

TEST(SpectralBasis, OrthonormalUnderQuadrature) {
    const SpectralBasis t(Domain::torus(kL), 0.5, 12);
    EXPECT_EQ(t.size(), 25u);
    EXPECT_LT(t.orthonormality_residual(), 1e-8);
    const SpectralBasis iv(Domain::interval(0.0, 1.0), 0.5, 12);
    EXPECT_EQ(iv.size(), 12u);
    EXPECT_LT(iv.orthonormality_residual(), 1e-8);
    for (std::size_t k = 1; k < t.size(); ++k) EXPECT_GE(t.eigenvalues()[k], t.eigenvalues()[k - 1]);
    // mu = a j^2 on the 2 pi torus
    EXPECT_DOUBLE_EQ(t.eigenvalues()[3], 0.5 * 4.0);
    EXPECT_THROW(SpectralBasis(Domain::line(), 0.5, 4), UnsupportedError);
    EXPECT_THROW(SpectralBasis::for_generator(Domain::torus(kL), GeneratorSpec::parse("fractional:1.5"), 4),
                 UnsupportedError);
}

TEST(Semigroup, DiagonalActionAndSemigroupProperty) {
    const SpectralBasis b(Domain::torus(kL), 0.5, 4);
    const Eigen::VectorXd c = Eigen::VectorXd::LinSpaced(9, 1.0, 2.0);
    EXPECT_EQ(semigroup_apply(b, 0.0, c), c);
    EXPECT_NEAR(semigroup_apply(b, 0.3, unit(9, 4))(4), std::exp(-0.5 * 4.0 * 0.3), 1e-15);
    const auto ab = semigroup_apply(b, 0.2, semigroup_apply(b, 0.3, c));
    EXPECT_LT((ab - semigroup_apply(b, 0.5, c)).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LE(semigroup_apply(b, 0.7, c).norm(), c.norm());
    EXPECT_THROW(semigroup_apply(b, -0.1, c), ConfigError);
}

TEST(SpectralGradient, ModesAndFiniteDifferences) {
    const SpectralBasis b(Domain::torus(kL), 0.5, 4);
    const Field sin2 = [](double, double x) { return std::sin(2 * x); };
    const auto c = b.project(sin2, 0.0);
    const std::vector<double> xs{0.1, 1.0, 2.5};
    const auto g = spectral_gradient(b, c, xs);
    for (std::size_t j = 0; j < xs.size(); ++j) EXPECT_NEAR(g[j], 2 * std::cos(2 * xs[j]), 1e-12);
    const auto g0 = spectral_gradient(b, unit(9, 0), xs);
    for (double v : g0) EXPECT_EQ(v, 0.0);

    const Field smooth = [](double, double x) { return std::exp(std::sin(x)); };
    const SpectralBasis fine(Domain::torus(kL), 0.5, 16);
    const auto cs = fine.project(smooth, 0.0);
    for (double h : {0.1, 0.05}) {
        const double x = 0.7;
        const double fd = (smooth(0, x + h) - smooth(0, x - h)) / (2 * h);
        EXPECT_NEAR(spectral_gradient(fine, cs, {x})[0], fd, h * h);
    }
}

TEST(SolveMild, ScalarModeOde) {
    const auto data = make_coefficients("sin:2", "linear:0.5", "zero", {}, Domain::torus(kL));
    const TimeGrid grid(0.0, 1.0, 128);
    const SpectralBasis b(data.domain, 0.5, 4);
    const auto sol = solve_mild(data, b, grid, sample_backward_noise(grid, 1, 1, 0), {});
    double worst = 0.0;
    for (std::size_t i = 0; i <= 128; ++i)
        for (double x : {0.3, 1.2, 4.0}) {
            const double exact = std::exp(-(0.5 * 4 + 0.5) * (1.0 - grid.node(i))) * std::sin(2 * x);
            worst = std::max(worst, std::abs(sol.value(b, i, x) - exact));
        }
    EXPECT_LT(worst, 1e-3);
    EXPECT_TRUE(sol.warnings.empty());
}

TEST(SolveMild, AdditiveNoiseTelescopes) {
    const double lambda = 0.6;
    const auto data = make_coefficients("zero", "zero", "const:1", one_mode(lambda), Domain::torus(kL));
    const TimeGrid grid(0.0, 1.0, 64);
    const auto noise = sample_backward_noise(grid, 1, 5, 0);
    const SpectralBasis b(data.domain, 0.5, 3);
    const auto sol = solve_mild(data, b, grid, noise, {});
    for (std::size_t i = 0; i <= 64; ++i) {
        EXPECT_NEAR(sol.value(b, i, 1.0), std::sqrt(lambda / kL) * noise.tail(0, i), 1e-12);
    }
    EXPECT_LT(time_reversal_check(sol, data, b, noise), 1e-12);
}

TEST(SolveMild, ZeroDataZeroField) {
    const auto data = make_coefficients("zero", "zero", "zero", {}, Domain::interval(0, 1));
    const TimeGrid grid(0.0, 1.0, 8);
    const SpectralBasis b(data.domain, 0.5, 4);
    const auto noise = sample_backward_noise(grid, 1, 1, 0);
    const auto sol = solve_mild(data, b, grid, noise, {});
    for (const auto& c : sol.coeffs) EXPECT_EQ(c.norm(), 0.0);
    EXPECT_EQ(mild_residual(sol, data, b, noise), 0.0);
    EXPECT_EQ(time_reversal_check(sol, data, b, noise), 0.0);
}

TEST(SolveMild, IntervalSineDecay) {
    const auto data = make_coefficients("zero", "zero", "zero", {}, Domain::interval(0, 1));
    auto d = data;
    d.phi = [](double x) { return std::sin(M_PI * x); };
    const TimeGrid grid(0.0, 0.5, 64);
    const SpectralBasis b(d.domain, 0.5, 6);
    const auto sol = solve_mild(d, b, grid, sample_backward_noise(grid, 1, 1, 0), {});
    EXPECT_NEAR(sol.value(b, 0, 0.5), std::exp(-0.5 * M_PI * M_PI * 0.5), 1e-12);
    EXPECT_NEAR(sol.value(b, 0, 0.0), 0.0, 1e-14);
}

TEST(MildResidual, SolutionAndPerturbation) {
    QSpec q{{0.5}, {BasisFunction::parse("sine:1")}};
    const auto data = make_coefficients("cos:1", "linear:1", "linear:0.5", q, Domain::torus(kL));
    const TimeGrid grid(0.0, 1.0, 32);
    const auto noise = sample_backward_noise(grid, 1, 9, 0);
    const SpectralBasis b(data.domain, 0.5, 6);
    auto sol = solve_mild(data, b, grid, noise, {});
    EXPECT_LT(mild_residual(sol, data, b, noise), 1e-12);
    const double fwd = time_reversal_check(sol, data, b, noise);
    EXPECT_NEAR(fwd, mild_residual(sol, data, b, noise), 1e-15);

    // +0.1 on one mode at node 10 leaves at least that defect at node 10
    sol.coeffs[10](1) += 0.1;
    const double r = mild_residual(sol, data, b, noise);
    EXPECT_GE(r, 0.1 * std::sqrt(grid.dt()) * (1 - 1e-12));
    EXPECT_NEAR(time_reversal_check(sol, data, b, noise), r, 1e-14 * r);
}

TEST(MildPicard, AgreesWithStepperAndLogsContraction) {
    const auto data = make_coefficients("sin:1", "linear:1", "zero", {}, Domain::torus(kL));
    const TimeGrid grid(0.0, 1.0, 32);
    const auto noise = sample_backward_noise(grid, 1, 3, 0);
    const SpectralBasis b(data.domain, 0.5, 4);
    const auto a = solve_mild(data, b, grid, noise, {});
    MildOptions po;
    po.method = MildMethod::global_picard;
    po.tol = 1e-12;
    const auto p = solve_mild(data, b, grid, noise, po);
    EXPECT_GT(p.iterations, 2u);
    double worst = 0.0;
    for (std::size_t i = 0; i <= 32; ++i) worst = std::max(worst, (a.coeffs[i] - p.coeffs[i]).cwiseAbs().maxCoeff());
    EXPECT_LT(worst, 1e-10);
    std::size_t ratios = 0;
    for (const auto& row : p.log.rows)
        if (row.metric == "mild_ratio") {
            EXPECT_LT(row.value, 1.0);
            ++ratios;
        }
    EXPECT_GT(ratios, 0u);
    po.max_iter = 2;
    EXPECT_THROW(solve_mild(data, b, grid, noise, po), ConvergenceError);
    EXPECT_EQ(parse_mild_method("global_picard"), MildMethod::global_picard);
    EXPECT_THROW(parse_mild_method("rk4"), ConfigError);
}

TEST(MildField, CubicDriverWarnsAboutAliasing) {
    const auto data = make_coefficients("const:1", "cubic_monotone", "zero", {}, Domain::torus(kL));
    const auto r = mild_field(data, GeneratorSpec::parse("const:0.5"), TimeGrid(0.0, 0.5, 64), 4, 8, 1, 1, {});
    ASSERT_FALSE(r.warnings.empty());
    // spatially constant data stays in the constant mode: dY/dt = Y^3 from Y(T) = 1
    EXPECT_NEAR(r.field.at(0, 0, 3), 1.0 / std::sqrt(1.0 + 2 * 0.5), 2e-2);
}

TEST(MildField, GradientCouplingUsesSpectralDerivative) {
    // f = theta z with z = sqrt(2a) u_x: for a = 1/2, u_s + 1/2 u_xx + theta u_x = 0
    const double theta = 0.5;
    const auto data = make_coefficients("sin:1", "grad_linear:0.5", "zero", {}, Domain::torus(kL));
    const TimeGrid grid(0.0, 1.0, 256);
    const SpectralBasis b(data.domain, 0.5, 4);
    const auto sol = solve_mild(data, b, grid, sample_backward_noise(grid, 1, 1, 0), {});
    for (double x : {0.2, 2.0}) {
        const double exact = std::exp(-0.5) * std::sin(x + theta);
        EXPECT_NEAR(sol.value(b, 0, x), exact, 5e-3);
    }
}
