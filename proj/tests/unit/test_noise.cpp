#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "bdsde/noise.hpp"
#include "bdsde/rng.hpp"

using namespace bdsde;

namespace {

ModePath constant_path(std::size_t modes, std::size_t nodes, double c) {
    return ModePath(modes, std::vector<double>(nodes, c));
}

}  // namespace

TEST(SampleNoise, Deterministic) {
    const TimeGrid g(0.0, 1.0, 4);
    const auto a = sample_backward_noise(g, 1, 7, 0);
    const auto b = sample_backward_noise(g, 1, 7, 0);
    EXPECT_TRUE(a == b);
    EXPECT_FALSE(a == sample_backward_noise(g, 1, 7, 1));
}

TEST(SampleNoise, RejectsZeroModes) {
    EXPECT_THROW(sample_backward_noise(TimeGrid(0.0, 1.0, 4), 0, 1, 0), ConfigError);
    EXPECT_THROW(TimeGrid(0.0, 1.0, 0), ConfigError);
    EXPECT_THROW(TimeGrid(1.0, 1.0, 3), ConfigError);
}

TEST(SampleNoise, VarianceWithinChiSquareBand) {
    const TimeGrid g(0.0, 1.0, 1024);
    const auto noise = sample_backward_noise(g, 1, 11, 0);
    double ss = 0.0;
    for (std::size_t i = 0; i < 1024; ++i) ss += noise.increment(0, i) * noise.increment(0, i);
    const double var = ss / 1024.0;
    EXPECT_GE(var, 0.9 * g.dt());
    EXPECT_LE(var, 1.1 * g.dt());
}

TEST(SampleNoise, ModesUncorrelatedAcrossSeeds) {
    const TimeGrid g(0.0, 1.0, 4);
    double sxy = 0, sxx = 0, syy = 0;
    for (std::uint64_t seed = 0; seed < 10000; ++seed) {
        const auto n = sample_backward_noise(g, 2, seed, 3);
        const double x = n.increment(0, 1), y = n.increment(1, 1);
        sxy += x * y;
        sxx += x * x;
        syy += y * y;
    }
    EXPECT_LT(std::abs(sxy / std::sqrt(sxx * syy)), 0.2);
}

TEST(SampleNoise, BinaryRoundTrip) {
    const auto noise = sample_backward_noise(TimeGrid(0.0, 2.0, 33), 3, 99, 5);
    std::stringstream buf;
    noise.write(buf);
    EXPECT_EQ(buf.str().size(), 8u * (7 + 3 * 33));
    const auto back = BackwardNoise::read(buf);
    EXPECT_TRUE(back == noise);
}

TEST(BackwardIto, ConstantTelescopes) {
    const TimeGrid g(0.0, 1.0, 64);
    const auto noise = sample_backward_noise(g, 1, 3, 0);
    const auto beta = noise.levels(0);
    EXPECT_NEAR(backward_ito(constant_path(1, 65, 2.5), noise, 0), 2.5 * beta.back(), 1e-14);
    EXPECT_NEAR(backward_ito(constant_path(1, 65, 2.5), noise, 10),
                2.5 * (beta.back() - beta[10]), 1e-14);
    EXPECT_EQ(backward_ito(constant_path(1, 65, 0.0), noise, 0), 0.0);
}

TEST(BackwardIto, ModeMismatchThrows) {
    const auto noise = sample_backward_noise(TimeGrid(0.0, 1.0, 8), 2, 3, 0);
    EXPECT_THROW(backward_ito(constant_path(1, 9, 1.0), noise, 0), ConfigError);
    EXPECT_THROW(backward_ito(constant_path(2, 8, 1.0), noise, 0), ConfigError);
}

TEST(BackwardIto, EqualsForwardPlusQuadraticVariation) {
    const TimeGrid g(0.0, 1.0, 256);
    const auto noise = sample_backward_noise(g, 1, 17, 0);
    const ModePath eta{noise.levels(0)};
    double qv = 0.0;
    for (std::size_t i = 0; i < 256; ++i) qv += noise.increment(0, i) * noise.increment(0, i);
    EXPECT_NEAR(backward_ito(eta, noise, 0), forward_ito(eta, noise, 0, 256) + qv, 1e-13);
}

TEST(BackwardIto, LinearAndAdditive) {
    const TimeGrid g(0.0, 1.0, 32);
    const auto noise = sample_backward_noise(g, 2, 5, 0);
    const CounterRng rng(1);
    ModePath a(2, std::vector<double>(33)), b = a, c = a;
    for (std::size_t k = 0; k < 2; ++k)
        for (std::size_t i = 0; i < 33; ++i) {
            a[k][i] = rng.normal(1, k * 100 + i);
            b[k][i] = rng.normal(2, k * 100 + i);
            c[k][i] = 2.0 * a[k][i] - 3.0 * b[k][i];
        }
    EXPECT_NEAR(backward_ito(c, noise, 0),
                2.0 * backward_ito(a, noise, 0) - 3.0 * backward_ito(b, noise, 0), 1e-12);
    const double head = backward_ito(a, noise, 0) - backward_ito(a, noise, 12);
    double manual = 0.0;
    for (std::size_t k = 0; k < 2; ++k)
        for (std::size_t i = 0; i < 12; ++i) manual += a[k][i + 1] * noise.increment(k, i);
    EXPECT_NEAR(head, manual, 1e-12);
}

TEST(BackwardIto, DeterministicIntegrandHasZeroMean) {
    const TimeGrid g(0.0, 1.0, 16);
    ModePath eta(1, std::vector<double>(17));
    for (std::size_t i = 0; i < 17; ++i) eta[0][i] = std::cos(static_cast<double>(i));
    double s = 0.0, ss = 0.0;
    const int n = 10000;
    for (int seed = 0; seed < n; ++seed) {
        const double v = backward_ito(eta, sample_backward_noise(g, 1, seed, 0), 0);
        s += v;
        ss += v * v;
    }
    const double mean = s / n;
    const double se = std::sqrt((ss / n - mean * mean) / n);
    EXPECT_LT(std::abs(mean), 3.0 * se);
}

TEST(ReverseNoise, IdentityHoldsForRandomIntegrands) {
    const CounterRng rng(2024);
    for (std::uint64_t trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + trial % 37;
        const std::size_t modes = 1 + trial % 3;
        const auto noise = sample_backward_noise(TimeGrid(0.0, 1.0, n), modes, trial, 1);
        const auto rev = reverse_noise(noise);
        ModePath eta(modes, std::vector<double>(n + 1));
        for (std::size_t k = 0; k < modes; ++k)
            for (std::size_t i = 0; i <= n; ++i) eta[k][i] = rng.normal(trial, k * 1000 + i);
        const auto eta_rev = reverse_path(eta);
        for (std::size_t t = 0; t <= n; ++t) {
            const double back = backward_ito(eta, noise, t);
            const double fwd = forward_ito(eta_rev, rev, 0, n - t);
            ASSERT_NEAR(back, -fwd, 1e-12) << "trial " << trial << " t " << t;
        }
    }
}

TEST(ReverseNoise, InvolutionIsBitExact) {
    const auto noise = sample_backward_noise(TimeGrid(0.0, 1.0, 16), 2, 8, 0);
    EXPECT_TRUE(reverse_noise(reverse_noise(noise)) == noise);
}

TEST(QSpec, ConstantModeOnTorus) {
    const auto dom = Domain::torus(2.0 * std::numbers::pi);
    const QSpec q{{0.5}, {BasisFunction::parse("constant")}};
    const auto r = validate_qspec(q, dom, space_mesh(dom, 32));
    EXPECT_NEAR(r.sup_statistic, 0.5 / (2.0 * std::numbers::pi), 1e-15);
    EXPECT_TRUE(r.pass);
}

TEST(QSpec, SineFamilyOrthonormalOnInterval) {
    const auto dom = Domain::interval(0.0, std::numbers::pi);
    QSpec q;
    for (int j = 1; j <= 6; ++j) {
        q.lambdas.push_back(1.0);
        q.basis.push_back(BasisFunction::parse("sine:" + std::to_string(j)));
    }
    const auto r = validate_qspec(q, dom, space_mesh(dom, 31));
    EXPECT_TRUE(r.orthonormality_checked);
    EXPECT_LT(r.orthonormality_residual, 1e-8);
}

TEST(QSpec, GeometricTrigFamilyPasses) {
    const auto dom = Domain::torus(2.0 * std::numbers::pi);
    QSpec q;
    const char* ids[] = {"constant", "sine:1", "cosine:1", "sine:2",
                         "cosine:2", "sine:3", "cosine:3", "sine:4"};
    for (int k = 1; k <= 8; ++k) {
        q.lambdas.push_back(std::ldexp(1.0, -k));
        q.basis.push_back(BasisFunction::parse(ids[k - 1]));
    }
    const auto r = validate_qspec(q, dom, space_mesh(dom, 64));
    EXPECT_TRUE(r.pass);
    EXPECT_LE(r.sup_statistic, r.sup_bound);
    EXPECT_NEAR(r.trace, 1.0 - std::ldexp(1.0, -8), 1e-15);
}

TEST(QSpec, UnknownBasisRejected) {
    EXPECT_THROW(BasisFunction::parse("wavelet:2"), ConfigError);
    EXPECT_THROW(BasisFunction::parse("sine:0"), ConfigError);
    EXPECT_THROW(BasisFunction::parse("sine:x"), ConfigError);
}

TEST(GComponents, ConstantCoefficient) {
    const auto dom = Domain::torus(2.0 * std::numbers::pi);
    const QSpec q{{0.25}, {BasisFunction::parse("constant")}};
    const auto fam = g_components([](double, double, double, double) { return 1.0; }, 0.0, 0.0,
                                  q, dom, space_mesh(dom, 16));
    const double c = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    EXPECT_NEAR(fam.component(0, 0.3, 1.7, 5.0, 0.0), 0.5 * c, 1e-15);
    EXPECT_EQ(fam.l_bound, 0.0);
}

TEST(GComponents, InducedLBound) {
    const auto dom = Domain::torus(2.0 * std::numbers::pi);
    const QSpec q{{0.5, 0.25}, {BasisFunction::parse("sine:1"), BasisFunction::parse("cosine:1")}};
    const auto mesh = space_mesh(dom, 64);
    const double lip = 0.7;
    const auto fam = g_components([lip](double, double, double y, double) { return lip * y; },
                                  lip, 0.0, q, dom, mesh);
    const auto report = validate_qspec(q, dom, mesh);
    EXPECT_NEAR(fam.l_bound, lip * lip * report.sup_statistic, 1e-15);
}

TEST(GComponents, ZeroCoefficient) {
    const auto dom = Domain::torus(1.0);
    const QSpec q{{1.0, 1.0}, {BasisFunction::parse("constant"), BasisFunction::parse("sine:1")}};
    const auto fam = g_components([](double, double, double, double) { return 0.0; }, 0.0, 0.0,
                                  q, dom, {});
    for (std::size_t k = 0; k < 2; ++k) EXPECT_EQ(fam.component(k, 0.1, 0.4, 3.0, 0.0), 0.0);
}
