#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bdsde/coefficients.hpp"
#include "bdsde/field.hpp"
#include "bdsde/markov.hpp"
#include "bdsde/noise.hpp"
#include "bdsde/solver.hpp"

namespace bdsde {

/// Eigenbasis of -a d^2/dx^2: Fourier on the torus (constant, then cos/sin
/// pairs up to frequency J), sine modes 1..J on an interval (absorbing ends).
/// Nonlinear terms are evaluated pseudo-spectrally on a padded uniform grid
/// (3/2 rule for quadratic products).
class SpectralBasis {
public:
    SpectralBasis(const Domain& domain, double a, std::size_t J);

    /// const_diffusion generators only.
    static SpectralBasis for_generator(const Domain& domain, const GeneratorSpec& gen, std::size_t J);

    const Domain& domain() const noexcept { return domain_; }
    double diffusion() const noexcept { return a_; }
    std::size_t truncation() const noexcept { return J_; }
    std::size_t size() const noexcept { return mu_.size(); }
    const std::vector<double>& eigenvalues() const noexcept { return mu_; }

    double mode(std::size_t k, double x) const;
    double mode_dx(std::size_t k, double x) const;

    const std::vector<double>& quad_points() const noexcept { return xq_; }
    /// values at the quadrature points
    Eigen::VectorXd synthesize(const Eigen::VectorXd& c) const { return V_ * c; }
    Eigen::VectorXd synthesize_dx(const Eigen::VectorXd& c) const { return Vdx_ * c; }
    /// L2 projection of samples at the quadrature points
    Eigen::VectorXd project(const Eigen::VectorXd& values) const { return P_ * values; }
    Eigen::VectorXd project(const Field& fn, double t) const;

    double evaluate(const Eigen::VectorXd& c, double x) const;

    /// max |<e_k, e_l> - delta_kl| under the quadrature
    double orthonormality_residual() const;

private:
    Domain domain_;
    double a_;
    std::size_t J_;
    std::vector<double> mu_;
    std::vector<double> xq_;
    double wq_ = 0.0;
    Eigen::MatrixXd V_, Vdx_, P_;
};

/// e^{-mu_k t} c_k.
Eigen::VectorXd semigroup_apply(const SpectralBasis& basis, double t, const Eigen::VectorXd& c);

/// d/dx of the expansion at the points x.
std::vector<double> spectral_gradient(const SpectralBasis& basis, const Eigen::VectorXd& c,
                                      const std::vector<double>& x);

enum class MildMethod { stepper, global_picard };

MildMethod parse_mild_method(const std::string& name);

struct MildOptions {
    std::size_t modes = 16;  // J
    MildMethod method = MildMethod::stepper;
    double tol = 1e-10;
    std::size_t max_iter = 500;
};

/// Mode coefficients at every grid node.
struct MildSolution {
    TimeGrid grid{0.0, 1.0, 1};
    std::vector<Eigen::VectorXd> coeffs;
    std::size_t iterations = 0;
    IterationLog log;
    std::vector<std::string> warnings;

    double value(const SpectralBasis& basis, std::size_t i, double x) const {
        return basis.evaluate(coeffs[i], x);
    }
};

/// u(t_i) = P_dt[u(t_{i+1}) + dt F(t_{i+1}, u(t_{i+1})) + sum_k G_k(t_{i+1}, u(t_{i+1})) dbeta^k_i],
/// directly (stepper) or as a fixed point over the whole trajectory. A
/// z-dependence is fed sqrt(2a) du/dx.
MildSolution solve_mild(const CoefficientSpec& data, const SpectralBasis& basis, const TimeGrid& grid,
                        const BackwardNoise& noise, const MildOptions& opt);

/// L2(dt dm) norm of u minus the discrete mild right-hand side evaluated at u.
double mild_residual(const MildSolution& u, const CoefficientSpec& data, const SpectralBasis& basis,
                     const BackwardNoise& noise);

/// The same defect for ubar(t) = u(T - t) under the forward recursion driven
/// by the reversed noise; equal to mild_residual up to summation order.
double time_reversal_check(const MildSolution& u, const CoefficientSpec& data, const SpectralBasis& basis,
                           const BackwardNoise& noise);

struct MildFieldResult {
    FieldEstimate field;
    double max_residual = 0.0;
    std::vector<std::string> warnings;
    IterationLog log;
};

/// Mild solutions for outer realizations 0..outer-1 on the spde_field mesh,
/// using the same noise as feynman_kac_field with the same seed.
MildFieldResult mild_field(const CoefficientSpec& data, const GeneratorSpec& gen, const TimeGrid& grid,
                           std::size_t n_time, std::size_t n_space, std::size_t outer, std::uint64_t seed,
                           const MildOptions& opt);

}  // namespace bdsde
