#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "bdsde/common.hpp"
#include "bdsde/domain.hpp"

namespace bdsde {

struct RegressionConfig {
    enum class Basis { piecewise_constant, piecewise_linear, polynomial, fourier };

    Basis basis = Basis::piecewise_linear;
    /// bins, polynomial degree, or Fourier modes
    std::size_t size = 16;
    double ridge = 0.0;
    std::size_t min_alive_paths = 32;

    static Basis parse_basis(const std::string& name);
    static std::string basis_name(Basis b);
    std::size_t n_functions() const noexcept;
    void validate(const Domain& domain) const;
};

/// Evaluates basis functions at a point. At most kMaxNnz nonzeros per point;
/// dense bases (polynomial, Fourier) report all functions.
class BasisEvaluator {
public:
    static constexpr std::size_t kMaxBasis = 64;

    BasisEvaluator() = default;
    BasisEvaluator(const RegressionConfig& cfg, const Domain& domain, double lo, double hi);

    std::size_t size() const noexcept { return n_; }

    /// Writes (index, value) pairs; returns the count.
    std::size_t eval(double x, std::size_t* idx, double* val) const noexcept;

private:
    RegressionConfig::Basis kind_ = RegressionConfig::Basis::polynomial;
    std::size_t param_ = 0;
    std::size_t n_ = 1;
    double lo_ = -1.0;
    double hi_ = 1.0;
    double omega_ = 1.0;
};

struct RegressionResult;

/// Fitted conditional expectation x -> sum_j c_j psi_j(x).
class FittedFunction {
public:
    enum class Status { fit, mean_fallback, all_dead };

    FittedFunction() = default;
    static FittedFunction constant(double c, Status status);

    double operator()(double x) const noexcept;

    Status status() const noexcept { return status_; }
    const std::vector<double>& coefficients() const noexcept { return coef_; }
    const BasisEvaluator& basis() const noexcept { return basis_; }

private:
    friend RegressionResult regress_conditional(std::span<const double>, std::span<const double>,
                                                std::span<const unsigned char>,
                                                const RegressionConfig&, const Domain&);
    BasisEvaluator basis_;
    std::vector<double> coef_;
    double constant_ = 0.0;
    Status status_ = Status::all_dead;
};

struct RegressionResult {
    FittedFunction fn;
    /// fn(x_p) on alive paths, 0 on dead paths
    std::vector<double> fitted;
    std::size_t alive = 0;
    std::size_t rank = 0;
    /// sqrt(sum res^2 / (n - rank))
    double residual_sd = 0.0;
    /// residual_sd * sqrt(rank / n): typical standard error of a fitted value
    double std_error = 0.0;
};

/// Least squares over alive paths with ridge: minimizes
/// (1/n) sum (y_p - c.psi(x_p))^2 + ridge |c|^2 via a symmetric eigen
/// pseudo-inverse of the Gram matrix. Features are rescaled to [-1, 1] over
/// the alive range (widened when degenerate); Fourier uses the torus period.
/// Fewer than min_alive_paths alive paths: the alive mean. No alive path: 0.
RegressionResult regress_conditional(std::span<const double> values,
                                     std::span<const double> features,
                                     std::span<const unsigned char> alive,
                                     const RegressionConfig& cfg, const Domain& domain);

}  // namespace bdsde
