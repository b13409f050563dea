#include "bdsde/regression.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Dense>

#include "bdsde/common.hpp"

namespace bdsde {

RegressionConfig::Basis RegressionConfig::parse_basis(const std::string& name) {
    if (name == "piecewise_constant") return Basis::piecewise_constant;
    if (name == "piecewise_linear") return Basis::piecewise_linear;
    if (name == "polynomial") return Basis::polynomial;
    if (name == "fourier") return Basis::fourier;
    throw ConfigError("unknown regression basis '" + name + "'");
}

std::string RegressionConfig::basis_name(Basis b) {
    switch (b) {
        case Basis::piecewise_constant: return "piecewise_constant";
        case Basis::piecewise_linear: return "piecewise_linear";
        case Basis::polynomial: return "polynomial";
        case Basis::fourier: return "fourier";
    }
    return "?";
}

std::size_t RegressionConfig::n_functions() const noexcept {
    switch (basis) {
        case Basis::piecewise_constant: return size;
        case Basis::piecewise_linear: return size + 1;
        case Basis::polynomial: return size + 1;
        case Basis::fourier: return 2 * size + 1;
    }
    return 0;
}

void RegressionConfig::validate(const Domain& domain) const {
    if (basis != Basis::polynomial && size == 0) {
        throw ConfigError("regression: basis size must be positive");
    }
    if (n_functions() > BasisEvaluator::kMaxBasis) {
        throw ConfigError("regression: at most " + std::to_string(BasisEvaluator::kMaxBasis) +
                          " basis functions");
    }
    if (!(ridge >= 0.0) || !std::isfinite(ridge)) throw ConfigError("regression: ridge must be >= 0");
    if (basis == Basis::fourier && !domain.periodic()) {
        throw ConfigError("regression: fourier basis needs a torus domain");
    }
    if (domain.dim() != 1) throw UnsupportedError("regression: one-dimensional features only");
}

BasisEvaluator::BasisEvaluator(const RegressionConfig& cfg, const Domain& domain, double lo,
                               double hi)
    : kind_(cfg.basis), param_(cfg.size), n_(cfg.n_functions()), lo_(lo), hi_(hi) {
    if (kind_ == RegressionConfig::Basis::fourier) {
        omega_ = 2.0 * std::numbers::pi / domain.length();
    }
}

std::size_t BasisEvaluator::eval(double x, std::size_t* idx, double* val) const noexcept {
    using B = RegressionConfig::Basis;
    if (kind_ == B::fourier) {
        idx[0] = 0;
        val[0] = 1.0;
        const double c1 = std::cos(omega_ * x);
        const double s1 = std::sin(omega_ * x);
        double c = 1.0, s = 0.0;
        for (std::size_t k = 1; k <= param_; ++k) {
            const double cn = c * c1 - s * s1;
            s = s * c1 + c * s1;
            c = cn;
            idx[2 * k - 1] = 2 * k - 1;
            val[2 * k - 1] = c;
            idx[2 * k] = 2 * k;
            val[2 * k] = s;
        }
        return n_;
    }
    double z = 2.0 * (x - lo_) / (hi_ - lo_) - 1.0;
    switch (kind_) {
        case B::piecewise_constant: {
            z = std::clamp(z, -1.0, 1.0);
            const auto bins = static_cast<double>(param_);
            auto j = static_cast<std::size_t>(std::clamp(std::floor((z + 1.0) * 0.5 * bins), 0.0, bins - 1.0));
            idx[0] = j;
            val[0] = 1.0;
            return 1;
        }
        case B::piecewise_linear: {
            z = std::clamp(z, -1.0, 1.0);
            const auto bins = static_cast<double>(param_);
            const double u = (z + 1.0) * 0.5 * bins;
            const double jf = std::clamp(std::floor(u), 0.0, bins - 1.0);
            const double w = u - jf;
            const auto j = static_cast<std::size_t>(jf);
            idx[0] = j;
            val[0] = 1.0 - w;
            idx[1] = j + 1;
            val[1] = w;
            return 2;
        }
        case B::polynomial: {
            // Legendre recurrence.
            idx[0] = 0;
            val[0] = 1.0;
            if (n_ > 1) {
                idx[1] = 1;
                val[1] = z;
            }
            for (std::size_t k = 2; k < n_; ++k) {
                const double kk = static_cast<double>(k);
                idx[k] = k;
                val[k] = ((2.0 * kk - 1.0) * z * val[k - 1] - (kk - 1.0) * val[k - 2]) / kk;
            }
            return n_;
        }
        case B::fourier: break;
    }
    return 0;
}

FittedFunction FittedFunction::constant(double c, Status status) {
    FittedFunction f;
    f.constant_ = c;
    f.status_ = status;
    return f;
}

double FittedFunction::operator()(double x) const noexcept {
    if (status_ != Status::fit) return constant_;
    std::size_t idx[BasisEvaluator::kMaxBasis];
    double val[BasisEvaluator::kMaxBasis];
    const std::size_t nnz = basis_.eval(x, idx, val);
    double s = 0.0;
    for (std::size_t q = 0; q < nnz; ++q) s += coef_[idx[q]] * val[q];
    return s;
}

RegressionResult regress_conditional(std::span<const double> values,
                                     std::span<const double> features,
                                     std::span<const unsigned char> alive,
                                     const RegressionConfig& cfg, const Domain& domain) {
    const std::size_t n = values.size();
    if (features.size() != n || alive.size() != n) {
        throw ConfigError("regression: values, features and alive mask differ in length");
    }
    RegressionResult r;
    r.fitted.assign(n, 0.0);

    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    double sum = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
        if (!alive[p]) continue;
        ++r.alive;
        sum += values[p];
        lo = std::min(lo, features[p]);
        hi = std::max(hi, features[p]);
    }
    if (r.alive == 0) {
        r.fn = FittedFunction::constant(0.0, FittedFunction::Status::all_dead);
        return r;
    }
    const double mean = sum / static_cast<double>(r.alive);
    auto finish_stats = [&](std::size_t rank) {
        double ss = 0.0;
        for (std::size_t p = 0; p < n; ++p) {
            if (!alive[p]) continue;
            const double e = values[p] - r.fitted[p];
            ss += e * e;
        }
        r.rank = rank;
        const double dof = static_cast<double>(r.alive > rank ? r.alive - rank : 1);
        r.residual_sd = std::sqrt(ss / dof);
        r.std_error = r.residual_sd * std::sqrt(static_cast<double>(rank) / static_cast<double>(r.alive));
    };
    if (r.alive < std::max<std::size_t>(cfg.min_alive_paths, 1)) {
        r.fn = FittedFunction::constant(mean, FittedFunction::Status::mean_fallback);
        for (std::size_t p = 0; p < n; ++p) r.fitted[p] = alive[p] ? mean : 0.0;
        finish_stats(1);
        return r;
    }

    if (!(hi - lo > 1e-12 * std::max(1.0, std::abs(lo)))) {
        lo -= 0.5;
        hi += 0.5;
    }
    BasisEvaluator basis(cfg, domain, lo, hi);
    const std::size_t m = basis.size();
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
    Eigen::VectorXd b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m));
    std::size_t idx[BasisEvaluator::kMaxBasis];
    double val[BasisEvaluator::kMaxBasis];
    for (std::size_t p = 0; p < n; ++p) {
        if (!alive[p]) continue;
        const std::size_t nnz = basis.eval(features[p], idx, val);
        for (std::size_t q = 0; q < nnz; ++q) {
            const auto iq = static_cast<Eigen::Index>(idx[q]);
            b(iq) += val[q] * values[p];
            for (std::size_t w = 0; w < nnz; ++w) {
                A(iq, static_cast<Eigen::Index>(idx[w])) += val[q] * val[w];
            }
        }
    }
    const double inv_n = 1.0 / static_cast<double>(r.alive);
    A *= inv_n;
    b *= inv_n;
    A.diagonal().array() += cfg.ridge;

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(A);
    const Eigen::VectorXd& lam = eig.eigenvalues();
    const double lam_max = lam.cwiseAbs().maxCoeff();
    const double cut = 1e-12 * lam_max;
    Eigen::VectorXd proj = eig.eigenvectors().transpose() * b;
    std::size_t rank = 0;
    for (Eigen::Index k = 0; k < proj.size(); ++k) {
        if (lam(k) > cut && lam_max > 0.0) {
            proj(k) /= lam(k);
            ++rank;
        } else {
            proj(k) = 0.0;
        }
    }
    const Eigen::VectorXd coef = eig.eigenvectors() * proj;

    FittedFunction fn;
    fn.basis_ = basis;
    fn.coef_.assign(coef.data(), coef.data() + coef.size());
    fn.status_ = FittedFunction::Status::fit;
    for (std::size_t p = 0; p < n; ++p) {
        if (alive[p]) r.fitted[p] = fn(features[p]);
    }
    r.fn = std::move(fn);
    finish_stats(std::max<std::size_t>(rank, 1));
    return r;
}

}  // namespace bdsde
