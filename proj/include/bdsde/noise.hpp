#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "bdsde/common.hpp"
#include "bdsde/domain.hpp"

namespace bdsde {

/// Increments of K independent Wiener processes on a uniform grid.
/// Increment (k, i) covers [t_i, t_{i+1}]. Storage is mode-major.
class BackwardNoise {
public:
    BackwardNoise(TimeGrid grid, std::size_t modes, std::vector<double> increments,
                  std::uint64_t seed = 0, std::uint64_t stream_id = 0);

    const TimeGrid& grid() const noexcept { return grid_; }
    std::size_t modes() const noexcept { return modes_; }
    std::size_t n_steps() const noexcept { return grid_.n_steps(); }
    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream_id() const noexcept { return stream_id_; }

    double increment(std::size_t k, std::size_t i) const noexcept {
        return increments_[k * grid_.n_steps() + i];
    }
    const double* mode(std::size_t k) const noexcept {
        return increments_.data() + k * grid_.n_steps();
    }
    const std::vector<double>& increments() const noexcept { return increments_; }

    /// beta^k at node i with beta^k at the first node set to 0.
    std::vector<double> levels(std::size_t k) const;

    /// beta^k_T - beta^k_{t_i}, summed from the right.
    double tail(std::size_t k, std::size_t i) const;

    /// Raw layout: header (magic, n_steps, modes, seed, stream, t_start, t_end)
    /// then mode-major little-endian float64 increments.
    void write(std::ostream& out) const;
    static BackwardNoise read(std::istream& in);

    bool operator==(const BackwardNoise& other) const;

private:
    TimeGrid grid_;
    std::size_t modes_;
    std::vector<double> increments_;
    std::uint64_t seed_;
    std::uint64_t stream_id_;
};

/// Draws Normal(0, dt) increments; cell (k, i) comes from its own counter so
/// the matrix is a pure function of (grid, K, seed, stream_id).
BackwardNoise sample_backward_noise(const TimeGrid& grid, std::size_t modes,
                                    std::uint64_t seed, std::uint64_t stream_id);

/// Integrand values per mode at grid nodes: eta[k][i], i = 0..N.
using ModePath = std::vector<std::vector<double>>;

/// Right-endpoint sum  sum_k sum_{i >= from} eta^k_{i+1} dbeta^k_i.
double backward_ito(const ModePath& eta, const BackwardNoise& noise, std::size_t from = 0);

/// Left-endpoint sum  sum_k sum_{from <= i < to} eta^k_i dbeta^k_i.
double forward_ito(const ModePath& eta, const BackwardNoise& noise, std::size_t from,
                   std::size_t to);

/// Increments of the reversed process beta_hat_t = beta_{T-t} - beta_T:
/// dbeta_hat_j = -dbeta_{N-1-j}. An involution, bit-exact.
BackwardNoise reverse_noise(const BackwardNoise& noise);

/// Reindexes a node path for the reversed grid: out[j] = eta[N - j].
ModePath reverse_path(const ModePath& eta);

/// One spatial mode e_k from the registry: "constant", "sine:j", "cosine:j".
struct BasisFunction {
    enum class Kind { constant, sine, cosine };
    Kind kind = Kind::constant;
    int j = 0;

    static BasisFunction parse(const std::string& id);
    std::string id() const;
};

/// Basis function normalized on a concrete domain (L2(m)-orthonormal on
/// torus and interval; the constant 1 on the line).
class BoundBasis {
public:
    BoundBasis(const BasisFunction& fn, const Domain& domain);

    double operator()(double x) const noexcept;
    /// d/dx
    double derivative(double x) const noexcept;
    /// sup_x |e(x)|
    double sup_abs() const noexcept { return scale_; }

private:
    BasisFunction::Kind kind_;
    double scale_ = 1.0;
    double freq_ = 0.0;
    double shift_ = 0.0;
};

struct QSpec {
    std::vector<double> lambdas;
    std::vector<BasisFunction> basis;

    std::size_t modes() const noexcept { return lambdas.size(); }
};

struct QThresholds {
    double orthonormality_tol = 1e-8;
    double max_sup_statistic = 1e300;
};

struct QReport {
    double trace = 0.0;
    /// sup over the mesh of sum_k lambda_k e_k(x)^2
    double sup_statistic = 0.0;
    /// sum_k lambda_k sup|e_k|^2, an a priori bound for the statistic
    double sup_bound = 0.0;
    /// max |<e_k, e_l> - delta_kl| by quadrature; 0 when not applicable
    double orthonormality_residual = 0.0;
    bool orthonormality_checked = false;
    bool pass = false;
    std::vector<std::string> messages;
};

QReport validate_qspec(const QSpec& q, const Domain& domain, const std::vector<double>& mesh,
                       const QThresholds& thresholds = {});

/// Scalar coefficient g~(t, x, y, z).
using ScalarCoefficient = std::function<double(double t, double x, double y, double z)>;

/// g_k(t,x,y,z) = g~(t,x,y,z) sqrt(lambda_k) e_k(x).
class ComponentFamily {
public:
    ComponentFamily() = default;
    ComponentFamily(ScalarCoefficient g_tilde, const QSpec& q, const Domain& domain);

    std::size_t modes() const noexcept { return weights_.size(); }
    bool zero() const noexcept { return !g_tilde_ || weights_.empty(); }

    /// sqrt(lambda_k) e_k(x)
    double weight(std::size_t k, double x) const noexcept { return weights_[k](x) * root_lambda_[k]; }

    double component(std::size_t k, double t, double x, double y, double z) const;

    /// sum_k g_k(t, x, y, z) dbeta^k_i
    double contract(const BackwardNoise& noise, std::size_t i, double t, double x, double y,
                    double z) const;

    /// sum_k g_k(t, x, y, z)^2
    double squared_norm(double t, double x, double y, double z) const;

    /// Induced constants: l = L_y'^2 S and (if g~ depends on z) m = L_z'^2 S scaled
    /// per the split bound, with S = sup_x sum_k lambda_k e_k(x)^2.
    double l_bound = 0.0;
    double m_bound = 0.0;
    double sup_statistic = 0.0;

private:
    friend ComponentFamily g_components(ScalarCoefficient, double, double, const QSpec&,
                                        const Domain&, const std::vector<double>&);
    ScalarCoefficient g_tilde_;
    std::vector<BoundBasis> weights_;
    std::vector<double> root_lambda_;
};

/// Builds the component family and its l / m constants from the Lipschitz
/// constants of g~ in y and z. S is taken over `mesh` (or sup|e_k| bounds when
/// the mesh is empty).
ComponentFamily g_components(ScalarCoefficient g_tilde, double lip_y, double lip_z,
                             const QSpec& q, const Domain& domain,
                             const std::vector<double>& mesh);

}  // namespace bdsde
