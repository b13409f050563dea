#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace bdsde {

/// Spatial state space with Lebesgue reference measure m.
///
/// torus(L) wraps coordinates into [0, L); interval(a, b) and box(lo, hi)
/// kill paths at the first grid node outside the closure; line() is the
/// conservative whole line (infinite volume). Only torus/interval/line are
/// one-dimensional; box is the d-dimensional killed variant.
class Domain {
public:
    enum class Kind { torus, interval, box, line };

    static Domain torus(double length);
    static Domain interval(double a, double b);
    static Domain box(std::vector<double> lower, std::vector<double> upper);
    static Domain line();

    Kind kind() const noexcept { return kind_; }
    std::size_t dim() const noexcept { return lower_.size(); }
    double lower(std::size_t axis = 0) const { return lower_.at(axis); }
    double upper(std::size_t axis = 0) const { return upper_.at(axis); }

    /// Side length of a one-dimensional bounded domain.
    double length() const;

    /// m(E); +infinity for the line.
    double volume() const;

    bool bounded() const noexcept { return kind_ != Kind::line; }

    /// No killing: torus and line.
    bool conservative() const noexcept { return kind_ == Kind::torus || kind_ == Kind::line; }

    bool periodic() const noexcept { return kind_ == Kind::torus; }

    /// Closure membership (torus and line contain every point).
    bool contains(std::span<const double> x) const noexcept;
    bool contains(double x) const noexcept { return contains(std::span<const double>(&x, 1)); }

    /// Maps torus coordinates into [0, L); identity otherwise.
    void wrap(std::span<double> x) const noexcept;
    double wrap(double x) const noexcept;

    /// Short name for CSV/JSON, e.g. "torus:6.2831853071795862".
    std::string describe() const;

private:
    Domain(Kind kind, std::vector<double> lower, std::vector<double> upper);

    Kind kind_;
    std::vector<double> lower_;
    std::vector<double> upper_;
};

/// Uniform space mesh used for fields and quadrature: torus nodes
/// j*L/n (j < n), interval nodes at the n interior points a + (j+1)h with
/// h = (b-a)/(n+1).
std::vector<double> space_mesh(const Domain& domain, std::size_t n);

/// Quadrature weights matching space_mesh (periodic trapezoid on the torus,
/// interior trapezoid with zero boundary values on intervals).
std::vector<double> space_weights(const Domain& domain, std::size_t n);

}  // namespace bdsde
