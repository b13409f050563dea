#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "bdsde/domain.hpp"
#include "bdsde/noise.hpp"

namespace bdsde {

using TerminalFn = std::function<double(double x)>;
using AutonomousFn = std::function<double(double y)>;

/// Declared structural constants of (f, g).
struct StructuralConstants {
    /// (f(y) - f(y'))(y - y') <= L_mono |y - y'|^2
    double L_mono = 0.0;
    /// |f(y) - f(y')| <= L_lip_y |y - y'|; infinity when not Lipschitz
    double L_lip_y = std::numeric_limits<double>::infinity();
    /// |f(z) - f(z')| <= L_lip_z |z - z'|
    double L_lip_z = 0.0;
    /// sum_k |g_k(y,z) - g_k(y',z')|^2 <= l |y - y'|^2 + m |z - z'|^2
    double l_bound = 0.0;
    double m_grad = 0.0;
};

/// Terminal value, driver and noise coefficient with their declared constants.
/// f and g~ take (t, x, y, z); g_k = g~ sqrt(lambda_k) e_k.
struct CoefficientSpec {
    std::string phi_name = "zero";
    std::string f_name = "zero";
    std::string g_name = "zero";

    TerminalFn phi;
    ScalarCoefficient f;
    ScalarCoefficient g_tilde;
    /// f as a function of y alone, set when f ignores (t, x, z)
    AutonomousFn f_of_y;

    double g_lip_y = 0.0;
    double g_lip_z = 0.0;
    QSpec q;
    Domain domain = Domain::line();
    ComponentFamily g;

    StructuralConstants constants;
    bool f_depends_on_y = false;
    bool depends_on_z = false;
    bool g_depends_on_y = false;
    bool monotone_only = false;
    bool omega_dependent = false;
    /// polynomial degree of f in y (0 = none; large = non-polynomial)
    int f_y_degree = 0;

    /// f and g ignore (y, z).
    bool linear() const noexcept { return !f_depends_on_y && !depends_on_z && !g_depends_on_y; }

    /// phi -> lambda phi, f(y,z) -> lambda f(y/lambda, z/lambda), same for g~.
    CoefficientSpec scaled(double lambda) const;
    CoefficientSpec with_terminal_shift(double delta) const;
    CoefficientSpec with_driver_shift(double delta) const;
    /// Replaces an autonomous driver (monotone approximations).
    CoefficientSpec with_autonomous_driver(AutonomousFn fy, const std::string& name,
                                           double lip_y, double l_mono) const;

    void rebuild_components();
};

/// Builds a spec from preset names:
///   phi: zero | const:c | sin:j | cos:j | identity
///   f:   zero | const:c | linear:c | linear_forced:c,h | cubic_monotone |
///        cubic_truncated:n | grad_linear:theta
///   g~:  zero | const:gamma | linear:gamma | affine:gamma0,gamma1
CoefficientSpec make_coefficients(const std::string& phi, const std::string& f,
                                  const std::string& g_tilde, const QSpec& q,
                                  const Domain& domain);

struct PresetInfo {
    std::string category;
    std::string name;
    std::string params;
    std::string constants;
    std::string description;
};

/// Registry listing for coefficients, generators and Q bases. Stable order.
std::vector<PresetInfo> list_presets();

struct ProbeResult {
    std::string name;
    double declared = 0.0;
    /// worst observed value of the constant's defining quotient
    double observed = 0.0;
    bool holds = true;
};

struct ProbeReport {
    std::vector<ProbeResult> checks;
    bool pass = true;
};

/// Checks the declared constants on n random (t, x, y, y', z, z') probes with
/// |y|, |z| <= radius.
ProbeReport probe_constants(const CoefficientSpec& spec, double T, std::size_t n = 10000,
                            std::uint64_t seed = 1, double radius = 4.0);

}  // namespace bdsde
