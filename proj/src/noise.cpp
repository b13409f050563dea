#include "bdsde/noise.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <numbers>
#include <ostream>

#include <boost/math/quadrature/gauss.hpp>

#include "bdsde/rng.hpp"

namespace bdsde {

namespace {

constexpr std::uint64_t kNoiseMagic = 0x31455349'4f4e4442ULL;  // "BDNOISE1"

template <class T>
void put_le(std::ostream& out, T v) {
    static_assert(sizeof(T) == 8);
    auto u = std::bit_cast<std::uint64_t>(v);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

template <class T>
T get_le(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw ConfigError("noise: truncated binary stream");
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return std::bit_cast<T>(u);
}

}  // namespace

BackwardNoise::BackwardNoise(TimeGrid grid, std::size_t modes, std::vector<double> increments,
                             std::uint64_t seed, std::uint64_t stream_id)
    : grid_(grid), modes_(modes), increments_(std::move(increments)), seed_(seed),
      stream_id_(stream_id) {
    if (modes_ == 0) throw ConfigError("noise: mode count must be positive");
    if (increments_.size() != modes_ * grid_.n_steps()) {
        throw ConfigError("noise: increment matrix does not match modes x steps");
    }
}

std::vector<double> BackwardNoise::levels(std::size_t k) const {
    std::vector<double> b(grid_.n_nodes(), 0.0);
    const double* d = mode(k);
    for (std::size_t i = 0; i < grid_.n_steps(); ++i) b[i + 1] = b[i] + d[i];
    return b;
}

double BackwardNoise::tail(std::size_t k, std::size_t i) const {
    const double* d = mode(k);
    double s = 0.0;
    for (std::size_t j = grid_.n_steps(); j > i; --j) s += d[j - 1];
    return s;
}

void BackwardNoise::write(std::ostream& out) const {
    put_le(out, kNoiseMagic);
    put_le(out, static_cast<std::uint64_t>(grid_.n_steps()));
    put_le(out, static_cast<std::uint64_t>(modes_));
    put_le(out, seed_);
    put_le(out, stream_id_);
    put_le(out, grid_.t_start());
    put_le(out, grid_.t_end());
    for (double v : increments_) put_le(out, v);
}

BackwardNoise BackwardNoise::read(std::istream& in) {
    if (get_le<std::uint64_t>(in) != kNoiseMagic) throw ConfigError("noise: bad magic");
    const auto n_steps = get_le<std::uint64_t>(in);
    const auto modes = get_le<std::uint64_t>(in);
    const auto seed = get_le<std::uint64_t>(in);
    const auto stream = get_le<std::uint64_t>(in);
    const double t0 = get_le<double>(in);
    const double t1 = get_le<double>(in);
    if (n_steps == 0 || modes == 0 || n_steps > (1ULL << 32) || modes > (1ULL << 20)) {
        throw ConfigError("noise: implausible header");
    }
    std::vector<double> inc(modes * n_steps);
    for (double& v : inc) v = get_le<double>(in);
    return BackwardNoise(TimeGrid(t0, t1, n_steps), modes, std::move(inc), seed, stream);
}

bool BackwardNoise::operator==(const BackwardNoise& other) const {
    return grid_ == other.grid_ && modes_ == other.modes_ && seed_ == other.seed_ &&
           stream_id_ == other.stream_id_ &&
           std::memcmp(increments_.data(), other.increments_.data(),
                       increments_.size() * sizeof(double)) == 0 &&
           increments_.size() == other.increments_.size();
}

BackwardNoise sample_backward_noise(const TimeGrid& grid, std::size_t modes, std::uint64_t seed,
                                    std::uint64_t stream_id) {
    if (modes == 0) throw ConfigError("noise: mode count must be positive");
    const CounterRng rng(seed);
    const std::size_t n = grid.n_steps();
    const double sd = std::sqrt(grid.dt());
    std::vector<double> inc(modes * n);
    for (std::size_t k = 0; k < modes; ++k) {
        const std::uint64_t stream = derive_stream(stream_tag::noise, stream_id, k);
        for (std::size_t i = 0; i < n; i += 2) {
            const auto [a, b] = rng.normal_pair(stream, i / 2);
            inc[k * n + i] = sd * a;
            if (i + 1 < n) inc[k * n + i + 1] = sd * b;
        }
    }
    return BackwardNoise(grid, modes, std::move(inc), seed, stream_id);
}

namespace {

void check_integrand(const ModePath& eta, const BackwardNoise& noise) {
    if (eta.size() != noise.modes()) {
        throw ConfigError("ito sum: integrand has " + std::to_string(eta.size()) +
                          " modes, noise has " + std::to_string(noise.modes()));
    }
    for (const auto& row : eta) {
        if (row.size() != noise.grid().n_nodes()) {
            throw ConfigError("ito sum: integrand must be given at every grid node");
        }
    }
}

}  // namespace

double backward_ito(const ModePath& eta, const BackwardNoise& noise, std::size_t from) {
    check_integrand(eta, noise);
    double total = 0.0;
    for (std::size_t k = 0; k < noise.modes(); ++k) {
        const double* d = noise.mode(k);
        for (std::size_t i = from; i < noise.n_steps(); ++i) total += eta[k][i + 1] * d[i];
    }
    return total;
}

double forward_ito(const ModePath& eta, const BackwardNoise& noise, std::size_t from,
                   std::size_t to) {
    check_integrand(eta, noise);
    if (to > noise.n_steps() || from > to) throw ConfigError("ito sum: bad index range");
    double total = 0.0;
    for (std::size_t k = 0; k < noise.modes(); ++k) {
        const double* d = noise.mode(k);
        for (std::size_t i = from; i < to; ++i) total += eta[k][i] * d[i];
    }
    return total;
}

BackwardNoise reverse_noise(const BackwardNoise& noise) {
    const std::size_t n = noise.n_steps();
    std::vector<double> inc(noise.modes() * n);
    for (std::size_t k = 0; k < noise.modes(); ++k) {
        const double* d = noise.mode(k);
        for (std::size_t j = 0; j < n; ++j) inc[k * n + j] = -d[n - 1 - j];
    }
    return BackwardNoise(noise.grid(), noise.modes(), std::move(inc), noise.seed(),
                         noise.stream_id());
}

ModePath reverse_path(const ModePath& eta) {
    ModePath out(eta.size());
    for (std::size_t k = 0; k < eta.size(); ++k) out[k].assign(eta[k].rbegin(), eta[k].rend());
    return out;
}

BasisFunction BasisFunction::parse(const std::string& id) {
    BasisFunction b;
    if (id == "constant") return b;
    const auto colon = id.find(':');
    const std::string head = id.substr(0, colon);
    if (colon == std::string::npos || (head != "sine" && head != "cosine")) {
        throw ConfigError("unknown basis id '" + id + "'");
    }
    try {
        std::size_t used = 0;
        b.j = std::stoi(id.substr(colon + 1), &used);
        if (used != id.size() - colon - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
        throw ConfigError("basis id '" + id + "': bad mode index");
    }
    if (b.j < 1) throw ConfigError("basis id '" + id + "': mode index must be >= 1");
    b.kind = head == "sine" ? Kind::sine : Kind::cosine;
    return b;
}

std::string BasisFunction::id() const {
    switch (kind) {
        case Kind::constant: return "constant";
        case Kind::sine: return "sine:" + std::to_string(j);
        case Kind::cosine: return "cosine:" + std::to_string(j);
    }
    return "?";
}

BoundBasis::BoundBasis(const BasisFunction& fn, const Domain& domain) : kind_(fn.kind) {
    switch (domain.kind()) {
        case Domain::Kind::torus: {
            const double len = domain.length();
            scale_ = fn.kind == BasisFunction::Kind::constant ? 1.0 / std::sqrt(len)
                                                              : std::sqrt(2.0 / len);
            freq_ = 2.0 * std::numbers::pi * fn.j / len;
            break;
        }
        case Domain::Kind::interval: {
            const double len = domain.length();
            scale_ = fn.kind == BasisFunction::Kind::constant ? 1.0 / std::sqrt(len)
                                                              : std::sqrt(2.0 / len);
            freq_ = std::numbers::pi * fn.j / len;
            shift_ = domain.lower();
            break;
        }
        case Domain::Kind::line:
            if (fn.kind != BasisFunction::Kind::constant) {
                throw UnsupportedError("basis '" + fn.id() + "' is not defined on the line");
            }
            scale_ = 1.0;
            break;
        case Domain::Kind::box:
            if (fn.kind != BasisFunction::Kind::constant) {
                throw UnsupportedError("basis '" + fn.id() + "' is not defined on a box");
            }
            scale_ = 1.0 / std::sqrt(domain.volume());
            break;
    }
}

double BoundBasis::operator()(double x) const noexcept {
    switch (kind_) {
        case BasisFunction::Kind::constant: return scale_;
        case BasisFunction::Kind::sine: return scale_ * std::sin(freq_ * (x - shift_));
        case BasisFunction::Kind::cosine: return scale_ * std::cos(freq_ * (x - shift_));
    }
    return 0.0;
}

double BoundBasis::derivative(double x) const noexcept {
    switch (kind_) {
        case BasisFunction::Kind::constant: return 0.0;
        case BasisFunction::Kind::sine: return scale_ * freq_ * std::cos(freq_ * (x - shift_));
        case BasisFunction::Kind::cosine: return -scale_ * freq_ * std::sin(freq_ * (x - shift_));
    }
    return 0.0;
}

QReport validate_qspec(const QSpec& q, const Domain& domain, const std::vector<double>& mesh,
                       const QThresholds& thresholds) {
    if (mesh.empty()) throw ConfigError("qspec: mesh is empty");
    if (q.lambdas.size() != q.basis.size()) {
        throw ConfigError("qspec: lambdas and basis ids differ in length");
    }
    if (q.lambdas.empty()) throw ConfigError("qspec: at least one mode is required");

    QReport r;
    std::vector<BoundBasis> e;
    e.reserve(q.modes());
    for (std::size_t k = 0; k < q.modes(); ++k) {
        if (!(q.lambdas[k] >= 0.0) || !std::isfinite(q.lambdas[k])) {
            throw ConfigError("qspec: lambda_" + std::to_string(k + 1) + " must be finite and >= 0");
        }
        e.emplace_back(q.basis[k], domain);
        r.trace += q.lambdas[k];
        r.sup_bound += q.lambdas[k] * e.back().sup_abs() * e.back().sup_abs();
    }
    for (double x : mesh) {
        double s = 0.0;
        for (std::size_t k = 0; k < q.modes(); ++k) s += q.lambdas[k] * e[k](x) * e[k](x);
        r.sup_statistic = std::max(r.sup_statistic, s);
    }

    if (domain.kind() == Domain::Kind::torus || domain.kind() == Domain::Kind::interval) {
        // Composite 20-point Gauss-Legendre; exact to rounding for the low
        // trigonometric degrees used here.
        using Gauss = boost::math::quadrature::gauss<double, 20>;
        const std::size_t panels = 64;
        const double a = domain.lower();
        const double h = domain.length() / panels;
        const std::size_t K = q.modes();
        std::vector<double> gram(K * K, 0.0);
        std::vector<double> ev(K);
        for (std::size_t p = 0; p < panels; ++p) {
            const double lo = a + static_cast<double>(p) * h;
            const double hi = lo + h;
            for (std::size_t k = 0; k < K; ++k) {
                for (std::size_t l = k; l < K; ++l) {
                    gram[k * K + l] += Gauss::integrate(
                        [&](double x) { return e[k](x) * e[l](x); }, lo, hi);
                }
            }
        }
        for (std::size_t k = 0; k < K; ++k) {
            for (std::size_t l = k; l < K; ++l) {
                const double target = k == l ? 1.0 : 0.0;
                // Repeated ids are not an orthonormal family; they show up here.
                r.orthonormality_residual =
                    std::max(r.orthonormality_residual, std::abs(gram[k * K + l] - target));
            }
        }
        r.orthonormality_checked = true;
    } else {
        r.messages.push_back("orthonormality not applicable on " + domain.describe());
    }

    r.pass = std::isfinite(r.trace) && r.sup_statistic <= thresholds.max_sup_statistic &&
             (!r.orthonormality_checked ||
              r.orthonormality_residual < thresholds.orthonormality_tol);
    if (r.orthonormality_checked && r.orthonormality_residual >= thresholds.orthonormality_tol) {
        r.messages.push_back("orthonormality residual " + format_double(r.orthonormality_residual) +
                             " exceeds " + format_double(thresholds.orthonormality_tol));
    }
    if (r.sup_statistic > thresholds.max_sup_statistic) {
        r.messages.push_back("sup statistic above threshold");
    }
    return r;
}

ComponentFamily::ComponentFamily(ScalarCoefficient g_tilde, const QSpec& q, const Domain& domain)
    : g_tilde_(std::move(g_tilde)) {
    if (q.lambdas.size() != q.basis.size()) {
        throw ConfigError("qspec: lambdas and basis ids differ in length");
    }
    for (std::size_t k = 0; k < q.modes(); ++k) {
        if (!(q.lambdas[k] >= 0.0)) throw ConfigError("qspec: negative lambda");
        weights_.emplace_back(q.basis[k], domain);
        root_lambda_.push_back(std::sqrt(q.lambdas[k]));
    }
}

double ComponentFamily::component(std::size_t k, double t, double x, double y, double z) const {
    if (zero()) return 0.0;
    return g_tilde_(t, x, y, z) * weight(k, x);
}

double ComponentFamily::contract(const BackwardNoise& noise, std::size_t i, double t, double x,
                                 double y, double z) const {
    if (zero()) return 0.0;
    double w = 0.0;
    for (std::size_t k = 0; k < weights_.size(); ++k) w += weight(k, x) * noise.increment(k, i);
    return g_tilde_(t, x, y, z) * w;
}

double ComponentFamily::squared_norm(double t, double x, double y, double z) const {
    if (zero()) return 0.0;
    const double g = g_tilde_(t, x, y, z);
    double s = 0.0;
    for (std::size_t k = 0; k < weights_.size(); ++k) {
        const double w = weight(k, x);
        s += w * w;
    }
    return g * g * s;
}

ComponentFamily g_components(ScalarCoefficient g_tilde, double lip_y, double lip_z,
                             const QSpec& q, const Domain& domain,
                             const std::vector<double>& mesh) {
    ComponentFamily fam(std::move(g_tilde), q, domain);
    double s = 0.0;
    if (mesh.empty()) {
        for (std::size_t k = 0; k < q.modes(); ++k) {
            const double sup = fam.weights_[k].sup_abs();
            s += q.lambdas[k] * sup * sup;
        }
    } else {
        for (double x : mesh) {
            double v = 0.0;
            for (std::size_t k = 0; k < q.modes(); ++k) {
                const double w = fam.weight(k, x);
                v += w * w;
            }
            s = std::max(s, v);
        }
    }
    fam.sup_statistic = s;
    if (lip_z > 0.0) {
        // (a|dy| + b|dz|)^2 <= 2a^2|dy|^2 + 2b^2|dz|^2
        fam.l_bound = 2.0 * lip_y * lip_y * s;
        fam.m_bound = 2.0 * lip_z * lip_z * s;
    } else {
        fam.l_bound = lip_y * lip_y * s;
        fam.m_bound = 0.0;
    }
    return fam;
}

}  // namespace bdsde
