#include "bdsde/domain.hpp"

#include <cmath>
#include <limits>

#include "bdsde/common.hpp"

namespace bdsde {

Domain::Domain(Kind kind, std::vector<double> lower, std::vector<double> upper)
    : kind_(kind), lower_(std::move(lower)), upper_(std::move(upper)) {}

Domain Domain::torus(double length) {
    if (!(length > 0.0) || !std::isfinite(length)) {
        throw ConfigError("domain: torus length must be positive");
    }
    return Domain(Kind::torus, {0.0}, {length});
}

Domain Domain::interval(double a, double b) {
    if (!(b > a) || !std::isfinite(a) || !std::isfinite(b)) {
        throw ConfigError("domain: interval needs a < b");
    }
    return Domain(Kind::interval, {a}, {b});
}

Domain Domain::box(std::vector<double> lower, std::vector<double> upper) {
    if (lower.empty() || lower.size() != upper.size()) {
        throw ConfigError("domain: box bounds must have equal, positive dimension");
    }
    for (std::size_t i = 0; i < lower.size(); ++i) {
        if (!(upper[i] > lower[i])) throw ConfigError("domain: box has non-positive volume");
    }
    return Domain(Kind::box, std::move(lower), std::move(upper));
}

Domain Domain::line() {
    return Domain(Kind::line, {-std::numeric_limits<double>::infinity()},
                  {std::numeric_limits<double>::infinity()});
}

double Domain::length() const {
    if (dim() != 1 || !bounded()) throw ConfigError("domain: length needs a bounded 1-d domain");
    return upper_[0] - lower_[0];
}

double Domain::volume() const {
    if (!bounded()) return std::numeric_limits<double>::infinity();
    double v = 1.0;
    for (std::size_t i = 0; i < dim(); ++i) v *= upper_[i] - lower_[i];
    return v;
}

bool Domain::contains(std::span<const double> x) const noexcept {
    if (kind_ == Kind::torus || kind_ == Kind::line) return true;
    for (std::size_t i = 0; i < x.size() && i < dim(); ++i) {
        if (!(x[i] >= lower_[i] && x[i] <= upper_[i])) return false;
    }
    return true;
}

double Domain::wrap(double x) const noexcept {
    if (kind_ != Kind::torus) return x;
    const double len = upper_[0];
    double y = std::fmod(x, len);
    if (y < 0.0) y += len;
    if (y >= len) y -= len;
    return y;
}

void Domain::wrap(std::span<double> x) const noexcept {
    if (kind_ != Kind::torus) return;
    for (double& v : x) v = wrap(v);
}

std::string Domain::describe() const {
    switch (kind_) {
        case Kind::torus: return "torus:" + format_double(upper_[0]);
        case Kind::interval:
            return "interval:" + format_double(lower_[0]) + "," + format_double(upper_[0]);
        case Kind::line: return "line";
        case Kind::box: {
            std::string s = "box";
            for (std::size_t i = 0; i < dim(); ++i) {
                s += (i == 0 ? ":" : ";") + format_double(lower_[i]) + "," + format_double(upper_[i]);
            }
            return s;
        }
    }
    return "unknown";
}

std::vector<double> space_mesh(const Domain& domain, std::size_t n) {
    if (n == 0) throw ConfigError("space mesh: need at least one node");
    std::vector<double> x(n);
    switch (domain.kind()) {
        case Domain::Kind::torus: {
            const double h = domain.length() / static_cast<double>(n);
            for (std::size_t j = 0; j < n; ++j) x[j] = static_cast<double>(j) * h;
            break;
        }
        case Domain::Kind::interval: {
            const double h = domain.length() / static_cast<double>(n + 1);
            for (std::size_t j = 0; j < n; ++j) x[j] = domain.lower() + static_cast<double>(j + 1) * h;
            break;
        }
        default:
            throw UnsupportedError("space mesh: only torus and interval domains have a mesh");
    }
    return x;
}

std::vector<double> space_weights(const Domain& domain, std::size_t n) {
    if (n == 0) throw ConfigError("space mesh: need at least one node");
    switch (domain.kind()) {
        case Domain::Kind::torus:
            return std::vector<double>(n, domain.length() / static_cast<double>(n));
        case Domain::Kind::interval:
            return std::vector<double>(n, domain.length() / static_cast<double>(n + 1));
        default:
            throw UnsupportedError("space mesh: only torus and interval domains have a mesh");
    }
}

}  // namespace bdsde
