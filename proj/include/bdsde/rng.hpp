#pragma once

#include <array>
#include <cstdint>
#include <utility>

namespace bdsde {

/// Philox4x32-10 block function (Salmon et al., SC'11). Stateless: the output
/// is a pure function of (counter, key).
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key) noexcept;

/// SplitMix64 finalizer; used to fold structured identifiers into a stream id.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// Domain-separated stream identifier from a tag and up to three indices.
std::uint64_t derive_stream(std::uint64_t tag, std::uint64_t a, std::uint64_t b = 0,
                            std::uint64_t c = 0) noexcept;

/// Stream tags. Distinct consumers never share a (stream, index) cell.
namespace stream_tag {
inline constexpr std::uint64_t noise = 0x6e6f697365ULL;
inline constexpr std::uint64_t path = 0x70617468ULL;
inline constexpr std::uint64_t start = 0x7374617274ULL;
inline constexpr std::uint64_t probe = 0x70726f6265ULL;
}  // namespace stream_tag

/// Counter-based generator keyed by a 64-bit seed. Every draw is addressed by
/// (stream, index), so results do not depend on call order or threading.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed) noexcept;

    std::uint64_t seed() const noexcept { return seed_; }

    /// 128 random bits for cell (stream, index).
    std::array<std::uint64_t, 2> bits(std::uint64_t stream, std::uint64_t index) const noexcept;

    /// Two independent uniforms in the open interval (0, 1).
    std::pair<double, double> uniform_pair(std::uint64_t stream, std::uint64_t index) const noexcept;

    /// Two independent standard normals (Box-Muller).
    std::pair<double, double> normal_pair(std::uint64_t stream, std::uint64_t index) const noexcept;

    double normal(std::uint64_t stream, std::uint64_t index) const noexcept {
        return normal_pair(stream, index).first;
    }

    double uniform(std::uint64_t stream, std::uint64_t index) const noexcept {
        return uniform_pair(stream, index).first;
    }

private:
    std::uint64_t seed_;
    std::array<std::uint32_t, 2> key_;
};

/// Sequential view of one stream: successive normals in index order.
/// Cheap to construct; used for per-path Brownian increments.
class NormalSequence {
public:
    NormalSequence(const CounterRng& rng, std::uint64_t stream) noexcept
        : rng_(&rng), stream_(stream) {}

    double next() noexcept;

private:
    const CounterRng* rng_;
    std::uint64_t stream_;
    std::uint64_t block_ = 0;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

/// Sequential uniform pairs from one stream.
class UniformSequence {
public:
    UniformSequence(const CounterRng& rng, std::uint64_t stream) noexcept
        : rng_(&rng), stream_(stream) {}

    std::pair<double, double> next_pair() noexcept { return rng_->uniform_pair(stream_, block_++); }

private:
    const CounterRng* rng_;
    std::uint64_t stream_;
    std::uint64_t block_ = 0;
};

}  // namespace bdsde
