#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace denserec {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace detail

// Counter-based stream: draw i is a pure function of (seed, stream_id, i),
// so identical (seed, stream_id) replays identically on any platform. All
// distributions below are hand-rolled on top of the raw 64-bit output; the
// std:: distributions are implementation-defined and would break replay.
class RngStream {
public:
    RngStream() : RngStream(0, 0) {}

    RngStream(std::uint64_t seed, std::uint64_t stream_id)
        : seed_(seed), stream_id_(stream_id),
          key_(detail::splitmix64(seed ^ detail::splitmix64(stream_id ^ 0x5851f42d4c957f2dull))) {}

    static std::uint64_t stream_id_for(std::string_view name) { return detail::fnv1a64(name); }

    static RngStream named(std::uint64_t seed, std::string_view name) {
        return RngStream(seed, stream_id_for(name));
    }

    // Child stream k; independent of draws made on this stream so far.
    RngStream substream(std::uint64_t k) const { return RngStream(key_, k); }

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_id_; }
    std::uint64_t counter() const { return counter_; }

    std::uint64_t next_u64() { return detail::splitmix64(key_ + 0x9e3779b97f4a7c15ull * ++counter_); }

    // Uniform in [0, 1), 53-bit mantissa.
    double next_uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    bool next_bernoulli(double p) { return next_uniform() < p; }

    // Unbiased integer in [0, n) via 128-bit multiply with rejection.
    int next_int(int n) {
        const std::uint64_t bound = static_cast<std::uint64_t>(n);
        unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * bound;
        std::uint64_t lo = static_cast<std::uint64_t>(m);
        if (lo < bound) {
            const std::uint64_t threshold = (0ull - bound) % bound;
            while (lo < threshold) {
                m = static_cast<unsigned __int128>(next_u64()) * bound;
                lo = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<int>(m >> 64);
    }

    // Box-Muller without a cached spare: two fresh uniforms per draw.
    double next_normal() {
        const double u1 = 1.0 - next_uniform();
        const double u2 = next_uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Normal truncated to +/- 2 sigma, rejection sampled.
    double next_truncated_normal(double stddev) {
        while (true) {
            const double z = next_normal();
            if (z >= -2.0 && z <= 2.0) return z * stddev;
        }
    }

    // Marsaglia-Tsang; alpha < 1 boosted through gamma(alpha + 1) * u^(1/alpha).
    double next_gamma(double alpha) {
        if (alpha < 1.0) {
            const double u = 1.0 - next_uniform();
            return next_gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
        }
        const double d = alpha - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        while (true) {
            const double x = next_normal();
            const double t = 1.0 + c * x;
            if (t <= 0.0) continue;
            const double v = t * t * t;
            const double u = 1.0 - next_uniform();
            if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
        }
    }

private:
    std::uint64_t seed_ = 0;
    std::uint64_t stream_id_ = 0;
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

}  // namespace denserec
