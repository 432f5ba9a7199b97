#pragma once

#include <cmath>
#include <cstdint>

#include "smlb/common.hpp"

namespace smlb {

/// splitmix64 step; used both as a generator seeder and as a hash mixer.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Counter-based xoshiro256++ stream with a hand-rolled polar-method normal
/// generator. Every Monte-Carlo consumer derives one stream per (seed, index)
/// pair, so batches are reproducible under any worker count.
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t index = 0) {
        std::uint64_t sm = seed ^ (0x6a09e667f3bcc909ULL + index * 0x1d8e4e27c47d124fULL);
        for (auto& w : s_) w = splitmix64(sm);
        // avoid the all-zero state
        if ((s_[0] | s_[1] | s_[2] | s_[3]) == 0) s_[0] = 1;
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    /// Uniform on (0,1); never returns exactly 0.
    double uniform() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Standard normal via Marsaglia's polar method, caching the spare.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * f;
        has_spare_ = true;
        return u * f;
    }

    void fill_normal(Vec& out) {
        for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = normal();
    }

    Vec normal_vec(Eigen::Index n) {
        Vec out(n);
        fill_normal(out);
        return out;
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t s_[4];
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace smlb
