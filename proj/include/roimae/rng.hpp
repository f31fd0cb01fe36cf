#ifndef ROIMAE_RNG_HPP
#define ROIMAE_RNG_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <string_view>
#include <utility>

// Counter-based random numbers (Philox 4x64, 10 rounds). Every consumer in
// the project derives a keyed stream from (seed, domain, stream) and draws
// by counter, so results do not depend on evaluation order or thread count.

namespace roimae {

namespace detail {

inline void mulhilo64(std::uint64_t a, std::uint64_t b,
                      std::uint64_t& hi, std::uint64_t& lo) {
    unsigned __int128 p = static_cast<unsigned __int128>(a) * b;
    hi = static_cast<std::uint64_t>(p >> 64);
    lo = static_cast<std::uint64_t>(p);
}

} // namespace detail

struct PhiloxBlock {
    std::array<std::uint64_t, 4> w;
};

// One Philox4x64-10 block. Reference constants from the ACM SC'11
// "Parallel random numbers: as easy as 1, 2, 3" generator family.
inline PhiloxBlock philox4x64(std::array<std::uint64_t, 4> ctr,
                              std::array<std::uint64_t, 2> key) {
    constexpr std::uint64_t M0 = 0xD2E7470EE14C6C93ull;
    constexpr std::uint64_t M1 = 0xCA5A826395121157ull;
    constexpr std::uint64_t W0 = 0x9E3779B97F4A7C15ull;
    constexpr std::uint64_t W1 = 0xBB67AE8584CAA73Bull;

    for (int round = 0; round < 10; ++round) {
        if (round > 0) {
            key[0] += W0;
            key[1] += W1;
        }
        std::uint64_t hi0, lo0, hi1, lo1;
        detail::mulhilo64(M0, ctr[0], hi0, lo0);
        detail::mulhilo64(M1, ctr[2], hi1, lo1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    }
    return PhiloxBlock{ctr};
}

// FNV-1a, used to turn strategy fingerprints and domain tags into key words.
inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

// Sequential view of one keyed stream. Counter layout: word 0 is the block
// index, word 1 the stream id, words 2-3 are fixed zero.
class CounterRng {
public:
    CounterRng(std::uint64_t seed, std::uint64_t domain, std::uint64_t stream = 0)
        : key_{seed, domain}, stream_(stream) {}

    CounterRng(std::uint64_t seed, std::string_view domain, std::uint64_t stream = 0)
        : CounterRng(seed, fnv1a64(domain), stream) {}

    std::uint64_t next_u64() {
        if (pos_ == 4) {
            block_ = philox4x64({next_block_++, stream_, 0, 0}, key_);
            pos_ = 0;
        }
        return block_.w[pos_++];
    }

    // Uniform in [0,1) with 53 random bits.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform in [0,n), unbiased (rejection on the wraparound residue).
    std::uint64_t next_below(std::uint64_t n) {
        const std::uint64_t reject_below = (-n) % n; // 2^64 mod n
        for (;;) {
            std::uint64_t r = next_u64();
            if (r >= reject_below) return r % n;
        }
    }

    // Standard normal pair, Box-Muller. u1 is shifted into (0,1].
    std::pair<double, double> next_normal_pair() {
        double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
        double u2 = next_double();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        return {r * std::cos(a), r * std::sin(a)};
    }

private:
    std::array<std::uint64_t, 2> key_;
    std::uint64_t stream_ = 0;
    std::uint64_t next_block_ = 0;
    PhiloxBlock block_{};
    int pos_ = 4;
};

} // namespace roimae

#endif
