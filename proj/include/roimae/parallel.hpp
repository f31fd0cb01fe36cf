#ifndef ROIMAE_PARALLEL_HPP
#define ROIMAE_PARALLEL_HPP

#include <vector>

#include "roimae/volume.hpp"

// Deterministic floating-point reductions. Values are accumulated per fixed
// block (serially, in index order) and block sums are combined by a fixed
// pairwise tree, so the result is bit-identical for any thread count.

namespace roimae {

inline constexpr index_t kSumBlock = 4096;

inline double pairwise_combine(std::vector<double>& v) {
    if (v.empty()) return 0.0;
    std::size_t len = v.size();
    while (len > 1) {
        const std::size_t half = len / 2;
        for (std::size_t i = 0; i < half; ++i) {
            v[i] = v[2 * i] + v[2 * i + 1];
        }
        if (len % 2 == 1) {
            v[half] = v[len - 1];
            len = half + 1;
        } else {
            len = half;
        }
    }
    return v[0];
}

// Sum of f(i) for i in [0,n).
template <class F>
double deterministic_sum(index_t n, F&& f) {
    if (n <= 0) return 0.0;
    const index_t nblocks = (n + kSumBlock - 1) / kSumBlock;
    std::vector<double> partial(static_cast<std::size_t>(nblocks), 0.0);

#pragma omp parallel for schedule(static)
    for (index_t b = 0; b < nblocks; ++b) {
        const index_t lo = b * kSumBlock;
        const index_t hi = lo + kSumBlock < n ? lo + kSumBlock : n;
        double s = 0.0;
        for (index_t i = lo; i < hi; ++i) s += f(i);
        partial[static_cast<std::size_t>(b)] = s;
    }
    return pairwise_combine(partial);
}

// Serial twin with the identical block/tree structure; kept as the
// reference the parallel form is tested against.
template <class F>
double deterministic_sum_serial(index_t n, F&& f) {
    if (n <= 0) return 0.0;
    const index_t nblocks = (n + kSumBlock - 1) / kSumBlock;
    std::vector<double> partial(static_cast<std::size_t>(nblocks), 0.0);
    for (index_t b = 0; b < nblocks; ++b) {
        const index_t lo = b * kSumBlock;
        const index_t hi = lo + kSumBlock < n ? lo + kSumBlock : n;
        double s = 0.0;
        for (index_t i = lo; i < hi; ++i) s += f(i);
        partial[static_cast<std::size_t>(b)] = s;
    }
    return pairwise_combine(partial);
}

} // namespace roimae

#endif
