#pragma once

// Soft ranks: Euclidean projection of v/eps onto the permutahedron of
// (1, ..., n). Sort z = v/eps descending into s; the projection is s - y where
// y is the non-increasing isotonic fit of s - (n, n-1, ..., 1), solved by
// pool-adjacent-violators. As eps -> 0 the result tends to ascending hard
// ranks (1 = smallest).

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "ftscore/error.hpp"

namespace ftscore::rank {

struct SoftRankConfig {
    double epsilon = 3.0;
};

/// Soft ranks plus what the vector-Jacobian product needs.
struct SoftRankResult {
    std::vector<double> ranks;
    /// Indices of v sorted by descending v (ties by index).
    std::vector<std::size_t> order;
    /// Block boundaries of the isotonic fit, in sorted positions: block b is
    /// [starts[b], starts[b+1]).
    std::vector<std::size_t> starts;
    double epsilon = 1.0;
};

namespace detail {

/// Non-increasing isotonic regression of `target` by PAV; returns the fit and
/// block starts (with a final sentinel equal to n).
inline std::vector<double> isotonic_decreasing(std::span<const double> target,
                                               std::vector<std::size_t>& starts)
{
    const std::size_t n = target.size();
    std::vector<double> sums;
    std::vector<std::size_t> sizes;
    starts.clear();
    for (std::size_t i = 0; i < n; ++i) {
        sums.push_back(target[i]);
        sizes.push_back(1);
        starts.push_back(i);
        // merge while the previous block mean is below the current one
        while (sums.size() > 1) {
            const std::size_t k = sums.size() - 1;
            if (sums[k - 1] * static_cast<double>(sizes[k]) >
                sums[k] * static_cast<double>(sizes[k - 1])) {
                break;
            }
            sums[k - 1] += sums[k];
            sizes[k - 1] += sizes[k];
            sums.pop_back();
            sizes.pop_back();
            starts.pop_back();
        }
    }
    std::vector<double> fit(n);
    for (std::size_t b = 0; b < sums.size(); ++b) {
        const double mean = sums[b] / static_cast<double>(sizes[b]);
        std::fill_n(fit.begin() + static_cast<std::ptrdiff_t>(starts[b]), sizes[b], mean);
    }
    starts.push_back(n);
    return fit;
}

} // namespace detail

inline SoftRankResult soft_rank_full(std::span<const double> v, const SoftRankConfig& cfg = {})
{
    if (v.empty()) {
        throw UsageError("soft_rank: empty input");
    }
    if (!(cfg.epsilon > 0.0)) {
        throw UsageError("soft_rank: epsilon must be positive");
    }
    const std::size_t n = v.size();
    SoftRankResult r;
    r.epsilon = cfg.epsilon;
    r.order.resize(n);
    std::iota(r.order.begin(), r.order.end(), std::size_t{0});
    std::stable_sort(r.order.begin(), r.order.end(),
                     [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
    std::vector<double> s(n);
    std::vector<double> target(n);
    for (std::size_t k = 0; k < n; ++k) {
        s[k] = v[r.order[k]] / cfg.epsilon;
        target[k] = s[k] - static_cast<double>(n - k);
    }
    const std::vector<double> fit = detail::isotonic_decreasing(target, r.starts);
    r.ranks.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
        r.ranks[r.order[k]] = s[k] - fit[k];
    }
    return r;
}

inline std::vector<double> soft_rank(std::span<const double> v, const SoftRankConfig& cfg = {})
{
    return soft_rank_full(v, cfg).ranks;
}

/// d(loss)/dv given d(loss)/d(ranks). Within each isotonic block the Jacobian
/// of the projection is identity minus the block average.
inline std::vector<double> soft_rank_vjp(const SoftRankResult& r, std::span<const double> grad)
{
    const std::size_t n = r.ranks.size();
    if (grad.size() != n) {
        throw UsageError("soft_rank_vjp: gradient length mismatch");
    }
    std::vector<double> sorted(n);
    for (std::size_t k = 0; k < n; ++k) {
        sorted[k] = grad[r.order[k]];
    }
    std::vector<double> out(n);
    for (std::size_t b = 0; b + 1 < r.starts.size(); ++b) {
        const std::size_t lo = r.starts[b];
        const std::size_t hi = r.starts[b + 1];
        double mean = 0.0;
        for (std::size_t k = lo; k < hi; ++k) {
            mean += sorted[k];
        }
        mean /= static_cast<double>(hi - lo);
        for (std::size_t k = lo; k < hi; ++k) {
            out[r.order[k]] = (sorted[k] - mean) / r.epsilon;
        }
    }
    return out;
}

} // namespace ftscore::rank
