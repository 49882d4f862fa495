#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "ftscore/error.hpp"

namespace ftscore::rank {

/// Ascending ranks starting at 1; tied values share their average rank.
inline std::vector<double> average_ranks(std::span<const double> x)
{
    const std::size_t n = x.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> r(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && x[idx[j + 1]] == x[idx[i]]) {
            ++j;
        }
        const double avg = (static_cast<double>(i + j) / 2.0) + 1.0;
        for (std::size_t k = i; k <= j; ++k) {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    return r;
}

inline double pearson(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size() || a.size() < 2) {
        throw UsageError("pearson: need two equal-length vectors of length >= 2");
    }
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0.0;
    double saa = 0.0;
    double sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa <= 0.0 || sbb <= 0.0) {
        throw DegenerateError("correlation undefined: an input has zero variance");
    }
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

inline double spearman(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size() || a.size() < 2) {
        throw UsageError("spearman: need two equal-length vectors of length >= 2");
    }
    const std::vector<double> ra = average_ranks(a);
    const std::vector<double> rb = average_ranks(b);
    return pearson(ra, rb);
}

namespace detail {

// Merge sort that returns the number of inversions (strict a[i] > a[j], i < j).
inline std::size_t count_inversions(std::vector<double>& v, std::vector<double>& buf,
                                    std::size_t lo, std::size_t hi)
{
    if (hi - lo < 2) {
        return 0;
    }
    const std::size_t mid = lo + (hi - lo) / 2;
    std::size_t swaps = count_inversions(v, buf, lo, mid) + count_inversions(v, buf, mid, hi);
    std::size_t i = lo;
    std::size_t j = mid;
    std::size_t k = lo;
    while (i < mid && j < hi) {
        if (v[j] < v[i]) {
            swaps += mid - i;
            buf[k++] = v[j++];
        } else {
            buf[k++] = v[i++];
        }
    }
    while (i < mid) {
        buf[k++] = v[i++];
    }
    while (j < hi) {
        buf[k++] = v[j++];
    }
    std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo), buf.begin() + static_cast<std::ptrdiff_t>(hi),
              v.begin() + static_cast<std::ptrdiff_t>(lo));
    return swaps;
}

// Sum over runs of equal values of C(run, 2); `v` must be sorted.
inline std::size_t tied_pairs(const std::vector<double>& v)
{
    std::size_t total = 0;
    std::size_t run = 1;
    for (std::size_t i = 1; i <= v.size(); ++i) {
        if (i < v.size() && v[i] == v[i - 1]) {
            ++run;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    return total;
}

} // namespace detail

/// Kendall's tau-b in O(n log n) (Knight's algorithm).
inline double kendall_tau(std::span<const double> a, std::span<const double> b)
{
    const std::size_t n = a.size();
    if (b.size() != n || n < 2) {
        throw UsageError("kendall_tau: need two equal-length vectors of length >= 2");
    }
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) {
        return a[i] < a[j] || (a[i] == a[j] && b[i] < b[j]);
    });
    std::vector<double> sa(n);
    std::vector<double> sb(n);
    for (std::size_t k = 0; k < n; ++k) {
        sa[k] = a[idx[k]];
        sb[k] = b[idx[k]];
    }
    const std::size_t n0 = n * (n - 1) / 2;
    const std::size_t n1 = detail::tied_pairs(sa);
    // pairs tied in both a and b
    std::size_t n3 = 0;
    {
        std::size_t run = 1;
        for (std::size_t i = 1; i <= n; ++i) {
            if (i < n && sa[i] == sa[i - 1] && sb[i] == sb[i - 1]) {
                ++run;
            } else {
                n3 += run * (run - 1) / 2;
                run = 1;
            }
        }
    }
    std::vector<double> buf(n);
    const std::size_t swaps = detail::count_inversions(sb, buf, 0, n);
    const std::size_t n2 = detail::tied_pairs(sb);
    const double denom =
        std::sqrt(static_cast<double>(n0 - n1)) * std::sqrt(static_cast<double>(n0 - n2));
    if (denom == 0.0) {
        throw DegenerateError("kendall_tau undefined: an input is constant");
    }
    const double numer = static_cast<double>(n0) - static_cast<double>(n1) -
                         static_cast<double>(n2) + static_cast<double>(n3) -
                         2.0 * static_cast<double>(swaps);
    return std::clamp(numer / denom, -1.0, 1.0);
}

} // namespace ftscore::rank
