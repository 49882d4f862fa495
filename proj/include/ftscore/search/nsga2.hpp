#pragma once

// Two-objective NSGA-II machinery, maximizing both objectives.

#include <algorithm>
#include <array>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

namespace ftscore::search {

using Objectives = std::array<double, 2>;

/// a dominates b: no worse in both objectives and better in at least one.
inline bool dominates(const Objectives& a, const Objectives& b)
{
    return a[0] >= b[0] && a[1] >= b[1] && (a[0] > b[0] || a[1] > b[1]);
}

/// Pareto fronts as index lists, best first. Indices inside a front ascend.
inline std::vector<std::vector<std::size_t>> nondominated_sort(std::span<const Objectives> objs)
{
    const std::size_t n = objs.size();
    std::vector<std::vector<std::size_t>> dominated(n);
    std::vector<std::size_t> count(n, 0);
    std::vector<std::vector<std::size_t>> fronts;
    std::vector<std::size_t> current;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (dominates(objs[i], objs[j])) {
                dominated[i].push_back(j);
                ++count[j];
            } else if (dominates(objs[j], objs[i])) {
                dominated[j].push_back(i);
                ++count[i];
            }
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (count[i] == 0) {
            current.push_back(i);
        }
    }
    while (!current.empty()) {
        std::vector<std::size_t> next;
        for (std::size_t i : current) {
            for (std::size_t j : dominated[i]) {
                if (--count[j] == 0) {
                    next.push_back(j);
                }
            }
        }
        std::sort(next.begin(), next.end());
        fronts.push_back(std::move(current));
        current = std::move(next);
    }
    return fronts;
}

/// Crowding distance of each member of `front` (parallel to it). Per objective,
/// the extreme members get +infinity and interior members add the gap between
/// their neighbours divided by the objective's range on the front.
inline std::vector<double> crowding_distance(std::span<const Objectives> objs, std::span<const std::size_t> front)
{
    const std::size_t m = front.size();
    std::vector<double> dist(m, 0.0);
    if (m <= 2) {
        std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
        return dist;
    }
    std::vector<std::size_t> order(m);
    for (std::size_t k = 0; k < 2; ++k) {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return objs[front[a]][k] < objs[front[b]][k]; });
        const double lo = objs[front[order.front()]][k];
        const double hi = objs[front[order.back()]][k];
        dist[order.front()] = std::numeric_limits<double>::infinity();
        dist[order.back()] = std::numeric_limits<double>::infinity();
        if (!(hi > lo)) {
            continue;
        }
        for (std::size_t r = 1; r + 1 < m; ++r) {
            const double gap = objs[front[order[r + 1]]][k] - objs[front[order[r - 1]]][k];
            dist[order[r]] += gap / (hi - lo);
        }
    }
    return dist;
}

struct Ranking {
    /// Front index per individual.
    std::vector<std::size_t> rank;
    std::vector<double> crowding;
    std::vector<std::vector<std::size_t>> fronts;
};

inline Ranking rank_population(std::span<const Objectives> objs)
{
    Ranking r;
    r.rank.assign(objs.size(), 0);
    r.crowding.assign(objs.size(), 0.0);
    r.fronts = nondominated_sort(objs);
    for (std::size_t f = 0; f < r.fronts.size(); ++f) {
        const std::vector<double> d = crowding_distance(objs, r.fronts[f]);
        for (std::size_t i = 0; i < r.fronts[f].size(); ++i) {
            r.rank[r.fronts[f][i]] = f;
            r.crowding[r.fronts[f][i]] = d[i];
        }
    }
    return r;
}

/// Elitist survivor selection: whole fronts in order, the front that overflows
/// is cut by descending crowding distance (ties by index). Returns `n` indices.
inline std::vector<std::size_t> select_survivors(std::span<const Objectives> objs, std::size_t n)
{
    const Ranking r = rank_population(objs);
    std::vector<std::size_t> out;
    out.reserve(n);
    for (const auto& front : r.fronts) {
        if (out.size() + front.size() <= n) {
            out.insert(out.end(), front.begin(), front.end());
            continue;
        }
        std::vector<std::size_t> f = front;
        std::stable_sort(f.begin(), f.end(),
                         [&](std::size_t a, std::size_t b) { return r.crowding[a] > r.crowding[b]; });
        f.resize(n - out.size());
        out.insert(out.end(), f.begin(), f.end());
        break;
    }
    return out;
}

} // namespace ftscore::search
