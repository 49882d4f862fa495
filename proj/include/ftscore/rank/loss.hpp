#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "ftscore/error.hpp"
#include "ftscore/rank/correlation.hpp"
#include "ftscore/rank/soft_rank.hpp"

namespace ftscore::rank {

struct LossResult {
    double loss = 0.0;
    /// d(loss)/d(scores)
    std::vector<double> grad;
};

/// Centered-norm threshold below which the soft ranks count as constant.
inline constexpr double constant_rank_tolerance = 1e-12;

/// 1 - pearson(soft_rank(scores), average_ranks(accuracies)), with its gradient
/// with respect to the scores. If the soft ranks are all equal the correlation
/// is undefined; the loss is then 1 and the gradient points along the centered
/// target ranks.
inline LossResult spearman_soft_loss(std::span<const double> scores,
                                     std::span<const double> accuracies,
                                     const SoftRankConfig& cfg = {})
{
    const std::size_t n = scores.size();
    if (accuracies.size() != n || n < 2) {
        throw UsageError("spearman_soft_loss: need equal-length vectors of length >= 2");
    }
    if (std::all_of(accuracies.begin(), accuracies.end(),
                    [&](double a) { return a == accuracies[0]; })) {
        throw DegenerateError("spearman_soft_loss: all accuracies in the batch are equal");
    }
    const SoftRankResult sr = soft_rank_full(scores, cfg);
    const std::vector<double> target = average_ranks(accuracies);

    auto centered = [](const std::vector<double>& x) {
        double m = 0.0;
        for (double v : x) {
            m += v;
        }
        m /= static_cast<double>(x.size());
        std::vector<double> c(x.size());
        double norm = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            c[i] = x[i] - m;
            norm += c[i] * c[i];
        }
        return std::pair{c, std::sqrt(norm)};
    };
    const auto [ac, an] = centered(sr.ranks);
    const auto [bc, bn] = centered(target);

    LossResult out;
    std::vector<double> d_ranks(n);
    if (an < constant_rank_tolerance) {
        out.loss = 1.0;
        for (std::size_t i = 0; i < n; ++i) {
            d_ranks[i] = -bc[i] / bn;
        }
    } else {
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            dot += ac[i] * bc[i];
        }
        const double r = dot / (an * bn);
        out.loss = 1.0 - r;
        for (std::size_t i = 0; i < n; ++i) {
            d_ranks[i] = -(bc[i] / (an * bn) - r * ac[i] / (an * an));
        }
    }
    out.grad = soft_rank_vjp(sr, d_ranks);
    return out;
}

} // namespace ftscore::rank
