#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "ftscore/tensor/tape.hpp"

namespace ftscore {

/// Builds a scalar objective on `tape` from leaves bound to `params`.
using TapeFn = std::function<Var(Tape& tape, std::span<const Var> params)>;

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t coordinates = 0;
};

/// Compares reverse-mode gradients with central differences. Error per coordinate is
/// |analytic - numeric| / max(1, |analytic|). With `max_coordinates` > 0 only that many
/// coordinates (sampled with `seed`) are perturbed.
inline GradCheckResult finite_diff_check(const TapeFn& f, const std::vector<Tensor>& params,
                                         double h, std::size_t max_coordinates = 0,
                                         std::uint64_t seed = 0)
{
    auto evaluate_at = [&](const std::vector<Tensor>& values) {
        Tape tape;
        std::vector<Var> leaves;
        for (const Tensor& t : values) {
            leaves.push_back(tape.leaf(t));
        }
        return f(tape, leaves).value().item();
    };

    Tape tape;
    std::vector<Var> leaves;
    for (const Tensor& t : params) {
        leaves.push_back(tape.leaf(t));
    }
    const Var out = f(tape, leaves);
    const Gradients grads = tape.backward(out);

    std::vector<std::pair<std::size_t, std::size_t>> coords;
    for (std::size_t p = 0; p < params.size(); ++p) {
        for (std::size_t j = 0; j < params[p].size(); ++j) {
            coords.emplace_back(p, j);
        }
    }
    if (max_coordinates > 0 && coords.size() > max_coordinates) {
        std::mt19937_64 rng(seed);
        std::shuffle(coords.begin(), coords.end(), rng);
        coords.resize(max_coordinates);
    }

    GradCheckResult result;
    std::vector<Tensor> work = params;
    for (const auto& [p, j] : coords) {
        const double base = work[p][j];
        work[p][j] = base + h;
        const double up = evaluate_at(work);
        work[p][j] = base - h;
        const double down = evaluate_at(work);
        work[p][j] = base;
        const double numeric = (up - down) / (2.0 * h);
        const double analytic = grads.of(leaves[p])[j];
        const double err = std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
        result.max_rel_error = std::max(result.max_rel_error, err);
        ++result.coordinates;
    }
    return result;
}

} // namespace ftscore
