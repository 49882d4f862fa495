#pragma once

// DE rand/1/bin over a box, maximizing. Trial vectors are generated serially
// from one RNG stream; objective evaluations fan out and land in per-index
// slots, so results do not depend on the worker count.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "ftscore/error.hpp"
#include "ftscore/util/parallel.hpp"

namespace ftscore::train {

struct DEConfig {
    std::size_t population = 32;
    std::size_t generations = 100;
    double f = 0.8;
    double cr = 0.9;
    std::uint64_t seed = 0;
    std::size_t workers = util::default_workers();
};

struct DEResult {
    std::vector<double> best;
    double best_value = 0.0;
    std::size_t evaluations = 0;
};

using Objective = std::function<double(const std::vector<double>&)>;

/// `seeds` replace the first members of the initial population (clamped to the
/// box); the rest is uniform in [lo, hi]^dim.
inline DEResult differential_evolution(const Objective& f, std::size_t dim, double lo, double hi,
                                       const DEConfig& cfg, const std::vector<std::vector<double>>& seeds = {})
{
    if (dim == 0) {
        throw UsageError("differential_evolution: dimension must be positive");
    }
    if (cfg.population < 4) {
        throw UsageError("differential_evolution: population must be at least 4");
    }
    if (!(lo < hi)) {
        throw UsageError("differential_evolution: empty box");
    }
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const std::size_t np = cfg.population;
    auto clamp = [&](double v) { return std::clamp(v, lo, hi); };

    std::vector<std::vector<double>> pop(np, std::vector<double>(dim));
    for (std::size_t i = 0; i < np; ++i) {
        if (i < seeds.size()) {
            if (seeds[i].size() != dim) {
                throw UsageError("differential_evolution: seed vector has the wrong dimension");
            }
            std::transform(seeds[i].begin(), seeds[i].end(), pop[i].begin(), clamp);
        } else {
            for (double& v : pop[i]) {
                v = lo + (hi - lo) * unit(rng);
            }
        }
    }
    DEResult result;
    std::vector<double> fitness(np);
    util::parallel_for(np, cfg.workers, [&](std::size_t i) { fitness[i] = f(pop[i]); });
    result.evaluations += np;

    std::uniform_int_distribution<std::size_t> pick(0, np - 1);
    std::uniform_int_distribution<std::size_t> pick_dim(0, dim - 1);
    std::vector<std::vector<double>> trials(np, std::vector<double>(dim));
    std::vector<double> trial_fitness(np);
    for (std::size_t gen = 0; gen < cfg.generations; ++gen) {
        for (std::size_t i = 0; i < np; ++i) {
            std::size_t a;
            std::size_t b;
            std::size_t c;
            do {
                a = pick(rng);
            } while (a == i);
            do {
                b = pick(rng);
            } while (b == i || b == a);
            do {
                c = pick(rng);
            } while (c == i || c == a || c == b);
            const std::size_t forced = pick_dim(rng);
            for (std::size_t k = 0; k < dim; ++k) {
                const bool cross = unit(rng) < cfg.cr || k == forced;
                trials[i][k] = cross ? clamp(pop[a][k] + cfg.f * (pop[b][k] - pop[c][k])) : pop[i][k];
            }
        }
        util::parallel_for(np, cfg.workers, [&](std::size_t i) { trial_fitness[i] = f(trials[i]); });
        result.evaluations += np;
        for (std::size_t i = 0; i < np; ++i) {
            if (trial_fitness[i] >= fitness[i]) {
                pop[i] = trials[i];
                fitness[i] = trial_fitness[i];
            }
        }
    }
    const std::size_t best = static_cast<std::size_t>(
        std::max_element(fitness.begin(), fitness.end()) - fitness.begin());
    result.best = pop[best];
    result.best_value = fitness[best];
    return result;
}

} // namespace ftscore::train
