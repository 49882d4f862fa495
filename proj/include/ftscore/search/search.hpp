#pragma once

// NSGA-II over ResNet-like genomes maximizing (score, parameter count) under a
// parameter budget. Categorical genes (block type, kernel, stride) evolve by
// uniform crossover and per-gene mutation; ordered genes (channels, bottleneck,
// sublayers) by DE rand/1/bin on their index within the domain.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "ftscore/arch/genome.hpp"
#include "ftscore/error.hpp"
#include "ftscore/search/nsga2.hpp"
#include "ftscore/util/parallel.hpp"

namespace ftscore::search {

using arch::ArchGraph;
using arch::GenomeBlock;
using arch::ResNetGenome;

struct SearchConfig {
    std::size_t population = 512;
    std::size_t generations = 100;
    double ux_prob = 0.5;
    double mutation_rate = 0.8;
    double de_cr = 0.8;
    double de_f = 0.8;
    /// Chance that an offspring gains or loses one block.
    double depth_mutation = 0.1;
    std::size_t max_blocks = arch::GenomeDomain::max_blocks;
    std::size_t param_budget = 1'000'000;
    std::size_t param_floor = 900'000;
    std::size_t init_channel_lo = 48;
    std::size_t init_channel_hi = 320;
    std::size_t init_bottleneck_lo = 32;
    std::size_t init_bottleneck_hi = 80;
    std::size_t init_sublayer_lo = 1;
    std::size_t init_sublayer_hi = 2;
    /// Initial genomes have 1..init_max_blocks blocks.
    std::size_t init_max_blocks = 6;
    /// Random draws allowed per initial individual before giving up.
    std::size_t init_attempts = 1000;
    /// Decoding used for parameter counting and scoring.
    arch::GenomeDecodeOptions decode{3, 32, 10};
    std::uint64_t seed = 0;
    std::size_t workers = util::default_workers();
};

/// Throws UsageError if the configuration is inconsistent.
inline void validate_config(const SearchConfig& c)
{
    for (double p : {c.ux_prob, c.mutation_rate, c.de_cr, c.depth_mutation}) {
        if (!(p >= 0.0 && p <= 1.0)) {
            throw UsageError("search: probabilities must lie in [0,1]");
        }
    }
    if (!(c.param_floor < c.param_budget)) {
        throw UsageError("search: parameter floor must be below the budget");
    }
    if (c.population < 4) {
        throw UsageError("search: population must be at least 4");
    }
    if (c.max_blocks < 1 || c.max_blocks > arch::GenomeDomain::max_blocks) {
        throw UsageError("search: max_blocks must be in 1..18");
    }
    if (c.init_max_blocks < 1 || c.init_max_blocks > c.max_blocks) {
        throw UsageError("search: init_max_blocks must be in 1..max_blocks");
    }
    if (c.init_channel_lo > c.init_channel_hi || c.init_bottleneck_lo > c.init_bottleneck_hi ||
        c.init_sublayer_lo > c.init_sublayer_hi || c.init_sublayer_lo < 1) {
        throw UsageError("search: empty initialization range");
    }
}

struct Individual {
    ResNetGenome genome;
    /// Selection objectives: (score, params), both negated when infeasible.
    Objectives objectives{};
    double score = 0.0;
    std::size_t params = 0;
    bool feasible = false;
    std::size_t rank = 0;
    double crowding = 0.0;
};

// ---------------------------------------------------------------------------
// Gene domains as ordered indices

namespace genes {

using D = arch::GenomeDomain;

inline std::size_t channel_index(std::size_t c) { return c / D::channel_step - 1; }
inline std::size_t channel_at(std::size_t i) { return (i + 1) * D::channel_step; }
inline constexpr std::size_t channel_count = D::channel_max / D::channel_step;
inline constexpr std::size_t bottleneck_count = D::bottleneck_max / D::channel_step;
inline constexpr std::size_t sublayer_count = D::sublayer_max;

/// Ordered genes of a block as domain indices: channels, bottleneck, sublayers.
inline std::array<std::size_t, 3> ordered(const GenomeBlock& b)
{
    return {channel_index(b.channels), channel_index(b.bottleneck), b.sublayers - 1};
}

inline void set_ordered(GenomeBlock& b, const std::array<std::size_t, 3>& idx)
{
    b.channels = channel_at(idx[0]);
    b.bottleneck = channel_at(idx[1]);
    b.sublayers = idx[2] + 1;
}

inline constexpr std::array<std::size_t, 3> ordered_sizes{channel_count, bottleneck_count, sublayer_count};

} // namespace genes

inline GenomeBlock random_block(const SearchConfig& c, std::mt19937_64& rng)
{
    auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
    auto step = [&](std::size_t lo, std::size_t hi) {
        const std::size_t s = arch::GenomeDomain::channel_step;
        return s * pick((lo + s - 1) / s, hi / s);
    };
    GenomeBlock b;
    b.type = pick(0, 1) == 0 ? arch::BlockType::kxkx : arch::BlockType::k1kxk1;
    b.kernel = arch::GenomeDomain::kernels[pick(0, 2)];
    b.stride = arch::GenomeDomain::strides[pick(0, 1)];
    b.channels = step(c.init_channel_lo, c.init_channel_hi);
    b.bottleneck = step(c.init_bottleneck_lo, c.init_bottleneck_hi);
    b.sublayers = pick(c.init_sublayer_lo, c.init_sublayer_hi);
    return b;
}

inline ResNetGenome random_genome(const SearchConfig& c, std::mt19937_64& rng)
{
    ResNetGenome g;
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, c.init_max_blocks)(rng);
    for (std::size_t i = 0; i < n; ++i) {
        g.blocks.push_back(random_block(c, rng));
    }
    return g;
}

/// Child takes `a`'s length; each categorical gene comes from `b` with
/// probability `p` where `b` has that block.
inline ResNetGenome uniform_crossover(const ResNetGenome& a, const ResNetGenome& b, double p, std::mt19937_64& rng)
{
    std::bernoulli_distribution take(p);
    ResNetGenome child = a;
    for (std::size_t i = 0; i < child.blocks.size() && i < b.blocks.size(); ++i) {
        GenomeBlock& c = child.blocks[i];
        const GenomeBlock& o = b.blocks[i];
        if (take(rng)) {
            c.type = o.type;
        }
        if (take(rng)) {
            c.kernel = o.kernel;
        }
        if (take(rng)) {
            c.stride = o.stride;
        }
    }
    return child;
}

/// Each categorical gene is redrawn uniformly from its domain with probability `rate`.
inline void mutate_categorical(ResNetGenome& g, double rate, std::mt19937_64& rng)
{
    std::bernoulli_distribution hit(rate);
    auto pick = [&](std::size_t hi) { return std::uniform_int_distribution<std::size_t>(0, hi)(rng); };
    for (GenomeBlock& b : g.blocks) {
        if (hit(rng)) {
            b.type = pick(1) == 0 ? arch::BlockType::kxkx : arch::BlockType::k1kxk1;
        }
        if (hit(rng)) {
            b.kernel = arch::GenomeDomain::kernels[pick(2)];
        }
        if (hit(rng)) {
            b.stride = arch::GenomeDomain::strides[pick(1)];
        }
    }
}

/// DE rand/1/bin on ordered-gene indices. A donor lacking block i contributes
/// the target's value there. One gene of the genome is always taken from the
/// mutant; results are rounded and clamped to the domain.
inline void de_ordered(ResNetGenome& target, const ResNetGenome& r1, const ResNetGenome& r2, const ResNetGenome& r3,
                       double f, double cr, std::mt19937_64& rng)
{
    const std::size_t n = target.blocks.size() * 3;
    const std::size_t forced = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t i = 0; i < target.blocks.size(); ++i) {
        auto idx = genes::ordered(target.blocks[i]);
        const auto own = idx;
        auto at = [&](const ResNetGenome& g) { return i < g.blocks.size() ? genes::ordered(g.blocks[i]) : own; };
        const auto a = at(r1);
        const auto b = at(r2);
        const auto c = at(r3);
        for (std::size_t k = 0; k < 3; ++k) {
            const bool cross = unit(rng) < cr || i * 3 + k == forced;
            if (!cross) {
                continue;
            }
            const double v = static_cast<double>(a[k]) +
                             f * (static_cast<double>(b[k]) - static_cast<double>(c[k]));
            const double hi = static_cast<double>(genes::ordered_sizes[k] - 1);
            idx[k] = static_cast<std::size_t>(std::clamp(std::round(v), 0.0, hi));
        }
        genes::set_ordered(target.blocks[i], idx);
    }
}

/// With probability `p`, inserts a random block or deletes one (even odds),
/// keeping 1..max_blocks blocks.
inline void mutate_depth(ResNetGenome& g, const SearchConfig& c, double p, std::mt19937_64& rng)
{
    if (!std::bernoulli_distribution(p)(rng)) {
        return;
    }
    const bool grow = std::bernoulli_distribution(0.5)(rng);
    if (grow && g.blocks.size() < c.max_blocks) {
        const std::size_t at = std::uniform_int_distribution<std::size_t>(0, g.blocks.size())(rng);
        g.blocks.insert(g.blocks.begin() + static_cast<std::ptrdiff_t>(at), random_block(c, rng));
    } else if (!grow && g.blocks.size() > 1) {
        const std::size_t at = std::uniform_int_distribution<std::size_t>(0, g.blocks.size() - 1)(rng);
        g.blocks.erase(g.blocks.begin() + static_cast<std::ptrdiff_t>(at));
    }
}

/// One unevaluated offspring per population member. Parents for crossover are
/// paired at random; DE donors are three distinct members other than the target.
inline std::vector<Individual> make_offspring(const std::vector<Individual>& pop, const SearchConfig& c,
                                              std::mt19937_64& rng)
{
    const std::size_t n = pop.size();
    if (n < 4) {
        throw UsageError("make_offspring: population must have at least 4 members");
    }
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::vector<Individual> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t mate;
        do {
            mate = pick(rng);
        } while (mate == i);
        ResNetGenome child = uniform_crossover(pop[i].genome, pop[mate].genome, c.ux_prob, rng);
        mutate_categorical(child, c.mutation_rate, rng);
        std::size_t a;
        std::size_t b;
        std::size_t d;
        do {
            a = pick(rng);
        } while (a == i);
        do {
            b = pick(rng);
        } while (b == i || b == a);
        do {
            d = pick(rng);
        } while (d == i || d == a || d == b);
        de_ordered(child, pop[a].genome, pop[b].genome, pop[d].genome, c.de_f, c.de_cr, rng);
        mutate_depth(child, c, c.depth_mutation, rng);
        out[i].genome = std::move(child);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Evaluation and the search loop

using ScoreFn = std::function<double(const ArchGraph&)>;

/// Fills objectives; returns false when the genome cannot be decoded or scored.
inline bool evaluate(Individual& ind, const ScoreFn& score_fn, const SearchConfig& c)
{
    try {
        const ArchGraph g = arch::decode_genome(ind.genome, c.decode);
        ind.params = arch::count_params(g);
        ind.score = score_fn(g);
    } catch (const Error&) {
        return false;
    }
    if (!std::isfinite(ind.score)) {
        return false;
    }
    ind.feasible = ind.params <= c.param_budget && ind.genome.blocks.size() <= c.max_blocks;
    const double sign = ind.feasible ? 1.0 : -1.0;
    ind.objectives = {sign * ind.score, sign * static_cast<double>(ind.params)};
    return true;
}

/// Inside the returned window: feasible and at least the floor.
inline bool acceptable(const Individual& ind, const SearchConfig& c)
{
    return ind.feasible && ind.params >= c.param_floor && ind.params <= c.param_budget;
}

struct GenerationLog {
    std::size_t generation = 0;
    std::optional<double> best_score;
    std::optional<std::size_t> best_params;
    std::size_t front0_size = 0;
};

inline nlohmann::json to_json(const GenerationLog& l)
{
    return {{"gen", l.generation},
            {"best_score", l.best_score ? nlohmann::json(*l.best_score) : nlohmann::json()},
            {"best_params", l.best_params ? nlohmann::json(*l.best_params) : nlohmann::json()},
            {"front0_size", l.front0_size}};
}

struct SearchResult {
    Individual best;
    std::vector<Individual> population;
    std::vector<GenerationLog> history;
};

/// Thrown when the final population holds no acceptable individual.
class NoFeasibleError : public Error {
public:
    NoFeasibleError(const std::string& what, Individual best_infeasible)
        : Error(ErrorKind::numeric, what), best_(std::move(best_infeasible))
    {
    }
    [[nodiscard]] const Individual& candidate() const noexcept { return best_; }

private:
    Individual best_;
};

namespace detail {

/// Highest raw score (ties: fewer params, then earlier) among `pop` passing `keep`.
template <class Pred>
std::optional<std::size_t> best_index(const std::vector<Individual>& pop, Pred keep)
{
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < pop.size(); ++i) {
        if (!keep(pop[i])) {
            continue;
        }
        if (!best || pop[i].score > pop[*best].score ||
            (pop[i].score == pop[*best].score && pop[i].params < pop[*best].params)) {
            best = i;
        }
    }
    return best;
}

inline void assign_ranks(std::vector<Individual>& pop)
{
    std::vector<Objectives> objs;
    for (const Individual& ind : pop) {
        objs.push_back(ind.objectives);
    }
    const Ranking r = rank_population(objs);
    for (std::size_t i = 0; i < pop.size(); ++i) {
        pop[i].rank = r.rank[i];
        pop[i].crowding = r.crowding[i];
    }
}

inline GenerationLog log_generation(std::size_t gen, const std::vector<Individual>& pop, const SearchConfig& c)
{
    GenerationLog l;
    l.generation = gen;
    const auto best = best_index(pop, [&](const Individual& ind) { return acceptable(ind, c); });
    if (best) {
        l.best_score = pop[*best].score;
        l.best_params = pop[*best].params;
    }
    l.front0_size = static_cast<std::size_t>(
        std::count_if(pop.begin(), pop.end(), [](const Individual& ind) { return ind.rank == 0; }));
    return l;
}

} // namespace detail

/// Initial genomes are drawn from the init ranges; draws that fail to decode,
/// fail to score, or exceed the budget are discarded. Each generation breeds one
/// offspring per member, drops offspring that cannot be evaluated, and keeps the
/// best `population` of parents + offspring. Returns the highest-scoring final
/// member with params in [floor, budget].
inline SearchResult run_search(const ScoreFn& score_fn, const SearchConfig& c,
                               const std::function<void(const GenerationLog&)>& on_generation = {})
{
    validate_config(c);
    std::mt19937_64 rng(c.seed);
    std::vector<Individual> pop;
    std::size_t attempts = 0;
    // draw in rounds of `population` so evaluation can fan out
    while (pop.size() < c.population) {
        if (attempts >= c.init_attempts * c.population) {
            throw DegenerateError("search: could not draw " + std::to_string(c.population) +
                                  " valid initial genomes within the budget");
        }
        std::vector<Individual> round(c.population - pop.size());
        for (Individual& ind : round) {
            ind.genome = random_genome(c, rng);
        }
        attempts += round.size();
        std::vector<char> ok(round.size(), 0);
        util::parallel_for(round.size(), c.workers,
                           [&](std::size_t i) { ok[i] = evaluate(round[i], score_fn, c) ? 1 : 0; });
        for (std::size_t i = 0; i < round.size(); ++i) {
            if (ok[i] && round[i].feasible) {
                pop.push_back(std::move(round[i]));
            }
        }
    }
    detail::assign_ranks(pop);
    SearchResult result;
    auto record = [&](std::size_t gen) {
        result.history.push_back(detail::log_generation(gen, pop, c));
        if (on_generation) {
            on_generation(result.history.back());
        }
    };
    record(0);
    for (std::size_t gen = 1; gen <= c.generations; ++gen) {
        std::vector<Individual> kids = make_offspring(pop, c, rng);
        std::vector<char> ok(kids.size(), 0);
        util::parallel_for(kids.size(), c.workers,
                           [&](std::size_t i) { ok[i] = evaluate(kids[i], score_fn, c) ? 1 : 0; });
        std::vector<Individual> merged = std::move(pop);
        for (std::size_t i = 0; i < kids.size(); ++i) {
            if (ok[i]) {
                merged.push_back(std::move(kids[i]));
            }
        }
        std::vector<Objectives> objs;
        for (const Individual& ind : merged) {
            objs.push_back(ind.objectives);
        }
        pop.clear();
        for (std::size_t i : select_survivors(objs, c.population)) {
            pop.push_back(merged[i]);
        }
        detail::assign_ranks(pop);
        record(gen);
    }
    result.population = pop;
    const auto best = detail::best_index(pop, [&](const Individual& ind) { return acceptable(ind, c); });
    if (!best) {
        const auto fallback = detail::best_index(pop, [](const Individual&) { return true; });
        const Individual& cand = pop[*fallback];
        throw NoFeasibleError("search: no final architecture has params in [" + std::to_string(c.param_floor) + ", " +
                                  std::to_string(c.param_budget) + "]; best candidate " +
                                  arch::genome_to_string(cand.genome) + " has " + std::to_string(cand.params) +
                                  " params",
                              cand);
    }
    result.best = pop[*best];
    return result;
}

} // namespace ftscore::search
