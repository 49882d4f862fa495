#pragma once

// Synthetic benchmark spaces: random small residual genomes whose "accuracy"
// is an increasing function of log(params) plus Gaussian noise.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ftscore/arch/genome.hpp"
#include "ftscore/train/dataset.hpp"

namespace ftscore::train {

struct SyntheticOptions {
    std::size_t count = 200;
    std::size_t max_blocks = 3;
    /// Channel widths are 8 * [1, max_channel_steps].
    std::size_t max_channel_steps = 4;
    /// Stride-2 blocks allowed per genome (keeps small inputs from collapsing).
    std::size_t max_stride2 = 2;
    /// Accuracy range before noise.
    double acc_lo = 0.2;
    double acc_hi = 0.8;
    /// Noise sd as a fraction of (acc_hi - acc_lo).
    double noise = 0.05;
    /// +1: accuracy increases with params; -1: decreases.
    int direction = 1;
    double train_fraction = 0.5;
    std::string space_id = "synthetic";
    arch::GenomeDecodeOptions decode{3, 8, 0};
};

inline arch::ResNetGenome random_small_genome(std::mt19937_64& rng, const SyntheticOptions& o)
{
    auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
    arch::ResNetGenome g;
    const std::size_t n = pick(1, o.max_blocks);
    std::size_t stride2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
        arch::GenomeBlock b;
        b.type = pick(0, 1) == 0 ? arch::BlockType::kxkx : arch::BlockType::k1kxk1;
        b.kernel = 3 + 2 * pick(0, 2);
        b.stride = stride2 < o.max_stride2 ? pick(1, 2) : 1;
        stride2 += b.stride == 2 ? 1 : 0;
        b.channels = 8 * pick(1, o.max_channel_steps);
        b.bottleneck = 8 * pick(1, 2);
        b.sublayers = pick(1, 2);
        g.blocks.push_back(b);
    }
    return g;
}

/// Entry ids are genome strings; the split is drawn from the same seed.
inline BenchmarkDataset synthetic_dataset(const SyntheticOptions& o, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    BenchmarkDataset ds;
    ds.space_id = o.space_id;
    std::vector<double> logp;
    for (std::size_t i = 0; i < o.count; ++i) {
        const arch::ResNetGenome g = random_small_genome(rng, o);
        auto graph = std::make_shared<const arch::ArchGraph>(arch::decode_genome(g, o.decode));
        logp.push_back(std::log(static_cast<double>(arch::count_params(*graph))));
        ds.entries.push_back({arch::genome_to_string(g), std::move(graph), 0.0});
    }
    const auto [lo_it, hi_it] = std::minmax_element(logp.begin(), logp.end());
    const double lo = *lo_it;
    const double span = *hi_it > lo ? *hi_it - lo : 1.0;
    std::normal_distribution<double> noise(0.0, o.noise * (o.acc_hi - o.acc_lo));
    for (std::size_t i = 0; i < o.count; ++i) {
        double t = (logp[i] - lo) / span;
        if (o.direction < 0) {
            t = 1.0 - t;
        }
        const double acc = o.acc_lo + (o.acc_hi - o.acc_lo) * t + noise(rng);
        ds.entries[i].accuracy = std::clamp(acc, 0.0, 1.0);
    }
    std::vector<std::size_t> idx = ds.all_indices();
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::llround(o.train_fraction * static_cast<double>(o.count)));
    ds.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    ds.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
    std::sort(ds.train.begin(), ds.train.end());
    std::sort(ds.test.begin(), ds.test.end());
    validate_dataset(ds);
    return ds;
}

/// JSON-lines form readable by load_dataset. Entry ids must be genome strings.
inline std::string dataset_to_jsonl(const BenchmarkDataset& ds)
{
    std::vector<std::string> split(ds.entries.size(), "train");
    for (std::size_t i : ds.test) {
        split[i] = "test";
    }
    std::string out;
    for (std::size_t i = 0; i < ds.entries.size(); ++i) {
        const DatasetEntry& e = ds.entries[i];
        nlohmann::json j{{"arch", e.id}, {"accuracy", e.accuracy},
                         {"split", split[i]}, {"space", ds.space_id}};
        out += j.dump() + "\n";
    }
    return out;
}

} // namespace ftscore::train
