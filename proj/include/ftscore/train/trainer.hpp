#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ftscore/error.hpp"
#include "ftscore/rank/loss.hpp"
#include "ftscore/scorer/scorer.hpp"
#include "ftscore/tensor/adam.hpp"
#include "ftscore/train/dataset.hpp"
#include "ftscore/util/parallel.hpp"

namespace ftscore::train {

using scorer::ScorerParams;

struct TrainConfig {
    std::size_t steps = 200;
    std::size_t sample_size = 16;
    rank::SoftRankConfig rank{};
    AdamConfig adam{};
    std::uint64_t seed = 0;
    std::size_t workers = util::default_workers();
};

struct StepRecord {
    std::size_t dataset = 0;
    double loss = 0.0;
};

struct TrainResult {
    std::vector<StepRecord> history;

    [[nodiscard]] std::vector<double> losses() const
    {
        std::vector<double> out;
        out.reserve(history.size());
        for (const StepRecord& r : history) {
            out.push_back(r.loss);
        }
        return out;
    }
};

/// Loss and parameter gradient for one sampled batch.
struct BatchGradient {
    double loss = 0.0;
    std::vector<Tensor> grads;
    std::vector<std::size_t> sample;
};

namespace detail {

inline std::vector<std::size_t> draw(const std::vector<std::size_t>& pool, std::size_t k, std::mt19937_64& rng)
{
    std::vector<std::size_t> out;
    out.reserve(k);
    std::sample(pool.begin(), pool.end(), std::back_inserter(out), static_cast<std::ptrdiff_t>(k), rng);
    std::shuffle(out.begin(), out.end(), rng);
    return out;
}

inline bool all_equal(const std::vector<double>& v)
{
    return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
}

} // namespace detail

/// Samples `sample_size` train entries without replacement (resampling once if
/// all their accuracies are equal), scores them on per-architecture tapes and
/// returns the loss with d(loss)/d(params). Per-architecture gradients are
/// combined serially in sample order, so the result does not depend on
/// `workers`.
inline BatchGradient batch_gradient(const BenchmarkDataset& ds, const ScorerParams& p, std::size_t sample_size,
                                    const rank::SoftRankConfig& rank_cfg, std::mt19937_64& rng,
                                    std::size_t workers)
{
    if (sample_size < 2) {
        throw UsageError("sample size must be at least 2");
    }
    if (sample_size > ds.train.size()) {
        throw UsageError("sample size " + std::to_string(sample_size) + " exceeds the train split of '" +
                         ds.space_id + "' (" + std::to_string(ds.train.size()) + " entries)");
    }
    BatchGradient out;
    out.sample = detail::draw(ds.train, sample_size, rng);
    std::vector<double> acc = ds.accuracies(out.sample);
    if (detail::all_equal(acc)) {
        out.sample = detail::draw(ds.train, sample_size, rng);
        acc = ds.accuracies(out.sample);
        if (detail::all_equal(acc)) {
            throw DegenerateError("dataset '" + ds.space_id +
                                  "': two consecutive batches had all-equal accuracies");
        }
    }
    const std::size_t n = out.sample.size();
    scorer::WeightBank bank(p.freq);
    std::vector<scorer::SplitGradient> per_arch(n);
    util::parallel_for(n, workers, [&](std::size_t i) {
        const DatasetEntry& e = ds.entries[out.sample[i]];
        try {
            per_arch[i] = scorer::score_with_split_grad(*e.graph, p, bank);
        } catch (const Error& err) {
            throw BatchError(i, err);
        }
    });
    std::vector<double> scores(n);
    for (std::size_t i = 0; i < n; ++i) {
        scores[i] = per_arch[i].score;
        if (!std::isfinite(scores[i])) {
            throw DegenerateError("dataset '" + ds.space_id + "': non-finite score in batch");
        }
    }
    const rank::LossResult lr = rank::spearman_soft_loss(scores, acc, rank_cfg);
    out.loss = lr.loss;
    const auto params = p.tensors();
    out.grads.emplace_back();
    for (std::size_t k = 1; k < params.size(); ++k) {
        out.grads.emplace_back(params[k]->shape());
    }
    std::map<spectral::KernelGeometry, Tensor> weight_grads;
    for (std::size_t i = 0; i < n; ++i) {
        const double c = lr.grad[i];
        for (std::size_t k = 1; k < out.grads.size(); ++k) {
            Tensor& acc_t = out.grads[k];
            const Tensor& g = per_arch[i].dense[k];
            for (std::size_t j = 0; j < acc_t.size(); ++j) {
                acc_t[j] += c * g[j];
            }
        }
        for (const auto& [geom, g] : per_arch[i].weights) {
            auto [it, fresh] = weight_grads.try_emplace(geom, g.shape());
            Tensor& acc_t = it->second;
            for (std::size_t j = 0; j < acc_t.size(); ++j) {
                acc_t[j] += c * g[j];
            }
        }
    }
    out.grads[0] = scorer::freq_gradient(bank, weight_grads);
    return out;
}

inline void apply_update(ScorerParams& p, const std::vector<Tensor>& grads, AdamState& state)
{
    const std::vector<Tensor*> params = p.tensors();
    const std::vector<std::string> names = p.names();
    adam_step(params, grads, state, names);
}

/// Optimizes `p` in place on one space; history has one entry per step.
inline TrainResult train_single(const BenchmarkDataset& ds, ScorerParams& p, const TrainConfig& cfg)
{
    std::mt19937_64 rng(cfg.seed);
    AdamState state{cfg.adam, {}, {}, 0};
    TrainResult result;
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        BatchGradient bg = batch_gradient(ds, p, cfg.sample_size, cfg.rank, rng, cfg.workers);
        apply_update(p, bg.grads, state);
        result.history.push_back({0, bg.loss});
    }
    return result;
}

struct MultiTrainConfig {
    /// One entry per dataset.
    std::vector<std::size_t> steps;
    std::vector<std::size_t> sample_sizes;
    /// Accumulate one batch gradient per dataset and take a single step per
    /// cycle instead of one step per dataset.
    bool accumulate = false;
    rank::SoftRankConfig rank{};
    AdamConfig adam{};
    std::uint64_t seed = 0;
    std::size_t workers = util::default_workers();
};

/// Round-robin over datasets in list order; a dataset drops out of the cycle
/// once its step budget is spent. History records one entry per batch.
inline TrainResult train_multi(std::span<const BenchmarkDataset> datasets, ScorerParams& p,
                               const MultiTrainConfig& cfg)
{
    const std::size_t d = datasets.size();
    if (d == 0) {
        throw UsageError("train_multi: no datasets");
    }
    if (cfg.steps.size() != d || cfg.sample_sizes.size() != d) {
        throw UsageError("train_multi: need one step budget and one sample size per dataset");
    }
    std::mt19937_64 rng(cfg.seed);
    AdamState state{cfg.adam, {}, {}, 0};
    TrainResult result;
    std::vector<std::size_t> left = cfg.steps;
    while (std::any_of(left.begin(), left.end(), [](std::size_t s) { return s > 0; })) {
        std::vector<Tensor> summed;
        for (std::size_t k = 0; k < d; ++k) {
            if (left[k] == 0) {
                continue;
            }
            --left[k];
            BatchGradient bg = batch_gradient(datasets[k], p, cfg.sample_sizes[k], cfg.rank, rng, cfg.workers);
            result.history.push_back({k, bg.loss});
            if (!cfg.accumulate) {
                apply_update(p, bg.grads, state);
                continue;
            }
            if (summed.empty()) {
                summed = std::move(bg.grads);
            } else {
                for (std::size_t t = 0; t < summed.size(); ++t) {
                    for (std::size_t j = 0; j < summed[t].size(); ++j) {
                        summed[t][j] += bg.grads[t][j];
                    }
                }
            }
        }
        if (cfg.accumulate && !summed.empty()) {
            apply_update(p, summed, state);
        }
    }
    return result;
}

} // namespace ftscore::train
