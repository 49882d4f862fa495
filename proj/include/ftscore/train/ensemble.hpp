#pragma once

// f(x) = sum_i w_i * sigmoid((s_i(x) - mu_i) / sigma_i)
//
// Spec file (JSON):
//   {"members": [{"checkpoint": <path relative to the spec file>, "sha256": <hex>,
//                 "weight": w, "mu": mu, "sigma": sigma}, ...]}

#include <cmath>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ftscore/error.hpp"
#include "ftscore/rank/correlation.hpp"
#include "ftscore/scorer/scorer.hpp"
#include "ftscore/train/dataset.hpp"
#include "ftscore/train/de.hpp"
#include "ftscore/util/digest.hpp"
#include "ftscore/util/parallel.hpp"

namespace ftscore::train {

using scorer::ScorerParams;

/// Weights stay strictly inside (0, 1).
inline constexpr double weight_lower = 1e-8;
inline constexpr double weight_upper = 1.0 - 1e-8;

struct EnsembleMember {
    ScorerParams params;
    double weight = 1.0;
    double mu = 0.0;
    double sigma = 1.0;
    /// Source checkpoint, if loaded from or saved to disk.
    std::string checkpoint;
};

struct EnsembleSpec {
    std::vector<EnsembleMember> members;
};

inline double sigmoid(double x)
{
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

/// Combined score from per-member raw scores.
inline double combine(std::span<const double> scores, std::span<const double> weights,
                      std::span<const double> mus, std::span<const double> sigmas)
{
    double f = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        f += weights[i] * sigmoid((scores[i] - mus[i]) / sigmas[i]);
    }
    return f;
}

struct ScoreStats {
    double mu = 0.0;
    double sigma = 0.0;
};

/// Mean and population standard deviation; sigma = 0 is a degenerate scorer.
inline ScoreStats score_stats(std::span<const double> scores, const std::string& label = "scorer")
{
    if (scores.size() < 2) {
        throw UsageError(label + ": need at least two architectures for score statistics");
    }
    double mu = 0.0;
    for (double s : scores) {
        mu += s;
    }
    mu /= static_cast<double>(scores.size());
    double var = 0.0;
    for (double s : scores) {
        var += (s - mu) * (s - mu);
    }
    const double sigma = std::sqrt(var / static_cast<double>(scores.size()));
    if (!(sigma > 0.0) || !std::isfinite(sigma)) {
        throw DegenerateError(label + ": scores have zero spread over its space");
    }
    return {mu, sigma};
}

/// Inputs of the weight search: raw scores[dataset][member][entry] and the
/// matching accuracies[dataset][entry].
struct EnsembleFitData {
    std::vector<std::vector<std::vector<double>>> scores;
    std::vector<std::vector<double>> accuracies;
    std::vector<double> mus;
    std::vector<double> sigmas;
};

/// Mean Spearman of the combined score over datasets. A dataset on which the
/// combined score is constant contributes 0.
inline double mean_spearman(const EnsembleFitData& data, std::span<const double> weights)
{
    const std::size_t m = data.mus.size();
    double total = 0.0;
    for (std::size_t d = 0; d < data.scores.size(); ++d) {
        const std::size_t n = data.accuracies[d].size();
        std::vector<double> combined(n);
        std::vector<double> row(m);
        for (std::size_t e = 0; e < n; ++e) {
            for (std::size_t i = 0; i < m; ++i) {
                row[i] = data.scores[d][i][e];
            }
            combined[e] = combine(row, weights, data.mus, data.sigmas);
        }
        try {
            total += rank::spearman(combined, data.accuracies[d]);
        } catch (const DegenerateError&) {
        }
    }
    return total / static_cast<double>(data.scores.size());
}

struct WeightFit {
    std::vector<double> weights;
    double objective = 0.0;
};

/// DE over weights in [1e-8, 1 - 1e-8]. The initial population is seeded with
/// each single-member corner and the all-equal point, so the result is never
/// worse than the best single member.
inline WeightFit fit_weights(const EnsembleFitData& data, const DEConfig& cfg)
{
    const std::size_t m = data.mus.size();
    if (m == 0 || data.sigmas.size() != m) {
        throw UsageError("fit_weights: need mu and sigma per member");
    }
    if (data.scores.empty() || data.accuracies.size() != data.scores.size()) {
        throw UsageError("fit_weights: need scores and accuracies per dataset");
    }
    for (std::size_t d = 0; d < data.scores.size(); ++d) {
        if (data.scores[d].size() != m) {
            throw UsageError("fit_weights: dataset " + std::to_string(d) + " lacks scores for every member");
        }
        for (const auto& s : data.scores[d]) {
            if (s.size() != data.accuracies[d].size()) {
                throw UsageError("fit_weights: score and accuracy lengths differ");
            }
        }
    }
    std::vector<std::vector<double>> seeds;
    for (std::size_t i = 0; i < m && seeds.size() + 1 < cfg.population; ++i) {
        std::vector<double> corner(m, weight_lower);
        corner[i] = weight_upper;
        seeds.push_back(std::move(corner));
    }
    seeds.emplace_back(m, 0.5);
    const DEResult r = differential_evolution(
        [&](const std::vector<double>& w) { return mean_spearman(data, w); }, m, weight_lower, weight_upper,
        cfg, seeds);
    return {r.best, r.best_value};
}

/// Fits an ensemble where scorer i belongs to datasets[i]. mu_i and sigma_i
/// come from scorer i over every architecture of its own space; weights are
/// fitted on the train splits of all spaces.
inline EnsembleSpec fit_ensemble(const std::vector<ScorerParams>& scorers,
                                 std::span<const BenchmarkDataset> datasets, const DEConfig& cfg)
{
    const std::size_t m = scorers.size();
    if (m == 0 || datasets.size() != m) {
        throw UsageError("fit_ensemble: need exactly one dataset per scorer");
    }
    auto graphs_of = [](const BenchmarkDataset& ds, const std::vector<std::size_t>& idx) {
        std::vector<std::shared_ptr<const ArchGraph>> gs;
        for (std::size_t i : idx) {
            gs.push_back(ds.entries[i].graph);
        }
        return gs;
    };
    EnsembleFitData data;
    for (std::size_t i = 0; i < m; ++i) {
        const auto own = scorer::score_batch(graphs_of(datasets[i], datasets[i].all_indices()), scorers[i],
                                             cfg.workers);
        const ScoreStats st = score_stats(own, "scorer " + std::to_string(i));
        data.mus.push_back(st.mu);
        data.sigmas.push_back(st.sigma);
    }
    for (const BenchmarkDataset& ds : datasets) {
        const auto gs = graphs_of(ds, ds.train);
        std::vector<std::vector<double>> per_member;
        for (const ScorerParams& p : scorers) {
            per_member.push_back(scorer::score_batch(gs, p, cfg.workers));
        }
        data.scores.push_back(std::move(per_member));
        data.accuracies.push_back(ds.accuracies(ds.train));
    }
    const WeightFit fit = fit_weights(data, cfg);
    EnsembleSpec spec;
    for (std::size_t i = 0; i < m; ++i) {
        spec.members.push_back({scorers[i], fit.weights[i], data.mus[i], data.sigmas[i], {}});
    }
    return spec;
}

inline double ensemble_score(const ArchGraph& g, const EnsembleSpec& e)
{
    double f = 0.0;
    for (const EnsembleMember& m : e.members) {
        f += m.weight * sigmoid((scorer::score(g, m.params) - m.mu) / m.sigma);
    }
    return f;
}

/// Writes the spec; member checkpoints must already exist at `checkpoint`.
inline void save_ensemble(const std::string& path, const EnsembleSpec& e)
{
    const std::filesystem::path base = std::filesystem::absolute(path).parent_path();
    nlohmann::json members = nlohmann::json::array();
    for (const EnsembleMember& m : e.members) {
        if (m.checkpoint.empty()) {
            throw UsageError("save_ensemble: member has no checkpoint path");
        }
        const std::filesystem::path ck = std::filesystem::absolute(m.checkpoint);
        members.push_back({{"checkpoint", std::filesystem::relative(ck, base).generic_string()},
                           {"sha256", util::file_sha256(ck.string())},
                           {"weight", m.weight},
                           {"mu", m.mu},
                           {"sigma", m.sigma}});
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot write " + path);
    }
    out << nlohmann::json{{"members", members}}.dump(2) << "\n";
}

inline EnsembleSpec load_ensemble(const std::string& path)
{
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(util::read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path + ": invalid JSON at byte " + std::to_string(e.byte), path);
    }
    const std::filesystem::path base = std::filesystem::path(path).parent_path();
    EnsembleSpec spec;
    try {
        for (const auto& m : j.at("members")) {
            EnsembleMember mem;
            mem.checkpoint = (base / m.at("checkpoint").get<std::string>()).string();
            if (m.contains("sha256") && util::file_sha256(mem.checkpoint) != m.at("sha256").get<std::string>()) {
                throw DataError(path + ": checkpoint " + mem.checkpoint + " does not match its recorded digest");
            }
            mem.params = scorer::from_checkpoint(load_checkpoint(mem.checkpoint));
            mem.weight = m.at("weight").get<double>();
            mem.mu = m.at("mu").get<double>();
            mem.sigma = m.at("sigma").get<double>();
            if (!(mem.sigma > 0.0)) {
                throw DegenerateError(path + ": member sigma must be positive");
            }
            if (!(mem.weight > 0.0 && mem.weight < 1.0)) {
                throw DataError(path + ": member weight must lie in (0,1)");
            }
            spec.members.push_back(std::move(mem));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": " + e.what());
    }
    if (spec.members.empty()) {
        throw DataError(path + ": ensemble has no members");
    }
    return spec;
}

} // namespace ftscore::train
