#pragma once

// Evaluation protocols: score/accuracy correlation tables on seeded samples,
// score/score agreement between scorers, and greedy top-k selection on a fixed
// benchmark. Tables render as CSV or aligned text.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "ftscore/baselines/proxies.hpp"
#include "ftscore/error.hpp"
#include "ftscore/rank/correlation.hpp"
#include "ftscore/scorer/scorer.hpp"
#include "ftscore/train/dataset.hpp"
#include "ftscore/train/ensemble.hpp"

namespace ftscore::eval {

using train::BenchmarkDataset;

/// Scores for the given entries of a dataset.
using ScoreFn = std::function<std::vector<double>(const BenchmarkDataset&, std::span<const std::size_t>)>;

struct NamedScorer {
    std::string name;
    ScoreFn fn;
};

// ---------------------------------------------------------------------------
// Scorer adapters

inline NamedScorer accuracy_scorer(std::string name = "accuracy")
{
    return {std::move(name), [](const BenchmarkDataset& ds, std::span<const std::size_t> idx) {
                std::vector<double> out;
                for (std::size_t i : idx) {
                    out.push_back(ds.entries[i].accuracy);
                }
                return out;
            }};
}

inline NamedScorer params_scorer(std::string name = "params")
{
    return {std::move(name), [](const BenchmarkDataset& ds, std::span<const std::size_t> idx) {
                std::vector<double> out;
                for (std::size_t i : idx) {
                    out.push_back(baselines::params_proxy(*ds.entries[i].graph));
                }
                return out;
            }};
}

inline NamedScorer trained_scorer(std::string name, scorer::ScorerParams p, std::size_t workers)
{
    return {std::move(name), [p = std::move(p), workers](const BenchmarkDataset& ds, std::span<const std::size_t> idx) {
                std::vector<std::shared_ptr<const arch::ArchGraph>> gs;
                for (std::size_t i : idx) {
                    gs.push_back(ds.entries[i].graph);
                }
                return scorer::score_batch(gs, p, workers);
            }};
}

inline NamedScorer ensemble_scorer(std::string name, train::EnsembleSpec spec, std::size_t workers)
{
    return {std::move(name),
            [spec = std::move(spec), workers](const BenchmarkDataset& ds, std::span<const std::size_t> idx) {
                std::vector<double> out(idx.size());
                util::parallel_for(idx.size(), workers, [&](std::size_t k) {
                    out[k] = train::ensemble_score(*ds.entries[idx[k]].graph, spec);
                });
                return out;
            }};
}

/// NASWOT on a seeded N(0,1) batch shaped for each graph's input; the same
/// seed drives the batch and the weights, so equal graphs score equally.
inline NamedScorer naswot_scorer(std::string name, std::size_t batch, std::uint64_t seed, std::size_t workers)
{
    return {std::move(name), [=](const BenchmarkDataset& ds, std::span<const std::size_t> idx) {
                std::vector<double> out(idx.size());
                util::parallel_for(idx.size(), workers, [&](std::size_t k) {
                    const arch::ArchGraph& g = *ds.entries[idx[k]].graph;
                    std::mt19937_64 rng(seed);
                    std::normal_distribution<double> normal(0.0, 1.0);
                    Tensor x(Shape{batch, g.input_channels(), g.input_size(), g.input_size()});
                    for (double& v : x.data()) {
                        v = normal(rng);
                    }
                    out[k] = baselines::naswot_proxy(g, x, seed).score;
                });
                return out;
            }};
}

/// Externally computed scores keyed by entry id; a missing id is a data error.
inline NamedScorer table_scorer(std::string name, std::map<std::string, double> scores)
{
    return {std::move(name), [scores = std::move(scores)](const BenchmarkDataset& ds, std::span<const std::size_t> idx) {
                std::vector<double> out;
                for (std::size_t i : idx) {
                    const auto it = scores.find(ds.entries[i].id);
                    if (it == scores.end()) {
                        throw DataError("no external score for '" + ds.entries[i].id + "'");
                    }
                    out.push_back(it->second);
                }
                return out;
            }};
}

// ---------------------------------------------------------------------------
// Tables

struct Cell {
    std::optional<double> value;
    /// Why `value` is missing.
    std::string reason;
};

struct Table {
    std::string corner;
    std::vector<std::string> rows;
    std::vector<std::string> cols;
    std::vector<std::vector<Cell>> cells;
    std::vector<std::string> warnings;
};

enum class Metric { spearman, kendall };

inline std::string metric_name(Metric m) { return m == Metric::spearman ? "spearman" : "kendall"; }

struct SampleOptions {
    /// Entries per dataset; clamped to the dataset (with a warning).
    std::size_t sample = 1000;
    std::uint64_t seed = 0;
    /// Draw from the test split only instead of every entry.
    bool test_only = false;
};

/// Seeded sample of dataset `j`, sorted. Independent of the scorers.
inline std::vector<std::size_t> sample_entries(const BenchmarkDataset& ds, std::size_t j, const SampleOptions& o,
                                               std::vector<std::string>* warnings = nullptr)
{
    const std::vector<std::size_t> pool = o.test_only ? ds.test : ds.all_indices();
    if (o.sample > pool.size() && warnings != nullptr) {
        warnings->push_back("dataset '" + ds.space_id + "': sample " + std::to_string(o.sample) +
                            " clamped to " + std::to_string(pool.size()));
    }
    std::seed_seq seq{o.seed, static_cast<std::uint64_t>(j)};
    std::mt19937_64 rng(seq);
    std::vector<std::size_t> out;
    std::sample(pool.begin(), pool.end(), std::back_inserter(out),
                static_cast<std::ptrdiff_t>(std::min(o.sample, pool.size())), rng);
    return out;
}

namespace detail {

inline double correlate(Metric m, std::span<const double> a, std::span<const double> b)
{
    return m == Metric::spearman ? rank::spearman(a, b) : rank::kendall_tau(a, b);
}

} // namespace detail

/// Cell (i, j): correlation of scorer i with accuracy on dataset j's sample.
/// A scorer failure or an undefined correlation leaves the cell empty with a reason.
inline Table correlation_table(std::span<const NamedScorer> scorers, std::span<const BenchmarkDataset> datasets,
                               const SampleOptions& o, Metric metric = Metric::spearman)
{
    Table t;
    t.corner = metric_name(metric);
    for (const NamedScorer& s : scorers) {
        t.rows.push_back(s.name);
    }
    std::vector<std::vector<std::size_t>> samples;
    for (std::size_t j = 0; j < datasets.size(); ++j) {
        t.cols.push_back(datasets[j].space_id);
        samples.push_back(sample_entries(datasets[j], j, o, &t.warnings));
    }
    t.cells.assign(scorers.size(), std::vector<Cell>(datasets.size()));
    for (std::size_t i = 0; i < scorers.size(); ++i) {
        for (std::size_t j = 0; j < datasets.size(); ++j) {
            Cell& cell = t.cells[i][j];
            try {
                const std::vector<double> s = scorers[i].fn(datasets[j], samples[j]);
                cell.value = detail::correlate(metric, s, datasets[j].accuracies(samples[j]));
            } catch (const Error& e) {
                cell.reason = e.what();
            }
        }
    }
    return t;
}

/// Cell (a, b): correlation between two scorers' scores, averaged over the
/// datasets where it is defined.
inline Table score_score_table(std::span<const NamedScorer> scorers, std::span<const BenchmarkDataset> datasets,
                               const SampleOptions& o, Metric metric = Metric::spearman)
{
    Table t;
    t.corner = metric_name(metric);
    for (const NamedScorer& s : scorers) {
        t.rows.push_back(s.name);
        t.cols.push_back(s.name);
    }
    const std::size_t m = scorers.size();
    // scores[i][j] empty when scorer i failed on dataset j
    using Column = std::optional<std::vector<double>>;
    std::vector<std::vector<Column>> scores(m, std::vector<Column>(datasets.size()));
    std::vector<std::vector<std::string>> failures(m, std::vector<std::string>(datasets.size()));
    for (std::size_t j = 0; j < datasets.size(); ++j) {
        const std::vector<std::size_t> idx = sample_entries(datasets[j], j, o, &t.warnings);
        for (std::size_t i = 0; i < m; ++i) {
            try {
                scores[i][j] = scorers[i].fn(datasets[j], idx);
            } catch (const Error& e) {
                failures[i][j] = e.what();
            }
        }
    }
    t.cells.assign(m, std::vector<Cell>(m));
    for (std::size_t a = 0; a < m; ++a) {
        for (std::size_t b = 0; b < m; ++b) {
            double sum = 0.0;
            std::size_t used = 0;
            std::string reason;
            for (std::size_t j = 0; j < datasets.size(); ++j) {
                if (!scores[a][j] || !scores[b][j]) {
                    reason = !scores[a][j] ? failures[a][j] : failures[b][j];
                    continue;
                }
                try {
                    sum += detail::correlate(metric, *scores[a][j], *scores[b][j]);
                    ++used;
                } catch (const Error& e) {
                    reason = e.what();
                }
            }
            if (used > 0) {
                t.cells[a][b].value = sum / static_cast<double>(used);
            } else {
                t.cells[a][b].reason = reason.empty() ? "no datasets" : reason;
            }
        }
    }
    return t;
}

// ---------------------------------------------------------------------------
// Greedy top-k

struct TopKResult {
    double best_accuracy = 0.0;
    /// Test entries in visiting order (descending score, ties by index).
    std::vector<std::size_t> visited;
};

/// Visits test entries from the highest score down and returns the best
/// accuracy among the first k, together with the train split's best when
/// `include_train` is set. `test_scores` is parallel to ds.test.
inline TopKResult greedy_topk(const BenchmarkDataset& ds, std::span<const double> test_scores, std::size_t k,
                              bool include_train = true)
{
    if (test_scores.size() != ds.test.size()) {
        throw UsageError("greedy_topk: need one score per test entry");
    }
    if (k == 0 || ds.test.empty()) {
        throw UsageError("greedy_topk: k and the test split must be non-empty");
    }
    std::vector<std::size_t> order(ds.test.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return test_scores[a] > test_scores[b]; });
    TopKResult r;
    r.best_accuracy = -std::numeric_limits<double>::infinity();
    for (std::size_t v = 0; v < std::min(k, order.size()); ++v) {
        const std::size_t e = ds.test[order[v]];
        r.visited.push_back(e);
        r.best_accuracy = std::max(r.best_accuracy, ds.entries[e].accuracy);
    }
    if (include_train) {
        for (std::size_t e : ds.train) {
            r.best_accuracy = std::max(r.best_accuracy, ds.entries[e].accuracy);
        }
    }
    return r;
}

inline TopKResult greedy_topk_search(const BenchmarkDataset& ds, const NamedScorer& s, std::size_t k,
                                     bool include_train = true)
{
    const std::vector<double> scores = s.fn(ds, ds.test);
    return greedy_topk(ds, scores, k, include_train);
}

// ---------------------------------------------------------------------------
// Rendering

inline std::string format_value(double v)
{
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << v;
    return os.str();
}

inline std::string csv_field(const std::string& s)
{
    if (s.find_first_of(",\"\n") == std::string::npos) {
        return s;
    }
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') {
            out += '"';
        }
        out += c;
    }
    return out + "\"";
}

/// Empty cells are written as empty fields.
inline std::string to_csv(const Table& t)
{
    std::string out = csv_field(t.corner);
    for (const std::string& c : t.cols) {
        out += "," + csv_field(c);
    }
    out += "\n";
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        out += csv_field(t.rows[i]);
        for (const Cell& cell : t.cells[i]) {
            out += ",";
            if (cell.value) {
                out += format_value(*cell.value);
            }
        }
        out += "\n";
    }
    return out;
}

/// Aligned columns; empty cells print "null" and their reasons follow the table.
inline std::string to_text(const Table& t)
{
    std::vector<std::vector<std::string>> grid;
    grid.push_back({t.corner});
    grid[0].insert(grid[0].end(), t.cols.begin(), t.cols.end());
    std::vector<std::string> notes;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        std::vector<std::string> row{t.rows[i]};
        for (std::size_t j = 0; j < t.cells[i].size(); ++j) {
            const Cell& cell = t.cells[i][j];
            row.push_back(cell.value ? format_value(*cell.value) : "null");
            if (!cell.value) {
                notes.push_back(t.rows[i] + " / " + t.cols[j] + ": " + cell.reason);
            }
        }
        grid.push_back(std::move(row));
    }
    std::vector<std::size_t> width(grid[0].size(), 0);
    for (const auto& row : grid) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            width[c] = std::max(width[c], row[c].size());
        }
    }
    std::ostringstream os;
    for (const auto& row : grid) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (c == 0) {
                os << std::left << std::setw(static_cast<int>(width[c])) << row[c];
            } else {
                os << "  " << std::right << std::setw(static_cast<int>(width[c])) << row[c];
            }
        }
        os << "\n";
    }
    for (const std::string& n : notes) {
        os << "null " << n << "\n";
    }
    for (const std::string& w : t.warnings) {
        os << "warning: " << w << "\n";
    }
    return os.str();
}

} // namespace ftscore::eval
