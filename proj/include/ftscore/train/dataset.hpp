#pragma once

// Benchmark datasets: one JSON object per line,
//
//   {"arch": <graph object | NB201 cell string | genome string>,
//    "accuracy": <real in [0,1]>,
//    "id": <optional text>, "split": <optional "train"|"test">, "space": <optional text>}
//
// Cell strings start with '|'; any other string is read as genome text. When no
// line carries "split", the train/test split is drawn with a seeded shuffle.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ftscore/arch/genome.hpp"
#include "ftscore/arch/graph_json.hpp"
#include "ftscore/arch/nb201.hpp"
#include "ftscore/error.hpp"
#include "ftscore/util/digest.hpp"

namespace ftscore::train {

using arch::ArchGraph;

/// Search-space families with their own training defaults.
enum class SpaceKind { nb201, nb101, macro, nds, other };

/// nb201*, nb101*, macro*, nds* prefixes (case-sensitive); anything else is `other`.
inline SpaceKind space_kind_of(const std::string& space_id)
{
    auto starts = [&](const char* p) { return space_id.rfind(p, 0) == 0; };
    if (starts("nb201")) {
        return SpaceKind::nb201;
    }
    if (starts("nb101")) {
        return SpaceKind::nb101;
    }
    if (starts("macro")) {
        return SpaceKind::macro;
    }
    if (starts("nds")) {
        return SpaceKind::nds;
    }
    return SpaceKind::other;
}

inline std::size_t default_steps(SpaceKind k)
{
    switch (k) {
    case SpaceKind::nb201: return 496;
    case SpaceKind::nb101: return 1440;
    case SpaceKind::macro: return 208;
    case SpaceKind::nds: return 1440;
    case SpaceKind::other: break;
    }
    return 200;
}

inline std::size_t default_sample_size(SpaceKind k)
{
    switch (k) {
    case SpaceKind::nb201:
    case SpaceKind::macro: return 64;
    case SpaceKind::nb101:
    case SpaceKind::nds: return 7;
    case SpaceKind::other: break;
    }
    return 16;
}

struct DatasetEntry {
    std::string id;
    std::shared_ptr<const ArchGraph> graph;
    double accuracy = 0.0;
};

struct BenchmarkDataset {
    std::string space_id;
    std::vector<DatasetEntry> entries;
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
    /// SHA-256 of the source file (empty for in-memory datasets).
    std::string digest;

    [[nodiscard]] SpaceKind kind() const { return space_kind_of(space_id); }

    [[nodiscard]] std::vector<double> accuracies(const std::vector<std::size_t>& idx) const
    {
        std::vector<double> out;
        out.reserve(idx.size());
        for (std::size_t i : idx) {
            out.push_back(entries[i].accuracy);
        }
        return out;
    }

    [[nodiscard]] std::vector<std::size_t> all_indices() const
    {
        std::vector<std::size_t> out(entries.size());
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] = i;
        }
        return out;
    }
};

struct DatasetOptions {
    /// Space id; defaults to the "space" field, then the file stem.
    std::string space_id;
    /// Used when the file carries no split: explicit train count, else a fraction.
    std::optional<std::size_t> train_count;
    double train_fraction = 0.5;
    std::uint64_t split_seed = 0;
    arch::Nb201Options nb201{};
    arch::GenomeDecodeOptions genome{};
};

/// Throws DataError if the dataset violates its invariants.
inline void validate_dataset(const BenchmarkDataset& ds)
{
    if (ds.entries.empty()) {
        throw DataError("dataset '" + ds.space_id + "' is empty");
    }
    std::vector<char> seen(ds.entries.size(), 0);
    for (const auto* split : {&ds.train, &ds.test}) {
        for (std::size_t i : *split) {
            if (i >= ds.entries.size()) {
                throw DataError("dataset '" + ds.space_id + "': split index out of range");
            }
            if (seen[i]++) {
                throw DataError("dataset '" + ds.space_id + "': entry " + std::to_string(i) +
                                " appears in both splits or twice");
            }
        }
    }
    for (const DatasetEntry& e : ds.entries) {
        if (!std::isfinite(e.accuracy)) {
            throw DataError("dataset '" + ds.space_id + "': non-finite accuracy for '" + e.id + "'");
        }
    }
}

inline std::shared_ptr<const ArchGraph> parse_arch(const nlohmann::json& arch, const DatasetOptions& opt)
{
    if (arch.is_object()) {
        return std::make_shared<const ArchGraph>(arch::graph_from_json(arch));
    }
    if (!arch.is_string()) {
        throw DataError("'arch' must be a graph object or a string");
    }
    const std::string text = arch.get<std::string>();
    if (!text.empty() && text.front() == '|') {
        return std::make_shared<const ArchGraph>(arch::nb201_graph(arch::parse_nb201_cell(text), opt.nb201));
    }
    return std::make_shared<const ArchGraph>(arch::decode_genome(arch::parse_genome(text), opt.genome));
}

/// Parses dataset text; `origin` names the source in error messages.
inline BenchmarkDataset parse_dataset(const std::string& text, const DatasetOptions& opt,
                                      const std::string& origin = "<memory>")
{
    BenchmarkDataset ds;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::optional<std::string>> splits;
    std::string space_field;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        const std::string where = origin + ":" + std::to_string(line_no);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(where + ": invalid JSON at byte " + std::to_string(e.byte), line);
        }
        try {
            if (!j.is_object() || !j.contains("arch") || !j.contains("accuracy")) {
                throw DataError("expected an object with 'arch' and 'accuracy'");
            }
            DatasetEntry e;
            e.accuracy = j.at("accuracy").get<double>();
            if (!std::isfinite(e.accuracy) || e.accuracy < 0.0 || e.accuracy > 1.0) {
                throw DataError("accuracy must be a finite number in [0,1]");
            }
            e.id = j.contains("id") ? j.at("id").get<std::string>()
                                    : (j.at("arch").is_string() ? j.at("arch").get<std::string>()
                                                                : "#" + std::to_string(ds.entries.size()));
            e.graph = parse_arch(j.at("arch"), opt);
            if (j.contains("split")) {
                const std::string s = j.at("split").get<std::string>();
                if (s != "train" && s != "test") {
                    throw DataError("split must be 'train' or 'test'");
                }
                splits.emplace_back(s);
            } else {
                splits.emplace_back(std::nullopt);
            }
            if (space_field.empty() && j.contains("space")) {
                space_field = j.at("space").get<std::string>();
            }
            ds.entries.push_back(std::move(e));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(where + ": " + e.what());
        } catch (const ParseError& e) {
            throw ParseError(where + ": " + e.what(), e.token());
        } catch (const Error& e) {
            throw DataError(where + ": " + e.what());
        }
    }
    ds.space_id = !opt.space_id.empty() ? opt.space_id : space_field;
    const bool any_split = std::any_of(splits.begin(), splits.end(), [](const auto& s) { return s.has_value(); });
    if (any_split) {
        for (std::size_t i = 0; i < splits.size(); ++i) {
            if (!splits[i]) {
                throw DataError(origin + ": entry " + std::to_string(i) +
                                " has no split while others do");
            }
            (*splits[i] == "train" ? ds.train : ds.test).push_back(i);
        }
    } else {
        std::vector<std::size_t> idx = ds.all_indices();
        std::mt19937_64 rng(opt.split_seed);
        std::shuffle(idx.begin(), idx.end(), rng);
        const std::size_t n = idx.size();
        std::size_t n_train = opt.train_count
                                  ? *opt.train_count
                                  : static_cast<std::size_t>(std::llround(opt.train_fraction * static_cast<double>(n)));
        n_train = std::min(n_train, n);
        ds.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
        ds.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
        std::sort(ds.train.begin(), ds.train.end());
        std::sort(ds.test.begin(), ds.test.end());
    }
    validate_dataset(ds);
    return ds;
}

namespace detail {

inline nlohmann::json options_key(const DatasetOptions& o)
{
    return {{"space_id", o.space_id},
            {"train_count", o.train_count ? nlohmann::json(*o.train_count) : nlohmann::json()},
            {"train_fraction", o.train_fraction},
            {"split_seed", o.split_seed},
            {"nb201", {o.nb201.stem_channels, o.nb201.num_cells, o.nb201.input_size, o.nb201.classes}},
            {"genome", {o.genome.input_channels, o.genome.input_size, o.genome.classes}}};
}

inline nlohmann::json dataset_to_cache(const BenchmarkDataset& ds)
{
    nlohmann::json entries = nlohmann::json::array();
    for (const DatasetEntry& e : ds.entries) {
        entries.push_back({{"id", e.id}, {"accuracy", e.accuracy}, {"graph", arch::graph_to_json(*e.graph)}});
    }
    return {{"space_id", ds.space_id}, {"train", ds.train}, {"test", ds.test}, {"entries", entries}};
}

inline BenchmarkDataset dataset_from_cache(const nlohmann::json& j)
{
    BenchmarkDataset ds;
    ds.space_id = j.at("space_id").get<std::string>();
    ds.train = j.at("train").get<std::vector<std::size_t>>();
    ds.test = j.at("test").get<std::vector<std::size_t>>();
    for (const auto& e : j.at("entries")) {
        ds.entries.push_back({e.at("id").get<std::string>(),
                              std::make_shared<const ArchGraph>(arch::graph_from_json(e.at("graph"))),
                              e.at("accuracy").get<double>()});
    }
    validate_dataset(ds);
    return ds;
}

} // namespace detail

/// Directory for parsed-dataset caches, from FTSCORE_CACHE_DIR (empty: no cache).
inline std::string cache_dir()
{
    const char* v = std::getenv("FTSCORE_CACHE_DIR");
    return v == nullptr ? std::string() : std::string(v);
}

/// Loads a dataset file. With FTSCORE_CACHE_DIR set, the parsed form is cached
/// under a key of (file digest, options); a cache entry that fails to load is
/// ignored and rewritten.
inline BenchmarkDataset load_dataset(const std::string& path, DatasetOptions opt = {})
{
    const std::string text = util::read_file(path);
    const std::string digest = util::sha256_hex(text);
    const std::string stem = std::filesystem::path(path).stem().string();
    const std::string dir = cache_dir();
    std::string cache_path;
    if (!dir.empty()) {
        const std::string key = util::sha256_hex(digest + detail::options_key(opt).dump());
        cache_path = (std::filesystem::path(dir) / ("dataset-" + key.substr(0, 32) + ".json")).string();
        std::ifstream cached(cache_path, std::ios::binary);
        if (cached) {
            try {
                BenchmarkDataset ds = detail::dataset_from_cache(nlohmann::json::parse(cached));
                ds.digest = digest;
                return ds;
            } catch (const std::exception&) {
                // stale or corrupt cache entry; fall through and rebuild it
            }
        }
    }
    BenchmarkDataset ds = parse_dataset(text, opt, path);
    if (ds.space_id.empty()) {
        ds.space_id = stem;
    }
    ds.digest = digest;
    if (!cache_path.empty()) {
        std::error_code ec;
        std::filesystem::create_directories(std::filesystem::path(cache_path).parent_path(), ec);
        const std::string tmp = cache_path + ".tmp";
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            out << detail::dataset_to_cache(ds).dump();
        }
        std::filesystem::rename(tmp, cache_path, ec);
    }
    return ds;
}

} // namespace ftscore::train
