// ftscore command-line tool: synth, train, score, eval, ensemble-fit, search, selfcheck.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "ftscore/ftscore.hpp"

namespace fs = std::filesystem;
using namespace ftscore;
using nlohmann::json;

namespace {

constexpr const char* tool_version = "ftscore 0.1.0";

// ---------------------------------------------------------------------------
// Run manifests and output files

void write_bytes(const std::string& path, const std::string& bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out || !(out << bytes)) {
        throw DataError("cannot write " + path);
    }
}

json digests(const std::vector<std::string>& paths)
{
    json out = json::array();
    for (const std::string& p : paths) {
        out.push_back({{"path", p}, {"sha256", util::file_sha256(p)}});
    }
    return out;
}

/// Written next to the primary output as <out>.manifest.json. Holds no
/// timestamps or host details, so reruns reproduce it byte for byte.
void write_manifest(const std::string& out, const std::string& command, std::uint64_t seed, const json& config,
                    const std::vector<std::string>& inputs, const std::vector<std::string>& outputs)
{
    const json m{{"tool", tool_version},   {"command", command},         {"seed", seed},
                 {"config", config},       {"inputs", digests(inputs)}, {"outputs", digests(outputs)}};
    write_bytes(out + ".manifest.json", m.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Config files: flags > file > defaults

/// Fills option targets from a JSON object for every key whose flag was not
/// given on the command line. Unknown keys are usage errors.
class ConfigLayer {
public:
    ConfigLayer(CLI::App& app, const std::string& path) : app_(&app)
    {
        if (path.empty()) {
            return;
        }
        try {
            cfg_ = json::parse(util::read_file(path));
        } catch (const json::parse_error& e) {
            throw DataError(path + ": invalid JSON at byte " + std::to_string(e.byte));
        }
        if (!cfg_.is_object()) {
            throw DataError(path + ": config must be a JSON object");
        }
        path_ = path;
    }

    template <class T>
    void apply(const std::string& key, T& target)
    {
        known_.push_back(key);
        if (!cfg_.contains(key) || app_->get_option("--" + flag_of(key))->count() > 0) {
            return;
        }
        try {
            target = cfg_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw DataError(path_ + ": key '" + key + "': " + e.what());
        }
    }

    void finish() const
    {
        for (const auto& item : cfg_.items()) {
            if (std::find(known_.begin(), known_.end(), item.key()) == known_.end()) {
                throw UsageError(path_ + ": unknown config key '" + item.key() + "'");
            }
        }
    }

private:
    static std::string flag_of(std::string key)
    {
        std::replace(key.begin(), key.end(), '_', '-');
        return key;
    }

    CLI::App* app_;
    json cfg_ = json::object();
    std::string path_;
    std::vector<std::string> known_;
};

// ---------------------------------------------------------------------------
// Shared option groups

struct DataFlags {
    std::size_t train_count = 0;
    double train_fraction = 0.5;
    std::uint64_t split_seed = 0;
    std::size_t nb201_stem = 16;
    std::size_t nb201_cells = 5;
    std::size_t input_size = 32;

    void add(CLI::App* cmd)
    {
        cmd->add_option("--train-count", train_count, "Train entries when a file has no split (0: use fraction)");
        cmd->add_option("--train-fraction", train_fraction, "Train fraction when a file has no split")
            ->check(CLI::Range(0.0, 1.0));
        cmd->add_option("--split-seed", split_seed, "Seed of the split drawn for files without one");
        cmd->add_option("--nb201-stem", nb201_stem, "NB201 stem channels");
        cmd->add_option("--nb201-cells", nb201_cells, "NB201 cells per stage");
        cmd->add_option("--input-size", input_size, "Input resolution of NB201 graphs and decoded genomes");
    }

    void layer(ConfigLayer& c)
    {
        c.apply("train_count", train_count);
        c.apply("train_fraction", train_fraction);
        c.apply("split_seed", split_seed);
        c.apply("nb201_stem", nb201_stem);
        c.apply("nb201_cells", nb201_cells);
        c.apply("input_size", input_size);
    }

    [[nodiscard]] train::DatasetOptions options() const
    {
        train::DatasetOptions o;
        if (train_count > 0) {
            o.train_count = train_count;
        }
        o.train_fraction = train_fraction;
        o.split_seed = split_seed;
        o.nb201.stem_channels = nb201_stem;
        o.nb201.num_cells = nb201_cells;
        o.nb201.input_size = input_size;
        o.genome.input_size = input_size;
        return o;
    }

    [[nodiscard]] json to_json() const
    {
        return {{"train_count", train_count}, {"train_fraction", train_fraction}, {"split_seed", split_seed},
                {"nb201_stem", nb201_stem},   {"nb201_cells", nb201_cells},       {"input_size", input_size}};
    }
};

std::vector<train::BenchmarkDataset> load_datasets(const std::vector<std::string>& paths, const DataFlags& f)
{
    std::vector<train::BenchmarkDataset> out;
    for (const std::string& p : paths) {
        out.push_back(train::load_dataset(p, f.options()));
    }
    return out;
}

std::string stem_of(const std::string& path) { return fs::path(path).stem().string(); }

scorer::ScorerParams load_scorer(const std::string& path)
{
    return scorer::from_checkpoint(load_checkpoint(path));
}

/// Graph JSON file, NB201 cell string, or genome text.
std::shared_ptr<const arch::ArchGraph> load_arch(const std::string& spec, const DataFlags& f,
                                                 std::vector<std::string>& inputs)
{
    if (fs::is_regular_file(spec)) {
        inputs.push_back(spec);
        return std::make_shared<const arch::ArchGraph>(arch::parse_graph_json(util::read_file(spec)));
    }
    return train::parse_arch(json(spec), f.options());
}

// ---------------------------------------------------------------------------
// synth

struct SynthCmd {
    train::SyntheticOptions o;
    std::uint64_t seed = 0;
    std::string out;

    void add(CLI::App& app)
    {
        CLI::App* cmd = app.add_subcommand("synth", "Write a synthetic benchmark space as JSON lines");
        cmd->add_option("--count", o.count, "Architectures")->check(CLI::PositiveNumber);
        cmd->add_option("--max-blocks", o.max_blocks, "Blocks per genome")->check(CLI::PositiveNumber);
        cmd->add_option("--noise", o.noise, "Noise sd as a fraction of the accuracy range");
        cmd->add_option("--direction", o.direction, "+1 or -1: accuracy rises or falls with params");
        cmd->add_option("--space", o.space_id, "Space id");
        cmd->add_option("--input-size", o.decode.input_size, "Input resolution");
        cmd->add_option("--seed", seed, "Seed");
        cmd->add_option("--out", out, "Output .jsonl")->required();
        cmd->callback([this] { run(); });
    }

    void run()
    {
        if (o.direction != 1 && o.direction != -1) {
            throw UsageError("--direction must be 1 or -1");
        }
        write_bytes(out, train::dataset_to_jsonl(train::synthetic_dataset(o, seed)));
        const json cfg{{"count", o.count},         {"max_blocks", o.max_blocks}, {"noise", o.noise},
                       {"direction", o.direction}, {"space", o.space_id},        {"input_size", o.decode.input_size}};
        write_manifest(out, "synth", seed, cfg, {}, {out});
    }
};

// ---------------------------------------------------------------------------
// train

struct TrainCmd {
    CLI::App* cmd = nullptr;
    std::size_t* workers;
    std::vector<std::string> datasets;
    std::string config;
    std::string variant = "vnorm";
    std::size_t steps = 0;
    std::size_t sample_size = 0;
    std::uint64_t seed = 0;
    double lr = AdamConfig{}.lr;
    double epsilon = rank::SoftRankConfig{}.epsilon;
    bool accumulate = false;
    std::size_t freq_channels = scorer::ScorerConfig{}.freq_channels;
    std::size_t k_max = scorer::ScorerConfig{}.k_max;
    std::size_t fixed_channels = scorer::ScorerConfig{}.fixed_channels;
    std::vector<std::size_t> mlp_hidden = scorer::ScorerConfig{}.mlp_hidden;
    std::vector<std::size_t> input{64, 3, 32, 32};
    DataFlags data;
    std::string out;

    explicit TrainCmd(std::size_t* w) : workers(w) {}

    void add(CLI::App& app)
    {
        cmd = app.add_subcommand("train", "Train a scorer on one or more benchmark spaces");
        cmd->add_option("--dataset", datasets, "Dataset file; repeat for round-robin training")->required();
        cmd->add_option("--config", config, "JSON config; flags override it");
        cmd->add_option("--variant", variant, "vnorm or static")->check(CLI::IsMember({"vnorm", "static"}));
        cmd->add_option("--steps", steps, "Steps per dataset (0: per-space default)");
        cmd->add_option("--sample-size", sample_size, "Architectures per batch (0: per-space default)");
        cmd->add_option("--seed", seed, "Seed for initialization and sampling");
        cmd->add_option("--lr", lr, "Adam learning rate");
        cmd->add_option("--epsilon", epsilon, "Soft-rank regularization strength");
        cmd->add_flag("--accumulate", accumulate, "One optimizer step per round-robin cycle");
        cmd->add_option("--freq-channels", freq_channels, "Frequency kernel channels");
        cmd->add_option("--k-max", k_max, "Frequency kernel spatial size");
        cmd->add_option("--fixed-channels", fixed_channels, "Channels after the first head conv");
        cmd->add_option("--mlp-hidden", mlp_hidden, "Hidden MLP widths");
        cmd->add_option("--input", input, "Input-like tensor shape B C H W")->expected(4);
        data.add(cmd);
        cmd->add_option("--out", out, "Output checkpoint")->required();
        cmd->callback([this] { run(); });
    }

    void run()
    {
        ConfigLayer layer(*cmd, config);
        layer.apply("variant", variant);
        layer.apply("steps", steps);
        layer.apply("sample_size", sample_size);
        layer.apply("seed", seed);
        layer.apply("lr", lr);
        layer.apply("epsilon", epsilon);
        layer.apply("accumulate", accumulate);
        layer.apply("freq_channels", freq_channels);
        layer.apply("k_max", k_max);
        layer.apply("fixed_channels", fixed_channels);
        layer.apply("mlp_hidden", mlp_hidden);
        layer.apply("input", input);
        data.layer(layer);
        layer.finish();
        if (input.size() != 4) {
            throw UsageError("input must have 4 dimensions");
        }

        const auto ds = load_datasets(datasets, data);
        scorer::ScorerConfig sc;
        sc.freq_channels = freq_channels;
        sc.k_max = k_max;
        sc.fixed_channels = fixed_channels;
        sc.mlp_hidden = mlp_hidden;
        sc.input = {input[0], input[1], input[2], input[3]};
        sc.variant = rep::parse_variant(variant);
        scorer::ScorerParams p = scorer::init_params(sc, seed);

        train::MultiTrainConfig tc;
        for (const auto& d : ds) {
            const train::SpaceKind kind = train::space_kind_of(d.space_id);
            tc.steps.push_back(steps > 0 ? steps : train::default_steps(kind));
            tc.sample_sizes.push_back(sample_size > 0 ? sample_size : train::default_sample_size(kind));
        }
        // --steps 0 given explicitly means no training at all
        if (steps == 0 && cmd->get_option("--steps")->count() > 0) {
            std::fill(tc.steps.begin(), tc.steps.end(), 0);
        }
        tc.accumulate = accumulate;
        tc.rank.epsilon = epsilon;
        tc.adam.lr = lr;
        tc.seed = seed;
        tc.workers = *workers;
        const train::TrainResult r = train::train_multi(ds, p, tc);

        Checkpoint ck = scorer::to_checkpoint(p);
        ck.meta["spaces"] = json::array();
        for (const auto& d : ds) {
            ck.meta["spaces"].push_back(d.space_id);
        }
        save_checkpoint(out, ck);

        json losses = json::array();
        for (const train::StepRecord& s : r.history) {
            losses.push_back({{"dataset", s.dataset}, {"loss", s.loss}});
        }
        write_bytes(out + ".losses.json", losses.dump() + "\n");
        json cfg{{"scorer", scorer::config_to_json(sc)}, {"steps", tc.steps},  {"sample_sizes", tc.sample_sizes},
                 {"lr", lr},                             {"epsilon", epsilon}, {"accumulate", accumulate},
                 {"data", data.to_json()}};
        write_manifest(out, "train", seed, cfg, datasets, {out, out + ".losses.json"});
        if (!r.history.empty()) {
            std::cout << "trained " << r.history.size() << " batches, last loss " << r.history.back().loss << "\n";
        } else {
            std::cout << "no training steps; checkpoint holds the initialization\n";
        }
    }
};

// ---------------------------------------------------------------------------
// score

struct ScoreCmd {
    std::string ckpt;
    std::string ensemble;
    std::vector<std::string> archs;
    DataFlags data;
    std::string out;

    void add(CLI::App& app)
    {
        CLI::App* cmd = app.add_subcommand("score", "Score architectures with a checkpoint or an ensemble");
        auto* c = cmd->add_option("--ckpt", ckpt, "Scorer checkpoint");
        auto* e = cmd->add_option("--ensemble", ensemble, "Ensemble spec");
        c->excludes(e);
        cmd->add_option("--arch", archs, "Graph JSON file, NB201 cell string or genome text; repeatable")
            ->required();
        data.add(cmd);
        cmd->add_option("--out", out, "Write the lines here (with a manifest) instead of stdout");
        cmd->callback([this] { run(); });
    }

    void run()
    {
        if (ckpt.empty() == ensemble.empty()) {
            throw UsageError("score: give exactly one of --ckpt or --ensemble");
        }
        std::vector<std::string> inputs{ckpt.empty() ? ensemble : ckpt};
        std::optional<scorer::ScorerParams> p;
        std::optional<train::EnsembleSpec> spec;
        if (!ckpt.empty()) {
            p = load_scorer(ckpt);
        } else {
            spec = train::load_ensemble(ensemble);
        }
        std::string lines;
        for (const std::string& a : archs) {
            const auto g = load_arch(a, data, inputs);
            const double s = p ? scorer::score(*g, *p) : train::ensemble_score(*g, *spec);
            lines += json{{"arch", a}, {"score", s}, {"params", arch::count_params(*g)}}.dump() + "\n";
        }
        if (out.empty()) {
            std::cout << lines;
            return;
        }
        write_bytes(out, lines);
        write_manifest(out, "score", 0, {{"archs", archs}, {"data", data.to_json()}}, inputs, {out});
    }
};

// ---------------------------------------------------------------------------
// eval

struct EvalCmd {
    std::size_t* workers;
    std::vector<std::string> ckpts;
    std::vector<std::string> ensembles;
    std::vector<std::string> baselines;
    std::vector<std::string> csv_scores;
    std::vector<std::string> datasets;
    std::size_t sample = 1000;
    std::uint64_t seed = 0;
    bool test_only = false;
    std::string metric = "spearman";
    std::size_t topk = 0;
    std::size_t naswot_batch = 32;
    DataFlags data;
    std::string out;
    std::string score_score_out;

    explicit EvalCmd(std::size_t* w) : workers(w) {}

    void add(CLI::App& app)
    {
        CLI::App* cmd = app.add_subcommand("eval", "Correlation tables of scorers against benchmark accuracy");
        cmd->add_option("--ckpt", ckpts, "Scorer checkpoint; repeatable");
        cmd->add_option("--ensemble", ensembles, "Ensemble spec; repeatable");
        cmd->add_option("--baseline", baselines, "accuracy, params or naswot; repeatable")
            ->check(CLI::IsMember({"accuracy", "params", "naswot"}));
        cmd->add_option("--csv-scores", csv_scores, "NAME=FILE of external scores keyed by arch id; repeatable");
        cmd->add_option("--dataset", datasets, "Dataset file; repeatable")->required();
        cmd->add_option("--sample", sample, "Architectures per dataset (clamped to its size)");
        cmd->add_option("--seed", seed, "Sampling seed");
        cmd->add_flag("--test-only", test_only, "Sample only from test splits");
        cmd->add_option("--metric", metric, "spearman or kendall")->check(CLI::IsMember({"spearman", "kendall"}));
        cmd->add_option("--topk", topk, "Also run greedy top-k with this k on each dataset");
        cmd->add_option("--naswot-batch", naswot_batch, "Batch size of the naswot baseline");
        data.add(cmd);
        cmd->add_option("--out", out, "Output table CSV")->required();
        cmd->add_option("--score-score-out", score_score_out, "Also write the score-score table CSV here");
        cmd->callback([this] { run(); });
    }

    void run()
    {
        std::vector<std::string> inputs = datasets;
        std::vector<eval::NamedScorer> scorers;
        for (const std::string& c : ckpts) {
            scorers.push_back(eval::trained_scorer(stem_of(c), load_scorer(c), *workers));
            inputs.push_back(c);
        }
        for (const std::string& e : ensembles) {
            scorers.push_back(eval::ensemble_scorer(stem_of(e), train::load_ensemble(e), *workers));
            inputs.push_back(e);
        }
        for (const std::string& b : baselines) {
            if (b == "accuracy") {
                scorers.push_back(eval::accuracy_scorer());
            } else if (b == "params") {
                scorers.push_back(eval::params_scorer());
            } else {
                scorers.push_back(eval::naswot_scorer("naswot", naswot_batch, seed, *workers));
            }
        }
        for (const std::string& spec : csv_scores) {
            const auto eq = spec.find('=');
            if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size()) {
                throw UsageError("--csv-scores expects NAME=FILE, got '" + spec + "'");
            }
            const std::string file = spec.substr(eq + 1);
            scorers.push_back(eval::table_scorer(spec.substr(0, eq), baselines::load_score_csv(file)));
            inputs.push_back(file);
        }
        if (scorers.empty()) {
            throw UsageError("eval: give at least one --ckpt, --ensemble, --baseline or --csv-scores");
        }
        const auto ds = load_datasets(datasets, data);
        const eval::SampleOptions so{sample, seed, test_only};
        const eval::Metric m = metric == "spearman" ? eval::Metric::spearman : eval::Metric::kendall;
        const eval::Table t = eval::correlation_table(scorers, ds, so, m);
        write_bytes(out, eval::to_csv(t));
        std::cout << eval::to_text(t);
        std::vector<std::string> outputs{out};
        if (!score_score_out.empty()) {
            const eval::Table ss = eval::score_score_table(scorers, ds, so, m);
            write_bytes(score_score_out, eval::to_csv(ss));
            std::cout << "\n" << eval::to_text(ss);
            outputs.push_back(score_score_out);
        }
        if (topk > 0) {
            std::string csv = "scorer,dataset,k,best_accuracy\n";
            for (const auto& s : scorers) {
                for (const auto& d : ds) {
                    const eval::TopKResult r = eval::greedy_topk_search(d, s, topk);
                    csv += eval::csv_field(s.name) + "," + eval::csv_field(d.space_id) + "," + std::to_string(topk) +
                           "," + eval::format_value(r.best_accuracy) + "\n";
                }
            }
            const std::string topk_out = out + ".topk.csv";
            write_bytes(topk_out, csv);
            std::cout << "\n" << csv;
            outputs.push_back(topk_out);
        }
        const json cfg{{"sample", sample},       {"test_only", test_only}, {"metric", metric},
                       {"baselines", baselines}, {"topk", topk},           {"naswot_batch", naswot_batch},
                       {"data", data.to_json()}};
        write_manifest(out, "eval", seed, cfg, inputs, outputs);
    }
};

// ---------------------------------------------------------------------------
// ensemble-fit

struct EnsembleFitCmd {
    std::size_t* workers;
    std::vector<std::string> ckpts;
    std::vector<std::string> datasets;
    train::DEConfig de;
    DataFlags data;
    std::string out;

    explicit EnsembleFitCmd(std::size_t* w) : workers(w) {}

    void add(CLI::App& app)
    {
        CLI::App* cmd = app.add_subcommand("ensemble-fit", "Fit ensemble weights; checkpoint i pairs with dataset i");
        cmd->add_option("--ckpt", ckpts, "Member checkpoint; repeatable")->required();
        cmd->add_option("--dataset", datasets, "Member's own dataset; repeatable, same order")->required();
        cmd->add_option("--de-pop", de.population, "Differential evolution population")->check(CLI::Range(4, 100000));
        cmd->add_option("--de-gens", de.generations, "Differential evolution generations");
        cmd->add_option("--seed", de.seed, "Seed");
        data.add(cmd);
        cmd->add_option("--out", out, "Output ensemble spec")->required();
        cmd->callback([this] { run(); });
    }

    void run()
    {
        if (ckpts.size() != datasets.size()) {
            throw UsageError("ensemble-fit: need one --dataset per --ckpt");
        }
        std::vector<scorer::ScorerParams> members;
        for (const std::string& c : ckpts) {
            members.push_back(load_scorer(c));
        }
        const auto ds = load_datasets(datasets, data);
        de.workers = *workers;
        train::EnsembleSpec spec = train::fit_ensemble(members, ds, de);
        for (std::size_t i = 0; i < ckpts.size(); ++i) {
            spec.members[i].checkpoint = ckpts[i];
        }
        train::save_ensemble(out, spec);
        std::vector<std::string> inputs = ckpts;
        inputs.insert(inputs.end(), datasets.begin(), datasets.end());
        const json cfg{{"de_pop", de.population}, {"de_gens", de.generations}, {"data", data.to_json()}};
        write_manifest(out, "ensemble-fit", de.seed, cfg, inputs, {out});
        for (const auto& m : spec.members) {
            std::cout << m.checkpoint << " weight " << m.weight << "\n";
        }
    }
};

// ---------------------------------------------------------------------------
// search

struct SearchCmd {
    CLI::App* cmd = nullptr;
    std::size_t* workers;
    std::string ckpt;
    std::string ensemble;
    std::string proxy;
    std::string config;
    search::SearchConfig c;
    std::size_t input_size = 32;
    std::size_t classes = 10;
    std::string out;
    std::string log;

    explicit SearchCmd(std::size_t* w) : workers(w) {}

    void add(CLI::App& app)
    {
        cmd = app.add_subcommand("search", "Evolutionary search of residual genomes under a parameter budget");
        auto* ck = cmd->add_option("--ckpt", ckpt, "Scorer checkpoint");
        auto* en = cmd->add_option("--ensemble", ensemble, "Ensemble spec");
        auto* px = cmd->add_option("--proxy", proxy, "Zero-cost stand-in scorer: params")
                       ->check(CLI::IsMember({"params"}));
        ck->excludes(en)->excludes(px);
        en->excludes(px);
        cmd->add_option("--config", config, "JSON config; flags override it");
        cmd->add_option("--budget", c.param_budget, "Parameter budget");
        cmd->add_option("--floor", c.param_floor, "Parameter floor of the returned architecture");
        cmd->add_option("--pop", c.population, "Population size");
        cmd->add_option("--gens", c.generations, "Generations");
        cmd->add_option("--max-blocks", c.max_blocks, "Maximum blocks");
        cmd->add_option("--seed", c.seed, "Seed");
        cmd->add_option("--input-size", input_size, "Input resolution of decoded genomes");
        cmd->add_option("--classes", classes, "Classifier head classes counted in params");
        cmd->add_option("--out", out, "Output graph JSON")->required();
        cmd->add_option("--log", log, "Per-generation JSON lines (default <out>.log.jsonl)");
        cmd->callback([this] { run(); });
    }

    void run()
    {
        ConfigLayer layer(*cmd, config);
        layer.apply("budget", c.param_budget);
        layer.apply("floor", c.param_floor);
        layer.apply("pop", c.population);
        layer.apply("gens", c.generations);
        layer.apply("max_blocks", c.max_blocks);
        layer.apply("seed", c.seed);
        layer.apply("input_size", input_size);
        layer.apply("classes", classes);
        layer.finish();
        if (ckpt.empty() && ensemble.empty() && proxy.empty()) {
            throw UsageError("search: give one of --ckpt, --ensemble or --proxy");
        }
        c.decode = {3, input_size, classes};
        c.workers = *workers;
        std::vector<std::string> inputs;
        search::ScoreFn fn;
        if (!ckpt.empty()) {
            auto p = std::make_shared<const scorer::ScorerParams>(load_scorer(ckpt));
            fn = [p](const arch::ArchGraph& g) { return scorer::score(g, *p); };
            inputs.push_back(ckpt);
        } else if (!ensemble.empty()) {
            auto e = std::make_shared<const train::EnsembleSpec>(train::load_ensemble(ensemble));
            fn = [e](const arch::ArchGraph& g) { return train::ensemble_score(g, *e); };
            inputs.push_back(ensemble);
        } else {
            fn = [](const arch::ArchGraph& g) { return baselines::params_proxy(g); };
        }
        if (log.empty()) {
            log = out + ".log.jsonl";
        }
        std::ofstream log_out(log, std::ios::binary | std::ios::trunc);
        if (!log_out) {
            throw DataError("cannot write " + log);
        }
        const search::SearchResult r = search::run_search(fn, c, [&](const search::GenerationLog& l) {
            log_out << search::to_json(l).dump() << "\n";
            log_out.flush();
        });
        log_out.close();
        const arch::ArchGraph best = arch::decode_genome(r.best.genome, c.decode);
        write_bytes(out, arch::graph_to_json(best).dump(2) + "\n");
        const std::string genome_out = out + ".genome.txt";
        write_bytes(genome_out, arch::genome_to_string(r.best.genome) + "\n");
        const json cfg{{"budget", c.param_budget}, {"floor", c.param_floor}, {"pop", c.population},
                       {"gens", c.generations},    {"max_blocks", c.max_blocks},
                       {"input_size", input_size}, {"classes", classes},
                       {"scorer", ckpt.empty() ? (ensemble.empty() ? "proxy:" + proxy : "ensemble") : "ckpt"}};
        write_manifest(out, "search", c.seed, cfg, inputs, {out, genome_out, log});
        std::cout << arch::genome_to_string(r.best.genome) << "\nparams " << r.best.params << " score "
                  << r.best.score << "\n";
    }
};

// ---------------------------------------------------------------------------
// selfcheck

int run_selfcheck()
{
    const std::vector<check::CheckResult> results{check::op_gradients(), check::pipeline_gradient(),
                                                  check::dft_statistics(), check::vnorm(), check::soft_rank()};
    bool ok = true;
    for (const auto& r : results) {
        std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << "\n";
        ok = ok && r.passed;
    }
    return ok ? 0 : 3;
}

int exit_code(ErrorKind k)
{
    switch (k) {
    case ErrorKind::usage: return 1;
    case ErrorKind::data: return 2;
    case ErrorKind::numeric: return 3;
    }
    return 2;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Fourier-kernel architecture scorer"};
    app.require_subcommand(1);
    app.set_version_flag("--version", tool_version);
    std::size_t workers = util::default_workers();
    app.add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);

    SynthCmd synth;
    TrainCmd train_cmd(&workers);
    ScoreCmd score;
    EvalCmd eval_cmd(&workers);
    EnsembleFitCmd ens(&workers);
    SearchCmd search_cmd(&workers);
    synth.add(app);
    train_cmd.add(app);
    score.add(app);
    eval_cmd.add(app);
    ens.add(app);
    search_cmd.add(app);
    int selfcheck_status = 0;
    app.add_subcommand("selfcheck", "Gradient, DFT statistics, v-norm and soft-rank checks")->callback([&] {
        selfcheck_status = run_selfcheck();
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return selfcheck_status;
}
