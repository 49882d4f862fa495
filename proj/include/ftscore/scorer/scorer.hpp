#pragma once

// Scoring pipeline, shared by the taped (training) and eager (inference) paths:
//
//   features = representation of the graph run on the input-like tensor I
//   h = conv1x1(features, materialize(fk, c_feat, fixed_channels, 1, 1))
//   h = h / std(h)                       (vnorm variant only)
//   h = symlog(h)
//   h = conv1x1(h, L2)                   -> (B, 1, H, W)
//   h = gap(h) -> (B, 1) -> transpose -> (1, B)
//   score = MLP(h)                       B -> 64 -> 32 -> 1, ReLU between

#include <cmath>
#include <cstdint>
#include <map>
#include <mutex>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ftscore/arch/graph.hpp"
#include "ftscore/error.hpp"
#include "ftscore/rep/builder.hpp"
#include "ftscore/spectral/materialize.hpp"
#include "ftscore/tensor/checkpoint.hpp"
#include "ftscore/tensor/tape.hpp"
#include "ftscore/util/parallel.hpp"

namespace ftscore::scorer {

using arch::ArchGraph;
using rep::InputShape;
using rep::Variant;

struct ScorerConfig {
    std::size_t freq_channels = spectral::FrequencyKernel::default_channels;
    std::size_t k_max = 3;
    std::size_t fixed_channels = 64;
    std::vector<std::size_t> mlp_hidden{64, 32};
    InputShape input{};
    Variant variant = Variant::vnorm;
    rep::StaticRule static_rule = rep::StaticRule::divide;

    friend bool operator==(const ScorerConfig&, const ScorerConfig&) = default;
};

inline nlohmann::json config_to_json(const ScorerConfig& c)
{
    return {{"freq_channels", c.freq_channels},
            {"k_max", c.k_max},
            {"fixed_channels", c.fixed_channels},
            {"mlp_hidden", c.mlp_hidden},
            {"input", {c.input.batch, c.input.channels, c.input.height, c.input.width}},
            {"variant", rep::variant_name(c.variant)},
            {"static_rule", c.static_rule == rep::StaticRule::divide ? "divide" : "multiply"}};
}

inline ScorerConfig config_from_json(const nlohmann::json& j)
{
    try {
        ScorerConfig c;
        c.freq_channels = j.at("freq_channels").get<std::size_t>();
        c.k_max = j.at("k_max").get<std::size_t>();
        c.fixed_channels = j.at("fixed_channels").get<std::size_t>();
        c.mlp_hidden = j.at("mlp_hidden").get<std::vector<std::size_t>>();
        const auto in = j.at("input").get<std::vector<std::size_t>>();
        if (in.size() != 4) {
            throw DataError("scorer config: input must have 4 dimensions");
        }
        c.input = {in[0], in[1], in[2], in[3]};
        c.variant = rep::parse_variant(j.at("variant").get<std::string>());
        const std::string rule = j.value("static_rule", "divide");
        if (rule != "divide" && rule != "multiply") {
            throw DataError("scorer config: static_rule must be 'divide' or 'multiply'");
        }
        c.static_rule = rule == "divide" ? rep::StaticRule::divide : rep::StaticRule::multiply;
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("scorer config: ") + e.what());
    } catch (const UsageError& e) {
        throw DataError(e.what());
    }
}

/// Everything trained: frequency kernel, input-like tensor, L2 and MLP weights.
struct ScorerParams {
    ScorerConfig config;
    Tensor freq;   // (C_f, C_f, k_max, k_max)
    Tensor input;  // (B, C, H, W)
    Tensor l2;     // (1, fixed_channels, 1, 1)
    /// Alternating weight (out, in) and bias (out) per MLP layer.
    std::vector<Tensor> mlp;

    /// Fixed order used by the optimizer and checkpoints.
    [[nodiscard]] std::vector<Tensor*> tensors()
    {
        std::vector<Tensor*> out{&freq, &input, &l2};
        for (Tensor& t : mlp) {
            out.push_back(&t);
        }
        return out;
    }

    [[nodiscard]] std::vector<const Tensor*> tensors() const
    {
        std::vector<const Tensor*> out{&freq, &input, &l2};
        for (const Tensor& t : mlp) {
            out.push_back(&t);
        }
        return out;
    }

    [[nodiscard]] std::vector<std::string> names() const
    {
        std::vector<std::string> out{"freq", "input", "l2"};
        for (std::size_t i = 0; i < mlp.size(); ++i) {
            out.push_back("mlp." + std::to_string(i / 2) + (i % 2 == 0 ? ".weight" : ".bias"));
        }
        return out;
    }

    [[nodiscard]] rep::RepOptions rep_options() const { return {config.variant, config.static_rule}; }
};

/// freq and I are N(0,1); L2 and MLP weights are N(0, 2/fan_in); biases are 0.
inline ScorerParams init_params(const ScorerConfig& cfg, std::uint64_t seed)
{
    if (cfg.freq_channels == 0 || cfg.k_max == 0 || cfg.fixed_channels == 0 || cfg.input.batch == 0) {
        throw UsageError("scorer config: sizes must be positive");
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto fill = [&](Tensor& t, double sd) {
        for (double& v : t.data()) {
            v = sd * normal(rng);
        }
    };
    ScorerParams p;
    p.config = cfg;
    p.freq = Tensor(Shape{cfg.freq_channels, cfg.freq_channels, cfg.k_max, cfg.k_max});
    fill(p.freq, 1.0);
    p.input = Tensor(cfg.input.shape());
    fill(p.input, 1.0);
    p.l2 = Tensor(Shape{1, cfg.fixed_channels, 1, 1});
    fill(p.l2, std::sqrt(2.0 / static_cast<double>(cfg.fixed_channels)));
    std::size_t fan_in = cfg.input.batch;
    std::vector<std::size_t> widths = cfg.mlp_hidden;
    widths.push_back(1);
    for (std::size_t w : widths) {
        Tensor weight(Shape{w, fan_in});
        fill(weight, std::sqrt(2.0 / static_cast<double>(fan_in)));
        p.mlp.push_back(std::move(weight));
        p.mlp.emplace_back(Shape{w});
        fan_in = w;
    }
    return p;
}

inline Checkpoint to_checkpoint(const ScorerParams& p)
{
    Checkpoint ck;
    ck.meta["scorer"] = config_to_json(p.config);
    const auto names = p.names();
    const auto ts = p.tensors();
    for (std::size_t i = 0; i < ts.size(); ++i) {
        ck.add(names[i], *ts[i]);
    }
    return ck;
}

inline ScorerParams from_checkpoint(const Checkpoint& ck)
{
    if (!ck.meta.contains("scorer")) {
        throw DataError("checkpoint is not a scorer checkpoint (no 'scorer' metadata)");
    }
    ScorerParams p = init_params(config_from_json(ck.meta.at("scorer")), 0);
    const auto names = p.names();
    auto ts = p.tensors();
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const Tensor& t = ck.get(names[i]);
        if (t.shape() != ts[i]->shape()) {
            throw DataError("checkpoint tensor '" + names[i] + "' has shape " + shape_str(t.shape()) +
                            ", expected " + shape_str(ts[i]->shape()));
        }
        if (!t.all_finite()) {
            throw DataError("checkpoint tensor '" + names[i] + "' has non-finite entries");
        }
        *ts[i] = t;
    }
    return p;
}

namespace detail {

/// Everything after the representation. `params` holds l2 then the MLP tensors.
template <class Ctx>
typename Ctx::Value head(Ctx& ctx, typename Ctx::Value features, typename Ctx::Value l1_weight,
                         const std::vector<typename Ctx::Value>& params, Variant variant)
{
    using V = typename Ctx::Value;
    V h = ctx.apply(OpKind::conv2d, {features, l1_weight}, OpAttrs{});
    if (variant == Variant::vnorm) {
        V s = ctx.apply(OpKind::std, {h}, OpAttrs{});
        // an all-zero representation has nothing to unitize
        if (Ctx::value(s)[0] >= degenerate_scale_tolerance) {
            h = ctx.apply(OpKind::divide_by_scalar, {h, s}, OpAttrs{});
        }
    }
    h = ctx.apply(OpKind::symlog, {h}, OpAttrs{});
    h = ctx.apply(OpKind::conv2d, {h, params[0]}, OpAttrs{});
    h = ctx.apply(OpKind::global_avg_pool, {h}, OpAttrs{});
    h = ctx.apply(OpKind::transpose_batch_channel, {h}, OpAttrs{});
    for (std::size_t i = 1; i + 1 < params.size(); i += 2) {
        h = ctx.apply(OpKind::linear, {h, params[i], params[i + 1]}, OpAttrs{});
        if (i + 2 < params.size()) {
            h = ctx.apply(OpKind::relu, {h}, OpAttrs{});
        }
    }
    return h;
}

inline spectral::KernelGeometry l1_geometry(const ArchGraph& g, const ScorerConfig& c)
{
    const arch::NodeShape out = g.shape_of(g.output_index());
    return {out.channels, c.fixed_channels, 1, 1};
}

inline void check_graph(const ArchGraph& g, const ScorerParams& p)
{
    if (g.input_channels() != p.config.input.channels) {
        throw UsageError("graph expects " + std::to_string(g.input_channels()) +
                         " input channels but the scorer's input-like tensor has " +
                         std::to_string(p.config.input.channels));
    }
}

} // namespace detail

/// Leaves for one taped evaluation, in ScorerParams::tensors() order.
struct TapedScore {
    Var score;
    std::vector<Var> leaves;
};

/// Pipeline on `tape` from leaves in ScorerParams::tensors() order. With
/// `fused` the vnorm factors are measured during this pass (and stored in
/// `ca`); otherwise `ca` must already be calibrated and its factors are reused.
inline Var score_graph(rep::ConstructedArch& ca, const ScorerConfig& cfg, Tape& tape,
                       std::span<const Var> leaves, bool fused = true)
{
    if (leaves.size() < 5) {
        throw UsageError("score_graph: expected freq, input, l2 and MLP leaves");
    }
    const Var features = fused ? rep::forward_features_fused(ca, tape, leaves[0], leaves[1])
                               : rep::forward_features(ca, tape, leaves[0], leaves[1]);
    OpAttrs a;
    a.geometry = detail::l1_geometry(ca.graph(), cfg);
    const Var w1 = tape.apply(OpKind::spectral_materialize, {leaves[0]}, a);
    rep::TapeContext ctx{&tape};
    const std::vector<Var> rest(leaves.begin() + 2, leaves.end());
    return detail::head(ctx, features, w1, rest, cfg.variant);
}

/// Records the full pipeline on `tape` with every parameter as a trainable leaf.
inline TapedScore score_on_tape(const ArchGraph& g, const ScorerParams& p, Tape& tape)
{
    detail::check_graph(g, p);
    TapedScore out;
    const auto names = p.names();
    const auto ts = p.tensors();
    for (std::size_t i = 0; i < ts.size(); ++i) {
        out.leaves.push_back(tape.leaf(*ts[i], names[i]));
    }
    rep::ConstructedArch ca = rep::build(g, p.rep_options());
    out.score = score_graph(ca, p.config, tape, out.leaves);
    return out;
}

/// Score and d(score)/d(param) for every parameter tensor, scaled by `seed_grad`.
inline std::pair<double, std::vector<Tensor>> score_with_grad(const ArchGraph& g, const ScorerParams& p,
                                                              double seed_grad = 1.0)
{
    Tape tape;
    TapedScore ts = score_on_tape(g, p, tape);
    Gradients grads = tape.backward(ts.score, seed_grad);
    std::vector<Tensor> out;
    out.reserve(ts.leaves.size());
    for (const Var& v : ts.leaves) {
        out.push_back(grads.take(v));
    }
    return {ts.score.value()[0], std::move(out)};
}

/// Materialized weights with their complex coefficients, keyed by geometry,
/// for one fixed frequency tensor. Thread-safe.
class WeightBank {
public:
    struct Entry {
        std::vector<spectral::Complex> coefficients;
        Tensor weight;
    };

    explicit WeightBank(const Tensor& freq) : freq_(&freq), stages_(freq) {}

    const Entry& get(const spectral::KernelGeometry& g)
    {
        {
            std::lock_guard<std::mutex> lock(mu_);
            const auto it = entries_.find(g);
            if (it != entries_.end()) {
                return *it->second;
            }
        }
        auto e = std::make_unique<Entry>();
        e->coefficients = stages_.coefficients(g);
        e->weight = spectral::magnitude_tensor(e->coefficients, g);
        std::lock_guard<std::mutex> lock(mu_);
        return *entries_.emplace(g, std::move(e)).first->second;
    }

    [[nodiscard]] const Tensor& freq() const noexcept { return *freq_; }

private:
    const Tensor* freq_;
    spectral::CoefficientCache stages_;
    std::mutex mu_;
    std::map<spectral::KernelGeometry, std::unique_ptr<Entry>> entries_;
};

/// Gradients of one score with the frequency kernel's share left per geometry.
struct SplitGradient {
    double score = 0.0;
    /// d(score)/d(param) for every parameter except freq (index 0 left empty).
    std::vector<Tensor> dense;
    /// d(score)/d(materialized weight) per geometry.
    std::map<spectral::KernelGeometry, Tensor> weights;
};

namespace detail {

/// Conv weights as trainable tape leaves drawn from a WeightBank.
class BankLeafWeights {
public:
    BankLeafWeights(Tape& tape, WeightBank& bank) : tape_(&tape), bank_(&bank) {}

    Var get(const spectral::KernelGeometry& g)
    {
        const auto it = leaves_.find(g);
        if (it != leaves_.end()) {
            return it->second;
        }
        const Var v = tape_->leaf(bank_->get(g).weight);
        leaves_.emplace(g, v);
        return v;
    }

    Var operator()(rep::TapeContext&, std::size_t, const arch::LayerSpec& op) { return get(rep::conv_geometry(op)); }

    [[nodiscard]] const std::map<spectral::KernelGeometry, Var>& leaves() const noexcept { return leaves_; }

private:
    Tape* tape_;
    WeightBank* bank_;
    std::map<spectral::KernelGeometry, Var> leaves_;
};

} // namespace detail

/// Same score and gradients as score_with_grad, but the materialize step is
/// left out of the tape: the caller combines `weights` across a batch and runs
/// the materialize VJP once per batch (see freq_gradient).
inline SplitGradient score_with_split_grad(const ArchGraph& g, const ScorerParams& p, WeightBank& bank)
{
    detail::check_graph(g, p);
    Tape tape;
    const auto names = p.names();
    const auto ts = p.tensors();
    std::vector<Var> leaves{Var{}};
    for (std::size_t i = 1; i < ts.size(); ++i) {
        leaves.push_back(tape.leaf(*ts[i], names[i]));
    }
    detail::BankLeafWeights w(tape, bank);
    rep::ConstructedArch ca = rep::build(g, p.rep_options());
    const Var features = rep::forward_features_fused_with(ca, tape, w, leaves[1]);
    const Var w1 = w.get(detail::l1_geometry(g, p.config));
    rep::TapeContext ctx{&tape};
    const std::vector<Var> rest(leaves.begin() + 2, leaves.end());
    const Var out = detail::head(ctx, features, w1, rest, p.config.variant);
    Gradients grads = tape.backward(out);
    SplitGradient r;
    r.score = out.value()[0];
    r.dense.emplace_back();
    for (std::size_t i = 1; i < leaves.size(); ++i) {
        r.dense.push_back(grads.take(leaves[i]));
    }
    for (const auto& [geom, v] : w.leaves()) {
        r.weights.emplace(geom, grads.take(v));
    }
    return r;
}

/// d(objective)/d(freq) from accumulated weight gradients; shared DFT stages
/// are transposed once (see materialize_vjp_many). Deterministic in geometry order.
inline Tensor freq_gradient(WeightBank& bank, const std::map<spectral::KernelGeometry, Tensor>& weight_grads)
{
    std::vector<spectral::VjpItem> items;
    for (const auto& [geom, t] : weight_grads) {
        items.push_back({geom, bank.get(geom).coefficients, &t});
    }
    return spectral::materialize_vjp_many(bank.freq().shape(), items);
}

/// Gradient-free scoring with a shared weight cache; safe to call concurrently
/// with the same cache as long as `p` is not modified.
inline double score_eager(const ArchGraph& g, const ScorerParams& p, rep::MaterializeCache& cache)
{
    detail::check_graph(g, p);
    const rep::ConstructedArch ca = rep::build(g, p.rep_options());
    rep::EagerContext ctx;
    const Tensor features = rep::infer_features(ca, cache, p.input);
    std::vector<rep::EagerContext::Value> rest;
    for (std::size_t i = 2; i < p.tensors().size(); ++i) {
        rest.push_back(std::make_shared<const Tensor>(*p.tensors()[i]));
    }
    const auto out = detail::head(ctx, ctx.constant(features),
                                  cache.get(detail::l1_geometry(g, p.config)), rest, p.config.variant);
    const double s = (*out)[0];
    if (!std::isfinite(s)) {
        throw DegenerateError("score is not finite");
    }
    return s;
}

inline double score(const ArchGraph& g, const ScorerParams& p)
{
    rep::MaterializeCache cache(p.freq);
    return score_eager(g, p, cache);
}

/// Scores in input order. The first failing graph (by index) aborts the batch.
inline std::vector<double> score_batch(std::span<const std::shared_ptr<const ArchGraph>> gs,
                                       const ScorerParams& p,
                                       std::size_t workers = util::default_workers())
{
    rep::MaterializeCache cache(p.freq);
    std::vector<double> out(gs.size());
    util::parallel_for(gs.size(), workers, [&](std::size_t i) {
        try {
            out[i] = score_eager(*gs[i], p, cache);
        } catch (const Error& e) {
            throw BatchError(i, e);
        }
    });
    return out;
}

} // namespace ftscore::scorer
