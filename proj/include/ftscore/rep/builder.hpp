#pragma once

// Constructed architectures: an ArchGraph executed with every operator replaced
// by its representation. Convs draw their weights from a weight source
// (normally the shared frequency kernel) and are unitized after the conv:
//
//   vnorm   divide by the std of the conv output, measured on the input-like
//           tensor and then held constant (no gradient reaches the factor)
//   static  divide by sqrt(2/n), n = conv input channels (or multiply, as a switch)
//
// Operators fed only by known-zero tensors (the "none" edge) are folded to
// zeros without running them and convs on zeros are not unitized.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ftscore/arch/graph.hpp"
#include "ftscore/error.hpp"
#include "ftscore/spectral/materialize.hpp"
#include "ftscore/tensor/ops.hpp"
#include "ftscore/tensor/tape.hpp"

namespace ftscore::rep {

using arch::ArchGraph;
using arch::LayerKind;
using arch::LayerSpec;

enum class Variant { vnorm, static_unitization };
enum class StaticRule { divide, multiply };

inline std::string variant_name(Variant v) { return v == Variant::vnorm ? "vnorm" : "static"; }

inline Variant parse_variant(const std::string& s)
{
    if (s == "vnorm") {
        return Variant::vnorm;
    }
    if (s == "static") {
        return Variant::static_unitization;
    }
    throw UsageError("variant must be 'vnorm' or 'static', got '" + s + "'");
}

struct RepOptions {
    Variant variant = Variant::vnorm;
    StaticRule static_rule = StaticRule::divide;
};

/// How conv outputs are unitized during one execution.
enum class FactorMode {
    calibrate,  // measure std on the fly, record it, divide by it
    stored,     // divide by previously recorded factors
    fixed,      // static sqrt(2/n) rule
    none,       // raw conv outputs
};

/// Input-like tensor geometry, stored NCHW.
struct InputShape {
    std::size_t batch = 64;
    std::size_t channels = 3;
    std::size_t height = 32;
    std::size_t width = 32;

    [[nodiscard]] Shape shape() const { return {batch, channels, height, width}; }
    friend bool operator==(const InputShape&, const InputShape&) = default;
};

inline Tensor random_input_like(const InputShape& s, std::mt19937_64& rng)
{
    std::normal_distribution<double> normal(0.0, 1.0);
    Tensor t(s.shape());
    for (double& v : t.data()) {
        v = normal(rng);
    }
    return t;
}

class ConstructedArch {
public:
    ConstructedArch(std::shared_ptr<const ArchGraph> graph, RepOptions options)
        : graph_(std::move(graph)), options_(options), factors_(graph_->nodes().size(), 1.0)
    {
        for (std::size_t i = 0; i < graph_->nodes().size(); ++i) {
            if (graph_->node(i).op.kind == LayerKind::conv) {
                convs_.push_back(i);
            }
        }
    }

    [[nodiscard]] const ArchGraph& graph() const noexcept { return *graph_; }
    [[nodiscard]] const std::shared_ptr<const ArchGraph>& graph_ptr() const noexcept { return graph_; }
    [[nodiscard]] const RepOptions& options() const noexcept { return options_; }
    [[nodiscard]] Variant variant() const noexcept { return options_.variant; }
    [[nodiscard]] bool calibrated() const noexcept { return calibrated_; }
    /// Per node index; 1 for nodes that are not calibrated convs.
    [[nodiscard]] const std::vector<double>& factors() const noexcept { return factors_; }
    [[nodiscard]] const std::vector<std::size_t>& conv_nodes() const noexcept { return convs_; }

    void set_factors(std::vector<double> factors)
    {
        if (factors.size() != factors_.size()) {
            throw UsageError("set_factors: expected one factor per node");
        }
        factors_ = std::move(factors);
        calibrated_ = true;
    }

    /// Static unitization divisor (or multiplier) for conv node i.
    [[nodiscard]] double static_factor(std::size_t i) const
    {
        const double n = static_cast<double>(graph_->node(i).op.c_in);
        return std::sqrt(2.0 / n);
    }

private:
    std::shared_ptr<const ArchGraph> graph_;
    RepOptions options_;
    std::vector<double> factors_;
    std::vector<std::size_t> convs_;
    bool calibrated_ = false;
};

inline ConstructedArch build(std::shared_ptr<const ArchGraph> g, RepOptions options = {})
{
    for (const auto& node : g->nodes()) {
        switch (node.op.kind) {
        case LayerKind::conv:
        case LayerKind::batch_norm:
        case LayerKind::relu:
        case LayerKind::avg_pool:
        case LayerKind::max_pool:
        case LayerKind::global_avg_pool:
        case LayerKind::identity:
        case LayerKind::zero:
            break;
        default:
            throw UsageError("node '" + node.id + "': unsupported layer kind for representation");
        }
    }
    return ConstructedArch(std::move(g), options);
}

inline ConstructedArch build(const ArchGraph& g, RepOptions options = {})
{
    return build(std::make_shared<const ArchGraph>(g), options);
}

inline spectral::KernelGeometry conv_geometry(const LayerSpec& op)
{
    return {op.c_in / op.groups, op.c_out, op.kh, op.kw};
}

// ---------------------------------------------------------------------------
// Execution contexts

/// Records every op on a tape.
struct TapeContext {
    using Value = Var;
    Tape* tape;

    Value constant(Tensor t) { return tape->constant(std::move(t)); }
    Value apply(OpKind k, const std::vector<Value>& in, const OpAttrs& a)
    {
        return tape->apply(k, std::span<const Var>(in), a);
    }
    static const Tensor& value(const Value& v) { return v.value(); }
    static void release(Value&) {}
};

/// Evaluates ops immediately; intermediates are freed once consumed.
struct EagerContext {
    using Value = std::shared_ptr<const Tensor>;

    Value constant(Tensor t) { return std::make_shared<const Tensor>(std::move(t)); }
    Value apply(OpKind k, const std::vector<Value>& in, const OpAttrs& a)
    {
        std::vector<const Tensor*> args;
        args.reserve(in.size());
        for (const Value& v : in) {
            args.push_back(v.get());
        }
        return std::make_shared<const Tensor>(forward(k, args, a));
    }
    static const Tensor& value(const Value& v) { return *v; }
    static void release(Value& v) { v.reset(); }
};

// ---------------------------------------------------------------------------
// Weight sources

/// Materialized conv weights for a fixed frequency tensor, shared across
/// architectures and threads.
class MaterializeCache {
public:
    explicit MaterializeCache(Tensor freq) : freq_(std::move(freq)), coefficients_(freq_) {}

    std::shared_ptr<const Tensor> get(const spectral::KernelGeometry& g)
    {
        {
            std::lock_guard<std::mutex> lock(mu_);
            const auto it = cache_.find(g);
            if (it != cache_.end()) {
                return it->second;
            }
        }
        auto w = std::make_shared<const Tensor>(
            spectral::magnitude_tensor(coefficients_.coefficients(g), g));
        std::lock_guard<std::mutex> lock(mu_);
        return cache_.emplace(g, std::move(w)).first->second;
    }

    [[nodiscard]] const Tensor& freq() const noexcept { return freq_; }

private:
    Tensor freq_;
    spectral::CoefficientCache coefficients_;
    std::mutex mu_;
    std::map<spectral::KernelGeometry, std::shared_ptr<const Tensor>> cache_;
};

/// Spectral weights recorded on a tape: one materialize op per distinct geometry.
class TapeSpectralWeights {
public:
    explicit TapeSpectralWeights(Var freq) : freq_(freq) {}

    Var operator()(TapeContext& ctx, std::size_t /*node*/, const LayerSpec& op)
    {
        const spectral::KernelGeometry g = conv_geometry(op);
        const auto it = cache_.find(g);
        if (it != cache_.end()) {
            return it->second;
        }
        OpAttrs a;
        a.geometry = g;
        const Var w = ctx.tape->apply(OpKind::spectral_materialize, {freq_}, a);
        cache_.emplace(g, w);
        return w;
    }

private:
    Var freq_;
    std::map<spectral::KernelGeometry, Var> cache_;
};

/// Spectral weights for eager execution, backed by a shared cache.
class EagerSpectralWeights {
public:
    explicit EagerSpectralWeights(MaterializeCache& cache) : cache_(&cache) {}

    EagerContext::Value operator()(EagerContext&, std::size_t, const LayerSpec& op)
    {
        return cache_->get(conv_geometry(op));
    }

private:
    MaterializeCache* cache_;
};

/// Independent Kaiming-normal weights per conv node, reproducible from a seed.
class KaimingWeights {
public:
    explicit KaimingWeights(std::uint64_t seed) : seed_(seed) {}

    EagerContext::Value operator()(EagerContext&, std::size_t node, const LayerSpec& op)
    {
        std::seed_seq seq{seed_, static_cast<std::uint64_t>(node)};
        std::mt19937_64 rng(seq);
        const std::size_t fan_in = op.c_in / op.groups * op.kh * op.kw;
        std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
        Tensor w(Shape{op.c_out, op.c_in / op.groups, op.kh, op.kw});
        for (double& v : w.data()) {
            v = normal(rng);
        }
        return std::make_shared<const Tensor>(std::move(w));
    }

private:
    std::uint64_t seed_;
};

// ---------------------------------------------------------------------------
// Executor

/// Called with (node index, node output) for every node, in execution order.
using NodeObserver = std::function<void(std::size_t, const Tensor&)>;

namespace detail {

inline bool lexicographically_less(const Tensor& a, const Tensor& b)
{
    return std::lexicographical_compare(a.data().begin(), a.data().end(), b.data().begin(),
                                        b.data().end());
}

} // namespace detail

/// Runs the constructed architecture on `input`. In calibrate mode the measured
/// factors are written to `factors_out` (indexed by node).
template <class Ctx, class Weights>
typename Ctx::Value execute(const ConstructedArch& ca, Ctx& ctx, typename Ctx::Value input,
                            Weights& weights, FactorMode mode,
                            std::vector<double>* factors_out = nullptr,
                            const NodeObserver& observer = {})
{
    using Value = typename Ctx::Value;
    const ArchGraph& g = ca.graph();
    const std::size_t n = g.nodes().size();
    std::vector<std::optional<Value>> out(n);
    std::vector<bool> zero(n, false);
    std::vector<std::size_t> pending(n);
    for (std::size_t i = 0; i < n; ++i) {
        pending[i] = g.succs(i).size();
    }
    if (mode == FactorMode::calibrate && factors_out != nullptr) {
        factors_out->assign(n, 1.0);
    }
    if (mode == FactorMode::stored && ca.variant() == Variant::vnorm && !ca.calibrated()) {
        throw UsageError("constructed architecture must be calibrated before a stored-factor pass");
    }
    auto zeros_like = [&](Shape s) { return ctx.constant(Tensor(std::move(s))); };

    for (std::size_t i : g.topo_order()) {
        const arch::Node& node = g.node(i);
        Value in;
        bool in_zero = false;
        if (i == g.input_index()) {
            in = input;
        } else {
            const auto& preds = g.preds(i);
            if (preds.size() == 1) {
                in = *out[preds[0]];
                in_zero = zero[preds[0]];
            } else if (node.junction == arch::Junction::concat) {
                std::vector<Value> parts;
                in_zero = true;
                for (std::size_t p : preds) {
                    parts.push_back(*out[p]);
                    in_zero = in_zero && zero[p];
                }
                OpAttrs a;
                a.label = node.id;
                in = ctx.apply(OpKind::concat, parts, a);
            } else {
                std::vector<Value> live;
                for (std::size_t p : preds) {
                    if (!zero[p]) {
                        live.push_back(*out[p]);
                    }
                }
                if (live.empty()) {
                    in = *out[preds[0]];
                    in_zero = true;
                } else {
                    // content order makes the sum independent of node labelling
                    std::stable_sort(live.begin(), live.end(), [](const Value& a, const Value& b) {
                        return detail::lexicographically_less(Ctx::value(a), Ctx::value(b));
                    });
                    in = live[0];
                    OpAttrs a;
                    a.label = node.id;
                    for (std::size_t k = 1; k < live.size(); ++k) {
                        in = ctx.apply(OpKind::add, {in, live[k]}, a);
                    }
                }
            }
            for (std::size_t p : preds) {
                if (--pending[p] == 0 && p != g.output_index()) {
                    Ctx::release(*out[p]);
                    out[p].reset();
                }
            }
        }

        const LayerSpec& op = node.op;
        const Shape& in_shape = Ctx::value(in).shape();
        Value res;
        bool res_zero = in_zero;
        OpAttrs a;
        a.label = node.id;
        switch (op.kind) {
        case LayerKind::identity:
            res = in;
            break;
        case LayerKind::zero:
            res = in_zero ? in : zeros_like(in_shape);
            res_zero = true;
            break;
        case LayerKind::relu:
            res = in_zero ? in : ctx.apply(OpKind::relu, {in}, a);
            break;
        case LayerKind::batch_norm:
            res = in_zero ? in : ctx.apply(OpKind::batch_norm_rep, {in}, a);
            break;
        case LayerKind::avg_pool:
        case LayerKind::max_pool:
            a.kernel = op.kh;
            a.stride = op.stride;
            a.padding = op.padding;
            if (in_zero) {
                res = zeros_like({in_shape[0], in_shape[1],
                                  arch::conv_extent(in_shape[2], op.kh, op.stride, op.padding),
                                  arch::conv_extent(in_shape[3], op.kh, op.stride, op.padding)});
            } else {
                res = ctx.apply(op.kind == LayerKind::avg_pool ? OpKind::avgpool2d
                                                               : OpKind::maxpool2d,
                                {in}, a);
            }
            break;
        case LayerKind::global_avg_pool:
            a.keepdim = true;
            res = in_zero ? zeros_like({in_shape[0], in_shape[1], 1, 1})
                          : ctx.apply(OpKind::global_avg_pool, {in}, a);
            break;
        case LayerKind::conv: {
            if (in_zero) {
                res = zeros_like({in_shape[0], op.c_out,
                                  arch::conv_extent(in_shape[2], op.kh, op.stride, op.padding),
                                  arch::conv_extent(in_shape[3], op.kw, op.stride, op.padding)});
                break;
            }
            a.stride = op.stride;
            a.padding = op.padding;
            a.groups = op.groups;
            const Value w = weights(ctx, i, op);
            Value y = ctx.apply(OpKind::conv2d, {in, w}, a);
            switch (mode) {
            case FactorMode::calibrate: {
                const double f = std_of(Ctx::value(y).data());
                if (!(f >= degenerate_scale_tolerance)) {
                    throw DegenerateError("node '" + node.id +
                                          "': conv output has degenerate std " + std::to_string(f));
                }
                if (factors_out != nullptr) {
                    (*factors_out)[i] = f;
                }
                y = ctx.apply(OpKind::divide_by_scalar, {y, ctx.constant(Tensor::scalar(f))}, a);
                break;
            }
            case FactorMode::stored:
                y = ctx.apply(OpKind::divide_by_scalar,
                              {y, ctx.constant(Tensor::scalar(ca.factors()[i]))}, a);
                break;
            case FactorMode::fixed: {
                const double s = ca.static_factor(i);
                const OpKind k = ca.options().static_rule == StaticRule::divide
                                     ? OpKind::divide_by_scalar
                                     : OpKind::scale_by_scalar;
                y = ctx.apply(k, {y, ctx.constant(Tensor::scalar(s))}, a);
                break;
            }
            case FactorMode::none:
                break;
            }
            res = y;
            break;
        }
        default:
            throw UsageError("node '" + node.id + "': unsupported layer kind for representation");
        }
        if (observer) {
            observer(i, Ctx::value(res));
        }
        out[i] = res;
        zero[i] = res_zero;
        if (pending[i] == 0 && i != g.output_index()) {
            out[i].reset();
        }
    }
    return *out[g.output_index()];
}

inline FactorMode pass_mode(const ConstructedArch& ca)
{
    return ca.variant() == Variant::vnorm ? FactorMode::stored : FactorMode::fixed;
}

/// Gradient-free pass that records a unitization factor for every conv node.
inline void calibrate_vnorm(ConstructedArch& ca, MaterializeCache& weights, const Tensor& input)
{
    if (ca.variant() != Variant::vnorm) {
        throw UsageError("calibrate_vnorm requires the vnorm variant");
    }
    EagerContext ctx;
    EagerSpectralWeights w(weights);
    std::vector<double> factors;
    (void)execute(ca, ctx, ctx.constant(input), w, FactorMode::calibrate, &factors);
    ca.set_factors(std::move(factors));
}

/// Second pass on a tape: divides by the stored factors (vnorm) or the static rule.
inline Var forward_features(const ConstructedArch& ca, Tape& tape, Var freq, Var input)
{
    if (ca.variant() == Variant::vnorm && !ca.calibrated()) {
        throw UsageError("forward_features: vnorm architecture is not calibrated");
    }
    TapeContext ctx{&tape};
    TapeSpectralWeights w(freq);
    return execute(ca, ctx, input, w, pass_mode(ca));
}

/// Calibration and the recorded pass fused: factors are read off the recorded
/// conv outputs and enter the tape as constants. Produces the same values as
/// calibrate_vnorm followed by forward_features, with one forward instead of two.
template <class Weights>
Var forward_features_fused_with(ConstructedArch& ca, Tape& tape, Weights& w, Var input)
{
    TapeContext ctx{&tape};
    if (ca.variant() != Variant::vnorm) {
        return execute(ca, ctx, input, w, FactorMode::fixed);
    }
    std::vector<double> factors;
    const Var out = execute(ca, ctx, input, w, FactorMode::calibrate, &factors);
    ca.set_factors(std::move(factors));
    return out;
}

inline Var forward_features_fused(ConstructedArch& ca, Tape& tape, Var freq, Var input)
{
    TapeSpectralWeights w(freq);
    return forward_features_fused_with(ca, tape, w, input);
}

/// Inference: a single gradient-free pass (vnorm factors measured on the fly).
inline Tensor infer_features(const ConstructedArch& ca, MaterializeCache& weights,
                             const Tensor& input, const NodeObserver& observer = {})
{
    EagerContext ctx;
    EagerSpectralWeights w(weights);
    const FactorMode mode =
        ca.variant() == Variant::vnorm ? FactorMode::calibrate : FactorMode::fixed;
    return *execute(ca, ctx, ctx.constant(input), w, mode, nullptr, observer);
}

} // namespace ftscore::rep
