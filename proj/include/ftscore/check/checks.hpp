#pragma once

// Numerical self-checks shared by the `selfcheck` command and the acceptance
// binary. Each check returns a verdict plus the measured worst case.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ftscore/arch/genome.hpp"
#include "ftscore/rank/correlation.hpp"
#include "ftscore/rank/soft_rank.hpp"
#include "ftscore/rep/builder.hpp"
#include "ftscore/scorer/scorer.hpp"
#include "ftscore/spectral/dft.hpp"
#include "ftscore/tensor/gradcheck.hpp"
#include "ftscore/tensor/opcheck.hpp"
#include "ftscore/train/synthetic.hpp"

namespace ftscore::check {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

namespace detail {

inline std::string fmt(double v)
{
    std::ostringstream os;
    os.precision(3);
    os << v;
    return os.str();
}

/// conv(3->8, 3x3) -> relu -> conv(8->8, kxk) -> bn -> relu -> conv(8->c, 1x1)
inline arch::ArchGraph toy_three_layer(std::mt19937_64& rng)
{
    const std::size_t k = std::uniform_int_distribution<std::size_t>(0, 1)(rng) == 0 ? 3 : 5;
    const std::size_t c = 4 * std::uniform_int_distribution<std::size_t>(1, 3)(rng);
    arch::GraphBuilder b("x", 3, 6);
    std::string cur = b.then("c1", arch::LayerSpec::conv(3, 8, 3, 3, 1, 1), b.input());
    cur = b.then("r1", arch::LayerSpec::relu(), cur);
    cur = b.then("c2", arch::LayerSpec::conv(8, 8, k, k, 1, k / 2), cur);
    cur = b.then("bn", arch::LayerSpec::batch_norm(), cur);
    cur = b.then("r2", arch::LayerSpec::relu(), cur);
    cur = b.then("c3", arch::LayerSpec::conv(8, c, 1, 1, 1, 0), cur);
    return arch::ArchGraph(b.finish(cur));
}

// Projection onto the permutahedron of (1..n) by enumerating orderings and
// chains of tight prefix constraints. Exponential; n <= 6.
inline std::vector<double> brute_projection(const std::vector<double>& z)
{
    const std::size_t n = z.size();
    std::vector<double> top_sum(n + 1, 0.0);
    for (std::size_t k = 1; k <= n; ++k) {
        top_sum[k] = top_sum[k - 1] + static_cast<double>(n - k + 1);
    }
    auto feasible = [&](const std::vector<double>& r) {
        if (std::abs(std::accumulate(r.begin(), r.end(), 0.0) - top_sum[n]) > 1e-9) {
            return false;
        }
        for (unsigned mask = 1; mask < (1U << n); ++mask) {
            double s = 0.0;
            std::size_t count = 0;
            for (std::size_t i = 0; i < n; ++i) {
                if ((mask >> i) & 1U) {
                    s += r[i];
                    ++count;
                }
            }
            if (s > top_sum[count] + 1e-9) {
                return false;
            }
        }
        return true;
    };
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::vector<double> best;
    double best_obj = std::numeric_limits<double>::infinity();
    do {
        for (unsigned cuts = 0; cuts < (1U << (n - 1)); ++cuts) {
            std::vector<double> r(n);
            std::size_t lo = 0;
            for (std::size_t end = 1; end <= n; ++end) {
                if (end != n && !((cuts >> (end - 1)) & 1U)) {
                    continue;
                }
                double zs = 0.0;
                for (std::size_t k = lo; k < end; ++k) {
                    zs += z[perm[k]];
                }
                const double shift = (top_sum[end] - top_sum[lo] - zs) / static_cast<double>(end - lo);
                for (std::size_t k = lo; k < end; ++k) {
                    r[perm[k]] = z[perm[k]] + shift;
                }
                lo = end;
            }
            if (!feasible(r)) {
                continue;
            }
            double obj = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                obj += (r[i] - z[i]) * (r[i] - z[i]);
            }
            if (obj < best_obj) {
                best_obj = obj;
                best = r;
            }
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

inline double max_abs(const Tensor& t)
{
    double m = 0.0;
    for (double v : t.data()) {
        m = std::max(m, std::abs(v));
    }
    return m;
}

} // namespace detail

/// Every closed-set op against central differences, `instances` random cases each.
inline CheckResult op_gradients(std::size_t instances = 100, std::uint64_t seed = 1, double tol = 1e-4)
{
    std::mt19937_64 rng(seed);
    double worst = 0.0;
    std::string worst_op;
    for (OpKind kind : all_op_kinds) {
        for (std::size_t i = 0; i < instances; ++i) {
            opcheck::OpInstance inst = opcheck::random_op_instance(kind, rng);
            const double err = opcheck::op_gradcheck(kind, inst.inputs, inst.attrs, rng);
            if (!(err <= worst)) {
                worst = err;
                worst_op = op_name(kind);
            }
        }
    }
    return {"op gradients", worst <= tol,
            std::to_string(all_op_kinds.size()) + " ops x " + std::to_string(instances) +
                ", max rel err " + detail::fmt(worst) + " (" + worst_op + ")"};
}

/// Full score pipeline on a random three-conv graph, both variants alternating.
inline CheckResult pipeline_gradient(std::size_t instances = 100, std::uint64_t seed = 2,
                                     std::size_t coordinates = 40, double tol = 1e-3)
{
    std::mt19937_64 rng(seed);
    double worst = 0.0;
    for (std::size_t t = 0; t < instances; ++t) {
        scorer::ScorerConfig c;
        c.freq_channels = 6;
        c.k_max = 3;
        c.fixed_channels = 8;
        c.mlp_hidden = {8, 4};
        c.input = {4, 3, 6, 6};
        c.variant = t % 2 == 0 ? rep::Variant::vnorm : rep::Variant::static_unitization;
        const scorer::ScorerParams p = scorer::init_params(c, rng());
        const arch::ArchGraph g = detail::toy_three_layer(rng);
        // vnorm factors are constants of the pass, measured at the base point
        rep::ConstructedArch ca = rep::build(g, p.rep_options());
        if (c.variant == rep::Variant::vnorm) {
            rep::MaterializeCache cache(p.freq);
            rep::calibrate_vnorm(ca, cache, p.input);
        }
        std::vector<Tensor> params;
        for (const Tensor* x : p.tensors()) {
            params.push_back(*x);
        }
        const TapeFn f = [&](Tape& tape, std::span<const Var> leaves) {
            return scorer::score_graph(ca, p.config, tape, leaves, false);
        };
        worst = std::max(worst, finite_diff_check(f, params, 1e-6, coordinates, rng()).max_rel_error);
    }
    return {"pipeline gradient", worst <= tol,
            std::to_string(instances) + " graphs, max rel err " + detail::fmt(worst)};
}

/// Resized coefficients of i.i.d. N(0,1) sequences keep mean 0 and unit second moment.
inline CheckResult dft_statistics(std::size_t sequences = 10000, std::uint64_t seed = 3, double tol = 0.05)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    bool ok = true;
    std::string detail;
    for (auto [n, k] : {std::pair<std::size_t, std::size_t>{8, 32}, {32, 8}}) {
        double sum_re = 0.0;
        double sum_im = 0.0;
        double sum_sq = 0.0;
        std::size_t count = 0;
        std::vector<double> x(n);
        for (std::size_t s = 0; s < sequences; ++s) {
            for (double& v : x) {
                v = normal(rng);
            }
            for (const spectral::Complex& c : spectral::dft_resize_1d(std::span<const double>(x), k)) {
                sum_re += c.real();
                sum_im += c.imag();
                sum_sq += std::norm(c);
                ++count;
            }
        }
        const double cnt = static_cast<double>(count);
        const double mean = std::hypot(sum_re / cnt, sum_im / cnt);
        const double var = sum_sq / cnt;
        ok = ok && mean <= tol && std::abs(var - 1.0) <= tol;
        detail += (detail.empty() ? "" : "; ") + std::to_string(n) + "->" + std::to_string(k) +
                  " |mean| " + detail::fmt(mean) + " var " + detail::fmt(var);
    }
    return {"dft statistics", ok, detail};
}

/// Calibrated convs emit unit std; a deep uncalibrated chain blows up by 10x or more.
inline CheckResult vnorm(std::size_t graphs = 50, std::uint64_t seed = 4, double tol = 1e-6)
{
    std::mt19937_64 rng(seed);
    rep::MaterializeCache cache{spectral::FrequencyKernel::random(16, 7, rng).freq};
    const Tensor input = rep::random_input_like({4, 3, 8, 8}, rng);
    train::SyntheticOptions shape;
    double worst = 0.0;
    std::size_t convs = 0;
    for (std::size_t t = 0; t < graphs; ++t) {
        auto ca = rep::build(arch::decode_genome(train::random_small_genome(rng, shape), {3, 8, 0}));
        rep::calibrate_vnorm(ca, cache, input);
        rep::EagerContext ctx;
        rep::EagerSpectralWeights w(cache);
        (void)rep::execute(ca, ctx, ctx.constant(input), w, rep::FactorMode::stored, nullptr,
                           [&](std::size_t i, const Tensor& v) {
                               if (ca.graph().node(i).op.kind == arch::LayerKind::conv) {
                                   worst = std::max(worst, std::abs(std_of(v.data()) - 1.0));
                                   ++convs;
                               }
                           });
    }
    arch::GraphBuilder b("x", 3, 8);
    std::string cur = b.then("c0", arch::LayerSpec::conv(3, 8, 3, 3, 1, 1), b.input());
    for (int i = 1; i < 10; ++i) {
        cur = b.then("c" + std::to_string(i), arch::LayerSpec::conv(8, 8, 3, 3, 1, 1), cur);
    }
    const auto chain = rep::build(arch::ArchGraph(b.finish(cur)));
    rep::EagerContext ctx;
    rep::EagerSpectralWeights w(cache);
    double raw = 0.0;
    double normed = 0.0;
    (void)rep::execute(chain, ctx, ctx.constant(input), w, rep::FactorMode::none, nullptr,
                       [&](std::size_t, const Tensor& v) { raw = std::max(raw, detail::max_abs(v)); });
    (void)rep::execute(chain, ctx, ctx.constant(input), w, rep::FactorMode::calibrate, nullptr,
                       [&](std::size_t, const Tensor& v) { normed = std::max(normed, detail::max_abs(v)); });
    const double ratio = raw / normed;
    return {"v-norm", worst <= tol && ratio >= 10.0,
            std::to_string(convs) + " convs on " + std::to_string(graphs) + " graphs, max |std-1| " +
                detail::fmt(worst) + "; deep chain max-|act| ratio " + detail::fmt(ratio)};
}

/// Tiny epsilon reproduces hard ranks on vectors with gaps of at least 10 epsilon;
/// epsilon 3 matches the enumerated projection on every ordering for n <= 5.
inline CheckResult soft_rank(std::size_t vectors = 1000, std::uint64_t seed = 5)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    double hard_err = 0.0;
    for (std::size_t t = 0; t < vectors; ++t) {
        const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 64)(rng);
        std::vector<double> v(n);
        do {
            for (double& x : v) {
                x = u(rng);
            }
            std::vector<double> s = v;
            std::sort(s.begin(), s.end());
            // distinct means separated by more than epsilon; closer pairs blend by design
            if (std::adjacent_find(s.begin(), s.end(), [](double a, double b) { return b - a < 1e-5; }) ==
                s.end()) {
                break;
            }
        } while (true);
        const std::vector<double> got = rank::soft_rank(v, {.epsilon = 1e-6});
        const std::vector<double> hard = rank::average_ranks(v);
        for (std::size_t i = 0; i < n; ++i) {
            hard_err = std::max(hard_err, std::abs(got[i] - hard[i]));
        }
    }
    double proj_err = 0.0;
    std::size_t orderings = 0;
    std::uniform_real_distribution<double> wide(-6.0, 6.0);
    for (std::size_t n = 1; n <= 5; ++n) {
        std::vector<double> values(n);
        for (double& x : values) {
            x = wide(rng);
        }
        std::sort(values.begin(), values.end());
        do {
            const std::vector<double> got = rank::soft_rank(values, {.epsilon = 3.0});
            std::vector<double> z(n);
            for (std::size_t i = 0; i < n; ++i) {
                z[i] = values[i] / 3.0;
            }
            const std::vector<double> want = detail::brute_projection(z);
            for (std::size_t i = 0; i < n; ++i) {
                proj_err = std::max(proj_err, std::abs(got[i] - want[i]));
            }
            ++orderings;
        } while (std::next_permutation(values.begin(), values.end()));
    }
    return {"soft rank", hard_err <= 1e-9 && proj_err <= 1e-8,
            std::to_string(vectors) + " vectors, max |soft-hard| " + detail::fmt(hard_err) + "; " +
                std::to_string(orderings) + " orderings, max |soft-proj| " + detail::fmt(proj_err)};
}

} // namespace ftscore::check
