#pragma once

// Random tensors, random op instances and an op-level gradient check that is
// independent of the tape. Used by the selfcheck command and the test suites.

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "ftscore/tensor/ops.hpp"

namespace ftscore::opcheck {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0)
{
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor t(std::move(shape));
    for (double& v : t.data()) {
        v = dist(rng);
    }
    return t;
}

/// Entries uniform in +-[0.1, 1]: keeps relu and |.| away from their kinks.
inline Tensor random_away_from_zero(Shape shape, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> mag(0.1, 1.0);
    std::bernoulli_distribution sign(0.5);
    Tensor t(std::move(shape));
    for (double& v : t.data()) {
        v = sign(rng) ? mag(rng) : -mag(rng);
    }
    return t;
}

/// Distinct entries at least `gap` apart (shuffled arithmetic progression plus jitter).
inline Tensor random_distinct(Shape shape, std::mt19937_64& rng, double gap = 1e-2)
{
    Tensor t(std::move(shape));
    std::vector<double> values(t.size());
    std::uniform_real_distribution<double> jitter(0.0, gap * 0.25);
    for (std::size_t i = 0; i < values.size(); ++i) {
        values[i] = (static_cast<double>(i) - static_cast<double>(values.size()) / 2.0) * gap +
                    jitter(rng);
    }
    std::shuffle(values.begin(), values.end(), rng);
    std::copy(values.begin(), values.end(), t.data().begin());
    return t;
}

/// Max relative error between backward_rule and central differences of
/// sum(cotangent * op(inputs)), over every input coordinate.
inline double op_gradcheck(OpKind kind, std::vector<Tensor> inputs, const OpAttrs& attrs,
                           std::mt19937_64& rng, double h = 1e-5)
{
    auto pointers = [](const std::vector<Tensor>& ts) {
        std::vector<const Tensor*> p;
        for (const Tensor& t : ts) {
            p.push_back(&t);
        }
        return p;
    };
    const OpResult base = evaluate(kind, pointers(inputs), attrs);
    const Tensor cot = random_tensor(base.value.shape(), rng);
    auto objective = [&](const std::vector<Tensor>& ts) {
        const Tensor out = forward(kind, pointers(ts), attrs);
        double acc = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) {
            acc += cot[i] * out[i];
        }
        return acc;
    };
    const std::vector<bool> need(inputs.size(), true);
    const std::vector<Tensor> grads =
        backward_rule(kind, pointers(inputs), base.value, attrs, base.saved, cot, need);
    double worst = 0.0;
    for (std::size_t p = 0; p < inputs.size(); ++p) {
        for (std::size_t j = 0; j < inputs[p].size(); ++j) {
            const double x0 = inputs[p][j];
            inputs[p][j] = x0 + h;
            const double up = objective(inputs);
            inputs[p][j] = x0 - h;
            const double down = objective(inputs);
            inputs[p][j] = x0;
            const double numeric = (up - down) / (2.0 * h);
            const double analytic = grads[p][j];
            worst = std::max(worst,
                             std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic)));
        }
    }
    return worst;
}

struct OpInstance {
    std::vector<Tensor> inputs;
    OpAttrs attrs;
};

/// A random, well-conditioned instance of `kind` with small shapes.
inline OpInstance random_op_instance(OpKind kind, std::mt19937_64& rng)
{
    std::uniform_int_distribution<std::size_t> small(1, 3);
    std::uniform_int_distribution<std::size_t> spatial(3, 5);
    OpInstance inst;
    switch (kind) {
    case OpKind::conv2d: {
        const std::size_t groups = small(rng) == 1 ? 2 : 1;
        const std::size_t cin = groups * small(rng);
        const std::size_t cout = groups * small(rng);
        const std::size_t k = std::uniform_int_distribution<std::size_t>(1, 3)(rng);
        inst.attrs.stride = std::uniform_int_distribution<std::size_t>(1, 2)(rng);
        inst.attrs.padding = k / 2;
        inst.attrs.groups = groups;
        inst.inputs = {random_tensor({2, cin, spatial(rng), spatial(rng)}, rng),
                       random_tensor({cout, cin / groups, k, k}, rng)};
        break;
    }
    case OpKind::relu:
    case OpKind::symlog:
        inst.inputs = {random_away_from_zero({2, small(rng), 3, 3}, rng)};
        break;
    case OpKind::sigmoid:
        inst.inputs = {random_tensor({2, small(rng), 3}, rng, -3.0, 3.0)};
        break;
    case OpKind::maxpool2d:
    case OpKind::avgpool2d: {
        inst.attrs.kernel = std::uniform_int_distribution<std::size_t>(2, 3)(rng);
        inst.attrs.stride = std::uniform_int_distribution<std::size_t>(1, 2)(rng);
        inst.attrs.padding = inst.attrs.kernel / 2;
        inst.attrs.count_include_pad = kind == OpKind::avgpool2d && small(rng) == 1;
        inst.inputs = {random_distinct({2, small(rng), spatial(rng), spatial(rng)}, rng)};
        break;
    }
    case OpKind::global_avg_pool:
        inst.attrs.keepdim = small(rng) == 1;
        inst.inputs = {random_tensor({2, small(rng), 3, 4}, rng)};
        break;
    case OpKind::linear: {
        const std::size_t n = small(rng);
        const std::size_t fin = small(rng) + 1;
        const std::size_t fout = small(rng);
        inst.inputs = {random_tensor({n, fin}, rng), random_tensor({fout, fin}, rng)};
        if (small(rng) != 1) {
            inst.inputs.push_back(random_tensor({fout}, rng));
        }
        break;
    }
    case OpKind::add: {
        const Shape s{2, small(rng), 3};
        inst.inputs = {random_tensor(s, rng), random_tensor(s, rng)};
        break;
    }
    case OpKind::concat: {
        const std::size_t parts = small(rng);
        for (std::size_t i = 0; i < parts; ++i) {
            inst.inputs.push_back(random_tensor({2, small(rng), 2, 3}, rng));
        }
        break;
    }
    case OpKind::scale_by_scalar:
    case OpKind::divide_by_scalar: {
        inst.inputs = {random_tensor({2, small(rng), 3}, rng),
                       random_away_from_zero(Shape{}, rng)};
        inst.inputs[1][0] = std::copysign(0.5 + std::abs(inst.inputs[1][0]), inst.inputs[1][0]);
        break;
    }
    case OpKind::batch_norm_rep:
        inst.inputs = {random_tensor({3, small(rng), 2, 2}, rng)};
        break;
    case OpKind::mean:
    case OpKind::std:
        inst.inputs = {random_tensor({2, small(rng), 3}, rng)};
        break;
    case OpKind::matmul: {
        const std::size_t m = small(rng);
        const std::size_t k = small(rng);
        const std::size_t n = small(rng);
        inst.inputs = {random_tensor({m, k}, rng), random_tensor({k, n}, rng)};
        break;
    }
    case OpKind::transpose_batch_channel:
        inst.inputs = {random_tensor({small(rng), small(rng) + 1, 2, 2}, rng)};
        break;
    case OpKind::spectral_materialize: {
        const std::size_t cf = small(rng) + 1;
        const std::size_t k = std::uniform_int_distribution<std::size_t>(1, 3)(rng);
        inst.inputs = {random_tensor({cf, cf, k, k}, rng)};
        inst.attrs.geometry = {small(rng), small(rng), small(rng), small(rng)};
        break;
    }
    }
    return inst;
}

} // namespace ftscore::opcheck
