#pragma once

// The closed operation set of the engine. Every op has one forward rule and one
// backward (vector-Jacobian) rule; the tape dispatches on OpKind.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "ftscore/error.hpp"
#include "ftscore/spectral/materialize.hpp"
#include "ftscore/tensor/tensor.hpp"

namespace ftscore {

enum class OpKind {
    conv2d,
    relu,
    maxpool2d,
    avgpool2d,
    global_avg_pool,
    linear,
    add,
    concat,
    scale_by_scalar,
    divide_by_scalar,
    symlog,
    sigmoid,
    batch_norm_rep,
    mean,
    std,
    matmul,
    transpose_batch_channel,
    spectral_materialize,
};

inline constexpr std::array<OpKind, 18> all_op_kinds{
    OpKind::conv2d,          OpKind::relu,           OpKind::maxpool2d,
    OpKind::avgpool2d,       OpKind::global_avg_pool, OpKind::linear,
    OpKind::add,             OpKind::concat,          OpKind::scale_by_scalar,
    OpKind::divide_by_scalar, OpKind::symlog,         OpKind::sigmoid,
    OpKind::batch_norm_rep,  OpKind::mean,            OpKind::std,
    OpKind::matmul,          OpKind::transpose_batch_channel, OpKind::spectral_materialize,
};

inline std::string_view op_name(OpKind kind)
{
    switch (kind) {
    case OpKind::conv2d: return "conv2d";
    case OpKind::relu: return "relu";
    case OpKind::maxpool2d: return "maxpool2d";
    case OpKind::avgpool2d: return "avgpool2d";
    case OpKind::global_avg_pool: return "global_avg_pool";
    case OpKind::linear: return "linear";
    case OpKind::add: return "add";
    case OpKind::concat: return "concat";
    case OpKind::scale_by_scalar: return "scale_by_scalar";
    case OpKind::divide_by_scalar: return "divide_by_scalar";
    case OpKind::symlog: return "symlog";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::batch_norm_rep: return "batch_norm_rep";
    case OpKind::mean: return "mean";
    case OpKind::std: return "std";
    case OpKind::matmul: return "matmul";
    case OpKind::transpose_batch_channel: return "transpose_batch_channel";
    case OpKind::spectral_materialize: return "spectral_materialize";
    }
    return "unknown";
}

/// Scalars with magnitude below this cannot be divided by.
inline constexpr double degenerate_scale_tolerance = 1e-12;

struct OpAttrs {
    std::size_t kernel = 1;
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t groups = 1;
    bool count_include_pad = false;
    bool keepdim = false;
    /// Constant operand for scale/divide when no scalar tensor input is given.
    std::optional<double> scalar;
    double eps = 1e-5;
    spectral::KernelGeometry geometry;
    /// Free-form context for error messages (typically a graph node id).
    std::string label;
};

/// Intermediates kept by the forward rule for the backward rule.
struct Saved {
    std::vector<double> values;
    std::vector<std::size_t> indices;
    std::vector<std::complex<double>> coefficients;
};

struct OpResult {
    Tensor value;
    Saved saved;
};

namespace detail {

[[noreturn]] inline void shape_fail(OpKind kind, const std::string& msg,
                                    std::span<const Tensor* const> in, const OpAttrs& attrs)
{
    std::string shapes;
    for (const Tensor* t : in) {
        shapes += " " + shape_str(t->shape());
    }
    std::string where = attrs.label.empty() ? "" : " at " + attrs.label;
    throw ShapeError(std::string(op_name(kind)) + where + ": " + msg + "; input shapes" + shapes);
}

inline void expect_arity(OpKind kind, std::span<const Tensor* const> in, std::size_t lo,
                         std::size_t hi, const OpAttrs& attrs)
{
    if (in.size() < lo || in.size() > hi) {
        shape_fail(kind, "wrong number of inputs (" + std::to_string(in.size()) + ")", in, attrs);
    }
}

inline std::size_t pooled_extent(std::size_t extent, std::size_t kernel, std::size_t stride,
                                 std::size_t padding)
{
    if (extent + 2 * padding < kernel || stride == 0) {
        return 0;
    }
    return (extent + 2 * padding - kernel) / stride + 1;
}

/// Output positions `o` for which `o*stride + offset` lies in [0, extent).
inline std::pair<std::size_t, std::size_t> valid_range(std::ptrdiff_t offset, std::size_t extent,
                                                       std::size_t stride, std::size_t out)
{
    const auto s = static_cast<std::ptrdiff_t>(stride);
    std::ptrdiff_t lo = 0;
    if (offset < 0) {
        lo = (-offset + s - 1) / s;
    }
    const std::ptrdiff_t last = static_cast<std::ptrdiff_t>(extent) - 1 - offset;
    if (last < 0) {
        return {0, 0};
    }
    std::ptrdiff_t hi = last / s + 1;
    hi = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(out));
    if (lo >= hi) {
        return {0, 0};
    }
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

inline double scalar_operand(OpKind kind, std::span<const Tensor* const> in, const OpAttrs& attrs)
{
    if (in.size() == 2) {
        if (in[1]->size() != 1) {
            shape_fail(kind, "scalar operand must have one element", in, attrs);
        }
        return in[1]->item();
    }
    if (!attrs.scalar) {
        shape_fail(kind, "missing scalar operand", in, attrs);
    }
    return *attrs.scalar;
}

struct ConvDims {
    std::size_t n, c, h, w, o, cg, kh, kw, oh, ow, groups;
};

inline ConvDims conv_dims(std::span<const Tensor* const> in, const OpAttrs& a)
{
    const Tensor& x = *in[0];
    const Tensor& w = *in[1];
    if (x.rank() != 4 || w.rank() != 4) {
        shape_fail(OpKind::conv2d, "expected 4-d input and weight", in, a);
    }
    ConvDims d{};
    d.n = x.dim(0);
    d.c = x.dim(1);
    d.h = x.dim(2);
    d.w = x.dim(3);
    d.o = w.dim(0);
    d.cg = w.dim(1);
    d.kh = w.dim(2);
    d.kw = w.dim(3);
    d.groups = a.groups;
    if (d.groups == 0 || d.c % d.groups != 0 || d.o % d.groups != 0 || d.c / d.groups != d.cg) {
        shape_fail(OpKind::conv2d, "channel/group mismatch", in, a);
    }
    d.oh = pooled_extent(d.h, d.kh, a.stride, a.padding);
    d.ow = pooled_extent(d.w, d.kw, a.stride, a.padding);
    if (d.oh == 0 || d.ow == 0) {
        shape_fail(OpKind::conv2d, "kernel larger than padded input", in, a);
    }
    return d;
}

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Lowers one (sample, group) slice of the input to a (cg*kh*kw, oh*ow) patch
// matrix; out-of-bounds taps stay zero.
inline void im2col(const ConvDims& d, const OpAttrs& a, const double* x, std::size_t n, std::size_t group,
                   RowMatrix& col)
{
    col.setZero(static_cast<Eigen::Index>(d.cg * d.kh * d.kw), static_cast<Eigen::Index>(d.oh * d.ow));
    const auto pad = static_cast<std::ptrdiff_t>(a.padding);
    for (std::size_t ci = 0; ci < d.cg; ++ci) {
        const double* plane = x + (n * d.c + group * d.cg + ci) * d.h * d.w;
        for (std::size_t ky = 0; ky < d.kh; ++ky) {
            const auto [oy_lo, oy_hi] = valid_range(static_cast<std::ptrdiff_t>(ky) - pad, d.h, a.stride, d.oh);
            for (std::size_t kx = 0; kx < d.kw; ++kx) {
                const auto [ox_lo, ox_hi] = valid_range(static_cast<std::ptrdiff_t>(kx) - pad, d.w, a.stride, d.ow);
                double* row = col.data() + ((ci * d.kh + ky) * d.kw + kx) * d.oh * d.ow;
                for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
                    const double* src = plane + (oy * a.stride + ky - a.padding) * d.w - a.padding + kx;
                    for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) {
                        row[oy * d.ow + ox] = src[ox * a.stride];
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatters a patch matrix back onto one (sample, group) slice.
inline void col2im(const ConvDims& d, const OpAttrs& a, const RowMatrix& col, std::size_t n, std::size_t group,
                   double* gx)
{
    const auto pad = static_cast<std::ptrdiff_t>(a.padding);
    for (std::size_t ci = 0; ci < d.cg; ++ci) {
        double* plane = gx + (n * d.c + group * d.cg + ci) * d.h * d.w;
        for (std::size_t ky = 0; ky < d.kh; ++ky) {
            const auto [oy_lo, oy_hi] = valid_range(static_cast<std::ptrdiff_t>(ky) - pad, d.h, a.stride, d.oh);
            for (std::size_t kx = 0; kx < d.kw; ++kx) {
                const auto [ox_lo, ox_hi] = valid_range(static_cast<std::ptrdiff_t>(kx) - pad, d.w, a.stride, d.ow);
                const double* row = col.data() + ((ci * d.kh + ky) * d.kw + kx) * d.oh * d.ow;
                for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
                    double* dst = plane + (oy * a.stride + ky - a.padding) * d.w - a.padding + kx;
                    for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) {
                        dst[ox * a.stride] += row[oy * d.ow + ox];
                    }
                }
            }
        }
    }
}

inline Eigen::Map<const RowMatrix> group_weight(const ConvDims& d, const double* w, std::size_t group)
{
    const std::size_t og = d.o / d.groups;
    const std::size_t k = d.cg * d.kh * d.kw;
    return {w + group * og * k, static_cast<Eigen::Index>(og), static_cast<Eigen::Index>(k)};
}

inline Tensor conv2d_forward(std::span<const Tensor* const> in, const OpAttrs& a)
{
    const ConvDims d = conv_dims(in, a);
    const double* x = in[0]->data().data();
    const double* w = in[1]->data().data();
    Tensor out(Shape{d.n, d.o, d.oh, d.ow});
    const std::size_t og = d.o / d.groups;
    const auto p = static_cast<Eigen::Index>(d.oh * d.ow);
    RowMatrix col;
    for (std::size_t n = 0; n < d.n; ++n) {
        for (std::size_t g = 0; g < d.groups; ++g) {
            im2col(d, a, x, n, g, col);
            Eigen::Map<RowMatrix> y(out.data().data() + (n * d.o + g * og) * d.oh * d.ow,
                                    static_cast<Eigen::Index>(og), p);
            y.noalias() = group_weight(d, w, g) * col;
        }
    }
    return out;
}

struct PoolDims {
    std::size_t n, c, h, w, oh, ow;
};

inline PoolDims pool_dims(OpKind kind, std::span<const Tensor* const> in, const OpAttrs& a)
{
    const Tensor& x = *in[0];
    if (x.rank() != 4) {
        shape_fail(kind, "expected 4-d input", in, a);
    }
    if (a.kernel == 0 || a.stride == 0 || 2 * a.padding > a.kernel) {
        shape_fail(kind, "invalid kernel/stride/padding", in, a);
    }
    PoolDims d{x.dim(0), x.dim(1), x.dim(2), x.dim(3), 0, 0};
    d.oh = pooled_extent(d.h, a.kernel, a.stride, a.padding);
    d.ow = pooled_extent(d.w, a.kernel, a.stride, a.padding);
    if (d.oh == 0 || d.ow == 0) {
        shape_fail(kind, "window larger than padded input", in, a);
    }
    return d;
}

inline std::size_t channel_inner(const Tensor& x)
{
    std::size_t inner = 1;
    for (std::size_t ax = 2; ax < x.rank(); ++ax) {
        inner *= x.dim(ax);
    }
    return inner;
}

} // namespace detail

/// Evaluates one op. Returns the value plus whatever the backward rule needs.
inline OpResult evaluate(OpKind kind, std::span<const Tensor* const> in, const OpAttrs& a)
{
    using namespace detail;
    OpResult r;
    switch (kind) {
    case OpKind::conv2d: {
        expect_arity(kind, in, 2, 2, a);
        r.value = conv2d_forward(in, a);
        break;
    }
    case OpKind::relu: {
        expect_arity(kind, in, 1, 1, a);
        r.value = *in[0];
        for (double& v : r.value.data()) {
            v = v > 0.0 ? v : 0.0;
        }
        break;
    }
    case OpKind::maxpool2d: {
        expect_arity(kind, in, 1, 1, a);
        const PoolDims d = pool_dims(kind, in, a);
        const double* x = in[0]->data().data();
        r.value = Tensor(Shape{d.n, d.c, d.oh, d.ow});
        r.saved.indices.resize(r.value.size());
        std::size_t out_i = 0;
        for (std::size_t nc = 0; nc < d.n * d.c; ++nc) {
            const std::size_t base = nc * d.h * d.w;
            for (std::size_t oy = 0; oy < d.oh; ++oy) {
                for (std::size_t ox = 0; ox < d.ow; ++ox, ++out_i) {
                    double best = -std::numeric_limits<double>::infinity();
                    std::size_t best_i = base;
                    bool found = false;
                    for (std::size_t ky = 0; ky < a.kernel; ++ky) {
                        const auto iy = static_cast<std::ptrdiff_t>(oy * a.stride + ky) -
                                        static_cast<std::ptrdiff_t>(a.padding);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) {
                            continue;
                        }
                        for (std::size_t kx = 0; kx < a.kernel; ++kx) {
                            const auto ix = static_cast<std::ptrdiff_t>(ox * a.stride + kx) -
                                            static_cast<std::ptrdiff_t>(a.padding);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.w)) {
                                continue;
                            }
                            const std::size_t idx = base + static_cast<std::size_t>(iy) * d.w +
                                                    static_cast<std::size_t>(ix);
                            // strict comparison keeps the first index on ties
                            if (!found || x[idx] > best) {
                                best = x[idx];
                                best_i = idx;
                                found = true;
                            }
                        }
                    }
                    r.value[out_i] = best;
                    r.saved.indices[out_i] = best_i;
                }
            }
        }
        break;
    }
    case OpKind::avgpool2d: {
        expect_arity(kind, in, 1, 1, a);
        const PoolDims d = pool_dims(kind, in, a);
        const double* x = in[0]->data().data();
        r.value = Tensor(Shape{d.n, d.c, d.oh, d.ow});
        // per-position divisor, identical for every (n, c)
        r.saved.values.resize(d.oh * d.ow);
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
            for (std::size_t ox = 0; ox < d.ow; ++ox) {
                std::size_t count = 0;
                for (std::size_t ky = 0; ky < a.kernel; ++ky) {
                    for (std::size_t kx = 0; kx < a.kernel; ++kx) {
                        const auto iy = static_cast<std::ptrdiff_t>(oy * a.stride + ky) -
                                        static_cast<std::ptrdiff_t>(a.padding);
                        const auto ix = static_cast<std::ptrdiff_t>(ox * a.stride + kx) -
                                        static_cast<std::ptrdiff_t>(a.padding);
                        if (iy >= 0 && iy < static_cast<std::ptrdiff_t>(d.h) && ix >= 0 &&
                            ix < static_cast<std::ptrdiff_t>(d.w)) {
                            ++count;
                        }
                    }
                }
                r.saved.values[oy * d.ow + ox] = a.count_include_pad
                                                     ? static_cast<double>(a.kernel * a.kernel)
                                                     : static_cast<double>(count);
            }
        }
        std::size_t out_i = 0;
        for (std::size_t nc = 0; nc < d.n * d.c; ++nc) {
            const std::size_t base = nc * d.h * d.w;
            for (std::size_t oy = 0; oy < d.oh; ++oy) {
                for (std::size_t ox = 0; ox < d.ow; ++ox, ++out_i) {
                    double acc = 0.0;
                    for (std::size_t ky = 0; ky < a.kernel; ++ky) {
                        const auto iy = static_cast<std::ptrdiff_t>(oy * a.stride + ky) -
                                        static_cast<std::ptrdiff_t>(a.padding);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) {
                            continue;
                        }
                        for (std::size_t kx = 0; kx < a.kernel; ++kx) {
                            const auto ix = static_cast<std::ptrdiff_t>(ox * a.stride + kx) -
                                            static_cast<std::ptrdiff_t>(a.padding);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.w)) {
                                continue;
                            }
                            acc += x[base + static_cast<std::size_t>(iy) * d.w +
                                     static_cast<std::size_t>(ix)];
                        }
                    }
                    r.value[out_i] = acc / r.saved.values[oy * d.ow + ox];
                }
            }
        }
        break;
    }
    case OpKind::global_avg_pool: {
        expect_arity(kind, in, 1, 1, a);
        const Tensor& x = *in[0];
        if (x.rank() != 4) {
            shape_fail(kind, "expected 4-d input", in, a);
        }
        const std::size_t n = x.dim(0);
        const std::size_t c = x.dim(1);
        const std::size_t hw = x.dim(2) * x.dim(3);
        r.value = a.keepdim ? Tensor(Shape{n, c, 1, 1}) : Tensor(Shape{n, c});
        for (std::size_t i = 0; i < n * c; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < hw; ++j) {
                acc += x[i * hw + j];
            }
            r.value[i] = acc / static_cast<double>(hw);
        }
        break;
    }
    case OpKind::linear: {
        expect_arity(kind, in, 2, 3, a);
        const Tensor& x = *in[0];
        const Tensor& w = *in[1];
        if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1)) {
            shape_fail(kind, "expected x (N,in) and weight (out,in)", in, a);
        }
        const std::size_t n = x.dim(0);
        const std::size_t fin = x.dim(1);
        const std::size_t fout = w.dim(0);
        if (in.size() == 3 && (in[2]->rank() != 1 || in[2]->dim(0) != fout)) {
            shape_fail(kind, "bias must be (out)", in, a);
        }
        r.value = Tensor(Shape{n, fout});
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t o = 0; o < fout; ++o) {
                double acc = in.size() == 3 ? (*in[2])[o] : 0.0;
                for (std::size_t k = 0; k < fin; ++k) {
                    acc += x[i * fin + k] * w[o * fin + k];
                }
                r.value[i * fout + o] = acc;
            }
        }
        break;
    }
    case OpKind::add: {
        expect_arity(kind, in, 2, 2, a);
        if (in[0]->shape() != in[1]->shape()) {
            shape_fail(kind, "operands differ in shape", in, a);
        }
        r.value = *in[0];
        for (std::size_t i = 0; i < r.value.size(); ++i) {
            r.value[i] += (*in[1])[i];
        }
        break;
    }
    case OpKind::concat: {
        expect_arity(kind, in, 1, std::numeric_limits<std::size_t>::max(), a);
        Shape shape = in[0]->shape();
        if (shape.size() < 2) {
            shape_fail(kind, "expected rank >= 2", in, a);
        }
        std::size_t channels = 0;
        for (const Tensor* t : in) {
            Shape s = t->shape();
            if (s.size() != shape.size()) {
                shape_fail(kind, "rank mismatch", in, a);
            }
            channels += s[1];
            s[1] = shape[1];
            if (s != shape) {
                shape_fail(kind, "non-channel dimensions differ", in, a);
            }
        }
        const std::size_t n = shape[0];
        const std::size_t inner = channel_inner(*in[0]);
        shape[1] = channels;
        r.value = Tensor(shape);
        for (std::size_t b = 0; b < n; ++b) {
            std::size_t offset = 0;
            for (const Tensor* t : in) {
                const std::size_t block = t->dim(1) * inner;
                std::copy_n(t->data().data() + b * block, block,
                            r.value.data().data() + (b * channels * inner) + offset);
                offset += block;
            }
        }
        break;
    }
    case OpKind::scale_by_scalar: {
        expect_arity(kind, in, 1, 2, a);
        const double s = scalar_operand(kind, in, a);
        r.value = *in[0];
        for (double& v : r.value.data()) {
            v *= s;
        }
        break;
    }
    case OpKind::divide_by_scalar: {
        expect_arity(kind, in, 1, 2, a);
        const double s = scalar_operand(kind, in, a);
        if (!(std::abs(s) >= degenerate_scale_tolerance)) {
            throw DegenerateError("divide_by_scalar" +
                                  (a.label.empty() ? std::string() : " at " + a.label) +
                                  ": degenerate scale " + std::to_string(s));
        }
        r.value = *in[0];
        for (double& v : r.value.data()) {
            v /= s;
        }
        break;
    }
    case OpKind::symlog: {
        expect_arity(kind, in, 1, 1, a);
        r.value = *in[0];
        for (double& v : r.value.data()) {
            v = std::copysign(std::log1p(std::abs(v)), v);
        }
        break;
    }
    case OpKind::sigmoid: {
        expect_arity(kind, in, 1, 1, a);
        r.value = *in[0];
        for (double& v : r.value.data()) {
            v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        }
        break;
    }
    case OpKind::batch_norm_rep: {
        expect_arity(kind, in, 1, 1, a);
        const Tensor& x = *in[0];
        if (x.rank() < 2) {
            shape_fail(kind, "expected rank >= 2", in, a);
        }
        const std::size_t n = x.dim(0);
        const std::size_t c = x.dim(1);
        const std::size_t inner = channel_inner(x);
        const double count = static_cast<double>(n * inner);
        r.value = Tensor(x.shape());
        r.saved.values.resize(c);
        for (std::size_t ch = 0; ch < c; ++ch) {
            double mu = 0.0;
            for (std::size_t b = 0; b < n; ++b) {
                for (std::size_t i = 0; i < inner; ++i) {
                    mu += x[(b * c + ch) * inner + i];
                }
            }
            mu /= count;
            double var = 0.0;
            for (std::size_t b = 0; b < n; ++b) {
                for (std::size_t i = 0; i < inner; ++i) {
                    const double dv = x[(b * c + ch) * inner + i] - mu;
                    var += dv * dv;
                }
            }
            var /= count;
            const double inv_std = 1.0 / std::sqrt(var + a.eps);
            r.saved.values[ch] = inv_std;
            for (std::size_t b = 0; b < n; ++b) {
                for (std::size_t i = 0; i < inner; ++i) {
                    const std::size_t idx = (b * c + ch) * inner + i;
                    r.value[idx] = (x[idx] - mu) * inv_std;
                }
            }
        }
        break;
    }
    case OpKind::mean: {
        expect_arity(kind, in, 1, 1, a);
        r.value = Tensor::scalar(mean_of(in[0]->data()));
        break;
    }
    case OpKind::std: {
        expect_arity(kind, in, 1, 1, a);
        r.value = Tensor::scalar(std_of(in[0]->data()));
        break;
    }
    case OpKind::matmul: {
        expect_arity(kind, in, 2, 2, a);
        const Tensor& x = *in[0];
        const Tensor& y = *in[1];
        if (x.rank() != 2 || y.rank() != 2 || x.dim(1) != y.dim(0)) {
            shape_fail(kind, "expected (m,k) x (k,n)", in, a);
        }
        const std::size_t m = x.dim(0);
        const std::size_t k = x.dim(1);
        const std::size_t n = y.dim(1);
        r.value = Tensor(Shape{m, n});
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
                const double xv = x[i * k + p];
                for (std::size_t j = 0; j < n; ++j) {
                    r.value[i * n + j] += xv * y[p * n + j];
                }
            }
        }
        break;
    }
    case OpKind::transpose_batch_channel: {
        expect_arity(kind, in, 1, 1, a);
        const Tensor& x = *in[0];
        if (x.rank() < 2) {
            shape_fail(kind, "expected rank >= 2", in, a);
        }
        Shape shape = x.shape();
        std::swap(shape[0], shape[1]);
        const std::size_t b = x.dim(0);
        const std::size_t c = x.dim(1);
        const std::size_t inner = channel_inner(x);
        r.value = Tensor(shape);
        for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
                std::copy_n(x.data().data() + (i * c + j) * inner, inner,
                            r.value.data().data() + (j * b + i) * inner);
            }
        }
        break;
    }
    case OpKind::spectral_materialize: {
        expect_arity(kind, in, 1, 1, a);
        r.saved.coefficients = spectral::materialize_coefficients(*in[0], a.geometry);
        r.value = spectral::magnitude_tensor(r.saved.coefficients, a.geometry);
        break;
    }
    }
    return r;
}

/// Forward value only.
inline Tensor forward(OpKind kind, std::span<const Tensor* const> inputs, const OpAttrs& attrs = {})
{
    return evaluate(kind, inputs, attrs).value;
}

inline Tensor forward(OpKind kind, std::initializer_list<const Tensor*> inputs,
                      const OpAttrs& attrs = {})
{
    return forward(kind, std::span<const Tensor* const>(inputs.begin(), inputs.size()), attrs);
}

/// Gradients of the inputs given the gradient of the output. Entries whose
/// `need` flag is false are returned empty.
inline std::vector<Tensor> backward_rule(OpKind kind, std::span<const Tensor* const> in,
                                         const Tensor& out, const OpAttrs& a, const Saved& saved,
                                         const Tensor& g, const std::vector<bool>& need)
{
    using namespace detail;
    std::vector<Tensor> grads(in.size());
    auto wants = [&](std::size_t i) { return i < need.size() && need[i]; };

    switch (kind) {
    case OpKind::conv2d: {
        const ConvDims d = conv_dims(in, a);
        const double* x = in[0]->data().data();
        const double* w = in[1]->data().data();
        const double* gy = g.data().data();
        const std::size_t og = d.o / d.groups;
        const auto p = static_cast<Eigen::Index>(d.oh * d.ow);
        if (wants(0)) {
            grads[0] = Tensor(in[0]->shape());
        }
        if (wants(1)) {
            grads[1] = Tensor(in[1]->shape());
        }
        RowMatrix col;
        for (std::size_t n = 0; n < d.n; ++n) {
            for (std::size_t grp = 0; grp < d.groups; ++grp) {
                const Eigen::Map<const RowMatrix> gout(gy + (n * d.o + grp * og) * d.oh * d.ow,
                                                       static_cast<Eigen::Index>(og), p);
                if (wants(1)) {
                    im2col(d, a, x, n, grp, col);
                    const std::size_t k = d.cg * d.kh * d.kw;
                    Eigen::Map<RowMatrix> gw(grads[1].data().data() + grp * og * k, static_cast<Eigen::Index>(og),
                                             static_cast<Eigen::Index>(k));
                    gw.noalias() += gout * col.transpose();
                }
                if (wants(0)) {
                    col.noalias() = group_weight(d, w, grp).transpose() * gout;
                    col2im(d, a, col, n, grp, grads[0].data().data());
                }
            }
        }
        break;
    }
    case OpKind::relu: {
        grads[0] = g;
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (!((*in[0])[i] > 0.0)) {
                grads[0][i] = 0.0;
            }
        }
        break;
    }
    case OpKind::maxpool2d: {
        grads[0] = Tensor(in[0]->shape());
        for (std::size_t i = 0; i < g.size(); ++i) {
            grads[0][saved.indices[i]] += g[i];
        }
        break;
    }
    case OpKind::avgpool2d: {
        const PoolDims d = pool_dims(kind, in, a);
        grads[0] = Tensor(in[0]->shape());
        std::size_t out_i = 0;
        for (std::size_t nc = 0; nc < d.n * d.c; ++nc) {
            const std::size_t base = nc * d.h * d.w;
            for (std::size_t oy = 0; oy < d.oh; ++oy) {
                for (std::size_t ox = 0; ox < d.ow; ++ox, ++out_i) {
                    const double share = g[out_i] / saved.values[oy * d.ow + ox];
                    for (std::size_t ky = 0; ky < a.kernel; ++ky) {
                        const auto iy = static_cast<std::ptrdiff_t>(oy * a.stride + ky) -
                                        static_cast<std::ptrdiff_t>(a.padding);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) {
                            continue;
                        }
                        for (std::size_t kx = 0; kx < a.kernel; ++kx) {
                            const auto ix = static_cast<std::ptrdiff_t>(ox * a.stride + kx) -
                                            static_cast<std::ptrdiff_t>(a.padding);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.w)) {
                                continue;
                            }
                            grads[0][base + static_cast<std::size_t>(iy) * d.w +
                                     static_cast<std::size_t>(ix)] += share;
                        }
                    }
                }
            }
        }
        break;
    }
    case OpKind::global_avg_pool: {
        const Tensor& x = *in[0];
        const std::size_t hw = x.dim(2) * x.dim(3);
        grads[0] = Tensor(x.shape());
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double share = g[i] / static_cast<double>(hw);
            for (std::size_t j = 0; j < hw; ++j) {
                grads[0][i * hw + j] = share;
            }
        }
        break;
    }
    case OpKind::linear: {
        const Tensor& x = *in[0];
        const Tensor& w = *in[1];
        const std::size_t n = x.dim(0);
        const std::size_t fin = x.dim(1);
        const std::size_t fout = w.dim(0);
        if (wants(0)) {
            grads[0] = Tensor(x.shape());
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t o = 0; o < fout; ++o) {
                    const double gv = g[i * fout + o];
                    for (std::size_t k = 0; k < fin; ++k) {
                        grads[0][i * fin + k] += gv * w[o * fin + k];
                    }
                }
            }
        }
        if (wants(1)) {
            grads[1] = Tensor(w.shape());
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t o = 0; o < fout; ++o) {
                    const double gv = g[i * fout + o];
                    for (std::size_t k = 0; k < fin; ++k) {
                        grads[1][o * fin + k] += gv * x[i * fin + k];
                    }
                }
            }
        }
        if (in.size() == 3 && wants(2)) {
            grads[2] = Tensor(in[2]->shape());
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t o = 0; o < fout; ++o) {
                    grads[2][o] += g[i * fout + o];
                }
            }
        }
        break;
    }
    case OpKind::add: {
        if (wants(0)) {
            grads[0] = g;
        }
        if (wants(1)) {
            grads[1] = g;
        }
        break;
    }
    case OpKind::concat: {
        const std::size_t n = out.dim(0);
        const std::size_t channels = out.dim(1);
        const std::size_t inner = channel_inner(out);
        std::size_t offset = 0;
        for (std::size_t t = 0; t < in.size(); ++t) {
            const std::size_t block = in[t]->dim(1) * inner;
            if (wants(t)) {
                grads[t] = Tensor(in[t]->shape());
                for (std::size_t b = 0; b < n; ++b) {
                    std::copy_n(g.data().data() + b * channels * inner + offset, block,
                                grads[t].data().data() + b * block);
                }
            }
            offset += block;
        }
        break;
    }
    case OpKind::scale_by_scalar: {
        const double s = scalar_operand(kind, in, a);
        if (wants(0)) {
            grads[0] = g;
            for (double& v : grads[0].data()) {
                v *= s;
            }
        }
        if (in.size() == 2 && wants(1)) {
            double acc = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) {
                acc += g[i] * (*in[0])[i];
            }
            grads[1] = Tensor(in[1]->shape(), acc);
        }
        break;
    }
    case OpKind::divide_by_scalar: {
        const double s = scalar_operand(kind, in, a);
        if (wants(0)) {
            grads[0] = g;
            for (double& v : grads[0].data()) {
                v /= s;
            }
        }
        if (in.size() == 2 && wants(1)) {
            double acc = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) {
                acc += g[i] * (*in[0])[i];
            }
            grads[1] = Tensor(in[1]->shape(), -acc / (s * s));
        }
        break;
    }
    case OpKind::symlog: {
        grads[0] = g;
        for (std::size_t i = 0; i < g.size(); ++i) {
            grads[0][i] /= std::abs((*in[0])[i]) + 1.0;
        }
        break;
    }
    case OpKind::sigmoid: {
        grads[0] = g;
        for (std::size_t i = 0; i < g.size(); ++i) {
            grads[0][i] *= out[i] * (1.0 - out[i]);
        }
        break;
    }
    case OpKind::batch_norm_rep: {
        const std::size_t n = out.dim(0);
        const std::size_t c = out.dim(1);
        const std::size_t inner = channel_inner(out);
        const double count = static_cast<double>(n * inner);
        grads[0] = Tensor(out.shape());
        for (std::size_t ch = 0; ch < c; ++ch) {
            double g_mean = 0.0;
            double gy_mean = 0.0;
            for (std::size_t b = 0; b < n; ++b) {
                for (std::size_t i = 0; i < inner; ++i) {
                    const std::size_t idx = (b * c + ch) * inner + i;
                    g_mean += g[idx];
                    gy_mean += g[idx] * out[idx];
                }
            }
            g_mean /= count;
            gy_mean /= count;
            const double inv_std = saved.values[ch];
            for (std::size_t b = 0; b < n; ++b) {
                for (std::size_t i = 0; i < inner; ++i) {
                    const std::size_t idx = (b * c + ch) * inner + i;
                    grads[0][idx] = inv_std * (g[idx] - g_mean - out[idx] * gy_mean);
                }
            }
        }
        break;
    }
    case OpKind::mean: {
        grads[0] = Tensor(in[0]->shape(), g.item() / static_cast<double>(in[0]->size()));
        break;
    }
    case OpKind::std: {
        const Tensor& x = *in[0];
        grads[0] = Tensor(x.shape());
        const double sigma = out.item();
        if (sigma > 0.0) {
            const double mu = mean_of(x.data());
            const double scale = g.item() / (static_cast<double>(x.size()) * sigma);
            for (std::size_t i = 0; i < x.size(); ++i) {
                grads[0][i] = scale * (x[i] - mu);
            }
        }
        break;
    }
    case OpKind::matmul: {
        const Tensor& x = *in[0];
        const Tensor& y = *in[1];
        const std::size_t m = x.dim(0);
        const std::size_t k = x.dim(1);
        const std::size_t n = y.dim(1);
        if (wants(0)) {
            grads[0] = Tensor(x.shape());
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                        acc += g[i * n + j] * y[p * n + j];
                    }
                    grads[0][i * k + p] = acc;
                }
            }
        }
        if (wants(1)) {
            grads[1] = Tensor(y.shape());
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    const double xv = x[i * k + p];
                    for (std::size_t j = 0; j < n; ++j) {
                        grads[1][p * n + j] += xv * g[i * n + j];
                    }
                }
            }
        }
        break;
    }
    case OpKind::transpose_batch_channel: {
        const Tensor* gp = &g;
        grads[0] = forward(OpKind::transpose_batch_channel, std::span<const Tensor* const>(&gp, 1));
        break;
    }
    case OpKind::spectral_materialize: {
        grads[0] = spectral::materialize_vjp(in[0]->shape(), a.geometry, saved.coefficients, g);
        break;
    }
    }
    return grads;
}

} // namespace ftscore
