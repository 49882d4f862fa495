#pragma once

// Orthonormal DFT resizing with zero-padding or trimming.
//
// Resizing a length-N sequence to K coefficients uses the matrix
//
//     M[k, n] = exp(-2*pi*i * k*n / L) / sqrt(N),   L = max(N, K),  k < K,  n < N.
//
// For N <= K this is the orthonormal K-point DFT of the zero-padded input divided
// by sqrt(N/K); for N > K it is the orthonormal N-point DFT keeping the first K
// coefficients. Both keep the per-coefficient variance of i.i.d. inputs unchanged.

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "ftscore/tensor/tensor.hpp"

namespace ftscore::spectral {

using Complex = std::complex<double>;

/// K x N resizing matrix, row-major.
inline std::vector<Complex> resize_matrix(std::size_t n, std::size_t k)
{
    const std::size_t period = std::max(n, k);
    const double scale = 1.0 / std::sqrt(static_cast<double>(n));
    std::vector<Complex> m(k * n);
    for (std::size_t row = 0; row < k; ++row) {
        for (std::size_t col = 0; col < n; ++col) {
            // reduce k*n modulo the period first so the angle stays in [0, 2pi)
            const std::size_t phase = (row * col) % period;
            const double angle = -2.0 * std::numbers::pi * static_cast<double>(phase) /
                                 static_cast<double>(period);
            m[row * n + col] = Complex(std::cos(angle), std::sin(angle)) * scale;
        }
    }
    return m;
}

/// Applies `matrix` (rows x cols) along `axis` of a complex array of the given shape.
/// Returns the new array; `shape[axis]` becomes `rows`.
inline std::vector<Complex> apply_along_axis(std::span<const Complex> data, Shape& shape,
                                             std::size_t axis, std::span<const Complex> matrix,
                                             std::size_t rows)
{
    const std::size_t cols = shape[axis];
    std::size_t outer = 1;
    for (std::size_t a = 0; a < axis; ++a) {
        outer *= shape[a];
    }
    std::size_t inner = 1;
    for (std::size_t a = axis + 1; a < shape.size(); ++a) {
        inner *= shape[a];
    }
    std::vector<Complex> out(outer * rows * inner);
    // plain real arithmetic on the interleaved storage; std::complex products
    // carry inf/nan recovery branches that block vectorization
    const auto* in = reinterpret_cast<const double*>(data.data());
    auto* res = reinterpret_cast<double*>(out.data());
    for (std::size_t o = 0; o < outer; ++o) {
        const double* src = in + 2 * o * cols * inner;
        double* dst = res + 2 * o * rows * inner;
        for (std::size_t r = 0; r < rows; ++r) {
            double* dst_row = dst + 2 * r * inner;
            for (std::size_t c = 0; c < cols; ++c) {
                const double mr = matrix[r * cols + c].real();
                const double mi = matrix[r * cols + c].imag();
                const double* src_row = src + 2 * c * inner;
                for (std::size_t i = 0; i < 2 * inner; i += 2) {
                    const double sr = src_row[i];
                    const double si = src_row[i + 1];
                    dst_row[i] += mr * sr - mi * si;
                    dst_row[i + 1] += mr * si + mi * sr;
                }
            }
        }
    }
    shape[axis] = rows;
    return out;
}

/// Applies the transpose (not conjugate transpose) of the N->K resize along `axis`,
/// mapping K coefficients back to N positions. Used by the backward rule.
inline std::vector<Complex> apply_transpose_along_axis(std::span<const Complex> data, Shape& shape,
                                                       std::size_t axis, std::size_t n)
{
    const std::size_t k = shape[axis];
    const std::vector<Complex> fwd = resize_matrix(n, k);
    std::vector<Complex> transposed(n * k);
    for (std::size_t row = 0; row < k; ++row) {
        for (std::size_t col = 0; col < n; ++col) {
            transposed[col * k + row] = fwd[row * n + col];
        }
    }
    return apply_along_axis(data, shape, axis, transposed, n);
}

/// Resizes `shape[axis]` to `target` coefficients.
inline std::vector<Complex> resize_axis(std::span<const Complex> data, Shape& shape,
                                        std::size_t axis, std::size_t target)
{
    const std::vector<Complex> m = resize_matrix(shape[axis], target);
    return apply_along_axis(data, shape, axis, m, target);
}

inline std::vector<Complex> dft_resize_1d(std::span<const Complex> x, std::size_t k)
{
    if (x.empty() || k == 0) {
        throw ShapeError("dft_resize_1d needs N >= 1 and K >= 1");
    }
    Shape shape{x.size()};
    return resize_axis(x, shape, 0, k);
}

inline std::vector<Complex> dft_resize_1d(std::span<const double> x, std::size_t k)
{
    const std::vector<Complex> cx(x.begin(), x.end());
    return dft_resize_1d(std::span<const Complex>(cx), k);
}

/// Separable resize of a rows x cols map (row-major) to kh x kw.
inline std::vector<Complex> dft_resize_2d(std::span<const Complex> map, std::size_t rows,
                                          std::size_t cols, std::size_t kh, std::size_t kw)
{
    if (map.size() != rows * cols || kh == 0 || kw == 0) {
        throw ShapeError("dft_resize_2d: bad map or target size");
    }
    Shape shape{rows, cols};
    auto tmp = resize_axis(map, shape, 0, kh);
    return resize_axis(tmp, shape, 1, kw);
}

inline std::vector<Complex> dft_resize_2d(std::span<const double> map, std::size_t rows,
                                          std::size_t cols, std::size_t kh, std::size_t kw)
{
    const std::vector<Complex> cm(map.begin(), map.end());
    return dft_resize_2d(std::span<const Complex>(cm), rows, cols, kh, kw);
}

inline std::vector<double> magnitudes(std::span<const Complex> values)
{
    std::vector<double> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        out[i] = std::abs(values[i]);
    }
    return out;
}

} // namespace ftscore::spectral
