#pragma once

#include <array>
#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <span>
#include <vector>

#include "ftscore/spectral/dft.hpp"
#include "ftscore/tensor/tensor.hpp"

namespace ftscore::spectral {

/// Kernel geometry requested from the shared frequency tensor.
struct KernelGeometry {
    std::size_t c_in = 1;
    std::size_t c_out = 1;
    std::size_t kh = 1;
    std::size_t kw = 1;

    friend bool operator==(const KernelGeometry&, const KernelGeometry&) = default;
    friend auto operator<=>(const KernelGeometry&, const KernelGeometry&) = default;
};

/// The shared learnable frequency tensor, shape (C_f, C_f, k_max, k_max) read as
/// (out-channel, in-channel, row, col).
struct FrequencyKernel {
    Tensor freq;

    static constexpr std::size_t default_channels = 64;

    static FrequencyKernel random(std::size_t channels, std::size_t k_max, std::mt19937_64& rng)
    {
        std::normal_distribution<double> normal(0.0, 1.0);
        Tensor t(Shape{channels, channels, k_max, k_max});
        for (double& v : t.data()) {
            v = normal(rng);
        }
        return FrequencyKernel{std::move(t)};
    }

    [[nodiscard]] std::size_t channels() const { return freq.dim(0); }
    [[nodiscard]] std::size_t k_max() const { return freq.dim(2); }
};

inline void check_frequency_shape(const Shape& shape)
{
    if (shape.size() != 4 || shape[0] == 0 || shape[1] == 0 || shape[2] == 0 || shape[3] == 0) {
        throw ShapeError("frequency tensor must be 4-d and non-empty, got " + shape_str(shape));
    }
}

/// Complex coefficients before the magnitude, shape (c_out, c_in, kh, kw).
/// Order: spatial 2-d resize, then input-channel axis, then output-channel axis.
inline std::vector<Complex> materialize_coefficients(const Tensor& freq, const KernelGeometry& g)
{
    check_frequency_shape(freq.shape());
    if (g.c_in == 0 || g.c_out == 0 || g.kh == 0 || g.kw == 0) {
        throw ShapeError("materialize: kernel geometry must be positive");
    }
    Shape shape = freq.shape();
    std::vector<Complex> data(freq.data().begin(), freq.data().end());
    data = resize_axis(data, shape, 2, g.kh);
    data = resize_axis(data, shape, 3, g.kw);
    data = resize_axis(data, shape, 1, g.c_in);
    data = resize_axis(data, shape, 0, g.c_out);
    return data;
}

inline Tensor magnitude_tensor(std::span<const Complex> coefficients, const KernelGeometry& g)
{
    return Tensor(Shape{g.c_out, g.c_in, g.kh, g.kw}, magnitudes(coefficients));
}

/// Convolution weight (c_out, c_in, kh, kw) materialized from the frequency tensor.
inline Tensor materialize(const FrequencyKernel& fk, const KernelGeometry& g)
{
    return magnitude_tensor(materialize_coefficients(fk.freq, g), g);
}

/// Vector-Jacobian product of materialize with respect to the frequency tensor.
/// Zero-magnitude coefficients contribute a zero subgradient.
inline Tensor materialize_vjp(const Shape& freq_shape, const KernelGeometry& g,
                              std::span<const Complex> coefficients, const Tensor& grad_out)
{
    std::vector<Complex> z(coefficients.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double mag = std::abs(coefficients[i]);
        z[i] = mag > 0.0 ? grad_out[i] * std::conj(coefficients[i]) / mag : Complex{};
    }
    Shape shape{g.c_out, g.c_in, g.kh, g.kw};
    z = apply_transpose_along_axis(z, shape, 0, freq_shape[0]);
    z = apply_transpose_along_axis(z, shape, 1, freq_shape[1]);
    z = apply_transpose_along_axis(z, shape, 3, freq_shape[3]);
    z = apply_transpose_along_axis(z, shape, 2, freq_shape[2]);
    Tensor grad(freq_shape);
    for (std::size_t i = 0; i < z.size(); ++i) {
        grad[i] = z[i].real();
    }
    return grad;
}

/// One materialized weight's upstream gradient, for materialize_vjp_many.
struct VjpItem {
    KernelGeometry geometry;
    std::span<const Complex> coefficients;
    const Tensor* grad_out = nullptr;
};

/// Sum of materialize_vjp over `items`. Items sharing (c_in, kh, kw) are summed
/// after the output-channel transpose and items sharing (kh, kw) after the
/// input-channel transpose, so each shared stage is transposed once.
inline Tensor materialize_vjp_many(const Shape& freq_shape, std::span<const VjpItem> items)
{
    check_frequency_shape(freq_shape);
    using InKey = std::array<std::size_t, 3>;
    using SpatialKey = std::array<std::size_t, 2>;
    std::map<InKey, std::vector<Complex>> by_in;
    for (const VjpItem& it : items) {
        const KernelGeometry& g = it.geometry;
        std::vector<Complex> z(it.coefficients.size());
        for (std::size_t i = 0; i < z.size(); ++i) {
            const double mag = std::abs(it.coefficients[i]);
            z[i] = mag > 0.0 ? (*it.grad_out)[i] * std::conj(it.coefficients[i]) / mag : Complex{};
        }
        Shape shape{g.c_out, g.c_in, g.kh, g.kw};
        z = apply_transpose_along_axis(z, shape, 0, freq_shape[0]);
        auto [slot, fresh] = by_in.try_emplace(InKey{g.c_in, g.kh, g.kw});
        if (fresh) {
            slot->second = std::move(z);
        } else {
            for (std::size_t i = 0; i < z.size(); ++i) {
                slot->second[i] += z[i];
            }
        }
    }
    std::map<SpatialKey, std::vector<Complex>> by_spatial;
    for (auto& [key, z] : by_in) {
        Shape shape{freq_shape[0], key[0], key[1], key[2]};
        std::vector<Complex> y = apply_transpose_along_axis(z, shape, 1, freq_shape[1]);
        auto [slot, fresh] = by_spatial.try_emplace(SpatialKey{key[1], key[2]});
        if (fresh) {
            slot->second = std::move(y);
        } else {
            for (std::size_t i = 0; i < y.size(); ++i) {
                slot->second[i] += y[i];
            }
        }
    }
    Tensor grad(freq_shape);
    for (auto& [key, z] : by_spatial) {
        Shape shape{freq_shape[0], freq_shape[1], key[0], key[1]};
        z = apply_transpose_along_axis(z, shape, 3, freq_shape[3]);
        z = apply_transpose_along_axis(z, shape, 2, freq_shape[2]);
        for (std::size_t i = 0; i < z.size(); ++i) {
            grad[i] += z[i].real();
        }
    }
    return grad;
}

/// materialize_coefficients with the spatial stage cached per (kh, kw) and the
/// input-channel stage per (kh, kw, c_in). Results are bit-identical to the
/// uncached path. Thread-safe.
class CoefficientCache {
public:
    explicit CoefficientCache(const Tensor& freq) : freq_(&freq) { check_frequency_shape(freq.shape()); }

    std::vector<Complex> coefficients(const KernelGeometry& g)
    {
        if (g.c_in == 0 || g.c_out == 0 || g.kh == 0 || g.kw == 0) {
            throw ShapeError("materialize: kernel geometry must be positive");
        }
        const auto staged = input_stage(g);
        Shape shape{freq_->dim(0), g.c_in, g.kh, g.kw};
        return resize_axis(*staged, shape, 0, g.c_out);
    }

    [[nodiscard]] const Tensor& freq() const noexcept { return *freq_; }

private:
    using Stage = std::shared_ptr<const std::vector<Complex>>;

    Stage spatial_stage(std::size_t kh, std::size_t kw)
    {
        const std::array<std::size_t, 2> key{kh, kw};
        {
            std::lock_guard<std::mutex> lock(mu_);
            const auto it = spatial_.find(key);
            if (it != spatial_.end()) {
                return it->second;
            }
        }
        Shape shape = freq_->shape();
        std::vector<Complex> data(freq_->data().begin(), freq_->data().end());
        data = resize_axis(data, shape, 2, kh);
        data = resize_axis(data, shape, 3, kw);
        auto stage = std::make_shared<const std::vector<Complex>>(std::move(data));
        std::lock_guard<std::mutex> lock(mu_);
        return spatial_.emplace(key, std::move(stage)).first->second;
    }

    Stage input_stage(const KernelGeometry& g)
    {
        const std::array<std::size_t, 3> key{g.kh, g.kw, g.c_in};
        {
            std::lock_guard<std::mutex> lock(mu_);
            const auto it = input_.find(key);
            if (it != input_.end()) {
                return it->second;
            }
        }
        const auto spatial = spatial_stage(g.kh, g.kw);
        Shape shape{freq_->dim(0), freq_->dim(1), g.kh, g.kw};
        auto stage = std::make_shared<const std::vector<Complex>>(resize_axis(*spatial, shape, 1, g.c_in));
        std::lock_guard<std::mutex> lock(mu_);
        return input_.emplace(key, std::move(stage)).first->second;
    }

    const Tensor* freq_;
    std::mutex mu_;
    std::map<std::array<std::size_t, 2>, Stage> spatial_;
    std::map<std::array<std::size_t, 3>, Stage> input_;
};

} // namespace ftscore::spectral
