#pragma once

#include <cstddef>
#include <string>
#include <string_view>

#include "ftscore/error.hpp"

namespace ftscore::arch {

enum class LayerKind { conv, batch_norm, relu, avg_pool, max_pool, global_avg_pool, identity, zero };

inline std::string_view layer_kind_name(LayerKind kind)
{
    switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::batch_norm: return "batchnorm";
    case LayerKind::relu: return "relu";
    case LayerKind::avg_pool: return "avgpool";
    case LayerKind::max_pool: return "maxpool";
    case LayerKind::global_avg_pool: return "gap";
    case LayerKind::identity: return "identity";
    case LayerKind::zero: return "zero";
    }
    return "unknown";
}

/// One operator of an architecture. Fields that do not apply to `kind` stay at
/// their defaults; pooling uses `kh` as its (square) window.
struct LayerSpec {
    LayerKind kind = LayerKind::identity;
    std::size_t c_in = 0;
    std::size_t c_out = 0;
    std::size_t kh = 0;
    std::size_t kw = 0;
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t groups = 1;

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;

    static LayerSpec conv(std::size_t c_in, std::size_t c_out, std::size_t kh, std::size_t kw,
                          std::size_t stride = 1, std::size_t padding = 0, std::size_t groups = 1)
    {
        return {LayerKind::conv, c_in, c_out, kh, kw, stride, padding, groups};
    }
    static LayerSpec batch_norm() { return {LayerKind::batch_norm}; }
    static LayerSpec relu() { return {LayerKind::relu}; }
    static LayerSpec avg_pool(std::size_t k, std::size_t stride, std::size_t padding)
    {
        return {LayerKind::avg_pool, 0, 0, k, k, stride, padding, 1};
    }
    static LayerSpec max_pool(std::size_t k, std::size_t stride, std::size_t padding)
    {
        return {LayerKind::max_pool, 0, 0, k, k, stride, padding, 1};
    }
    static LayerSpec global_avg_pool() { return {LayerKind::global_avg_pool}; }
    static LayerSpec identity() { return {LayerKind::identity}; }
    static LayerSpec zero() { return {LayerKind::zero}; }

    [[nodiscard]] bool is_pool() const
    {
        return kind == LayerKind::avg_pool || kind == LayerKind::max_pool;
    }
};

/// Throws GraphError (tagged with `node_id`) when `spec` breaks its own invariants.
inline void validate_layer(const LayerSpec& spec, const std::string& node_id)
{
    auto fail = [&](const std::string& msg) {
        throw GraphError("node '" + node_id + "': " + msg, node_id);
    };
    if (spec.stride < 1) {
        fail("stride must be >= 1");
    }
    if (spec.kind == LayerKind::conv) {
        if (spec.c_in < 1 || spec.c_out < 1 || spec.kh < 1 || spec.kw < 1) {
            fail("conv channels and kernel sizes must be >= 1");
        }
        if (spec.groups < 1 || spec.c_in % spec.groups != 0 || spec.c_out % spec.groups != 0) {
            fail("conv groups must divide c_in and c_out");
        }
    }
    if (spec.is_pool()) {
        if (spec.kh < 1) {
            fail("pool window must be >= 1");
        }
        if (2 * spec.padding > spec.kh) {
            fail("pool padding must be at most half the window");
        }
    }
}

} // namespace ftscore::arch
