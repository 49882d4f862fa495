#pragma once

// ResNet-like macro space. A genome is a list of blocks; a block of type KXKX
// stacks `sublayers` residual units of two kxk convs (in -> bottleneck -> out),
// a block of type K1KXK1 stacks units of 1x1 -> kxk -> 1x1 convs. Only the first
// unit of a block carries its stride. Every conv is followed by BN and ReLU; a
// unit whose input and output differ in channels or resolution gets a 1x1
// projection conv + BN on its shortcut.
//
// Text form: blocks joined by ';', each "type:k:stride:channels:bottleneck:sublayers",
// e.g. "KXKX:3:2:64:32:2;K1KXK1:5:1:128:48:1".

#include <array>
#include <cstddef>
#include <sstream>
#include <string>
#include <vector>

#include "ftscore/arch/graph.hpp"
#include "ftscore/error.hpp"

namespace ftscore::arch {

enum class BlockType { kxkx, k1kxk1 };

struct GenomeBlock {
    BlockType type = BlockType::kxkx;
    std::size_t kernel = 3;
    std::size_t stride = 1;
    std::size_t channels = 8;
    std::size_t bottleneck = 8;
    std::size_t sublayers = 1;

    friend bool operator==(const GenomeBlock&, const GenomeBlock&) = default;
};

struct ResNetGenome {
    std::vector<GenomeBlock> blocks;

    friend bool operator==(const ResNetGenome&, const ResNetGenome&) = default;
};

/// Ordered gene domains.
struct GenomeDomain {
    static constexpr std::size_t max_blocks = 18;
    static constexpr std::array<std::size_t, 3> kernels{3, 5, 7};
    static constexpr std::array<std::size_t, 2> strides{1, 2};
    static constexpr std::size_t channel_step = 8;
    static constexpr std::size_t channel_max = 2048;
    static constexpr std::size_t bottleneck_max = 256;
    static constexpr std::size_t sublayer_max = 9;
};

inline std::string block_type_name(BlockType t) { return t == BlockType::kxkx ? "KXKX" : "K1KXK1"; }

/// Throws UsageError naming the first out-of-domain field.
inline void validate_genome(const ResNetGenome& g)
{
    using D = GenomeDomain;
    if (g.blocks.empty() || g.blocks.size() > D::max_blocks) {
        throw UsageError("genome must have 1.." + std::to_string(D::max_blocks) + " blocks, has " +
                         std::to_string(g.blocks.size()));
    }
    for (std::size_t i = 0; i < g.blocks.size(); ++i) {
        const GenomeBlock& b = g.blocks[i];
        const std::string where = "genome block " + std::to_string(i) + ": ";
        if (b.kernel != 3 && b.kernel != 5 && b.kernel != 7) {
            throw UsageError(where + "kernel must be 3, 5 or 7");
        }
        if (b.stride != 1 && b.stride != 2) {
            throw UsageError(where + "stride must be 1 or 2");
        }
        if (b.channels < D::channel_step || b.channels > D::channel_max ||
            b.channels % D::channel_step != 0) {
            throw UsageError(where + "channels must be a multiple of 8 in [8, 2048]");
        }
        if (b.bottleneck < D::channel_step || b.bottleneck > D::bottleneck_max ||
            b.bottleneck % D::channel_step != 0) {
            throw UsageError(where + "bottleneck must be a multiple of 8 in [8, 256]");
        }
        if (b.sublayers < 1 || b.sublayers > D::sublayer_max) {
            throw UsageError(where + "sublayers must be in 1..9");
        }
    }
}

inline std::string genome_to_string(const ResNetGenome& g)
{
    std::string out;
    for (std::size_t i = 0; i < g.blocks.size(); ++i) {
        const GenomeBlock& b = g.blocks[i];
        if (i != 0) {
            out += ";";
        }
        out += block_type_name(b.type) + ":" + std::to_string(b.kernel) + ":" +
               std::to_string(b.stride) + ":" + std::to_string(b.channels) + ":" +
               std::to_string(b.bottleneck) + ":" + std::to_string(b.sublayers);
    }
    return out;
}

inline ResNetGenome parse_genome(const std::string& text)
{
    ResNetGenome g;
    std::stringstream blocks(text);
    std::string block;
    while (std::getline(blocks, block, ';')) {
        std::vector<std::string> fields;
        std::stringstream fs(block);
        std::string f;
        while (std::getline(fs, f, ':')) {
            fields.push_back(f);
        }
        if (fields.size() != 6) {
            throw ParseError("genome block '" + block + "' needs 6 ':'-separated fields", block);
        }
        GenomeBlock b;
        if (fields[0] == "KXKX") {
            b.type = BlockType::kxkx;
        } else if (fields[0] == "K1KXK1") {
            b.type = BlockType::k1kxk1;
        } else {
            throw ParseError("unknown block type '" + fields[0] + "'", fields[0]);
        }
        std::array<std::size_t*, 5> slots{&b.kernel, &b.stride, &b.channels, &b.bottleneck,
                                          &b.sublayers};
        for (std::size_t k = 0; k < 5; ++k) {
            const std::string& tok = fields[k + 1];
            if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos ||
                tok.size() > 6) {
                throw ParseError("genome field '" + tok + "' is not a count", tok);
            }
            *slots[k] = std::stoul(tok);
        }
        g.blocks.push_back(b);
    }
    try {
        validate_genome(g);
    } catch (const UsageError& e) {
        throw ParseError(e.what(), text);
    }
    return g;
}

namespace detail {

inline std::string conv_bn_relu(GraphBuilder& b, const std::string& prefix, const std::string& from,
                                std::size_t c_in, std::size_t c_out, std::size_t k,
                                std::size_t stride)
{
    const std::string c = b.then(prefix + ".conv", LayerSpec::conv(c_in, c_out, k, k, stride, k / 2), from);
    const std::string n = b.then(prefix + ".bn", LayerSpec::batch_norm(), c);
    return b.then(prefix + ".relu", LayerSpec::relu(), n);
}

} // namespace detail

struct GenomeDecodeOptions {
    std::size_t input_channels = 3;
    std::size_t input_size = 32;
    /// Classes of an optional classifier head (0: none).
    std::size_t classes = 0;
};

inline ArchGraph decode_genome(const ResNetGenome& g, const GenomeDecodeOptions& opt = {})
{
    validate_genome(g);
    GraphBuilder b("input", opt.input_channels, opt.input_size);
    std::string cur = b.input();
    std::size_t c = opt.input_channels;
    for (std::size_t bi = 0; bi < g.blocks.size(); ++bi) {
        const GenomeBlock& blk = g.blocks[bi];
        for (std::size_t s = 0; s < blk.sublayers; ++s) {
            const std::string p = "b" + std::to_string(bi) + ".u" + std::to_string(s);
            const std::size_t stride = s == 0 ? blk.stride : 1;
            std::string branch;
            if (blk.type == BlockType::kxkx) {
                branch = detail::conv_bn_relu(b, p + ".c0", cur, c, blk.bottleneck, blk.kernel, stride);
                branch = detail::conv_bn_relu(b, p + ".c1", branch, blk.bottleneck, blk.channels,
                                              blk.kernel, 1);
            } else {
                branch = detail::conv_bn_relu(b, p + ".c0", cur, c, blk.bottleneck, 1, 1);
                branch = detail::conv_bn_relu(b, p + ".c1", branch, blk.bottleneck, blk.bottleneck,
                                              blk.kernel, stride);
                branch = detail::conv_bn_relu(b, p + ".c2", branch, blk.bottleneck, blk.channels, 1, 1);
            }
            std::string shortcut = cur;
            if (c != blk.channels || stride != 1) {
                shortcut = b.then(p + ".proj.conv",
                                  LayerSpec::conv(c, blk.channels, 1, 1, stride, 0), cur);
                shortcut = b.then(p + ".proj.bn", LayerSpec::batch_norm(), shortcut);
            }
            cur = b.add(p + ".sum", LayerSpec::identity(), {branch, shortcut});
            c = blk.channels;
        }
    }
    std::optional<Head> head;
    if (opt.classes > 0) {
        head = Head{c, opt.classes};
    }
    return ArchGraph(b.finish(cur, head));
}

} // namespace ftscore::arch
