#pragma once

// NAS-Bench-201 cell strings: "|op~0|+|op~0|op~1|+|op~0|op~1|op~2|". Group j
// lists the edges into cell node j+1, one per earlier node i, as "op~i".
//
// Macro skeleton: conv3x3(3 -> C) + BN stem, three stages of `cells` cells with
// widths C, 2C, 4C, residual reduction blocks between stages, then BN + ReLU.
// The 10-way classifier is carried as graph head metadata.

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "ftscore/arch/graph.hpp"
#include "ftscore/error.hpp"

namespace ftscore::arch {

enum class Nb201Op { none, skip_connect, nor_conv_1x1, nor_conv_3x3, avg_pool_3x3 };

inline constexpr std::array<std::string_view, 5> nb201_op_names{
    "none", "skip_connect", "nor_conv_1x1", "nor_conv_3x3", "avg_pool_3x3"};

/// The six edge operations in string order: (1<-0), (2<-0), (2<-1), (3<-0), (3<-1), (3<-2).
using Nb201Cell = std::array<Nb201Op, 6>;

inline Nb201Cell parse_nb201_cell(const std::string& text)
{
    auto bad = [&](const std::string& msg, const std::string& token) {
        return ParseError("cell string '" + text + "': " + msg, token);
    };
    std::vector<std::string> groups;
    std::size_t start = 0;
    while (true) {
        const std::size_t plus = text.find('+', start);
        groups.push_back(text.substr(start, plus == std::string::npos ? plus : plus - start));
        if (plus == std::string::npos) {
            break;
        }
        start = plus + 1;
    }
    if (groups.size() != 3) {
        throw bad("expected 3 '+'-separated node groups, found " + std::to_string(groups.size()),
                  text);
    }
    Nb201Cell cell{};
    std::size_t slot = 0;
    for (std::size_t j = 0; j < 3; ++j) {
        const std::string& group = groups[j];
        if (group.size() < 2 || group.front() != '|' || group.back() != '|') {
            throw bad("node group must be enclosed in '|'", group);
        }
        std::vector<std::string> tokens;
        std::size_t p = 1;
        while (p < group.size()) {
            const std::size_t bar = group.find('|', p);
            tokens.push_back(group.substr(p, bar - p));
            p = bar + 1;
        }
        if (tokens.size() != j + 1) {
            throw bad("node " + std::to_string(j + 1) + " needs " + std::to_string(j + 1) +
                          " incoming edges",
                      group);
        }
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            const std::string& tok = tokens[i];
            const std::size_t tilde = tok.find('~');
            if (tilde == std::string::npos) {
                throw bad("edge must be 'op~index'", tok);
            }
            const std::string name = tok.substr(0, tilde);
            const std::string index = tok.substr(tilde + 1);
            if (index != std::to_string(i)) {
                throw bad("edge index out of order, expected ~" + std::to_string(i), tok);
            }
            bool found = false;
            for (std::size_t k = 0; k < nb201_op_names.size(); ++k) {
                if (nb201_op_names[k] == name) {
                    cell[slot] = static_cast<Nb201Op>(k);
                    found = true;
                }
            }
            if (!found) {
                throw bad("unknown operation '" + name + "'", name);
            }
            ++slot;
        }
    }
    return cell;
}

inline std::string nb201_cell_string(const Nb201Cell& cell)
{
    std::string out;
    std::size_t slot = 0;
    for (std::size_t j = 0; j < 3; ++j) {
        out += j == 0 ? "|" : "+|";
        for (std::size_t i = 0; i <= j; ++i) {
            out += std::string(nb201_op_names[static_cast<std::size_t>(cell[slot++])]) + "~" +
                   std::to_string(i) + "|";
        }
    }
    return out;
}

namespace detail {

inline std::string relu_conv_bn(GraphBuilder& b, const std::string& prefix, const std::string& from,
                                std::size_t c_in, std::size_t c_out, std::size_t k,
                                std::size_t stride)
{
    const std::string r = b.then(prefix + ".relu", LayerSpec::relu(), from);
    const std::string c = b.then(prefix + ".conv", LayerSpec::conv(c_in, c_out, k, k, stride, k / 2), r);
    return b.then(prefix + ".bn", LayerSpec::batch_norm(), c);
}

inline std::string nb201_cell(GraphBuilder& b, const std::string& prefix, const std::string& from,
                              const Nb201Cell& cell, std::size_t c)
{
    std::array<std::string, 4> node{from, "", "", ""};
    std::size_t slot = 0;
    for (std::size_t j = 1; j <= 3; ++j) {
        std::vector<std::string> incoming;
        for (std::size_t i = 0; i < j; ++i) {
            const std::string edge = prefix + ".e" + std::to_string(j) + std::to_string(i);
            switch (cell[slot++]) {
            case Nb201Op::none:
                incoming.push_back(b.then(edge + ".zero", LayerSpec::zero(), node[i]));
                break;
            case Nb201Op::skip_connect:
                incoming.push_back(b.then(edge + ".skip", LayerSpec::identity(), node[i]));
                break;
            case Nb201Op::nor_conv_1x1:
                incoming.push_back(relu_conv_bn(b, edge, node[i], c, c, 1, 1));
                break;
            case Nb201Op::nor_conv_3x3:
                incoming.push_back(relu_conv_bn(b, edge, node[i], c, c, 3, 1));
                break;
            case Nb201Op::avg_pool_3x3:
                incoming.push_back(b.then(edge + ".pool", LayerSpec::avg_pool(3, 1, 1), node[i]));
                break;
            }
        }
        node[j] = b.add(prefix + ".n" + std::to_string(j), LayerSpec::identity(), incoming);
    }
    return node[3];
}

inline std::string nb201_reduction(GraphBuilder& b, const std::string& prefix,
                                   const std::string& from, std::size_t c_in, std::size_t c_out)
{
    const std::string a = relu_conv_bn(b, prefix + ".a", from, c_in, c_out, 3, 2);
    const std::string bb = relu_conv_bn(b, prefix + ".b", a, c_out, c_out, 3, 1);
    const std::string pool = b.then(prefix + ".down.pool", LayerSpec::avg_pool(2, 2, 0), from);
    const std::string proj =
        b.then(prefix + ".down.conv", LayerSpec::conv(c_in, c_out, 1, 1, 1, 0), pool);
    return b.add(prefix + ".sum", LayerSpec::identity(), {bb, proj});
}

} // namespace detail

struct Nb201Options {
    std::size_t stem_channels = 16;
    std::size_t num_cells = 5;
    std::size_t input_size = 32;
    std::size_t classes = 10;
};

inline ArchGraph nb201_graph(const Nb201Cell& cell, const Nb201Options& opt = {})
{
    if (opt.stem_channels < 1 || opt.num_cells < 1) {
        throw UsageError("nb201: stem channels and cell count must be >= 1");
    }
    GraphBuilder b("input", 3, opt.input_size);
    std::string cur = b.then("stem.conv", LayerSpec::conv(3, opt.stem_channels, 3, 3, 1, 1), b.input());
    cur = b.then("stem.bn", LayerSpec::batch_norm(), cur);
    std::size_t c = opt.stem_channels;
    for (std::size_t stage = 0; stage < 3; ++stage) {
        if (stage > 0) {
            cur = detail::nb201_reduction(b, "red" + std::to_string(stage), cur, c, 2 * c);
            c *= 2;
        }
        for (std::size_t k = 0; k < opt.num_cells; ++k) {
            cur = detail::nb201_cell(b, "s" + std::to_string(stage) + ".c" + std::to_string(k),
                                     cur, cell, c);
        }
    }
    cur = b.then("last.bn", LayerSpec::batch_norm(), cur);
    cur = b.then("last.relu", LayerSpec::relu(), cur);
    return ArchGraph(b.finish(cur, Head{c, opt.classes}));
}

inline ArchGraph parse_nb201(const std::string& cell_string, std::size_t stem_channels = 16,
                             std::size_t num_cells = 5)
{
    Nb201Options opt;
    opt.stem_channels = stem_channels;
    opt.num_cells = num_cells;
    return nb201_graph(parse_nb201_cell(cell_string), opt);
}

} // namespace ftscore::arch
