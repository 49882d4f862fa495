#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ftscore/arch/layer.hpp"
#include "ftscore/error.hpp"

namespace ftscore::arch {

enum class Junction { sum, concat };

struct Node {
    std::string id;
    LayerSpec op;
    Junction junction = Junction::sum;

    friend bool operator==(const Node&, const Node&) = default;
};

using Edge = std::pair<std::string, std::string>;

/// Classifier that follows the output node. It only contributes to parameter
/// counts: a linear map in -> classes with bias.
struct Head {
    std::size_t in = 0;
    std::size_t classes = 0;

    friend bool operator==(const Head&, const Head&) = default;
};

/// Channels and spatial extent of a node's output for the nominal input.
struct NodeShape {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;

    friend bool operator==(const NodeShape&, const NodeShape&) = default;
};

/// Everything needed to construct an ArchGraph.
struct GraphDesc {
    std::vector<Node> nodes;
    std::vector<Edge> edges;
    std::string input;
    std::string output;
    std::size_t input_channels = 3;
    std::size_t input_size = 32;
    std::optional<Head> head;
};

inline std::size_t conv_extent(std::size_t extent, std::size_t k, std::size_t stride,
                               std::size_t padding)
{
    if (extent + 2 * padding < k) {
        return 0;
    }
    return (extent + 2 * padding - k) / stride + 1;
}

/// Validated, immutable architecture DAG.
///
/// Each node aggregates its predecessors' outputs with its junction rule, then
/// applies its operator. The input node receives the network input.
class ArchGraph {
public:
    explicit ArchGraph(GraphDesc desc) : desc_(std::move(desc)) { validate(); }

    [[nodiscard]] const std::vector<Node>& nodes() const noexcept { return desc_.nodes; }
    [[nodiscard]] const std::vector<Edge>& edges() const noexcept { return desc_.edges; }
    [[nodiscard]] const std::string& input_id() const noexcept { return desc_.input; }
    [[nodiscard]] const std::string& output_id() const noexcept { return desc_.output; }
    [[nodiscard]] std::size_t input_channels() const noexcept { return desc_.input_channels; }
    [[nodiscard]] std::size_t input_size() const noexcept { return desc_.input_size; }
    [[nodiscard]] const std::optional<Head>& head() const noexcept { return desc_.head; }
    [[nodiscard]] const GraphDesc& desc() const noexcept { return desc_; }

    [[nodiscard]] std::size_t index_of(const std::string& id) const
    {
        const auto it = index_.find(id);
        if (it == index_.end()) {
            throw GraphError("unknown node '" + id + "'", id);
        }
        return it->second;
    }
    [[nodiscard]] const Node& node(std::size_t i) const { return desc_.nodes.at(i); }
    /// Predecessor indices of node i, in edge-list order.
    [[nodiscard]] const std::vector<std::size_t>& preds(std::size_t i) const { return preds_.at(i); }
    [[nodiscard]] const std::vector<std::size_t>& succs(std::size_t i) const { return succs_.at(i); }
    /// Node indices in a topological order (stable: ties keep node-list order).
    [[nodiscard]] const std::vector<std::size_t>& topo_order() const noexcept { return topo_; }
    [[nodiscard]] const NodeShape& shape_of(std::size_t i) const { return shapes_.at(i); }
    /// Channels arriving at node i after its junction.
    [[nodiscard]] const NodeShape& in_shape_of(std::size_t i) const { return in_shapes_.at(i); }
    [[nodiscard]] std::size_t input_index() const noexcept { return input_index_; }
    [[nodiscard]] std::size_t output_index() const noexcept { return output_index_; }

    /// Same nodes, edges (as a multiset), endpoints, input geometry and head.
    [[nodiscard]] bool structurally_equal(const ArchGraph& other) const
    {
        auto sorted_nodes = [](std::vector<Node> v) {
            std::sort(v.begin(), v.end(), [](const Node& a, const Node& b) { return a.id < b.id; });
            return v;
        };
        auto sorted_edges = [](std::vector<Edge> v) {
            std::sort(v.begin(), v.end());
            return v;
        };
        return sorted_nodes(desc_.nodes) == sorted_nodes(other.desc_.nodes) &&
               sorted_edges(desc_.edges) == sorted_edges(other.desc_.edges) &&
               desc_.input == other.desc_.input && desc_.output == other.desc_.output &&
               desc_.input_channels == other.desc_.input_channels &&
               desc_.input_size == other.desc_.input_size && desc_.head == other.desc_.head;
    }

private:
    void validate()
    {
        auto& nodes = desc_.nodes;
        if (nodes.empty()) {
            throw GraphError("graph has no nodes", "");
        }
        if (desc_.input_channels < 1 || desc_.input_size < 1) {
            throw GraphError("input channels and size must be >= 1", desc_.input);
        }
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            if (nodes[i].id.empty()) {
                throw GraphError("node " + std::to_string(i) + " has an empty id", "");
            }
            if (!index_.emplace(nodes[i].id, i).second) {
                throw GraphError("duplicate node id '" + nodes[i].id + "'", nodes[i].id);
            }
            validate_layer(nodes[i].op, nodes[i].id);
        }
        input_index_ = index_of(desc_.input);
        output_index_ = index_of(desc_.output);

        preds_.assign(nodes.size(), {});
        succs_.assign(nodes.size(), {});
        for (const auto& [src, dst] : desc_.edges) {
            const std::size_t s = index_of(src);
            const std::size_t d = index_of(dst);
            if (s == d) {
                throw GraphError("self-loop on node '" + src + "'", src);
            }
            preds_[d].push_back(s);
            succs_[s].push_back(d);
        }
        topological_sort();
        if (!preds_[input_index_].empty()) {
            throw GraphError("input node '" + desc_.input + "' has incoming edges", desc_.input);
        }
        if (!succs_[output_index_].empty()) {
            throw GraphError("output node '" + desc_.output + "' has outgoing edges",
                             desc_.output);
        }
        check_reachability();
        infer_shapes();
    }

    // Kahn's algorithm, always releasing the lowest node index first.
    void topological_sort()
    {
        const std::size_t n = desc_.nodes.size();
        std::vector<std::size_t> indegree(n);
        for (std::size_t i = 0; i < n; ++i) {
            indegree[i] = preds_[i].size();
        }
        std::vector<std::size_t> ready;
        for (std::size_t i = 0; i < n; ++i) {
            if (indegree[i] == 0) {
                ready.push_back(i);
            }
        }
        std::make_heap(ready.begin(), ready.end(), std::greater<>{});
        while (!ready.empty()) {
            std::pop_heap(ready.begin(), ready.end(), std::greater<>{});
            const std::size_t i = ready.back();
            ready.pop_back();
            topo_.push_back(i);
            for (std::size_t s : succs_[i]) {
                if (--indegree[s] == 0) {
                    ready.push_back(s);
                    std::push_heap(ready.begin(), ready.end(), std::greater<>{});
                }
            }
        }
        if (topo_.size() != n) {
            for (std::size_t i = 0; i < n; ++i) {
                if (indegree[i] != 0) {
                    throw GraphError("cycle detected through node '" + desc_.nodes[i].id + "'",
                                     desc_.nodes[i].id);
                }
            }
        }
    }

    void check_reachability()
    {
        const std::size_t n = desc_.nodes.size();
        std::vector<bool> seen(n, false);
        std::vector<std::size_t> stack{input_index_};
        seen[input_index_] = true;
        while (!stack.empty()) {
            const std::size_t i = stack.back();
            stack.pop_back();
            for (std::size_t s : succs_[i]) {
                if (!seen[s]) {
                    seen[s] = true;
                    stack.push_back(s);
                }
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            if (!seen[i]) {
                throw GraphError("node '" + desc_.nodes[i].id + "' is not reachable from input",
                                 desc_.nodes[i].id);
            }
            if (i != output_index_ && succs_[i].empty()) {
                throw GraphError("node '" + desc_.nodes[i].id +
                                     "' is a dead end (only the output may have no successors)",
                                 desc_.nodes[i].id);
            }
        }
    }

    void infer_shapes()
    {
        const std::size_t n = desc_.nodes.size();
        shapes_.assign(n, {});
        in_shapes_.assign(n, {});
        for (std::size_t i : topo_) {
            const Node& node = desc_.nodes[i];
            auto fail = [&](const std::string& msg) {
                throw GraphError("node '" + node.id + "': " + msg, node.id);
            };
            NodeShape in;
            if (i == input_index_) {
                in = {desc_.input_channels, desc_.input_size, desc_.input_size};
            } else {
                in = shapes_[preds_[i].front()];
                for (std::size_t k = 1; k < preds_[i].size(); ++k) {
                    const NodeShape& p = shapes_[preds_[i][k]];
                    if (p.height != in.height || p.width != in.width) {
                        fail("junction inputs differ in spatial shape (" +
                             std::to_string(in.height) + "x" + std::to_string(in.width) + " vs " +
                             std::to_string(p.height) + "x" + std::to_string(p.width) + ")");
                    }
                    if (node.junction == Junction::sum) {
                        if (p.channels != in.channels) {
                            fail("sum junction inputs differ in channels (" +
                                 std::to_string(in.channels) + " vs " +
                                 std::to_string(p.channels) + ")");
                        }
                    } else {
                        in.channels += p.channels;
                    }
                }
            }
            in_shapes_[i] = in;
            NodeShape out = in;
            const LayerSpec& op = node.op;
            switch (op.kind) {
            case LayerKind::conv:
                if (op.c_in != in.channels) {
                    fail("conv expects " + std::to_string(op.c_in) + " input channels, receives " +
                         std::to_string(in.channels));
                }
                out.channels = op.c_out;
                out.height = conv_extent(in.height, op.kh, op.stride, op.padding);
                out.width = conv_extent(in.width, op.kw, op.stride, op.padding);
                break;
            case LayerKind::avg_pool:
            case LayerKind::max_pool:
                out.height = conv_extent(in.height, op.kh, op.stride, op.padding);
                out.width = conv_extent(in.width, op.kh, op.stride, op.padding);
                break;
            case LayerKind::global_avg_pool:
                out.height = 1;
                out.width = 1;
                break;
            default:
                break;
            }
            if (out.height == 0 || out.width == 0) {
                fail("spatial extent collapses to zero");
            }
            shapes_[i] = out;
        }
        if (desc_.head && desc_.head->in != shapes_[output_index_].channels) {
            throw GraphError("head expects " + std::to_string(desc_.head->in) +
                                 " features, output node has " +
                                 std::to_string(shapes_[output_index_].channels),
                             desc_.output);
        }
    }

    GraphDesc desc_;
    std::map<std::string, std::size_t> index_;
    std::vector<std::vector<std::size_t>> preds_;
    std::vector<std::vector<std::size_t>> succs_;
    std::vector<std::size_t> topo_;
    std::vector<NodeShape> shapes_;
    std::vector<NodeShape> in_shapes_;
    std::size_t input_index_ = 0;
    std::size_t output_index_ = 0;
};

/// Conv: c_in*c_out*kh*kw/groups (no bias). BatchNorm: 2 per channel. Head: in*classes + classes.
inline std::size_t count_params(const ArchGraph& g)
{
    std::size_t total = 0;
    for (std::size_t i = 0; i < g.nodes().size(); ++i) {
        const LayerSpec& op = g.node(i).op;
        if (op.kind == LayerKind::conv) {
            total += op.c_in * op.c_out * op.kh * op.kw / op.groups;
        } else if (op.kind == LayerKind::batch_norm) {
            total += 2 * g.in_shape_of(i).channels;
        }
    }
    if (g.head()) {
        total += g.head()->in * g.head()->classes + g.head()->classes;
    }
    return total;
}

/// Incrementally assembles a GraphDesc; each `then` appends a node fed by `from`.
class GraphBuilder {
public:
    GraphBuilder(std::string input_id, std::size_t input_channels, std::size_t input_size)
    {
        desc_.input = input_id;
        desc_.input_channels = input_channels;
        desc_.input_size = input_size;
        desc_.nodes.push_back({std::move(input_id), LayerSpec::identity(), Junction::sum});
    }

    const std::string& input() const { return desc_.input; }

    std::string add(std::string id, LayerSpec op, const std::vector<std::string>& from,
                    Junction junction = Junction::sum)
    {
        desc_.nodes.push_back({id, op, junction});
        for (const std::string& f : from) {
            desc_.edges.emplace_back(f, id);
        }
        return id;
    }

    std::string then(std::string id, LayerSpec op, const std::string& from)
    {
        return add(std::move(id), op, {from});
    }

    GraphDesc finish(std::string output, std::optional<Head> head = std::nullopt)
    {
        desc_.output = std::move(output);
        desc_.head = head;
        return std::move(desc_);
    }

private:
    GraphDesc desc_;
};

} // namespace ftscore::arch
