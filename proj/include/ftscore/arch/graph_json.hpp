#pragma once

// Graph interchange document:
//
//   {"nodes": [{"id": "c1", "op": {"type": "conv", "c_in": 3, "c_out": 8, "kh": 3, "kw": 3,
//                                   "stride": 1, "padding": 1, "groups": 1}}, ...],
//    "edges": [["in", "c1"], ...],
//    "junction": {"c1": "sum", ...},          optional, default sum
//    "input": "in", "output": "out",
//    "input_channels": 3, "input_size": 32,   optional
//    "head": {"in": 64, "classes": 10}}       optional
//
// op types: conv, batchnorm, relu, avgpool / maxpool (k, stride, padding), gap,
// identity, zero. A node without "op" is an identity.

#include <string>

#include <json.hpp>

#include "ftscore/arch/graph.hpp"
#include "ftscore/error.hpp"

namespace ftscore::arch {

namespace detail {

inline std::size_t count_field(const nlohmann::json& obj, const char* key, const std::string& node,
                               std::optional<std::size_t> fallback = std::nullopt)
{
    if (!obj.contains(key)) {
        if (fallback) {
            return *fallback;
        }
        throw GraphError("node '" + node + "': op is missing '" + key + "'", node);
    }
    const auto& v = obj.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) {
        throw GraphError("node '" + node + "': '" + key + "' must be a non-negative integer", node);
    }
    return v.get<std::size_t>();
}

inline LayerSpec parse_op(const nlohmann::json& op, const std::string& node)
{
    if (!op.is_object() || !op.contains("type") || !op.at("type").is_string()) {
        throw GraphError("node '" + node + "': op must be an object with a string 'type'", node);
    }
    const std::string type = op.at("type").get<std::string>();
    if (type == "conv") {
        return LayerSpec::conv(count_field(op, "c_in", node), count_field(op, "c_out", node),
                               count_field(op, "kh", node), count_field(op, "kw", node),
                               count_field(op, "stride", node, 1),
                               count_field(op, "padding", node, 0),
                               count_field(op, "groups", node, 1));
    }
    if (type == "avgpool" || type == "maxpool") {
        const std::size_t k = count_field(op, "k", node);
        const std::size_t stride = count_field(op, "stride", node, k);
        const std::size_t padding = count_field(op, "padding", node, 0);
        return type == "avgpool" ? LayerSpec::avg_pool(k, stride, padding)
                                 : LayerSpec::max_pool(k, stride, padding);
    }
    if (type == "batchnorm") {
        return LayerSpec::batch_norm();
    }
    if (type == "relu") {
        return LayerSpec::relu();
    }
    if (type == "gap") {
        return LayerSpec::global_avg_pool();
    }
    if (type == "identity") {
        return LayerSpec::identity();
    }
    if (type == "zero") {
        return LayerSpec::zero();
    }
    throw GraphError("node '" + node + "': unsupported op type '" + type + "'", node);
}

inline nlohmann::json op_to_json(const LayerSpec& op)
{
    nlohmann::json j;
    j["type"] = std::string(layer_kind_name(op.kind));
    if (op.kind == LayerKind::conv) {
        j["c_in"] = op.c_in;
        j["c_out"] = op.c_out;
        j["kh"] = op.kh;
        j["kw"] = op.kw;
        j["stride"] = op.stride;
        j["padding"] = op.padding;
        j["groups"] = op.groups;
    } else if (op.is_pool()) {
        j["k"] = op.kh;
        j["stride"] = op.stride;
        j["padding"] = op.padding;
    }
    return j;
}

} // namespace detail

inline ArchGraph graph_from_json(const nlohmann::json& doc)
{
    auto schema = [](const std::string& msg) { return GraphError("graph document: " + msg, ""); };
    if (!doc.is_object()) {
        throw schema("top level must be an object");
    }
    for (const char* key : {"nodes", "edges", "input", "output"}) {
        if (!doc.contains(key)) {
            throw schema(std::string("missing '") + key + "'");
        }
    }
    if (!doc.at("nodes").is_array() || !doc.at("edges").is_array()) {
        throw schema("'nodes' and 'edges' must be arrays");
    }
    if (!doc.at("input").is_string() || !doc.at("output").is_string()) {
        throw schema("'input' and 'output' must be strings");
    }
    GraphDesc desc;
    desc.input = doc.at("input").get<std::string>();
    desc.output = doc.at("output").get<std::string>();
    const nlohmann::json junctions = doc.value("junction", nlohmann::json::object());
    if (!junctions.is_object()) {
        throw schema("'junction' must be an object");
    }
    for (const auto& n : doc.at("nodes")) {
        if (!n.is_object() || !n.contains("id") || !n.at("id").is_string()) {
            throw schema("every node needs a string 'id'");
        }
        Node node;
        node.id = n.at("id").get<std::string>();
        node.op = n.contains("op") ? detail::parse_op(n.at("op"), node.id) : LayerSpec::identity();
        if (junctions.contains(node.id)) {
            const auto& jv = junctions.at(node.id);
            const std::string rule = jv.is_string() ? jv.get<std::string>() : "";
            if (rule == "sum") {
                node.junction = Junction::sum;
            } else if (rule == "concat") {
                node.junction = Junction::concat;
            } else {
                throw GraphError("node '" + node.id + "': junction must be \"sum\" or \"concat\"",
                                 node.id);
            }
        }
        desc.nodes.push_back(std::move(node));
    }
    for (const auto& e : doc.at("edges")) {
        if (!e.is_array() || e.size() != 2 || !e[0].is_string() || !e[1].is_string()) {
            throw schema("every edge must be a [src, dst] pair of strings");
        }
        desc.edges.emplace_back(e[0].get<std::string>(), e[1].get<std::string>());
    }
    for (const auto& [key, value] : junctions.items()) {
        bool known = false;
        for (const Node& n : desc.nodes) {
            known = known || n.id == key;
        }
        if (!known) {
            throw GraphError("junction given for unknown node '" + key + "'", key);
        }
    }
    desc.input_channels = detail::count_field(doc, "input_channels", desc.input, 3);
    desc.input_size = detail::count_field(doc, "input_size", desc.input, 32);
    if (doc.contains("head")) {
        const auto& h = doc.at("head");
        if (!h.is_object()) {
            throw schema("'head' must be an object");
        }
        desc.head = Head{detail::count_field(h, "in", desc.output),
                         detail::count_field(h, "classes", desc.output)};
    }
    return ArchGraph(std::move(desc));
}

inline ArchGraph parse_graph_json(const std::string& text)
{
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("graph document is not valid JSON: ") + e.what(),
                         std::to_string(e.byte));
    }
    return graph_from_json(doc);
}

inline nlohmann::json graph_to_json(const ArchGraph& g)
{
    nlohmann::json doc;
    doc["nodes"] = nlohmann::json::array();
    nlohmann::json junctions = nlohmann::json::object();
    for (const Node& n : g.nodes()) {
        doc["nodes"].push_back({{"id", n.id}, {"op", detail::op_to_json(n.op)}});
        if (n.junction == Junction::concat) {
            junctions[n.id] = "concat";
        }
    }
    doc["edges"] = nlohmann::json::array();
    for (const auto& [src, dst] : g.edges()) {
        doc["edges"].push_back({src, dst});
    }
    if (!junctions.empty()) {
        doc["junction"] = junctions;
    }
    doc["input"] = g.input_id();
    doc["output"] = g.output_id();
    doc["input_channels"] = g.input_channels();
    doc["input_size"] = g.input_size();
    if (g.head()) {
        doc["head"] = {{"in", g.head()->in}, {"classes", g.head()->classes}};
    }
    return doc;
}

inline std::string serialize_graph(const ArchGraph& g) { return graph_to_json(g).dump(); }

} // namespace ftscore::arch
