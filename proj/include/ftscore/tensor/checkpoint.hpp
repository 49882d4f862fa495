#pragma once

// Checkpoint layout:
//
//   bytes 0..7    magic "FTSCKPT1"
//   bytes 8..15   manifest length L, unsigned 64-bit little-endian
//   next L bytes  UTF-8 JSON manifest:
//                 {"dtype":"f64le","tensors":[{"name","shape","offset","count"}],"meta":{...}}
//   remainder     tensor payloads, little-endian IEEE-754 doubles; `offset` counts
//                 doubles from the start of the payload section

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ftscore/error.hpp"
#include "ftscore/tensor/tensor.hpp"

namespace ftscore {

struct Checkpoint {
    nlohmann::json meta = nlohmann::json::object();
    std::vector<std::pair<std::string, Tensor>> tensors;

    void add(std::string name, Tensor t) { tensors.emplace_back(std::move(name), std::move(t)); }

    [[nodiscard]] const Tensor& get(const std::string& name) const
    {
        for (const auto& [n, t] : tensors) {
            if (n == name) {
                return t;
            }
        }
        throw DataError("checkpoint has no tensor named '" + name + "'");
    }

    [[nodiscard]] bool contains(const std::string& name) const
    {
        for (const auto& entry : tensors) {
            if (entry.first == name) {
                return true;
            }
        }
        return false;
    }
};

namespace detail {

inline constexpr char checkpoint_magic[] = "FTSCKPT1";

inline void put_u64(std::string& out, std::uint64_t v)
{
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
    }
}

inline std::uint64_t get_u64(const std::string& in, std::size_t pos)
{
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    }
    return v;
}

} // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ckpt)
{
    nlohmann::json manifest;
    manifest["dtype"] = "f64le";
    manifest["meta"] = ckpt.meta;
    manifest["tensors"] = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : ckpt.tensors) {
        manifest["tensors"].push_back(
            {{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"count", t.size()}});
        offset += t.size();
    }
    const std::string text = manifest.dump();
    std::string out(detail::checkpoint_magic, 8);
    detail::put_u64(out, text.size());
    out += text;
    for (const auto& entry : ckpt.tensors) {
        for (double v : entry.second.data()) {
            detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
        }
    }
    return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes)
{
    if (bytes.size() < 16 || bytes.compare(0, 8, detail::checkpoint_magic, 8) != 0) {
        throw DataError("not a checkpoint (bad magic)");
    }
    const std::uint64_t len = detail::get_u64(bytes, 8);
    if (bytes.size() < 16 + len) {
        throw DataError("checkpoint truncated in manifest");
    }
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(bytes.substr(16, len));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint manifest is not valid JSON: ") + e.what());
    }
    if (manifest.value("dtype", "") != "f64le") {
        throw DataError("checkpoint dtype must be f64le");
    }
    const std::size_t payload = 16 + len;
    Checkpoint ckpt;
    ckpt.meta = manifest.value("meta", nlohmann::json::object());
    for (const auto& entry : manifest.at("tensors")) {
        Shape shape = entry.at("shape").get<Shape>();
        const auto offset = entry.at("offset").get<std::uint64_t>();
        const auto count = entry.at("count").get<std::uint64_t>();
        if (count != shape_size(shape) || payload + (offset + count) * 8 > bytes.size()) {
            throw DataError("checkpoint tensor '" + entry.at("name").get<std::string>() +
                            "' is inconsistent with the payload");
        }
        std::vector<double> data(count);
        for (std::uint64_t i = 0; i < count; ++i) {
            data[i] = std::bit_cast<double>(detail::get_u64(bytes, payload + (offset + i) * 8));
        }
        ckpt.add(entry.at("name").get<std::string>(), Tensor(std::move(shape), std::move(data)));
    }
    return ckpt;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot write checkpoint " + path);
    }
    const std::string bytes = encode_checkpoint(ckpt);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline Checkpoint load_checkpoint(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot read checkpoint " + path);
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return decode_checkpoint(ss.str());
}

} // namespace ftscore
