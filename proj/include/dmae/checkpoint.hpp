// SPDX-License-Identifier: Apache-2.0
#pragma once

// Checkpoint file:
//   "DMAECKPT" | u64 little-endian manifest length | manifest JSON | blob
// The manifest lists every tensor's name, shape, dtype and byte offset into
// the blob; the blob is little-endian float32. The manifest also carries the
// model configuration, its hash and the schema version.

#include "dmae/model.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

namespace dmae {

inline constexpr int checkpoint_schema_version = 1;

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::string config_hash(const ModelConfig& c) {
    std::ostringstream os;
    os << std::hex << fnv1a(to_json(c).dump());
    return os.str();
}

namespace detail {

inline void put_f32_le(std::string& out, float f) {
    auto bits = std::bit_cast<std::uint32_t>(f);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

inline float get_f32_le(const unsigned char* p) {
    const std::uint32_t bits = p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
    return std::bit_cast<float>(bits);
}

/// Write to a temporary sibling then rename over the destination.
inline void write_atomic(const std::filesystem::path& path, const std::string& bytes) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw CheckpointError("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw CheckpointError("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace detail

/// Save every parameter accepted by `keep` (all of them by default). `extra`
/// is stored verbatim in the manifest.
template <typename S>
void save_checkpoint(const Model<S>& model, const std::filesystem::path& path, const nlohmann::json& extra = {},
                     const std::function<bool(const std::string&)>& keep = {}) {
    nlohmann::json manifest;
    manifest["schema_version"] = checkpoint_schema_version;
    manifest["config"] = to_json(model.config());
    manifest["config_hash"] = config_hash(model.config());
    manifest["dtype"] = "float32";
    if (!extra.is_null()) manifest["extra"] = extra;
    std::string blob;
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& p : model.params()) {
        if (keep && !keep(p->name)) continue;
        tensors.push_back({{"name", p->name},
                           {"shape", p->value.shape()},
                           {"dtype", "float32"},
                           {"offset", blob.size()},
                           {"trainable", p->trainable}});
        for (S v : p->value.data()) detail::put_f32_le(blob, static_cast<float>(v));
    }
    manifest["tensors"] = tensors;
    const std::string m = manifest.dump();
    std::string bytes = "DMAECKPT";
    const std::uint64_t len = m.size();
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<char>((len >> (8 * i)) & 0xff));
    bytes += m;
    bytes += blob;
    detail::write_atomic(path, bytes);
}

struct CheckpointFile {
    nlohmann::json manifest;
    std::vector<unsigned char> blob;
};

inline CheckpointFile read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (!in || std::string_view(magic, 8) != "DMAECKPT") throw CheckpointError("not a checkpoint: " + path.string());
    unsigned char lb[8];
    in.read(reinterpret_cast<char*>(lb), 8);
    std::uint64_t len = 0;
    for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(lb[i]) << (8 * i);
    std::string m(len, '\0');
    in.read(m.data(), static_cast<std::streamsize>(len));
    if (!in) throw CheckpointError("truncated manifest in " + path.string());
    CheckpointFile f;
    try {
        f.manifest = nlohmann::json::parse(m);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("bad manifest: ") + e.what());
    }
    f.blob.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    if (f.manifest.value("schema_version", -1) != checkpoint_schema_version)
        throw CheckpointError("checkpoint schema version " + f.manifest.value("schema_version", nlohmann::json(-1)).dump() +
                              " is not supported (expected " + std::to_string(checkpoint_schema_version) + ")");
    return f;
}

/// Copy checkpoint tensors into an existing model. Every tensor in the file
/// must exist in the model with the same shape; model tensors absent from the
/// file keep their values.
template <typename S>
void load_into(Model<S>& model, const CheckpointFile& f) {
    if (f.manifest.at("config_hash") != config_hash(model.config()))
        throw CheckpointError("checkpoint configuration does not match the model");
    for (const auto& t : f.manifest.at("tensors")) {
        const std::string name = t.at("name");
        if (name.rfind("head.", 0) == 0 && !model.has_head()) model.attach_head(t.at("shape").back().get<std::size_t>());
        Parameter<S>* p = model.params().find(name);
        if (!p) throw CheckpointError("unknown tensor in checkpoint: " + name);
        const Shape shape = t.at("shape").get<Shape>();
        if (shape != p->value.shape())
            throw CheckpointError("shape mismatch for " + name + ": file " + shape_str(shape) + ", model " +
                                  shape_str(p->value.shape()));
        const std::size_t off = t.at("offset");
        if (off + 4 * p->value.size() > f.blob.size()) throw CheckpointError("truncated tensor data for " + name);
        for (std::size_t i = 0; i < p->value.size(); ++i)
            p->value[i] = static_cast<S>(detail::get_f32_le(f.blob.data() + off + 4 * i));
    }
}

/// Rebuild a model from the configuration stored in the checkpoint.
template <typename S>
Model<S> load_checkpoint(const std::filesystem::path& path, nlohmann::json* extra = nullptr) {
    const auto f = read_checkpoint(path);
    Model<S> model(model_config_from_json(f.manifest.at("config")));
    load_into(model, f);
    if (extra) *extra = f.manifest.value("extra", nlohmann::json::object());
    return model;
}

}  // namespace dmae
