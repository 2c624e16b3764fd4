#pragma once

// Checkpoint persistence. A checkpoint is a JSON manifest (model config,
// vocabulary, pair order, phase log, probe sentences, tensor and mask
// directories with byte offsets and CRCs) followed by one binary payload:
// f32 weights then u8 owner bytes, all little-endian, in directory order.
// Loading verifies magic, version, segment lengths, and per-segment CRC32
// before any state is built, so a corrupt file never yields a partial model.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "packmt/corpus.hpp"
#include "packmt/model.hpp"
#include "packmt/packing.hpp"

namespace packmt {

struct PhaseEntry {
    std::string phase;       // "multilingual" | "base_prune_retrain" | "adapt.A" | ...
    std::int32_t pair = 0;   // 0 when the phase is not pair-specific
    std::int64_t epochs = 0;
    std::int64_t steps = 0;  // optimizer steps taken in the phase
    double final_loss = 0.0;

    bool operator==(const PhaseEntry&) const = default;
};

struct Checkpoint {
    ModelConfig model;
    VocabLayout vocab;
    std::uint64_t seed = 0;
    std::vector<std::int32_t> pair_order;                          // adaptation sequence
    std::vector<PhaseEntry> phase_log;
    std::map<std::int32_t, std::vector<std::vector<std::int32_t>>> probes;  // per-pair probe sentences
    ParamStore<float> params;
    OwnershipMask mask;  // empty before base pruning
};

namespace detail {

inline constexpr char kCheckpointMagic[8] = {'P', 'M', 'T', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline nlohmann::json model_to_json(const ModelConfig& m) {
    return {{"num_heads", m.num_heads},
            {"num_encoder_layers", m.num_encoder_layers},
            {"num_decoder_layers", m.num_decoder_layers},
            {"embed_dim", m.embed_dim},
            {"ffn_dim", m.ffn_dim},
            {"dropout", m.dropout},
            {"vocab_size", m.vocab_size},
            {"max_seq_len", m.max_seq_len}};
}

inline ModelConfig model_from_json(const nlohmann::json& j) {
    ModelConfig m;
    m.num_heads = j.at("num_heads").get<std::int64_t>();
    m.num_encoder_layers = j.at("num_encoder_layers").get<std::int64_t>();
    m.num_decoder_layers = j.at("num_decoder_layers").get<std::int64_t>();
    m.embed_dim = j.at("embed_dim").get<std::int64_t>();
    m.ffn_dim = j.at("ffn_dim").get<std::int64_t>();
    m.dropout = j.at("dropout").get<double>();
    m.vocab_size = j.at("vocab_size").get<std::int64_t>();
    m.max_seq_len = j.at("max_seq_len").get<std::int64_t>();
    m.validate();
    return m;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    // Payload first so the manifest can carry offsets and checksums.
    std::string payload;
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& e : ckpt.params.entries()) {
        const std::uint64_t offset = payload.size();
        for (float v : e.tensor.data) io::put_f32le(payload, v);
        const std::uint64_t bytes = payload.size() - offset;
        tensors.push_back({{"name", e.name},
                           {"shape", e.tensor.shape},
                           {"dtype", "f32"},
                           {"prunable", e.prunable},
                           {"offset", offset},
                           {"bytes", bytes},
                           {"crc32", io::crc32(payload.data() + offset, bytes)}});
    }
    nlohmann::json masks = nlohmann::json::array();
    for (const auto& e : ckpt.mask.entries()) {
        const std::uint64_t offset = payload.size();
        payload.append(reinterpret_cast<const char*>(e.owners.data()), e.owners.size());
        masks.push_back({{"name", e.name},
                         {"count", e.owners.size()},
                         {"offset", offset},
                         {"bytes", e.owners.size()},
                         {"crc32", io::crc32(payload.data() + offset, e.owners.size())}});
    }

    nlohmann::json m;
    m["format"] = "packmt-checkpoint";
    m["version"] = detail::kCheckpointVersion;
    m["model"] = detail::model_to_json(ckpt.model);
    m["vocab"] = {{"content_size", ckpt.vocab.content_size}, {"num_languages", ckpt.vocab.num_languages}};
    m["seed"] = ckpt.seed;
    m["pair_order"] = ckpt.pair_order;
    m["phase_log"] = nlohmann::json::array();
    for (const auto& p : ckpt.phase_log)
        m["phase_log"].push_back({{"phase", p.phase},
                                  {"pair", p.pair},
                                  {"epochs", p.epochs},
                                  {"steps", p.steps},
                                  {"final_loss", p.final_loss}});
    m["probes"] = nlohmann::json::object();
    for (const auto& [pair, sentences] : ckpt.probes) m["probes"][std::to_string(pair)] = sentences;
    m["tensors"] = std::move(tensors);
    m["masks"] = std::move(masks);
    m["payload_bytes"] = payload.size();

    const std::string manifest = m.dump();
    std::string header;
    header.append(detail::kCheckpointMagic, sizeof(detail::kCheckpointMagic));
    io::put_u32le(header, detail::kCheckpointVersion);
    io::put_u64le(header, manifest.size());

    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("checkpoint: cannot write " + tmp.string());
        f.write(header.data(), static_cast<std::streamsize>(header.size()));
        f.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
        f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
        f.close();
        if (!f) throw IoError("checkpoint: failed writing " + tmp.string());
    }
    std::filesystem::rename(tmp, path);  // atomic publish
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::string blob;
    {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw IoError("checkpoint: cannot read " + path.string());
        blob.assign((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    }
    io::Reader r(blob.data(), blob.size());

    char magic[8];
    r.bytes(magic, sizeof(magic));
    if (std::memcmp(magic, detail::kCheckpointMagic, sizeof(magic)) != 0)
        throw IoError("checkpoint: " + path.string() + " is not a checkpoint file");
    const std::uint32_t version = r.u32le();
    if (version != detail::kCheckpointVersion)
        throw IoError("checkpoint: unsupported format version " + std::to_string(version));
    const std::uint64_t manifest_size = r.u64le();
    if (manifest_size > r.remaining())
        throw IoError("checkpoint: manifest extends past the end of " + path.string());
    const char* manifest_begin = blob.data() + r.position();
    nlohmann::json m;
    try {
        m = nlohmann::json::parse(manifest_begin, manifest_begin + manifest_size);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("checkpoint: bad manifest in " + path.string() + ": " + e.what());
    }
    r.seek(r.position() + manifest_size);

    const std::uint64_t payload_offset = r.position();
    try {
        if (m.at("format").get<std::string>() != "packmt-checkpoint")
            throw IoError("checkpoint: " + path.string() + " manifest has the wrong format tag");
        const std::uint64_t payload_bytes = m.at("payload_bytes").get<std::uint64_t>();
        if (payload_bytes != r.remaining())
            throw IoError("checkpoint: payload is " + std::to_string(r.remaining()) + " bytes, manifest says " +
                          std::to_string(payload_bytes));

        Checkpoint ckpt;
        ckpt.model = detail::model_from_json(m.at("model"));
        ckpt.vocab.content_size = m.at("vocab").at("content_size").get<std::int32_t>();
        ckpt.vocab.num_languages = m.at("vocab").at("num_languages").get<std::int32_t>();
        ckpt.seed = m.at("seed").get<std::uint64_t>();
        ckpt.pair_order = m.at("pair_order").get<std::vector<std::int32_t>>();
        for (const auto& p : m.at("phase_log")) {
            PhaseEntry e;
            e.phase = p.at("phase").get<std::string>();
            e.pair = p.at("pair").get<std::int32_t>();
            e.epochs = p.at("epochs").get<std::int64_t>();
            e.steps = p.at("steps").get<std::int64_t>();
            e.final_loss = p.at("final_loss").get<double>();
            ckpt.phase_log.push_back(std::move(e));
        }
        for (const auto& [key, sentences] : m.at("probes").items())
            ckpt.probes[std::stoi(key)] = sentences.get<std::vector<std::vector<std::int32_t>>>();

        for (const auto& jt : m.at("tensors")) {
            const std::uint64_t offset = jt.at("offset").get<std::uint64_t>();
            const std::uint64_t bytes = jt.at("bytes").get<std::uint64_t>();
            if (offset + bytes > payload_bytes)
                throw IoError("checkpoint: tensor segment outruns the payload in " + path.string());
            const char* seg = blob.data() + payload_offset + offset;
            if (io::crc32(seg, bytes) != jt.at("crc32").get<std::uint32_t>())
                throw IoError("checkpoint: checksum mismatch on tensor '" +
                              jt.at("name").get<std::string>() + "' in " + path.string());
            const auto shape = jt.at("shape").get<std::vector<std::int64_t>>();
            Tensor<float> t(shape, std::vector<float>(static_cast<std::size_t>(Tensor<float>::numel_of(shape))),
                            jt.at("name").get<std::string>());
            if (bytes != t.data.size() * sizeof(float))
                throw IoError("checkpoint: tensor '" + t.name + "' has " + std::to_string(bytes) +
                              " bytes for shape " + shape_str(shape));
            io::Reader tr(seg, bytes);
            for (float& v : t.data) v = tr.f32le();
            std::string name = t.name;  // keep alive across the move
            ckpt.params.add(std::move(name), std::move(t));
        }
        for (const auto& jm : m.at("masks")) {
            const std::uint64_t offset = jm.at("offset").get<std::uint64_t>();
            const std::uint64_t bytes = jm.at("bytes").get<std::uint64_t>();
            if (offset + bytes > payload_bytes)
                throw IoError("checkpoint: mask segment outruns the payload in " + path.string());
            const char* seg = blob.data() + payload_offset + offset;
            if (io::crc32(seg, bytes) != jm.at("crc32").get<std::uint32_t>())
                throw IoError("checkpoint: checksum mismatch on mask '" + jm.at("name").get<std::string>() +
                              "' in " + path.string());
            if (bytes != jm.at("count").get<std::uint64_t>())
                throw IoError("checkpoint: mask '" + jm.at("name").get<std::string>() + "' length mismatch");
            std::vector<std::uint8_t> owners(bytes);
            std::memcpy(owners.data(), seg, bytes);
            ckpt.mask.add(jm.at("name").get<std::string>(), std::move(owners));
        }

        // The mask, when present, must describe exactly the prunable tensors.
        for (const auto& e : ckpt.params.entries()) {
            if (!ckpt.mask.entries().empty() && e.prunable) {
                if (!ckpt.mask.has(e.name))
                    throw IoError("checkpoint: prunable tensor '" + e.name + "' has no owner mask");
                if (ckpt.mask.at(e.name).size() != e.tensor.data.size())
                    throw IoError("checkpoint: owner mask for '" + e.name + "' has the wrong length");
            }
        }
        return ckpt;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("checkpoint: manifest in " + path.string() + " is missing fields: " + e.what());
    }
}

// -- logit snapshots ---------------------------------------------------------
//
// Probe logits captured when a phase completes, persisted so a later `verify`
// can prove bit-stability without replaying training. Same framing idea as
// checkpoints, scaled down: magic, version, entry count, then per entry the
// key, shape, f32 payload, and a checksum.

namespace detail {

inline constexpr char kSnapshotMagic[8] = {'P', 'M', 'T', 'S', 'N', 'A', 'P', '1'};
inline constexpr std::uint32_t kSnapshotVersion = 1;

}  // namespace detail

inline void save_snapshot(const std::map<std::string, Tensor<float>>& snap, const std::filesystem::path& path) {
    std::string blob;
    blob.append(detail::kSnapshotMagic, sizeof(detail::kSnapshotMagic));
    io::put_u32le(blob, detail::kSnapshotVersion);
    io::put_u64le(blob, snap.size());
    for (const auto& [key, tensor] : snap) {
        io::put_u64le(blob, key.size());
        blob.append(key);
        io::put_u64le(blob, tensor.shape.size());
        for (std::int64_t d : tensor.shape) io::put_u64le(blob, static_cast<std::uint64_t>(d));
        const std::size_t offset = blob.size();
        for (float v : tensor.data) io::put_f32le(blob, v);
        io::put_u32le(blob, io::crc32(blob.data() + offset, blob.size() - offset));
    }

    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("snapshot: cannot write " + tmp.string());
        f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
        f.close();
        if (!f) throw IoError("snapshot: failed writing " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline std::map<std::string, Tensor<float>> load_snapshot(const std::filesystem::path& path) {
    std::string blob;
    {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw IoError("snapshot: cannot open " + path.string());
        std::ostringstream ss;
        ss << f.rdbuf();
        blob = ss.str();
    }
    io::Reader r(blob.data(), blob.size());
    char magic[8];
    r.bytes(magic, sizeof(magic));
    if (std::memcmp(magic, detail::kSnapshotMagic, sizeof(magic)) != 0)
        throw IoError("snapshot: " + path.string() + " is not a snapshot file");
    if (r.u32le() != detail::kSnapshotVersion) throw IoError("snapshot: unsupported version in " + path.string());
    const std::uint64_t count = r.u64le();
    std::map<std::string, Tensor<float>> snap;
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint64_t key_len = r.u64le();
        std::string key(r.view(key_len));
        const std::uint64_t ndim = r.u64le();
        std::vector<std::int64_t> shape;
        std::int64_t elems = 1;
        for (std::uint64_t d = 0; d < ndim; ++d) {
            shape.push_back(static_cast<std::int64_t>(r.u64le()));
            if (shape.back() <= 0 || elems > (1LL << 40) / std::max<std::int64_t>(shape.back(), 1))
                throw IoError("snapshot: implausible shape in " + path.string());
            elems *= shape.back();
        }
        const std::size_t offset = r.position();
        Tensor<float> t(shape, std::vector<float>(static_cast<std::size_t>(elems)));
        for (auto& v : t.data) v = r.f32le();
        const std::uint32_t crc = io::crc32(blob.data() + offset, r.position() - offset);
        if (crc != r.u32le()) throw IoError("snapshot: checksum mismatch on '" + key + "' in " + path.string());
        snap.emplace(std::move(key), std::move(t));
    }
    if (r.remaining() != 0) throw IoError("snapshot: trailing bytes in " + path.string());
    return snap;
}

}  // namespace packmt
