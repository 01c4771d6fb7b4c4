#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "seisforge/dynamics.hpp" // byte readers/writers
#include "seisforge/errors.hpp"
#include "seisforge/jsondoc.hpp"
#include "seisforge/srfd.hpp"

namespace seisforge::train {

/// Channel normalization applied to every model input/target, frozen at
/// dataset-build time from the train split only. Means are recorded for
/// reporting; only the stds are applied (centering would break the exact
/// zero-padding semantics of short windows).
struct NormStats {
    double dt = 0.02;
    double wave_std = 1.0, disp_std = 1.0, acc_std = 1.0;
    double wave_mean = 0.0, disp_mean = 0.0, acc_mean = 0.0;
    double input_clip = 50.0; // bound on normalized input channels

    Doc to_doc() const {
        Doc d;
        d["dt_s"] = dt;
        d["wave_std_m_s2"] = wave_std;
        d["disp_std_m"] = disp_std;
        d["acc_std_m_s2"] = acc_std;
        d["wave_mean_m_s2"] = wave_mean;
        d["disp_mean_m"] = disp_mean;
        d["acc_mean_m_s2"] = acc_mean;
        d["input_clip"] = input_clip;
        return d;
    }

    static NormStats from_doc(const Doc& d) {
        NormStats s;
        s.dt = doc_require<double>(d, "dt_s", "norm stats");
        s.wave_std = doc_require<double>(d, "wave_std_m_s2", "norm stats");
        s.disp_std = doc_require<double>(d, "disp_std_m", "norm stats");
        s.acc_std = doc_require<double>(d, "acc_std_m_s2", "norm stats");
        s.wave_mean = doc_get(d, "wave_mean_m_s2", 0.0);
        s.disp_mean = doc_get(d, "disp_mean_m", 0.0);
        s.acc_mean = doc_get(d, "acc_mean_m_s2", 0.0);
        s.input_clip = doc_get(d, "input_clip", 50.0);
        return s;
    }
};

inline std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// ---------------------------------------------------------------------------
// SGPT container: magic, version, length-prefixed JSON metadata, a
// length-checked index table, then named arrays as little-endian f32.
// ---------------------------------------------------------------------------

namespace detail {

struct NamedArray {
    std::string name;
    const std::vector<float>* data;
};

inline std::string encode_container(const Doc& meta,
                                    const std::vector<NamedArray>& arrays) {
    std::string out;
    out += "SGPT";
    dyn::detail::put_u32(out, 1u);
    const std::string meta_text = meta.dump(2);
    dyn::detail::put_u64(out, meta_text.size());
    out += meta_text;
    dyn::detail::put_u64(out, arrays.size());
    std::uint64_t offset = 0;
    for (const auto& a : arrays) {
        if (a.name.size() > 0xFFFF) throw ConfigError("checkpoint: tensor name too long");
        dyn::detail::put_u32(out, static_cast<std::uint32_t>(a.name.size()));
        out += a.name;
        dyn::detail::put_u64(out, offset);
        dyn::detail::put_u64(out, a.data->size());
        offset += a.data->size();
    }
    for (const auto& a : arrays)
        for (float v : *a.data) dyn::detail::put_f32(out, v);
    return out;
}

struct DecodedContainer {
    Doc meta;
    std::vector<std::string> names;
    std::vector<std::vector<float>> arrays;
};

inline DecodedContainer decode_container(const std::string& bytes, const std::string& ctx) {
    dyn::detail::Reader rd{bytes, 0, ctx};
    if (rd.bytes(4) != "SGPT") throw ParseError(ctx + ": bad magic (expected SGPT)");
    const std::uint32_t version = rd.u32();
    if (version != 1u)
        throw CompatibilityError(ctx + ": unsupported checkpoint version " +
                                 std::to_string(version));
    const std::uint64_t meta_len = rd.u64();
    DecodedContainer out;
    try {
        out.meta = Doc::parse(rd.bytes(meta_len));
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(ctx + ": bad metadata: " + e.what());
    }
    const std::uint64_t count = rd.u64();
    std::vector<std::uint64_t> offsets(count), lengths(count);
    std::uint64_t total = 0;
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = rd.u32();
        out.names.push_back(rd.bytes(name_len));
        offsets[i] = rd.u64();
        lengths[i] = rd.u64();
        if (offsets[i] != total)
            throw ParseError(ctx + ": index table offsets are not contiguous");
        total += lengths[i];
    }
    if (bytes.size() - rd.pos != total * 4)
        throw ParseError(ctx + ": data region length mismatch");
    out.arrays.resize(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        out.arrays[i].resize(lengths[i]);
        for (auto& v : out.arrays[i]) v = rd.f32();
    }
    return out;
}

} // namespace detail

struct Checkpoint {
    srfd::SrfdConfig config;
    srfd::SrfdWeights<float> weights;
    NormStats stats;
    Doc provenance; // seeds, steps, manifest reference

    std::string encode() const {
        Doc meta;
        meta["kind"] = "base";
        meta["config"] = config.to_doc();
        meta["normalization"] = stats.to_doc();
        meta["provenance"] = provenance.is_null() ? Doc::object() : provenance;
        std::vector<detail::NamedArray> arrays;
        const_cast<srfd::SrfdWeights<float>&>(weights).visit(
            [&](const std::string& name, srfd::Mat<float>& m) {
                arrays.push_back({name, &m.d});
            });
        return detail::encode_container(meta, arrays);
    }

    static Checkpoint decode(const std::string& bytes, const std::string& ctx) {
        auto dc = detail::decode_container(bytes, ctx);
        if (doc_get<std::string>(dc.meta, "kind", "") != "base")
            throw CompatibilityError(ctx + ": not a base checkpoint");
        Checkpoint c;
        c.config = srfd::SrfdConfig::from_doc(dc.meta.at("config"));
        c.stats = NormStats::from_doc(dc.meta.at("normalization"));
        c.provenance = doc_get(dc.meta, "provenance", Doc::object());
        c.weights = srfd::make_weights<float>(c.config);
        std::size_t idx = 0;
        c.weights.visit([&](const std::string& name, srfd::Mat<float>& m) {
            if (idx >= dc.names.size() || dc.names[idx] != name)
                throw CompatibilityError(ctx + ": tensor order mismatch at '" + name + "'");
            if (dc.arrays[idx].size() != m.d.size())
                throw CompatibilityError(ctx + ": tensor '" + name + "' length " +
                                         std::to_string(dc.arrays[idx].size()) + " != expected " +
                                         std::to_string(m.d.size()));
            m.d = dc.arrays[idx];
            ++idx;
        });
        if (idx != dc.names.size())
            throw CompatibilityError(ctx + ": checkpoint carries unexpected extra tensors");
        return c;
    }
};

struct AdapterCheckpoint {
    srfd::SrfdConfig config; // config of the base model, adapters included
    srfd::LoraSet<float> lora;
    std::string base_hash_hex;
    Doc provenance;

    std::string encode(srfd::SrfdWeights<float>& base_weights) const {
        Doc meta;
        meta["kind"] = "adapter";
        meta["config"] = config.to_doc();
        meta["base_hash"] = base_hash_hex;
        meta["lora_rank"] = lora.rank;
        meta["lora_alpha"] = lora.alpha;
        meta["provenance"] = provenance.is_null() ? Doc::object() : provenance;
        std::vector<detail::NamedArray> arrays;
        const_cast<srfd::LoraSet<float>&>(lora).visit(
            base_weights, [&](const std::string& name, srfd::Mat<float>& m) {
                arrays.push_back({name, &m.d});
            });
        return detail::encode_container(meta, arrays);
    }

    static AdapterCheckpoint decode(const std::string& bytes, const std::string& ctx,
                                    const Checkpoint& base, const std::string& base_bytes) {
        auto dc = detail::decode_container(bytes, ctx);
        if (doc_get<std::string>(dc.meta, "kind", "") != "adapter")
            throw CompatibilityError(ctx + ": not an adapter checkpoint");
        AdapterCheckpoint a;
        a.config = srfd::SrfdConfig::from_doc(dc.meta.at("config"));
        a.base_hash_hex = doc_require<std::string>(dc.meta, "base_hash", ctx);
        if (a.base_hash_hex != hex64(fnv1a64(base_bytes)))
            throw CompatibilityError(ctx + ": adapter references a different base checkpoint (" +
                                     a.base_hash_hex + ")");
        a.provenance = doc_get(dc.meta, "provenance", Doc::object());
        a.lora.rank = doc_require<int>(dc.meta, "lora_rank", ctx);
        a.lora.alpha = doc_require<double>(dc.meta, "lora_alpha", ctx);
        // rebuild shapes from the base config, then copy arrays in order
        auto w = srfd::make_weights<float>(base.config);
        srfd::SrfdConfig cfg_with_rank = base.config;
        cfg_with_rank.lora_rank = a.lora.rank;
        cfg_with_rank.lora_alpha = a.lora.alpha;
        a.lora = srfd::make_lora<float>(cfg_with_rank, w, 0);
        std::size_t idx = 0;
        a.lora.visit(w, [&](const std::string& name, srfd::Mat<float>& m) {
            if (idx >= dc.names.size() || dc.names[idx] != name)
                throw CompatibilityError(ctx + ": adapter tensor order mismatch at '" + name + "'");
            if (dc.arrays[idx].size() != m.d.size())
                throw CompatibilityError(ctx + ": adapter tensor '" + name + "' length mismatch");
            m.d = dc.arrays[idx];
            ++idx;
        });
        return a;
    }
};

inline void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace seisforge::train
