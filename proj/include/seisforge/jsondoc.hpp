#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "seisforge/errors.hpp"

namespace seisforge {

// All human-readable documents (configs, manifests, building/model files,
// reports, checkpoint metadata) are JSON trees with units spelled out in the
// field names (e.g. "floor_height_m"). ordered_json keeps declaration order
// so identical inputs serialize byte-identically.
using Doc = nlohmann::ordered_json;

inline Doc load_doc(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path.string());
    try {
        return Doc::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

inline void save_doc(const std::filesystem::path& path, const Doc& doc) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << doc.dump(2) << "\n";
}

/// Unknown keys in a config document are errors: `allowed` lists every key
/// the consumer understands.
inline void reject_unknown_keys(const Doc& doc, std::initializer_list<const char*> allowed,
                                const std::string& context) {
    for (const auto& [key, value] : doc.items()) {
        bool known = false;
        for (const char* a : allowed)
            if (key == a) { known = true; break; }
        if (!known) throw ConfigError(context + ": unknown key '" + key + "'");
    }
}

template <typename T>
T doc_get(const Doc& doc, const std::string& key, const T& fallback) {
    if (!doc.contains(key)) return fallback;
    return doc.at(key).get<T>();
}

template <typename T>
T doc_require(const Doc& doc, const std::string& key, const std::string& context) {
    if (!doc.contains(key)) throw ConfigError(context + ": missing key '" + key + "'");
    return doc.at(key).get<T>();
}

} // namespace seisforge
