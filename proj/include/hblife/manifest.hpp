// Run manifests: config snapshot, seed, and input hashes. Every artifact a
// subcommand writes embeds the manifest hash, so `report` can refuse inputs
// produced by different runs. No timestamps, to keep reruns byte-identical.
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <json.hpp>

#include "hblife/common.hpp"

namespace hblife {

inline std::string hash_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("manifest: cannot open input '" + path.string() + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return "fnv1a64:" + hex64(fnv1a64(buf.str()));
}

struct Manifest {
    std::string command;
    std::uint64_t seed = 0;
    nlohmann::json config = nlohmann::json::object();
    std::map<std::string, std::string> input_hashes;

    nlohmann::json body() const {
        nlohmann::json j;
        j["version"] = kVersion;
        j["command"] = command;
        j["seed"] = seed;
        j["config"] = config;
        j["inputs"] = input_hashes;
        return j;
    }

    /// Hash over the canonical body dump (sorted keys, no hash field).
    std::string hash() const { return hex64(fnv1a64(body().dump())); }

    void write(const std::filesystem::path& dir) const {
        std::filesystem::create_directories(dir);
        nlohmann::json j = body();
        j["manifest_hash"] = hash();
        std::ofstream out(dir / "manifest.json");
        if (!out) fail("manifest: cannot write '" + (dir / "manifest.json").string() + "'");
        out << j.dump(2) << "\n";
    }
};

} // namespace hblife
