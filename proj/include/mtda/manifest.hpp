#pragma once

// Run manifests: config snapshot, seed, input digests, timestamps, and
// output paths. Result documents reference a run by `run_digest`, a hash of
// the deterministic manifest core (everything except timestamps and output
// paths), so identical runs emit identical documents.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtda/errors.hpp"

namespace mtda {

inline constexpr const char* kArtifactVersion = "mtda 1.0.0";

inline std::uint64_t fnv1a64(const unsigned char* data, std::size_t size, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (std::size_t i = 0; i < size; ++i) {
        h ^= data[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ULL) {
    return fnv1a64(reinterpret_cast<const unsigned char*>(s.data()), s.size(), h);
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::string digest_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("digest_file: cannot open '" + path.string() + "'");
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
        h = fnv1a64(reinterpret_cast<const unsigned char*>(buf), static_cast<std::size_t>(is.gcount()), h);
    }
    return hex64(h);
}

// Recursive digest of a directory's regular files (paths and contents),
// in sorted path order.
inline std::string digest_tree(const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(root)) {
        if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& f : files) {
        h = fnv1a64(fs::relative(f, root).generic_string(), h);
        h = fnv1a64(digest_file(f), h);
    }
    return hex64(h);
}

inline std::string iso8601_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

struct RunManifest {
    std::string command;
    std::string artifact_version = kArtifactVersion;
    std::uint64_t seed = 0;
    std::map<std::string, std::string> config;           // canonical snapshot
    std::map<std::string, std::string> input_digests;    // path -> digest
    std::string started_at;
    std::string finished_at;
    std::vector<std::string> outputs;

    // Hash of the deterministic core; result documents cite this value.
    std::string run_digest() const {
        std::uint64_t h = fnv1a64(command);
        h = fnv1a64(artifact_version, h);
        h = fnv1a64(std::to_string(seed), h);
        for (const auto& [k, v] : config) {
            h = fnv1a64(k, h);
            h = fnv1a64(v, h);
        }
        for (const auto& [k, v] : input_digests) {
            h = fnv1a64(k, h);
            h = fnv1a64(v, h);
        }
        return hex64(h);
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["command"] = command;
        j["artifact_version"] = artifact_version;
        j["seed"] = seed;
        j["config"] = config;
        j["input_digests"] = input_digests;
        j["started_at"] = started_at;
        j["finished_at"] = finished_at;
        j["outputs"] = outputs;
        j["run_digest"] = run_digest();
        return j;
    }

    void write(const std::filesystem::path& path) const {
        std::ofstream os(path);
        if (!os) throw DataError("RunManifest: cannot open '" + path.string() + "' for writing");
        os << to_json().dump(2) << "\n";
    }
};

}  // namespace mtda
