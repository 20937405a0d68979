#pragma once

// Parameter snapshots: one binary blob per named parameter plus a JSON
// manifest describing the model and the true tensor shapes. Blobs reuse the
// MTDF container at version 2, which stores 64-bit values so checkpoints
// round-trip training precision exactly.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtda/data.hpp"
#include "mtda/errors.hpp"
#include "mtda/model.hpp"
#include "mtda/tensor.hpp"

namespace mtda {

namespace detail {

inline void write_blob_f64(const std::filesystem::path& path, const std::vector<int>& shape,
                           const std::vector<double>& values) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("write_blob_f64: cannot open '" + path.string() + "' for writing");
    os.write("MTDF", 4);
    write_u32(os, 2);
    const int cols = shape.empty() ? 1 : shape.back();
    const int rows = static_cast<int>(values.size()) / cols;
    write_u32(os, static_cast<std::uint32_t>(rows));
    write_u32(os, static_cast<std::uint32_t>(cols));
    os.write(reinterpret_cast<const char*>(values.data()),
             static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!os) throw DataError("write_blob_f64: write failed for '" + path.string() + "'");
}

inline std::vector<double> read_blob_f64(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("read_blob_f64: cannot open '" + path.string() + "'");
    char magic[4];
    is.read(magic, 4);
    if (is.gcount() != 4 || std::memcmp(magic, "MTDF", 4) != 0) {
        throw FormatError("parameter blob '" + path.string() + "': bad magic at byte offset 0");
    }
    const std::uint32_t version = read_u32(is, path.string(), "version", 4);
    if (version != 2) {
        throw FormatError("parameter blob '" + path.string() + "': unsupported version " +
                          std::to_string(version) + " at byte offset 4 (expected 2)");
    }
    const std::uint32_t rows = read_u32(is, path.string(), "rows", 8);
    const std::uint32_t cols = read_u32(is, path.string(), "cols", 12);
    const std::size_t count = static_cast<std::size_t>(rows) * cols;
    std::vector<double> values(count);
    is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(count * sizeof(double)));
    if (is.gcount() != static_cast<std::streamsize>(count * sizeof(double))) {
        throw FormatError("parameter blob '" + path.string() + "': truncated payload: expected " +
                          std::to_string(count * sizeof(double)) + " bytes, got " + std::to_string(is.gcount()));
    }
    return values;
}

}  // namespace detail

inline nlohmann::json model_config_to_json(const ModelConfig& cfg) {
    nlohmann::json j;
    j["num_stages"] = cfg.num_stages;
    j["layers_per_stage"] = cfg.layers_per_stage;
    j["num_filters"] = cfg.num_filters;
    j["kernel_size"] = cfg.kernel_size;
    j["input_dim"] = cfg.input_dim;
    j["num_classes"] = cfg.num_classes;
    j["da_stages"] = std::vector<int>(cfg.da_stages.begin(), cfg.da_stages.end());
    j["domain_hidden_dim"] = cfg.domain_hidden_dim;
    return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    cfg.num_stages = j.at("num_stages").get<int>();
    cfg.layers_per_stage = j.at("layers_per_stage").get<int>();
    cfg.num_filters = j.at("num_filters").get<int>();
    cfg.kernel_size = j.at("kernel_size").get<int>();
    cfg.input_dim = j.at("input_dim").get<int>();
    cfg.num_classes = j.at("num_classes").get<int>();
    cfg.da_stages.clear();
    for (const auto& s : j.at("da_stages")) cfg.da_stages.insert(s.get<int>());
    cfg.domain_hidden_dim = j.at("domain_hidden_dim").get<int>();
    return cfg;
}

template <typename Real>
void save_checkpoint(const std::filesystem::path& dir, const ModelParams<Real>& params) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "params");
    nlohmann::json manifest;
    manifest["format"] = "mtda-checkpoint";
    manifest["version"] = 1;
    manifest["model"] = model_config_to_json(params.config);
    auto entries = nlohmann::json::array();
    for (const auto& p : params.named_params()) {
        const std::string file = "params/" + p.name + ".mtdf";
        std::vector<double> values(p.value->data.begin(), p.value->data.end());
        detail::write_blob_f64(dir / file, p.value->shape, values);
        nlohmann::json entry;
        entry["name"] = p.name;
        entry["file"] = file;
        entry["shape"] = p.value->shape;
        entries.push_back(entry);
    }
    manifest["params"] = entries;
    std::ofstream os(dir / "checkpoint.json");
    if (!os) throw DataError("save_checkpoint: cannot open '" + (dir / "checkpoint.json").string() + "'");
    os << manifest.dump(2) << "\n";
}

template <typename Real>
ModelParams<Real> load_checkpoint(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "checkpoint.json";
    std::ifstream is(manifest_path);
    if (!is) throw DataError("load_checkpoint: cannot open '" + manifest_path.string() + "'");
    nlohmann::json manifest;
    try {
        is >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("load_checkpoint: unparseable manifest '" + manifest_path.string() + "': " + e.what());
    }
    if (manifest.value("format", "") != "mtda-checkpoint" || manifest.value("version", 0) != 1) {
        throw FormatError("load_checkpoint: '" + manifest_path.string() + "' is not a version-1 checkpoint");
    }

    ModelParams<Real> params = build_model<Real>(model_config_from_json(manifest.at("model")), 0);
    std::map<std::string, TensorPtr<Real>> by_name;
    for (const auto& p : params.named_params()) by_name[p.name] = p.value;

    std::size_t loaded = 0;
    for (const auto& entry : manifest.at("params")) {
        const std::string name = entry.at("name").get<std::string>();
        auto it = by_name.find(name);
        if (it == by_name.end()) {
            throw FormatError("load_checkpoint: unknown parameter '" + name + "' in manifest");
        }
        const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
        if (shape != it->second->shape) {
            throw FormatError("load_checkpoint: parameter '" + name + "' has shape " + shape_str(shape) +
                              ", model expects " + shape_str(it->second->shape));
        }
        const auto values = detail::read_blob_f64(dir / entry.at("file").get<std::string>());
        if (values.size() != it->second->data.size()) {
            throw FormatError("load_checkpoint: parameter '" + name + "' has " + std::to_string(values.size()) +
                              " values, model expects " + std::to_string(it->second->data.size()));
        }
        for (std::size_t i = 0; i < values.size(); ++i) it->second->data[i] = static_cast<Real>(values[i]);
        ++loaded;
    }
    if (loaded != by_name.size()) {
        throw FormatError("load_checkpoint: manifest lists " + std::to_string(loaded) + " parameters, model has " +
                          std::to_string(by_name.size()));
    }
    return params;
}

}  // namespace mtda
