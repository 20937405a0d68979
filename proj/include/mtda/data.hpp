#pragma once

// Feature/label ingestion, dataset containers with sealed target labels, and
// a synthetic cross-domain generator with controllable spatial and temporal
// shift.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mtda/errors.hpp"
#include "mtda/rng.hpp"

namespace mtda {

enum class Domain { source, target };

inline const char* domain_name(Domain d) { return d == Domain::source ? "source" : "target"; }

// Domain label fed to the domain classifiers: source = 0, target = 1.
inline int domain_label(Domain d) { return d == Domain::source ? 0 : 1; }

struct ClassMap {
    std::vector<std::string> names;  // index == id, dense from 0
    std::map<std::string, int> ids;

    int size() const { return static_cast<int>(names.size()); }

    int id_of(const std::string& name) const {
        auto it = ids.find(name);
        return it == ids.end() ? -1 : it->second;
    }

    static ClassMap from_names(std::vector<std::string> names) {
        ClassMap cm;
        cm.names = std::move(names);
        for (std::size_t i = 0; i < cm.names.size(); ++i) cm.ids[cm.names[i]] = static_cast<int>(i);
        return cm;
    }
};

struct FeatureSequence {
    std::string video_id;
    int frames = 0;
    int dim = 0;
    std::vector<float> values;  // row-major frames x dim, the on-disk precision

    float at(int t, int d) const { return values[static_cast<std::size_t>(t) * dim + d]; }
};

struct LabelSequence {
    std::string video_id;
    std::vector<int> labels;
};

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------
//   Feature file: magic "MTDF", u32 version, u32 T, u32 D, then T*D
//   little-endian IEEE-754 values, row-major. Version 1 stores 32-bit values
//   (the feature interchange format); version 2 stores 64-bit values and is
//   used for parameter checkpoints.
//   Label file: UTF-8 text, one action name per line.
//   Class map:  lines of "<id> <name>", ids dense from 0.
//   Split file: one video id per line.

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is, const std::string& path, const char* field,
                              std::streamoff offset) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (is.gcount() != 4) {
        throw FormatError("feature file '" + path + "': truncated " + field + " at byte offset " +
                          std::to_string(offset));
    }
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace detail

inline void save_features(const std::filesystem::path& path, const FeatureSequence& seq) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("save_features: cannot open '" + path.string() + "' for writing");
    os.write("MTDF", 4);
    detail::write_u32(os, 1);
    detail::write_u32(os, static_cast<std::uint32_t>(seq.frames));
    detail::write_u32(os, static_cast<std::uint32_t>(seq.dim));
    static_assert(sizeof(float) == 4);
    os.write(reinterpret_cast<const char*>(seq.values.data()),
             static_cast<std::streamsize>(seq.values.size() * sizeof(float)));
    if (!os) throw DataError("save_features: write failed for '" + path.string() + "'");
}

inline FeatureSequence load_features(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("load_features: cannot open '" + path.string() + "'");
    char magic[4];
    is.read(magic, 4);
    if (is.gcount() != 4 || std::memcmp(magic, "MTDF", 4) != 0) {
        throw FormatError("feature file '" + path.string() + "': bad magic at byte offset 0");
    }
    const std::uint32_t version = detail::read_u32(is, path.string(), "version", 4);
    if (version != 1) {
        throw FormatError("feature file '" + path.string() + "': unsupported version " +
                          std::to_string(version) + " at byte offset 4 (expected 1)");
    }
    const std::uint32_t t_len = detail::read_u32(is, path.string(), "frame count", 8);
    const std::uint32_t dim = detail::read_u32(is, path.string(), "feature dim", 12);
    if (t_len == 0 || dim == 0) {
        throw FormatError("feature file '" + path.string() + "': zero dimension in header");
    }
    FeatureSequence seq;
    seq.video_id = path.stem().string();
    seq.frames = static_cast<int>(t_len);
    seq.dim = static_cast<int>(dim);
    const std::size_t count = static_cast<std::size_t>(t_len) * dim;
    seq.values.resize(count);
    is.read(reinterpret_cast<char*>(seq.values.data()), static_cast<std::streamsize>(count * sizeof(float)));
    const std::streamsize got = is.gcount();
    if (got != static_cast<std::streamsize>(count * sizeof(float))) {
        throw FormatError("feature file '" + path.string() + "': truncated payload: expected " +
                          std::to_string(count * sizeof(float)) + " bytes, got " + std::to_string(got) +
                          " (payload starts at byte offset 16)");
    }
    return seq;
}

// Whitespace-separated text importer: one row of D values per frame.
inline FeatureSequence import_features_text(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("import_features_text: cannot open '" + path.string() + "'");
    FeatureSequence seq;
    seq.video_id = path.stem().string();
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream row(line);
        std::vector<float> vals;
        float v = 0;
        while (row >> v) vals.push_back(v);
        if (seq.dim == 0) {
            seq.dim = static_cast<int>(vals.size());
        } else if (static_cast<int>(vals.size()) != seq.dim) {
            throw FormatError("feature text file '" + path.string() + "': line " + std::to_string(line_no) +
                              " has " + std::to_string(vals.size()) + " values, expected " +
                              std::to_string(seq.dim));
        }
        seq.values.insert(seq.values.end(), vals.begin(), vals.end());
        ++seq.frames;
    }
    if (seq.frames == 0) throw DataError("import_features_text: empty file '" + path.string() + "'");
    return seq;
}

inline void save_labels(const std::filesystem::path& path, const LabelSequence& seq, const ClassMap& cm) {
    std::ofstream os(path);
    if (!os) throw DataError("save_labels: cannot open '" + path.string() + "' for writing");
    for (int label : seq.labels) os << cm.names[static_cast<std::size_t>(label)] << "\n";
}

inline LabelSequence load_labels(const std::filesystem::path& path, const ClassMap& cm) {
    std::ifstream is(path);
    if (!is) throw DataError("load_labels: cannot open '" + path.string() + "'");
    LabelSequence seq;
    seq.video_id = path.stem().string();
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
        if (line.empty()) continue;
        const int id = cm.id_of(line);
        if (id < 0) {
            throw DataError("label file '" + path.string() + "': unknown class name '" + line + "' at line " +
                            std::to_string(line_no));
        }
        seq.labels.push_back(id);
    }
    if (seq.labels.empty()) throw DataError("label file '" + path.string() + "': empty sequence");
    return seq;
}

inline void save_class_map(const std::filesystem::path& path, const ClassMap& cm) {
    std::ofstream os(path);
    if (!os) throw DataError("save_class_map: cannot open '" + path.string() + "' for writing");
    for (std::size_t i = 0; i < cm.names.size(); ++i) os << i << " " << cm.names[i] << "\n";
}

inline ClassMap load_class_map(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("load_class_map: cannot open '" + path.string() + "'");
    std::vector<std::string> names;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
        if (line.empty()) continue;
        std::istringstream row(line);
        int id = -1;
        std::string name;
        if (!(row >> id) || !(row >> name)) {
            throw FormatError("class map '" + path.string() + "': unparseable line " + std::to_string(line_no));
        }
        if (id != static_cast<int>(names.size())) {
            throw FormatError("class map '" + path.string() + "': ids must be dense from 0, got " +
                              std::to_string(id) + " at line " + std::to_string(line_no));
        }
        names.push_back(name);
    }
    if (names.empty()) throw DataError("class map '" + path.string() + "': empty");
    return ClassMap::from_names(std::move(names));
}

inline void save_split(const std::filesystem::path& path, const std::vector<std::string>& ids) {
    std::ofstream os(path);
    if (!os) throw DataError("save_split: cannot open '" + path.string() + "' for writing");
    for (const auto& id : ids) os << id << "\n";
}

inline std::vector<std::string> load_split(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("load_split: cannot open '" + path.string() + "'");
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(is, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
        if (!line.empty()) ids.push_back(line);
    }
    if (ids.empty()) throw DataError("split file '" + path.string() + "': empty");
    return ids;
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

// Videos of one domain. Target labels are kept for evaluation only: the
// training accessor refuses them, so training code cannot observe a single
// bit of target label information.
class DomainDataset {
  public:
    DomainDataset(Domain domain, std::vector<FeatureSequence> videos, std::vector<LabelSequence> labels)
        : domain_(domain), videos_(std::move(videos)), labels_(std::move(labels)) {
        if (!labels_.empty() && labels_.size() != videos_.size()) {
            throw ContractError("DomainDataset: label list must be empty or match video count");
        }
        for (std::size_t i = 0; i < labels_.size(); ++i) {
            if (labels_[i].labels.size() != static_cast<std::size_t>(videos_[i].frames)) {
                throw DataError("DomainDataset: video '" + videos_[i].video_id + "' has " +
                                std::to_string(videos_[i].frames) + " frames but " +
                                std::to_string(labels_[i].labels.size()) + " labels");
            }
        }
    }

    Domain domain() const { return domain_; }
    std::size_t size() const { return videos_.size(); }
    bool empty() const { return videos_.empty(); }
    bool has_labels() const { return !labels_.empty(); }

    const FeatureSequence& features(std::size_t i) const { return videos_.at(i); }
    const std::string& video_id(std::size_t i) const { return videos_.at(i).video_id; }

    int feature_dim() const { return videos_.empty() ? 0 : videos_.front().dim; }

    // Training-time access. Target labels are sealed.
    const std::vector<int>& labels_for_training(std::size_t i) const {
        if (domain_ != Domain::source) {
            throw ContractError("labels_for_training: target labels are not visible to training");
        }
        return checked_labels(i);
    }

    // Evaluation-time access, allowed for both domains.
    const std::vector<int>& labels_for_evaluation(std::size_t i) const { return checked_labels(i); }

  private:
    const std::vector<int>& checked_labels(std::size_t i) const {
        if (labels_.empty()) {
            throw DataError("dataset '" + std::string(domain_name(domain_)) + "' has no labels");
        }
        return labels_.at(i).labels;
    }

    Domain domain_;
    std::vector<FeatureSequence> videos_;
    std::vector<LabelSequence> labels_;
};

// Loads <root>/features/<id>.mtdf and <root>/groundTruth/<id>.txt for every
// id in <root>/splits/<split>.txt. Missing ground truth is allowed (labels
// stay absent and only evaluation would complain).
inline DomainDataset load_domain_dataset(const std::filesystem::path& root, const std::string& split,
                                         const ClassMap& cm, Domain domain) {
    const auto ids = load_split(root / "splits" / (split + ".txt"));
    std::vector<FeatureSequence> videos;
    std::vector<LabelSequence> labels;
    bool any_labels = false;
    for (const auto& id : ids) {
        videos.push_back(load_features(root / "features" / (id + ".mtdf")));
        videos.back().video_id = id;
        const auto label_path = root / "groundTruth" / (id + ".txt");
        if (std::filesystem::exists(label_path)) {
            labels.push_back(load_labels(label_path, cm));
            labels.back().video_id = id;
            any_labels = true;
        } else if (any_labels) {
            throw DataError("dataset '" + root.string() + "': ground truth present for some videos but missing for '" +
                            id + "'");
        }
    }
    if (!any_labels) labels.clear();
    return DomainDataset(domain, std::move(videos), std::move(labels));
}

inline void write_domain_dataset(const std::filesystem::path& root, const DomainDataset& ds, const ClassMap& cm,
                                 const std::string& split = "all") {
    namespace fs = std::filesystem;
    fs::create_directories(root / "features");
    fs::create_directories(root / "groundTruth");
    fs::create_directories(root / "splits");
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto& video = ds.features(i);
        ids.push_back(video.video_id);
        save_features(root / "features" / (video.video_id + ".mtdf"), video);
        LabelSequence ls;
        ls.video_id = video.video_id;
        ls.labels = ds.labels_for_evaluation(i);
        save_labels(root / "groundTruth" / (video.video_id + ".txt"), ls, cm);
    }
    save_split(root / "splits" / (split + ".txt"), ids);
    save_class_map(root / "class_map.txt", cm);
}

// ---------------------------------------------------------------------------
// Synthetic cross-domain generator
// ---------------------------------------------------------------------------

// Target-domain transform knobs. duration_scale = 1 and zero shift/rotation
// make both domains draws from the same law; noise_std is the emission noise
// shared by both domains.
struct DomainShift {
    double feature_mean_shift = 0.0;     // magnitude of a fixed-direction mean offset
    double feature_rotation_angle = 0.0; // radians, applied in the (0,1) coordinate plane
    double duration_scale = 1.0;         // multiplies target segment durations
    double noise_std = 0.25;

    bool is_identity() const {
        return feature_mean_shift == 0.0 && feature_rotation_angle == 0.0 && duration_scale == 1.0;
    }
};

struct SyntheticConfig {
    int num_classes = 4;
    int feature_dim = 8;
    int videos_per_domain = 20;
    int mean_segments_per_video = 5;
    // Per-class inclusive duration range in frames; resized/filled with the
    // default when left empty.
    std::vector<std::pair<int, int>> duration_range;
    std::pair<int, int> default_duration_range = {8, 20};
    // Row -> next-class sampling weights; the diagonal is ignored because
    // immediate self-transitions would merge segments. Empty means uniform.
    std::vector<std::vector<double>> transition_weights;
    DomainShift shift;
    std::uint64_t seed = 1;

    std::vector<std::pair<int, int>> resolved_duration_ranges() const {
        std::vector<std::pair<int, int>> out(static_cast<std::size_t>(num_classes), default_duration_range);
        for (std::size_t c = 0; c < duration_range.size() && c < out.size(); ++c) out[c] = duration_range[c];
        return out;
    }

    void validate() const {
        std::string problems;
        auto complain = [&problems](const std::string& msg) {
            if (!problems.empty()) problems += "; ";
            problems += msg;
        };
        if (num_classes < 2) complain("num_classes must be >= 2");
        if (feature_dim < 2) complain("feature_dim must be >= 2");
        if (videos_per_domain < 1) complain("videos_per_domain must be >= 1");
        if (mean_segments_per_video < 1) complain("mean_segments_per_video must be >= 1");
        for (std::size_t c = 0; c < duration_range.size(); ++c) {
            const auto& [lo, hi] = duration_range[c];
            if (lo < 1 || hi < lo) {
                complain("duration_range for class " + std::to_string(c) + " invalid: [" + std::to_string(lo) +
                         ", " + std::to_string(hi) + "]");
            }
        }
        if (default_duration_range.first < 1 || default_duration_range.second < default_duration_range.first) {
            complain("duration_range invalid: [" + std::to_string(default_duration_range.first) + ", " +
                     std::to_string(default_duration_range.second) + "]");
        }
        if (!transition_weights.empty()) {
            if (transition_weights.size() != static_cast<std::size_t>(num_classes)) {
                complain("transition_weights must be num_classes x num_classes");
            }
            for (const auto& row : transition_weights) {
                if (row.size() != static_cast<std::size_t>(num_classes)) {
                    complain("transition_weights must be num_classes x num_classes");
                    break;
                }
                for (double w : row) {
                    if (w < 0.0) complain("transition_weights must be non-negative");
                }
            }
        }
        if (shift.duration_scale <= 0.0) complain("shift.duration_scale must be positive");
        if (shift.noise_std < 0.0) complain("shift.noise_std must be non-negative");
        if (shift.feature_mean_shift < 0.0) complain("shift.feature_mean_shift must be non-negative");
        if (!problems.empty()) throw ConfigError("synthetic config invalid: " + problems);
    }
};

namespace detail {

// Class means sit on scaled coordinate axes; classes beyond the feature
// dimension reuse an axis at a larger magnitude.
inline std::vector<double> synthetic_class_mean(int label, int dim) {
    std::vector<double> mean(static_cast<std::size_t>(dim), 0.0);
    const int axis = label % dim;
    mean[static_cast<std::size_t>(axis)] = 1.0 + static_cast<double>(label / dim);
    return mean;
}

inline void rotate_plane(std::vector<double>& v, double angle) {
    if (angle == 0.0) return;
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    const double x0 = v[0];
    const double x1 = v[1];
    v[0] = c * x0 - s * x1;
    v[1] = s * x0 + c * x1;
}

constexpr std::uint64_t kSyntheticTag = 0x53594e54;  // stream tag for the generator
constexpr std::uint64_t kEpochSourceTag = 0x45505253;
constexpr std::uint64_t kEpochTargetTag = 0x45505254;

}  // namespace detail

inline ClassMap synthetic_class_map(const SyntheticConfig& cfg) {
    std::vector<std::string> names;
    for (int c = 0; c < cfg.num_classes; ++c) names.push_back("action_" + std::to_string(c));
    return ClassMap::from_names(std::move(names));
}

// Deterministic in (config, seed): every video draws from its own derived
// stream, so datasets are reproducible item by item.
inline std::pair<DomainDataset, DomainDataset> generate_synthetic(const SyntheticConfig& cfg) {
    cfg.validate();
    const auto ranges = cfg.resolved_duration_ranges();
    const int c_total = cfg.num_classes;
    const int dim = cfg.feature_dim;

    // Precompute per-domain class means.
    std::vector<std::vector<double>> source_means;
    std::vector<std::vector<double>> target_means;
    std::vector<double> shift_dir(static_cast<std::size_t>(dim), 1.0 / std::sqrt(static_cast<double>(dim)));
    for (int c = 0; c < c_total; ++c) {
        auto mean = detail::synthetic_class_mean(c, dim);
        source_means.push_back(mean);
        detail::rotate_plane(mean, cfg.shift.feature_rotation_angle);
        for (int d = 0; d < dim; ++d) {
            mean[static_cast<std::size_t>(d)] += cfg.shift.feature_mean_shift * shift_dir[static_cast<std::size_t>(d)];
        }
        target_means.push_back(std::move(mean));
    }

    auto sample_next_label = [&](Rng& rng, int prev) {
        if (cfg.transition_weights.empty()) {
            // uniform over classes != prev
            int pick = rng.uniform_int(c_total - (prev >= 0 ? 1 : 0));
            if (prev >= 0 && pick >= prev) ++pick;
            return pick;
        }
        double total = 0.0;
        for (int c = 0; c < c_total; ++c) {
            if (c != prev) total += prev >= 0 ? cfg.transition_weights[static_cast<std::size_t>(prev)][static_cast<std::size_t>(c)] : 1.0;
        }
        if (total <= 0.0) {
            int pick = rng.uniform_int(c_total - (prev >= 0 ? 1 : 0));
            if (prev >= 0 && pick >= prev) ++pick;
            return pick;
        }
        double u = rng.uniform01() * total;
        for (int c = 0; c < c_total; ++c) {
            if (c == prev) continue;
            u -= prev >= 0 ? cfg.transition_weights[static_cast<std::size_t>(prev)][static_cast<std::size_t>(c)] : 1.0;
            if (u <= 0.0) return c;
        }
        return prev == c_total - 1 ? c_total - 2 : c_total - 1;
    };

    auto make_domain = [&](Domain domain) {
        const bool is_target = domain == Domain::target;
        const auto& means = is_target ? target_means : source_means;
        std::vector<FeatureSequence> videos;
        std::vector<LabelSequence> labels;
        for (int v = 0; v < cfg.videos_per_domain; ++v) {
            Rng rng(mix_seed(cfg.seed, detail::kSyntheticTag, static_cast<std::uint64_t>(is_target ? 2 : 1),
                             static_cast<std::uint64_t>(v)));
            const int min_segments = std::max(1, cfg.mean_segments_per_video - 2);
            const int max_segments = cfg.mean_segments_per_video + 2;
            const int num_segments = rng.uniform_int_range(min_segments, max_segments);

            std::vector<int> frame_labels;
            int prev = -1;
            for (int s = 0; s < num_segments; ++s) {
                const int label = sample_next_label(rng, prev);
                prev = label;
                const auto& [lo, hi] = ranges[static_cast<std::size_t>(label)];
                int duration = rng.uniform_int_range(lo, hi);
                if (is_target) {
                    duration = std::max(1, static_cast<int>(std::lround(duration * cfg.shift.duration_scale)));
                }
                frame_labels.insert(frame_labels.end(), static_cast<std::size_t>(duration), label);
            }

            char id[64];
            std::snprintf(id, sizeof(id), "%s_%04d", is_target ? "target" : "source", v);
            FeatureSequence seq;
            seq.video_id = id;
            seq.frames = static_cast<int>(frame_labels.size());
            seq.dim = dim;
            seq.values.reserve(frame_labels.size() * static_cast<std::size_t>(dim));
            for (int label : frame_labels) {
                const auto& mean = means[static_cast<std::size_t>(label)];
                for (int d = 0; d < dim; ++d) {
                    seq.values.push_back(
                        static_cast<float>(mean[static_cast<std::size_t>(d)] + cfg.shift.noise_std * rng.normal()));
                }
            }
            LabelSequence ls;
            ls.video_id = id;
            ls.labels = std::move(frame_labels);
            videos.push_back(std::move(seq));
            labels.push_back(std::move(ls));
        }
        return DomainDataset(domain, std::move(videos), std::move(labels));
    };

    return {make_domain(Domain::source), make_domain(Domain::target)};
}

// ---------------------------------------------------------------------------
// Epoch iteration
// ---------------------------------------------------------------------------

struct TrainItem {
    Domain domain;
    int index = 0;
};

// One epoch visits every source video once in shuffled order; each source
// item is paired with one target video drawn with replacement (batch size 1
// per domain). Source shuffling and target draws use independent derived
// streams so baseline runs that skip target items see the same source order.
inline std::vector<TrainItem> epoch_iterator(const DomainDataset& source, const DomainDataset& target,
                                             std::uint64_t seed, int epoch) {
    if (source.empty() || target.empty()) {
        throw ContractError("epoch_iterator: both datasets must be non-empty");
    }
    std::vector<int> order(source.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    Rng src_rng(mix_seed(seed, detail::kEpochSourceTag, static_cast<std::uint64_t>(epoch)));
    src_rng.shuffle(order);
    Rng tgt_rng(mix_seed(seed, detail::kEpochTargetTag, static_cast<std::uint64_t>(epoch)));

    std::vector<TrainItem> items;
    items.reserve(order.size() * 2);
    for (int src_idx : order) {
        items.push_back({Domain::source, src_idx});
        items.push_back({Domain::target, tgt_rng.uniform_int(static_cast<int>(target.size()))});
    }
    return items;
}

}  // namespace mtda
