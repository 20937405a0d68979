#pragma once

// Plain-text key-value run configuration: `key = value` lines, `#` comments,
// one canonical versioned schema. Unknown keys are errors so configs cannot
// drift silently.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mtda/data.hpp"
#include "mtda/errors.hpp"
#include "mtda/losses.hpp"
#include "mtda/model.hpp"
#include "mtda/training.hpp"

namespace mtda {

struct KvDocument {
    std::map<std::string, std::string> values;

    bool has(const std::string& key) const { return values.count(key) > 0; }

    static KvDocument parse_string(const std::string& text, const std::string& origin = "<string>") {
        KvDocument doc;
        std::istringstream is(text);
        std::string line;
        int line_no = 0;
        while (std::getline(is, line)) {
            ++line_no;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            auto trim = [](std::string s) {
                const auto first = s.find_first_not_of(" \t\r");
                if (first == std::string::npos) return std::string();
                const auto last = s.find_last_not_of(" \t\r");
                return s.substr(first, last - first + 1);
            };
            line = trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos) {
                throw ConfigError("config '" + origin + "': line " + std::to_string(line_no) +
                                  " is not `key = value`");
            }
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            if (key.empty()) {
                throw ConfigError("config '" + origin + "': empty key at line " + std::to_string(line_no));
            }
            if (doc.values.count(key)) {
                throw ConfigError("config '" + origin + "': duplicate key '" + key + "' at line " +
                                  std::to_string(line_no));
            }
            doc.values[key] = value;
        }
        return doc;
    }

    static KvDocument parse_file(const std::filesystem::path& path) {
        std::ifstream is(path);
        if (!is) throw ConfigError("cannot open config file '" + path.string() + "'");
        std::ostringstream buffer;
        buffer << is.rdbuf();
        return parse_string(buffer.str(), path.string());
    }
};

// The full parsed schema. A command consumes only the sections it needs, but
// every key in the file must belong to the schema.
struct RunConfig {
    SyntheticConfig synthetic;
    ModelConfig model;  // input_dim / num_classes filled from the dataset at train time
    TrainConfig<double> train;
};

namespace detail {

inline long long parse_int(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const long long v = std::stoll(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': '" + value + "' is not an integer");
    }
}

inline double parse_real(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': '" + value + "' is not a number");
    }
}

inline std::set<int> parse_int_set(const std::string& key, const std::string& value) {
    std::set<int> out;
    std::string item;
    std::istringstream is(value);
    while (std::getline(is, item, ',')) {
        const auto first = item.find_first_not_of(" \t");
        if (first == std::string::npos) continue;
        const auto last = item.find_last_not_of(" \t");
        out.insert(static_cast<int>(parse_int(key, item.substr(first, last - first + 1))));
    }
    return out;
}

// "synthetic.duration_min.3" -> class index 3, or -1 when absent.
inline int trailing_index(const std::string& key, const std::string& prefix) {
    if (key.rfind(prefix, 0) != 0) return -1;
    const std::string rest = key.substr(prefix.size());
    if (rest.empty() || rest.find_first_not_of("0123456789") != std::string::npos) return -1;
    return static_cast<int>(std::stoul(rest));
}

}  // namespace detail

inline RunConfig parse_run_config(const KvDocument& doc) {
    RunConfig cfg;
    std::set<std::string> seen;

    auto take = [&](const std::string& key) -> const std::string* {
        auto it = doc.values.find(key);
        if (it == doc.values.end()) return nullptr;
        seen.insert(key);
        return &it->second;
    };
    auto take_int = [&](const std::string& key, auto& dst) {
        if (const auto* v = take(key)) dst = static_cast<std::remove_reference_t<decltype(dst)>>(detail::parse_int(key, *v));
    };
    auto take_real = [&](const std::string& key, auto& dst) {
        if (const auto* v = take(key)) dst = static_cast<std::remove_reference_t<decltype(dst)>>(detail::parse_real(key, *v));
    };

    if (const auto* v = take("config_version")) {
        if (*v != "1") throw ConfigError("config_version must be 1, got '" + *v + "'");
    } else {
        throw ConfigError("config is missing required key 'config_version'");
    }

    // synthetic.*
    take_int("synthetic.seed", cfg.synthetic.seed);
    take_int("synthetic.num_classes", cfg.synthetic.num_classes);
    take_int("synthetic.feature_dim", cfg.synthetic.feature_dim);
    take_int("synthetic.videos_per_domain", cfg.synthetic.videos_per_domain);
    take_int("synthetic.mean_segments_per_video", cfg.synthetic.mean_segments_per_video);
    take_int("synthetic.duration_min", cfg.synthetic.default_duration_range.first);
    take_int("synthetic.duration_max", cfg.synthetic.default_duration_range.second);
    take_real("synthetic.shift.feature_mean_shift", cfg.synthetic.shift.feature_mean_shift);
    take_real("synthetic.shift.feature_rotation_angle", cfg.synthetic.shift.feature_rotation_angle);
    take_real("synthetic.shift.duration_scale", cfg.synthetic.shift.duration_scale);
    take_real("synthetic.shift.noise_std", cfg.synthetic.shift.noise_std);

    // Per-class duration overrides and transition weights are pattern keys.
    cfg.synthetic.duration_range.assign(static_cast<std::size_t>(cfg.synthetic.num_classes),
                                        cfg.synthetic.default_duration_range);
    bool any_duration_override = false;
    std::vector<std::vector<double>> transitions;
    for (const auto& [key, value] : doc.values) {
        int idx = detail::trailing_index(key, "synthetic.duration_min.");
        if (idx >= 0) {
            if (idx >= cfg.synthetic.num_classes) {
                throw ConfigError("config key '" + key + "': class index out of range");
            }
            cfg.synthetic.duration_range[static_cast<std::size_t>(idx)].first =
                static_cast<int>(detail::parse_int(key, value));
            seen.insert(key);
            any_duration_override = true;
            continue;
        }
        idx = detail::trailing_index(key, "synthetic.duration_max.");
        if (idx >= 0) {
            if (idx >= cfg.synthetic.num_classes) {
                throw ConfigError("config key '" + key + "': class index out of range");
            }
            cfg.synthetic.duration_range[static_cast<std::size_t>(idx)].second =
                static_cast<int>(detail::parse_int(key, value));
            seen.insert(key);
            any_duration_override = true;
            continue;
        }
        if (key.rfind("synthetic.transition.", 0) == 0) {
            const std::string rest = key.substr(std::string("synthetic.transition.").size());
            const auto dot = rest.find('.');
            if (dot == std::string::npos) throw ConfigError("config key '" + key + "': expected transition.<i>.<j>");
            const int i = detail::trailing_index("x." + rest.substr(0, dot), "x.");
            const int j = detail::trailing_index("x." + rest.substr(dot + 1), "x.");
            if (i < 0 || j < 0 || i >= cfg.synthetic.num_classes || j >= cfg.synthetic.num_classes) {
                throw ConfigError("config key '" + key + "': class index out of range");
            }
            if (transitions.empty()) {
                transitions.assign(static_cast<std::size_t>(cfg.synthetic.num_classes),
                                   std::vector<double>(static_cast<std::size_t>(cfg.synthetic.num_classes), 1.0));
            }
            transitions[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = detail::parse_real(key, value);
            seen.insert(key);
            continue;
        }
    }
    if (!any_duration_override) cfg.synthetic.duration_range.clear();
    cfg.synthetic.transition_weights = std::move(transitions);

    // model.*
    take_int("model.num_stages", cfg.model.num_stages);
    take_int("model.layers_per_stage", cfg.model.layers_per_stage);
    take_int("model.num_filters", cfg.model.num_filters);
    take_int("model.kernel_size", cfg.model.kernel_size);
    take_int("model.domain_hidden_dim", cfg.model.domain_hidden_dim);
    if (const auto* v = take("model.da_stages")) cfg.model.da_stages = detail::parse_int_set("model.da_stages", *v);

    // train.*
    if (const auto* v = take("train.mode")) cfg.train.mode = mode_from_name(*v);
    take_int("train.epochs", cfg.train.epochs);
    take_real("train.learning_rate", cfg.train.learning_rate);
    take_real("train.adam_beta1", cfg.train.adam_beta1);
    take_real("train.adam_beta2", cfg.train.adam_beta2);
    take_real("train.adam_eps", cfg.train.adam_eps);
    take_real("train.alpha", cfg.train.weights.alpha);
    take_real("train.beta_l", cfg.train.weights.beta_l);
    take_real("train.beta_g", cfg.train.weights.beta_g);
    take_real("train.mu", cfg.train.weights.mu);
    take_real("train.tmse_clamp", cfg.train.weights.tmse_clamp);
    take_real("train.schedule_gamma", cfg.train.schedule_gamma);
    take_int("train.seed", cfg.train.seed);
    take_int("train.eval_every", cfg.train.eval_every);
    take_real("train.global_lambda_scale", cfg.train.global_lambda_scale);
    if (const auto* v = take("train.ae_scope")) cfg.train.ae_scope = ae_scope_from_name(*v);

    std::string unknown;
    for (const auto& [key, value] : doc.values) {
        (void)value;
        if (!seen.count(key)) {
            if (!unknown.empty()) unknown += ", ";
            unknown += "'" + key + "'";
        }
    }
    if (!unknown.empty()) throw ConfigError("config contains unknown keys: " + unknown);
    return cfg;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    return parse_run_config(KvDocument::parse_file(path));
}

// Canonical snapshot of the parsed configuration (defaults included), used
// by run manifests.
inline std::map<std::string, std::string> run_config_snapshot(const RunConfig& cfg) {
    std::map<std::string, std::string> out;
    auto put_int = [&out](const std::string& key, long long v) { out[key] = std::to_string(v); };
    auto put_real = [&out](const std::string& key, double v) {
        std::ostringstream os;
        os.precision(17);
        os << v;
        out[key] = os.str();
    };
    out["config_version"] = "1";
    put_int("synthetic.seed", static_cast<long long>(cfg.synthetic.seed));
    put_int("synthetic.num_classes", cfg.synthetic.num_classes);
    put_int("synthetic.feature_dim", cfg.synthetic.feature_dim);
    put_int("synthetic.videos_per_domain", cfg.synthetic.videos_per_domain);
    put_int("synthetic.mean_segments_per_video", cfg.synthetic.mean_segments_per_video);
    put_int("synthetic.duration_min", cfg.synthetic.default_duration_range.first);
    put_int("synthetic.duration_max", cfg.synthetic.default_duration_range.second);
    for (std::size_t c = 0; c < cfg.synthetic.duration_range.size(); ++c) {
        put_int("synthetic.duration_min." + std::to_string(c), cfg.synthetic.duration_range[c].first);
        put_int("synthetic.duration_max." + std::to_string(c), cfg.synthetic.duration_range[c].second);
    }
    for (std::size_t i = 0; i < cfg.synthetic.transition_weights.size(); ++i) {
        for (std::size_t j = 0; j < cfg.synthetic.transition_weights[i].size(); ++j) {
            put_real("synthetic.transition." + std::to_string(i) + "." + std::to_string(j),
                     cfg.synthetic.transition_weights[i][j]);
        }
    }
    put_real("synthetic.shift.feature_mean_shift", cfg.synthetic.shift.feature_mean_shift);
    put_real("synthetic.shift.feature_rotation_angle", cfg.synthetic.shift.feature_rotation_angle);
    put_real("synthetic.shift.duration_scale", cfg.synthetic.shift.duration_scale);
    put_real("synthetic.shift.noise_std", cfg.synthetic.shift.noise_std);
    put_int("model.num_stages", cfg.model.num_stages);
    put_int("model.layers_per_stage", cfg.model.layers_per_stage);
    put_int("model.num_filters", cfg.model.num_filters);
    put_int("model.kernel_size", cfg.model.kernel_size);
    put_int("model.domain_hidden_dim", cfg.model.domain_hidden_dim);
    {
        std::string stages;
        for (int s : cfg.model.da_stages) {
            if (!stages.empty()) stages += ",";
            stages += std::to_string(s);
        }
        out["model.da_stages"] = stages;
    }
    out["train.mode"] = mode_name(cfg.train.mode);
    put_int("train.epochs", cfg.train.epochs);
    put_real("train.learning_rate", cfg.train.learning_rate);
    put_real("train.adam_beta1", cfg.train.adam_beta1);
    put_real("train.adam_beta2", cfg.train.adam_beta2);
    put_real("train.adam_eps", cfg.train.adam_eps);
    put_real("train.alpha", cfg.train.weights.alpha);
    put_real("train.beta_l", cfg.train.weights.beta_l);
    put_real("train.beta_g", cfg.train.weights.beta_g);
    put_real("train.mu", cfg.train.weights.mu);
    put_real("train.tmse_clamp", cfg.train.weights.tmse_clamp);
    put_real("train.schedule_gamma", cfg.train.schedule_gamma);
    put_int("train.seed", static_cast<long long>(cfg.train.seed));
    put_int("train.eval_every", cfg.train.eval_every);
    put_real("train.global_lambda_scale", cfg.train.global_lambda_scale);
    out["train.ae_scope"] = ae_scope_name(cfg.train.ae_scope);
    return out;
}

}  // namespace mtda
