// Command-line entry point: dataset generation, training, evaluation,
// gradient verification, and the ablation table.
//
// Exit codes: 0 success, 1 verification failure, 2 input/config error,
// 3 numerical failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mtda/mtda.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string data_dir;
    std::string out_dir;
    std::string split = "all";
};

std::optional<std::uint64_t> env_seed_override() {
    const char* value = std::getenv("MTDA_SEED");
    if (!value || !*value) return std::nullopt;
    try {
        std::size_t pos = 0;
        const unsigned long long seed = std::stoull(value, &pos);
        if (pos != std::string(value).size()) throw std::invalid_argument(value);
        return static_cast<std::uint64_t>(seed);
    } catch (const std::exception&) {
        throw mtda::ConfigError("MTDA_SEED is set but not an unsigned integer: '" + std::string(value) + "'");
    }
}

json metrics_report_to_json(const mtda::MetricsReport& report) {
    json r;
    r["acc"] = report.acc;
    r["edit"] = report.edit;
    for (const auto& [k, v] : report.f1) r["f1." + std::to_string(k)] = v;
    json per_video = json::array();
    for (const auto& row : report.per_video) {
        json v;
        v["id"] = row.id;
        v["acc"] = row.acc;
        v["edit"] = row.edit;
        for (const auto& [k, f1] : row.f1) v["f1." + std::to_string(k)] = f1;
        per_video.push_back(v);
    }
    r["per_video"] = per_video;
    return r;
}

void print_metrics_table(std::ostream& os, const std::string& title, const mtda::MetricsReport& report) {
    char line[160];
    std::snprintf(line, sizeof(line), "%-10s acc %6.2f  edit %6.2f  f1@10 %6.2f  f1@25 %6.2f  f1@50 %6.2f",
                  title.c_str(), report.acc, report.edit, report.f1.at(10), report.f1.at(25), report.f1.at(50));
    os << line << "\n";
}

std::string require_class_map_consistency(const fs::path& data_dir) {
    const auto source_map = data_dir / "source" / "class_map.txt";
    const auto target_map = data_dir / "target" / "class_map.txt";
    if (mtda::digest_file(source_map) != mtda::digest_file(target_map)) {
        throw mtda::DataError("class maps differ between '" + source_map.string() + "' and '" +
                              target_map.string() + "'");
    }
    return source_map.string();
}

struct LoadedData {
    mtda::ClassMap class_map;
    mtda::DomainDataset source;
    mtda::DomainDataset target;
};

LoadedData load_training_data(const fs::path& data_dir, const std::string& split) {
    const auto map_path = require_class_map_consistency(data_dir);
    auto cm = mtda::load_class_map(map_path);
    auto source = mtda::load_domain_dataset(data_dir / "source", split, cm, mtda::Domain::source);
    auto target = mtda::load_domain_dataset(data_dir / "target", split, cm, mtda::Domain::target);
    if (source.empty() || target.empty()) throw mtda::DataError("empty source or target split");
    return {std::move(cm), std::move(source), std::move(target)};
}

mtda::ModelConfig resolve_model_config(mtda::ModelConfig cfg, const LoadedData& data) {
    cfg.input_dim = data.source.feature_dim();
    cfg.num_classes = data.class_map.size();
    cfg.validate();
    return cfg;
}

json history_to_json(const mtda::TrainHistory& history, const std::string& run_digest) {
    json doc;
    doc["manifest"] = run_digest;
    json epochs = json::array();
    for (const auto& e : history.epochs) {
        json rec;
        rec["epoch"] = e.epoch;
        rec["lambda"] = e.lambda;
        rec["loss"] = {{"total", e.loss_total},
                       {"prediction", e.loss_prediction},
                       {"local_domain", e.loss_local},
                       {"global_domain", e.loss_global},
                       {"attentive_entropy", e.loss_attentive}};
        rec["source"] = e.source_metrics ? metrics_report_to_json(*e.source_metrics) : json(nullptr);
        rec["target"] = e.target_metrics ? metrics_report_to_json(*e.target_metrics) : json(nullptr);
        epochs.push_back(rec);
    }
    doc["epochs"] = epochs;
    return doc;
}

void write_json(const fs::path& path, const json& doc) {
    std::ofstream os(path);
    if (!os) throw mtda::DataError("cannot open '" + path.string() + "' for writing");
    os << doc.dump(2) << "\n";
}

int cmd_generate(const CommonArgs& args) {
    mtda::RunManifest manifest;
    manifest.command = "generate";
    manifest.started_at = mtda::iso8601_now();
    manifest.input_digests[args.config_path] = mtda::digest_file(args.config_path);

    auto cfg = mtda::load_run_config(args.config_path);
    if (const auto seed = env_seed_override()) cfg.synthetic.seed = *seed;
    manifest.seed = cfg.synthetic.seed;
    manifest.config = mtda::run_config_snapshot(cfg);

    auto [source, target] = mtda::generate_synthetic(cfg.synthetic);
    const auto cm = mtda::synthetic_class_map(cfg.synthetic);
    const fs::path out(args.out_dir);
    fs::create_directories(out);
    mtda::write_domain_dataset(out / "source", source, cm);
    mtda::write_domain_dataset(out / "target", target, cm);
    manifest.outputs = {(out / "source").string(), (out / "target").string()};
    manifest.finished_at = mtda::iso8601_now();
    manifest.write(out / "manifest.json");

    std::cout << "generated " << source.size() << " source and " << target.size() << " target videos ("
              << cfg.synthetic.num_classes << " classes, dim " << cfg.synthetic.feature_dim << ") under "
              << out.string() << "\n";
    std::cout << "dataset digests: source " << mtda::digest_tree(out / "source") << ", target "
              << mtda::digest_tree(out / "target") << "\n";
    return 0;
}

int cmd_train(const CommonArgs& args) {
    mtda::RunManifest manifest;
    manifest.command = "train";
    manifest.started_at = mtda::iso8601_now();
    manifest.input_digests[args.config_path] = mtda::digest_file(args.config_path);

    auto cfg = mtda::load_run_config(args.config_path);
    if (const auto seed = env_seed_override()) cfg.train.seed = *seed;
    manifest.seed = cfg.train.seed;
    manifest.config = mtda::run_config_snapshot(cfg);

    auto data = load_training_data(args.data_dir, args.split);
    for (const char* domain : {"source", "target"}) {
        const auto split_file = fs::path(args.data_dir) / domain / "splits" / (args.split + ".txt");
        manifest.input_digests[split_file.string()] = mtda::digest_file(split_file);
    }
    const auto model_cfg = resolve_model_config(cfg.model, data);

    std::cout << "training mode=" << mtda::mode_name(cfg.train.mode) << " on " << data.source.size()
              << " source / " << data.target.size() << " target videos, seed " << cfg.train.seed << "\n";
    auto params = mtda::build_model<double>(model_cfg, cfg.train.seed);
    auto on_epoch = [&](const mtda::EpochRecord& e) {
        char line[256];
        std::snprintf(line, sizeof(line),
                      "epoch %3d  lambda %.4f  total %.5f  pred %.5f  ld %.5f  gd %.5f  ae %.5f", e.epoch,
                      e.lambda, e.loss_total, e.loss_prediction, e.loss_local, e.loss_global, e.loss_attentive);
        std::cout << line;
        if (e.target_metrics) {
            std::snprintf(line, sizeof(line), "  | src acc %.2f tgt acc %.2f",
                          e.source_metrics ? e.source_metrics->acc : 0.0, e.target_metrics->acc);
            std::cout << line;
        }
        std::cout << "\n";
    };
    auto [trained, history] = mtda::train(std::move(params), data.source, data.target, cfg.train, on_epoch);

    const fs::path out(args.out_dir);
    fs::create_directories(out);
    mtda::save_checkpoint(out / "checkpoint", trained);

    const auto source_report = mtda::evaluate_dataset(trained, data.source);
    const auto target_report = mtda::evaluate_dataset(trained, data.target);
    const std::string digest = manifest.run_digest();
    write_json(out / "history.json", history_to_json(history, digest));
    write_json(out / "metrics_source.json", json{{"manifest", digest}, {"report", metrics_report_to_json(source_report)}});
    write_json(out / "metrics_target.json", json{{"manifest", digest}, {"report", metrics_report_to_json(target_report)}});

    manifest.outputs = {(out / "checkpoint").string(), (out / "history.json").string(),
                        (out / "metrics_source.json").string(), (out / "metrics_target.json").string()};
    manifest.finished_at = mtda::iso8601_now();
    manifest.write(out / "manifest.json");

    std::cout << "final metrics:\n";
    print_metrics_table(std::cout, "source", source_report);
    print_metrics_table(std::cout, "target", target_report);
    std::cout << "checkpoint digest: " << mtda::digest_tree(out / "checkpoint") << "\n";
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir, const std::string& split,
             const std::string& out_file, bool identity_predictor, const std::vector<std::string>& exclude) {
    mtda::RunManifest manifest;
    manifest.command = "eval";
    manifest.started_at = mtda::iso8601_now();

    const fs::path data(data_dir);
    auto cm = mtda::load_class_map(data / "class_map.txt");
    auto dataset = mtda::load_domain_dataset(data, split, cm, mtda::Domain::target);
    const auto split_file = data / "splits" / (split + ".txt");
    manifest.input_digests[split_file.string()] = mtda::digest_file(split_file);
    manifest.config["eval.split"] = split;
    manifest.config["eval.identity_predictor"] = identity_predictor ? "1" : "0";

    std::set<int> excluded_ids;
    for (const auto& name : exclude) {
        const int id = cm.id_of(name);
        if (id < 0) throw mtda::ConfigError("--exclude-class: unknown class name '" + name + "'");
        excluded_ids.insert(id);
        manifest.config["eval.exclude." + name] = std::to_string(id);
    }

    std::vector<std::pair<std::vector<int>, std::vector<int>>> pairs;
    std::vector<std::string> ids;
    if (identity_predictor) {
        for (std::size_t i = 0; i < dataset.size(); ++i) {
            pairs.emplace_back(dataset.labels_for_evaluation(i), dataset.labels_for_evaluation(i));
            ids.push_back(dataset.video_id(i));
        }
    } else {
        if (checkpoint.empty()) throw mtda::ConfigError("--checkpoint is required unless --identity-predictor");
        manifest.input_digests[checkpoint] = mtda::digest_tree(checkpoint);
        auto params = mtda::load_checkpoint<double>(checkpoint);
        if (params.config.input_dim != dataset.feature_dim()) {
            throw mtda::DataError("checkpoint input_dim " + std::to_string(params.config.input_dim) +
                                  " does not match data feature dim " + std::to_string(dataset.feature_dim()));
        }
        if (params.config.num_classes != cm.size()) {
            throw mtda::DataError("checkpoint num_classes " + std::to_string(params.config.num_classes) +
                                  " does not match class map size " + std::to_string(cm.size()));
        }
        for (std::size_t i = 0; i < dataset.size(); ++i) {
            pairs.emplace_back(mtda::predict(params, dataset.features(i)), dataset.labels_for_evaluation(i));
            ids.push_back(dataset.video_id(i));
        }
    }
    const auto report = mtda::evaluate_corpus(pairs, {10, 25, 50}, excluded_ids, ids);

    json doc;
    doc["manifest"] = manifest.run_digest();
    doc["report"] = metrics_report_to_json(report);
    std::cout << doc.dump(2) << "\n";
    print_metrics_table(std::cerr, "corpus", report);
    if (!out_file.empty()) {
        write_json(out_file, doc);
        manifest.outputs = {out_file};
        manifest.finished_at = mtda::iso8601_now();
        manifest.write(out_file + ".manifest.json");
    }
    return 0;
}

int cmd_gradcheck(const std::string& size) {
    const bool full = size == "FULL";
    const int op_seeds = full ? 100 : 10;
    const int model_seeds = full ? 5 : 2;
    const auto report = mtda::run_grad_suite(mtda::builtin_grad_cases(), op_seeds, model_seeds);
    for (const auto& row : report.rows) {
        char line[160];
        std::snprintf(line, sizeof(line), "%-26s max_rel_err %.3e  tol %.0e  %s", row.name.c_str(),
                      row.max_rel_err, row.tolerance, row.pass ? "PASS" : "FAIL");
        std::cout << line << "\n";
    }
    std::cout << (report.all_pass ? "gradcheck PASS" : "gradcheck FAIL") << " (" << size << ", "
              << report.rows.size() << " ops, " << report.seconds << "s)\n";
    if (!report.all_pass) {
        std::cout << "failing ops:";
        for (const auto& row : report.rows) {
            if (!row.pass) std::cout << " " << row.name;
        }
        std::cout << "\n";
    }
    return report.all_pass ? 0 : 1;
}

int cmd_ablate(const CommonArgs& args, int jobs, bool sweep_stages) {
    mtda::RunManifest manifest;
    manifest.command = "ablate";
    manifest.started_at = mtda::iso8601_now();
    manifest.input_digests[args.config_path] = mtda::digest_file(args.config_path);

    auto cfg = mtda::load_run_config(args.config_path);
    if (const auto seed = env_seed_override()) cfg.train.seed = *seed;
    manifest.seed = cfg.train.seed;
    manifest.config = mtda::run_config_snapshot(cfg);
    manifest.config["ablate.sweep_stages"] = sweep_stages ? "1" : "0";

    auto data = load_training_data(args.data_dir, args.split);
    const auto model_cfg = resolve_model_config(cfg.model, data);

    auto specs = mtda::default_ablation_rows();
    if (sweep_stages) {
        for (const auto& spec : mtda::stage_sweep_rows()) specs.push_back(spec);
    }
    std::cout << "ablation: " << specs.size() << " rows, " << jobs << " job(s)\n";
    const auto report = mtda::run_ablation(data.source, data.target, model_cfg, cfg.train, specs, jobs);

    const fs::path out(args.out_dir);
    fs::create_directories(out);
    const std::string digest = manifest.run_digest();
    json doc;
    doc["manifest"] = digest;
    json rows = json::array();
    for (const auto& row : report.rows) {
        json r;
        r["name"] = row.name;
        r["mode"] = mtda::mode_name(row.mode);
        r["da_stages"] = std::vector<int>(row.da_stages.begin(), row.da_stages.end());
        r["seed"] = row.seed;
        r["source"] = metrics_report_to_json(row.source);
        r["target"] = metrics_report_to_json(row.target);
        rows.push_back(r);
    }
    doc["rows"] = rows;
    write_json(out / "ablation.json", doc);
    manifest.outputs = {(out / "ablation.json").string()};
    manifest.finished_at = mtda::iso8601_now();
    manifest.write(out / "manifest.json");

    std::cout << "row          mode                     stages    tgt acc  tgt edit  tgt f1@50\n";
    for (const auto& row : report.rows) {
        std::string stages;
        for (int s : row.da_stages) stages += (stages.empty() ? "" : ",") + std::to_string(s);
        char line[200];
        std::snprintf(line, sizeof(line), "%-12s %-24s %-9s %7.2f  %8.2f  %9.2f", row.name.c_str(),
                      mtda::mode_name(row.mode), stages.empty() ? "-" : stages.c_str(), row.target.acc,
                      row.target.edit, row.target.f1.at(50));
        std::cout << line << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"temporal action segmentation with mixed temporal domain adaptation"};
    app.require_subcommand(1);

    CommonArgs gen_args;
    auto* generate = app.add_subcommand("generate", "write a synthetic cross-domain dataset");
    generate->add_option("--config", gen_args.config_path, "run configuration file")->required();
    generate->add_option("--out", gen_args.out_dir, "output directory")->required();

    CommonArgs train_args;
    auto* train = app.add_subcommand("train", "train a model on a source/target dataset");
    train->add_option("--config", train_args.config_path, "run configuration file")->required();
    train->add_option("--data", train_args.data_dir, "dataset root (source/ and target/)")->required();
    train->add_option("--out", train_args.out_dir, "output directory")->required();
    train->add_option("--split", train_args.split, "split name (default all)");

    std::string eval_checkpoint, eval_data, eval_split, eval_out;
    bool identity_predictor = false;
    std::vector<std::string> eval_exclude;
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on one domain directory");
    eval->add_option("--checkpoint", eval_checkpoint, "checkpoint directory");
    eval->add_option("--data", eval_data, "domain directory (features/, groundTruth/, splits/)")->required();
    eval->add_option("--split", eval_split, "split name")->required();
    eval->add_option("--out", eval_out, "write the report document here as well");
    eval->add_flag("--identity-predictor", identity_predictor, "score ground truth against itself (debug)");
    eval->add_option("--exclude-class", eval_exclude, "class name to exclude from metrics (repeatable)");

    std::string gradcheck_size = "SMALL";
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference verification of all gradients");
    gradcheck->add_option("--size", gradcheck_size, "SMALL or FULL")
        ->check(CLI::IsMember({"SMALL", "FULL"}));

    CommonArgs ablate_args;
    int jobs = 1;
    bool sweep_stages = false;
    auto* ablate = app.add_subcommand("ablate", "train every mode (and optionally the stage sweep)");
    ablate->add_option("--config", ablate_args.config_path, "run configuration file")->required();
    ablate->add_option("--data", ablate_args.data_dir, "dataset root")->required();
    ablate->add_option("--out", ablate_args.out_dir, "output directory")->required();
    ablate->add_option("--split", ablate_args.split, "split name (default all)");
    ablate->add_option("--jobs", jobs, "parallel training runs")->check(CLI::PositiveNumber);
    ablate->add_flag("--sweep-stages", sweep_stages, "add the 7-row domain-classifier stage sweep");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (generate->parsed()) return cmd_generate(gen_args);
        if (train->parsed()) return cmd_train(train_args);
        if (eval->parsed()) {
            return cmd_eval(eval_checkpoint, eval_data, eval_split, eval_out, identity_predictor, eval_exclude);
        }
        if (gradcheck->parsed()) return cmd_gradcheck(gradcheck_size);
        if (ablate->parsed()) return cmd_ablate(ablate_args, jobs, sweep_stages);
    } catch (const mtda::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const mtda::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
