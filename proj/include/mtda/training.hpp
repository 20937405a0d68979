#pragma once

// The optimization loop: adversarial lambda schedule, Adam, per-epoch
// evaluation, and the ablation runner.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "mtda/data.hpp"
#include "mtda/errors.hpp"
#include "mtda/losses.hpp"
#include "mtda/metrics.hpp"
#include "mtda/model.hpp"
#include "mtda/tensor.hpp"

namespace mtda {

// lambda = 2 / (1 + exp(-gamma * p)) - 1: zero at p = 0, approaching 1.
inline double schedule_lambda(double progress, double gamma) {
    if (progress < 0.0 || progress > 1.0) {
        throw ContractError("schedule_lambda: progress " + std::to_string(progress) + " outside [0, 1]");
    }
    return 2.0 / (1.0 + std::exp(-gamma * progress)) - 1.0;
}

template <typename Real>
struct TrainConfig {
    Mode mode = Mode::mixed_da;
    int epochs = 50;
    Real learning_rate = Real(5e-4);
    Real adam_beta1 = Real(0.9);
    Real adam_beta2 = Real(0.999);
    Real adam_eps = Real(1e-8);
    LossWeights<Real> weights;
    Real schedule_gamma = Real(10);
    std::uint64_t seed = 1;
    int eval_every = 5;  // 0 disables periodic evaluation; the final epoch is always evaluated
    AeScope ae_scope = AeScope::both;
    Real global_lambda_scale = Real(1);  // optional per-GRL override; 1 shares the schedule

    void validate() const {
        if (epochs < 1) throw ConfigError("train config invalid: epochs must be >= 1");
        if (learning_rate <= Real(0)) throw ConfigError("train config invalid: learning_rate must be positive");
        if (adam_beta1 < Real(0) || adam_beta1 >= Real(1) || adam_beta2 < Real(0) || adam_beta2 >= Real(1)) {
            throw ConfigError("train config invalid: adam betas must lie in [0, 1)");
        }
        if (adam_eps <= Real(0)) throw ConfigError("train config invalid: adam_eps must be positive");
        if (schedule_gamma <= Real(0)) throw ConfigError("train config invalid: schedule_gamma must be positive");
        if (eval_every < 0) throw ConfigError("train config invalid: eval_every must be >= 0");
        if (global_lambda_scale < Real(0)) {
            throw ConfigError("train config invalid: global_lambda_scale must be >= 0");
        }
        weights.validate();
    }
};

// Standard bias-corrected Adam over the named-parameter list.
template <typename Real>
struct AdamState {
    long long step = 0;
    std::vector<std::vector<Real>> m;
    std::vector<std::vector<Real>> v;

    explicit AdamState(const std::vector<NamedParam<Real>>& params) {
        for (const auto& p : params) {
            m.emplace_back(p.value->data.size(), Real(0));
            v.emplace_back(p.value->data.size(), Real(0));
        }
    }
};

template <typename Real>
void adam_step(std::vector<NamedParam<Real>>& params, AdamState<Real>& state, Real lr, Real beta1, Real beta2,
               Real eps) {
    if (state.m.size() != params.size()) {
        throw ContractError("adam_step: optimizer state does not match parameter list");
    }
    state.step += 1;
    const Real bc1 = Real(1) - static_cast<Real>(std::pow(static_cast<double>(beta1), static_cast<double>(state.step)));
    const Real bc2 = Real(1) - static_cast<Real>(std::pow(static_cast<double>(beta2), static_cast<double>(state.step)));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = *params[i].value;
        auto& m = state.m[i];
        auto& v = state.v[i];
        if (m.size() != p.data.size()) {
            throw ContractError("adam_step: state size mismatch for parameter " + params[i].name);
        }
        for (std::size_t j = 0; j < p.data.size(); ++j) {
            const Real g = p.grad[j];
            m[j] = beta1 * m[j] + (Real(1) - beta1) * g;
            v[j] = beta2 * v[j] + (Real(1) - beta2) * g * g;
            const Real m_hat = m[j] / bc1;
            const Real v_hat = v[j] / bc2;
            p.data[j] -= lr * m_hat / (std::sqrt(v_hat) + eps);
        }
    }
}

// Argmax of the final stage's frame probabilities; ties go to the lowest
// category id. Works on trained and untrained parameters alike.
template <typename Real>
std::vector<int> predict(const ModelParams<Real>& params, const FeatureSequence& features) {
    auto x = make_tensor<Real>({features.frames, features.dim});
    for (std::size_t i = 0; i < features.values.size(); ++i) x->data[i] = static_cast<Real>(features.values[i]);
    auto outputs = model_forward<Real>(nullptr, params, x, Real(0), Mode::baseline);
    return argmax_rows(outputs.back().frame_probs);
}

template <typename Real>
MetricsReport evaluate_dataset(const ModelParams<Real>& params, const DomainDataset& dataset,
                               const std::vector<int>& ks = {10, 25, 50}) {
    std::vector<std::pair<std::vector<int>, std::vector<int>>> pairs;
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        pairs.emplace_back(predict(params, dataset.features(i)), dataset.labels_for_evaluation(i));
        ids.push_back(dataset.video_id(i));
    }
    return evaluate_corpus(pairs, ks, {}, ids);
}

struct EpochRecord {
    int epoch = 0;
    double lambda = 0.0;  // schedule value at the end of the epoch
    double loss_total = 0.0;
    double loss_prediction = 0.0;
    double loss_local = 0.0;
    double loss_global = 0.0;
    double loss_attentive = 0.0;
    std::optional<MetricsReport> source_metrics;
    std::optional<MetricsReport> target_metrics;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
};

// Trains in place and returns the trained parameters with the history.
// Deterministic in (params, data, config). Baseline mode skips target items
// entirely, so it is step-for-step the pure supervised trainer.
template <typename Real>
std::pair<ModelParams<Real>, TrainHistory> train(ModelParams<Real> params, const DomainDataset& source,
                                                 const DomainDataset& target, const TrainConfig<Real>& config,
                                                 const std::function<void(const EpochRecord&)>& on_epoch = {}) {
    config.validate();
    if (source.domain() != Domain::source || target.domain() != Domain::target) {
        throw ContractError("train: datasets passed in the wrong domain order");
    }
    if (mode_has_local(config.mode) && params.config.da_stages.empty()) {
        throw ConfigError("train: mode " + std::string(mode_name(config.mode)) +
                          " requires a non-empty da_stages set");
    }
    if (source.feature_dim() != params.config.input_dim) {
        throw ShapeError("train: source feature dim " + std::to_string(source.feature_dim()) +
                         " does not match model input_dim " + std::to_string(params.config.input_dim));
    }
    if (mode_has_local(config.mode) && target.feature_dim() != params.config.input_dim) {
        throw ShapeError("train: target feature dim " + std::to_string(target.feature_dim()) +
                         " does not match model input_dim " + std::to_string(params.config.input_dim));
    }

    const bool use_target = mode_has_local(config.mode);
    auto named = params.named_params();
    AdamState<Real> adam(named);
    Tape<Real> tape;

    // Inputs are constants; convert once.
    auto to_tensor = [](const FeatureSequence& seq) {
        auto x = make_tensor<Real>({seq.frames, seq.dim});
        for (std::size_t i = 0; i < seq.values.size(); ++i) x->data[i] = static_cast<Real>(seq.values[i]);
        return x;
    };
    std::vector<TensorPtr<Real>> source_inputs;
    std::vector<TensorPtr<Real>> target_inputs;
    for (std::size_t i = 0; i < source.size(); ++i) source_inputs.push_back(to_tensor(source.features(i)));
    if (use_target) {
        for (std::size_t i = 0; i < target.size(); ++i) target_inputs.push_back(to_tensor(target.features(i)));
    }

    const long long items_per_epoch =
        static_cast<long long>(source.size()) * (use_target ? 2 : 1);
    const long long total_steps = static_cast<long long>(config.epochs) * items_per_epoch;

    TrainHistory history;
    long long step = 0;
    double lambda = 0.0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        EpochRecord record;
        record.epoch = epoch;
        long long epoch_items = 0;
        for (const TrainItem& item : epoch_iterator(source, target, config.seed, epoch)) {
            if (!use_target && item.domain == Domain::target) continue;
            lambda = schedule_lambda(static_cast<double>(step) / static_cast<double>(total_steps),
                                     static_cast<double>(config.schedule_gamma));

            tape.reset();
            for (auto& p : named) p.value->zero_grad();

            const bool is_source = item.domain == Domain::source;
            const auto& input = is_source ? source_inputs[static_cast<std::size_t>(item.index)]
                                          : target_inputs[static_cast<std::size_t>(item.index)];
            auto outputs = model_forward(&tape, params, input, static_cast<Real>(lambda), config.mode,
                                         config.global_lambda_scale);
            const std::vector<int>* labels =
                is_source ? &source.labels_for_training(static_cast<std::size_t>(item.index)) : nullptr;
            auto breakdown = total_loss(&tape, outputs, labels, item.domain, config.weights, config.mode,
                                        config.ae_scope);
            const double loss_value = static_cast<double>(breakdown.total_value());
            if (!std::isfinite(loss_value)) {
                throw NumericalError("train: non-finite loss at step " + std::to_string(step) + " (epoch " +
                                         std::to_string(epoch) + ", " + domain_name(item.domain) + " video " +
                                         std::to_string(item.index) + ")",
                                     step);
            }
            tape.backward(breakdown.total);
            adam_step(named, adam, config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps);

            record.loss_total += loss_value;
            record.loss_prediction += static_cast<double>(breakdown.prediction);
            record.loss_local += static_cast<double>(breakdown.local_domain);
            record.loss_global += static_cast<double>(breakdown.global_domain);
            record.loss_attentive += static_cast<double>(breakdown.attentive_entropy);
            ++step;
            ++epoch_items;
        }
        if (epoch_items > 0) {
            record.loss_total /= static_cast<double>(epoch_items);
            record.loss_prediction /= static_cast<double>(epoch_items);
            record.loss_local /= static_cast<double>(epoch_items);
            record.loss_global /= static_cast<double>(epoch_items);
            record.loss_attentive /= static_cast<double>(epoch_items);
        }
        record.lambda = lambda;

        const bool last_epoch = epoch + 1 == config.epochs;
        if (last_epoch || (config.eval_every > 0 && (epoch + 1) % config.eval_every == 0)) {
            if (source.has_labels()) record.source_metrics = evaluate_dataset(params, source);
            if (target.has_labels()) record.target_metrics = evaluate_dataset(params, target);
        }
        if (on_epoch) on_epoch(record);
        history.epochs.push_back(std::move(record));
    }
    return {std::move(params), std::move(history)};
}

// ---------------------------------------------------------------------------
// Ablation runner
// ---------------------------------------------------------------------------

struct AblationRowSpec {
    std::string name;
    Mode mode = Mode::baseline;
    std::set<int> da_stages;  // empty means: keep the base model's selection
};

struct AblationRow {
    std::string name;
    Mode mode = Mode::baseline;
    std::set<int> da_stages;
    std::uint64_t seed = 0;
    MetricsReport source;
    MetricsReport target;
    TrainHistory history;
};

struct AblationReport {
    std::vector<AblationRow> rows;
};

// The four rows mirroring the source-only / local / local+global /
// local+global+attention comparison.
inline std::vector<AblationRowSpec> default_ablation_rows() {
    return {
        {"source_only", Mode::baseline, {}},
        {"da_l", Mode::local_da, {}},
        {"da_l_g", Mode::mixed_da_no_attention, {}},
        {"da_l_g_a", Mode::mixed_da, {}},
    };
}

// Single-stage and adjacent-pair placements of the local domain classifier.
inline std::vector<AblationRowSpec> stage_sweep_rows() {
    return {
        {"sweep_s1", Mode::local_da, {1}},
        {"sweep_s2", Mode::local_da, {2}},
        {"sweep_s3", Mode::local_da, {3}},
        {"sweep_s4", Mode::local_da, {4}},
        {"sweep_s1_s2", Mode::local_da, {1, 2}},
        {"sweep_s2_s3", Mode::local_da, {2, 3}},
        {"sweep_s3_s4", Mode::local_da, {3, 4}},
    };
}

// Trains every row with a shared seed and identical data. Rows are
// independent runs; `jobs` bounds how many execute concurrently. Results are
// aggregated in row order regardless of scheduling.
template <typename Real>
AblationReport run_ablation(const DomainDataset& source, const DomainDataset& target,
                            const ModelConfig& base_model, const TrainConfig<Real>& base_config,
                            const std::vector<AblationRowSpec>& specs, int jobs = 1) {
    if (specs.empty()) throw ContractError("run_ablation: no rows requested");
    if (jobs < 1) jobs = 1;

    AblationReport report;
    report.rows.resize(specs.size());
    std::atomic<std::size_t> next{0};
    std::vector<std::string> failures(specs.size());

    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= specs.size()) return;
            try {
                const auto& spec = specs[i];
                ModelConfig model_cfg = base_model;
                if (!spec.da_stages.empty()) model_cfg.da_stages = spec.da_stages;
                TrainConfig<Real> cfg = base_config;
                cfg.mode = spec.mode;
                auto params = build_model<Real>(model_cfg, cfg.seed);
                auto [trained, history] = train(std::move(params), source, target, cfg);
                AblationRow row;
                row.name = spec.name;
                row.mode = spec.mode;
                row.da_stages = model_cfg.da_stages;
                row.seed = cfg.seed;
                row.source = evaluate_dataset(trained, source);
                row.target = evaluate_dataset(trained, target);
                row.history = std::move(history);
                report.rows[i] = std::move(row);
            } catch (const std::exception& e) {
                failures[i] = e.what();
            }
        }
    };

    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    for (std::size_t i = 0; i < specs.size(); ++i) {
        if (!failures[i].empty()) {
            throw Error("run_ablation: row '" + specs[i].name + "' failed: " + failures[i]);
        }
    }
    return report;
}

}  // namespace mtda
