#pragma once

// The network: stacked temporal-convolution stages with per-stage frame
// classifiers, plus frame-level and video-level adversarial domain
// classifiers and domain-attentive temporal pooling on selected stages.

#include <cmath>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mtda/errors.hpp"
#include "mtda/rng.hpp"
#include "mtda/tensor.hpp"

namespace mtda {

enum class Mode { baseline, local_da, mixed_da, mixed_da_no_attention };

inline const char* mode_name(Mode m) {
    switch (m) {
        case Mode::baseline: return "baseline";
        case Mode::local_da: return "local_da";
        case Mode::mixed_da: return "mixed_da";
        case Mode::mixed_da_no_attention: return "mixed_da_no_attention";
    }
    return "?";
}

inline Mode mode_from_name(const std::string& name) {
    if (name == "baseline") return Mode::baseline;
    if (name == "local_da") return Mode::local_da;
    if (name == "mixed_da") return Mode::mixed_da;
    if (name == "mixed_da_no_attention") return Mode::mixed_da_no_attention;
    throw ConfigError("unknown mode '" + name +
                      "' (expected baseline, local_da, mixed_da, or mixed_da_no_attention)");
}

inline bool mode_has_local(Mode m) { return m != Mode::baseline; }
inline bool mode_has_global(Mode m) { return m == Mode::mixed_da || m == Mode::mixed_da_no_attention; }
inline bool mode_has_attention(Mode m) { return m == Mode::mixed_da; }

struct ModelConfig {
    int num_stages = 4;
    int layers_per_stage = 10;
    int num_filters = 64;
    int kernel_size = 3;
    int input_dim = 0;   // feature dimension D, filled from the dataset
    int num_classes = 0; // C, filled from the class map
    std::set<int> da_stages = {2, 3};  // 1-based stage indices
    int domain_hidden_dim = 64;

    void validate() const {
        std::string problems;
        auto complain = [&problems](const std::string& msg) {
            if (!problems.empty()) problems += "; ";
            problems += msg;
        };
        if (num_stages < 1) complain("num_stages must be >= 1");
        if (layers_per_stage < 1) complain("layers_per_stage must be >= 1");
        if (num_filters < 1) complain("num_filters must be >= 1");
        if (kernel_size < 1) complain("kernel_size must be >= 1");
        if (kernel_size % 2 == 0) complain("kernel_size must be odd");
        if (input_dim < 1) complain("input_dim must be >= 1");
        if (num_classes < 2) complain("num_classes must be >= 2");
        if (domain_hidden_dim < 1) complain("domain_hidden_dim must be >= 1");
        for (int s : da_stages) {
            if (s < 1 || s > num_stages) {
                complain("da_stages entry " + std::to_string(s) + " outside 1.." + std::to_string(num_stages));
            }
        }
        if (!problems.empty()) throw ConfigError("model config invalid: " + problems);
    }
};

template <typename Real>
struct NamedParam {
    std::string name;
    TensorPtr<Real> value;
};

// Two-layer perceptron head used by both domain classifiers.
template <typename Real>
struct DomainClassifierParams {
    TensorPtr<Real> w1, b1, w2, b2;
};

template <typename Real>
struct DilatedLayerParams {
    TensorPtr<Real> conv_w, conv_b;  // kernel_size x F x F dilated conv
    TensorPtr<Real> proj_w, proj_b;  // 1x1 conv back into the residual stream
};

template <typename Real>
struct StageParams {
    TensorPtr<Real> in_w, in_b;  // 1x1 input projection
    std::vector<DilatedLayerParams<Real>> layers;
    TensorPtr<Real> cls_w, cls_b;  // frame classifier
    std::optional<DomainClassifierParams<Real>> local_dc;
    std::optional<DomainClassifierParams<Real>> global_dc;
};

template <typename Real>
struct ModelParams {
    ModelConfig config;
    std::vector<StageParams<Real>> stages;

    // Stable enumeration order; checkpoint keys and the optimizer rely on it.
    std::vector<NamedParam<Real>> named_params() const {
        std::vector<NamedParam<Real>> out;
        for (std::size_t s = 0; s < stages.size(); ++s) {
            const std::string prefix = "s" + std::to_string(s + 1) + ".";
            const auto& st = stages[s];
            out.push_back({prefix + "in.w", st.in_w});
            out.push_back({prefix + "in.b", st.in_b});
            for (std::size_t l = 0; l < st.layers.size(); ++l) {
                const std::string lp = prefix + "l" + std::to_string(l) + ".";
                out.push_back({lp + "conv.w", st.layers[l].conv_w});
                out.push_back({lp + "conv.b", st.layers[l].conv_b});
                out.push_back({lp + "proj.w", st.layers[l].proj_w});
                out.push_back({lp + "proj.b", st.layers[l].proj_b});
            }
            out.push_back({prefix + "cls.w", st.cls_w});
            out.push_back({prefix + "cls.b", st.cls_b});
            auto push_dc = [&out](const std::string& dp, const DomainClassifierParams<Real>& dc) {
                out.push_back({dp + "w1", dc.w1});
                out.push_back({dp + "b1", dc.b1});
                out.push_back({dp + "w2", dc.w2});
                out.push_back({dp + "b2", dc.b2});
            };
            if (st.local_dc) push_dc(prefix + "ld.", *st.local_dc);
            if (st.global_dc) push_dc(prefix + "gd.", *st.global_dc);
        }
        return out;
    }

    ModelParams clone() const {
        ModelParams copy;
        copy.config = config;
        auto dup = [](const TensorPtr<Real>& t) {
            auto n = std::make_shared<Tensor<Real>>(*t);
            return n;
        };
        for (const auto& st : stages) {
            StageParams<Real> ns;
            ns.in_w = dup(st.in_w);
            ns.in_b = dup(st.in_b);
            for (const auto& l : st.layers) ns.layers.push_back({dup(l.conv_w), dup(l.conv_b), dup(l.proj_w), dup(l.proj_b)});
            ns.cls_w = dup(st.cls_w);
            ns.cls_b = dup(st.cls_b);
            if (st.local_dc) ns.local_dc = DomainClassifierParams<Real>{dup(st.local_dc->w1), dup(st.local_dc->b1), dup(st.local_dc->w2), dup(st.local_dc->b2)};
            if (st.global_dc) ns.global_dc = DomainClassifierParams<Real>{dup(st.global_dc->w1), dup(st.global_dc->b1), dup(st.global_dc->w2), dup(st.global_dc->b2)};
            copy.stages.push_back(std::move(ns));
        }
        return copy;
    }
};

namespace detail {

template <typename Real>
TensorPtr<Real> init_weight(std::vector<int> shape, int fan_in, Rng& rng) {
    auto t = make_tensor<Real>(std::move(shape), true);
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& v : t->data) v = static_cast<Real>(rng.uniform(-bound, bound));
    return t;
}

template <typename Real>
TensorPtr<Real> init_bias(int n) {
    return make_tensor<Real>({n}, true);
}

template <typename Real>
DomainClassifierParams<Real> init_domain_classifier(int in_dim, int hidden, Rng& rng) {
    DomainClassifierParams<Real> dc;
    dc.w1 = init_weight<Real>({in_dim, hidden}, in_dim, rng);
    dc.b1 = init_bias<Real>(hidden);
    dc.w2 = init_weight<Real>({hidden, 2}, hidden, rng);
    dc.b2 = init_bias<Real>(2);
    return dc;
}

}  // namespace detail

// Weights uniform in +-sqrt(6 / fan_in), biases zero; deterministic in
// (config, seed). Layer l of every stage uses dilation 2^l.
template <typename Real>
ModelParams<Real> build_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    ModelParams<Real> params;
    params.config = config;
    Rng rng(mix_seed(seed, 0x4d4f44454cULL));
    const int f = config.num_filters;
    for (int s = 1; s <= config.num_stages; ++s) {
        const int d_in = s == 1 ? config.input_dim : config.num_classes;
        StageParams<Real> stage;
        stage.in_w = detail::init_weight<Real>({d_in, f}, d_in, rng);
        stage.in_b = detail::init_bias<Real>(f);
        for (int l = 0; l < config.layers_per_stage; ++l) {
            DilatedLayerParams<Real> layer;
            layer.conv_w = detail::init_weight<Real>({config.kernel_size, f, f}, config.kernel_size * f, rng);
            layer.conv_b = detail::init_bias<Real>(f);
            layer.proj_w = detail::init_weight<Real>({f, f}, f, rng);
            layer.proj_b = detail::init_bias<Real>(f);
            stage.layers.push_back(std::move(layer));
        }
        stage.cls_w = detail::init_weight<Real>({f, config.num_classes}, f, rng);
        stage.cls_b = detail::init_bias<Real>(config.num_classes);
        if (config.da_stages.count(s)) {
            stage.local_dc = detail::init_domain_classifier<Real>(f, config.domain_hidden_dim, rng);
            stage.global_dc = detail::init_domain_classifier<Real>(f, config.domain_hidden_dim, rng);
        }
        params.stages.push_back(std::move(stage));
    }
    return params;
}

template <typename Real>
struct StageOutput {
    TensorPtr<Real> features;     // T x F, output of the last dilated layer
    TensorPtr<Real> frame_logits; // T x C
    TensorPtr<Real> frame_probs;  // T x C, rows sum to 1
    // Populated only for DA stages, according to the forward mode:
    TensorPtr<Real> local_domain_logits; // T x 2
    TensorPtr<Real> video_domain_logits; // 2
    TensorPtr<Real> attention_weights;   // T, entries in [1 - log 2, 1]
    TensorPtr<Real> pooled_feature;      // F
};

// One stage: 1x1 input projection, then layers_per_stage dilated residual
// layers x + conv1x1(relu(dilated_conv(x))), then the frame classifier.
template <typename Real>
StageOutput<Real> stage_forward(Tape<Real>* tape, const StageParams<Real>& stage,
                                const TensorPtr<Real>& input) {
    StageOutput<Real> out;
    auto x = linear(tape, input, stage.in_w, stage.in_b);
    int dilation = 1;
    for (const auto& layer : stage.layers) {
        auto h = dilated_conv1d(tape, x, layer.conv_w, layer.conv_b, dilation);
        h = relu(tape, h);
        h = linear(tape, h, layer.proj_w, layer.proj_b);
        x = add(tape, x, h);
        dilation *= 2;
    }
    out.features = x;
    out.frame_logits = linear(tape, x, stage.cls_w, stage.cls_b);
    out.frame_probs = softmax_rows(tape, out.frame_logits);
    return out;
}

// Frame-level domain classifier: gradient reversal, then the same two-layer
// perceptron applied independently to every frame.
template <typename Real>
TensorPtr<Real> local_domain_forward(Tape<Real>* tape, const DomainClassifierParams<Real>& dc,
                                     const TensorPtr<Real>& features, Real lambda) {
    auto h = grl(tape, features, lambda);
    h = relu(tape, linear(tape, h, dc.w1, dc.b1));
    return linear(tape, h, dc.w2, dc.b2);
}

// w_j = 1 - H(d_hat_j) with natural-log entropy, so w_j lies in
// [1 - log 2, 1] for binary domain predictions.
template <typename Real>
TensorPtr<Real> attention_weights(Tape<Real>* tape, const TensorPtr<Real>& d_hat_probs) {
    if (d_hat_probs->shape.size() != 2) {
        throw ShapeError("attention_weights: expected T x 2 probabilities, got " + shape_str(d_hat_probs->shape));
    }
    const int rows = d_hat_probs->shape[0];
    const int cols = d_hat_probs->shape[1];
    for (int r = 0; r < rows; ++r) {
        Real sum = 0;
        for (int c = 0; c < cols; ++c) sum += d_hat_probs->data[static_cast<std::size_t>(r) * cols + c];
        if (std::abs(sum - Real(1)) > Real(1e-4)) {
            throw ContractError("attention_weights: row " + std::to_string(r) + " sums to " +
                                std::to_string(static_cast<double>(sum)) + ", expected 1");
        }
    }
    return add_const(tape, scale(tape, row_entropy(tape, d_hat_probs), Real(-1)), Real(1));
}

// Domain attentive temporal pooling: h = (1/T) * sum_j (w_j + 1) * f_j.
// The +1 is the residual connection that keeps every frame contributing.
template <typename Real>
std::pair<TensorPtr<Real>, TensorPtr<Real>> datp(Tape<Real>* tape, const TensorPtr<Real>& features,
                                                 const TensorPtr<Real>& d_hat_probs) {
    auto w = attention_weights(tape, d_hat_probs);
    auto w_total = add_const(tape, w, Real(1));
    auto pooled = weighted_temporal_pool(tape, features, w_total);
    return {pooled, w};
}

template <typename Real>
TensorPtr<Real> global_domain_forward(Tape<Real>* tape, const DomainClassifierParams<Real>& dc,
                                      const TensorPtr<Real>& pooled, Real lambda) {
    auto h = grl(tape, pooled, lambda);
    h = relu(tape, linear(tape, h, dc.w1, dc.b1));
    return linear(tape, h, dc.w2, dc.b2);
}

// Full forward pass. Stage 1 consumes the feature sequence; stage n > 1
// consumes the previous stage's frame probabilities. Domain branches run
// only on da_stages and only as the mode requires, so a baseline forward
// never touches domain-classifier parameters.
template <typename Real>
std::vector<StageOutput<Real>> model_forward(Tape<Real>* tape, const ModelParams<Real>& params,
                                             const TensorPtr<Real>& features, Real lambda, Mode mode,
                                             Real global_lambda_scale = Real(1)) {
    const ModelConfig& cfg = params.config;
    if (features->shape.size() != 2 || features->shape[1] != cfg.input_dim) {
        throw ShapeError("model_forward: features " + shape_str(features->shape) + " incompatible with input_dim " +
                         std::to_string(cfg.input_dim));
    }
    if (lambda < Real(0)) throw ConfigError("model_forward: lambda must be non-negative");

    std::vector<StageOutput<Real>> outputs;
    TensorPtr<Real> x = features;
    for (int s = 1; s <= cfg.num_stages; ++s) {
        const auto& stage = params.stages[static_cast<std::size_t>(s - 1)];
        StageOutput<Real> out = stage_forward(tape, stage, x);
        if (mode_has_local(mode) && cfg.da_stages.count(s)) {
            if (!stage.local_dc || !stage.global_dc) {
                throw ContractError("model_forward: stage " + std::to_string(s) +
                                    " is in da_stages but has no domain classifiers");
            }
            out.local_domain_logits = local_domain_forward(tape, *stage.local_dc, out.features, lambda);
            if (mode_has_global(mode)) {
                const Real global_lambda = lambda * global_lambda_scale;
                if (mode_has_attention(mode)) {
                    auto d_hat = softmax_rows(tape, out.local_domain_logits);
                    auto [pooled, w] = datp(tape, out.features, d_hat);
                    out.pooled_feature = pooled;
                    out.attention_weights = w;
                } else {
                    // plain temporal mean: unit weights in the pooling op
                    auto ones = make_tensor<Real>({out.features->shape[0]});
                    std::fill(ones->data.begin(), ones->data.end(), Real(1));
                    out.pooled_feature = weighted_temporal_pool(tape, out.features, ones);
                }
                out.video_domain_logits = global_domain_forward(tape, *stage.global_dc, out.pooled_feature,
                                                                global_lambda);
            }
        }
        x = out.frame_probs;
        outputs.push_back(std::move(out));
    }
    return outputs;
}

}  // namespace mtda
