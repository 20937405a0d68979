#pragma once

// The registered finite-difference suite run by `mtda gradcheck` and the
// acceptance tests: every differentiable op plus the fully composed model.
// Cases draw their own inputs from per-seed streams, so a run is
// reproducible from (case list, base seed, seed count).

#include <chrono>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mtda/gradcheck.hpp"
#include "mtda/losses.hpp"
#include "mtda/model.hpp"
#include "mtda/rng.hpp"
#include "mtda/tensor.hpp"

namespace mtda {

struct GradCase {
    std::string name;
    double tolerance = 1e-4;
    // Runs one check with inputs drawn from rng; returns the max relative error.
    std::function<double(Rng&)> run;
};

struct GradSuiteRow {
    std::string name;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

struct GradSuiteReport {
    std::vector<GradSuiteRow> rows;
    bool all_pass = true;
    double seconds = 0.0;
};

namespace gradcases {

using D = double;

inline TensorPtr<D> random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                                  bool requires_grad = true) {
    auto t = make_tensor<D>(std::move(shape), requires_grad);
    for (auto& v : t->data) v = rng.uniform(lo, hi);
    return t;
}

// Weighted sum against fixed coefficients turns any tensor-valued op into a
// scalar function without flattening its Jacobian structure.
inline TensorPtr<D> weighted_sum(Tape<D>* tape, const TensorPtr<D>& x, const std::vector<D>& coeffs) {
    auto c = make_tensor<D>(x->shape, coeffs);
    return sum(tape, mul(tape, x, c));
}

inline std::vector<D> random_coeffs(int n, Rng& rng) {
    std::vector<D> c(static_cast<std::size_t>(n));
    for (auto& v : c) v = rng.uniform(-1.0, 1.0);
    return c;
}

inline double linear_case(Rng& rng) {
    auto x = random_tensor({5, 4}, rng);
    auto w = random_tensor({4, 3}, rng);
    auto b = random_tensor({3}, rng);
    auto coeffs = random_coeffs(15, rng);
    return grad_check<D>(
        [&](Tape<D>* tape) { return weighted_sum(tape, linear(tape, x, w, b), coeffs); }, {x, w, b});
}

inline double dilated_conv_case(Rng& rng, int dilation) {
    auto x = random_tensor({16, 3}, rng);
    auto k = random_tensor({3, 3, 2}, rng);
    auto b = random_tensor({2}, rng);
    auto coeffs = random_coeffs(32, rng);
    return grad_check<D>(
        [&](Tape<D>* tape) { return weighted_sum(tape, dilated_conv1d(tape, x, k, b, dilation), coeffs); },
        {x, k, b});
}

inline double relu_case(Rng& rng) {
    // keep inputs away from the kink at 0
    auto x = make_tensor<D>({6, 5}, true);
    for (auto& v : x->data) {
        const double mag = rng.uniform(0.05, 1.0);
        v = rng.uniform01() < 0.5 ? -mag : mag;
    }
    auto coeffs = random_coeffs(30, rng);
    return grad_check<D>([&](Tape<D>* tape) { return weighted_sum(tape, relu(tape, x), coeffs); }, {x});
}

inline double softmax_case(Rng& rng) {
    auto x = random_tensor({6, 4}, rng, -2.0, 2.0);
    auto coeffs = random_coeffs(24, rng);
    return grad_check<D>([&](Tape<D>* tape) { return weighted_sum(tape, softmax_rows(tape, x), coeffs); }, {x});
}

inline double log_softmax_case(Rng& rng) {
    auto x = random_tensor({6, 4}, rng, -2.0, 2.0);
    auto coeffs = random_coeffs(24, rng);
    return grad_check<D>(
        [&](Tape<D>* tape) { return weighted_sum(tape, log_softmax_rows(tape, x), coeffs); }, {x});
}

inline double softmax_cross_entropy_case(Rng& rng) {
    auto x = random_tensor({8, 4}, rng, -2.0, 2.0);
    std::vector<int> labels;
    for (int t = 0; t < 8; ++t) labels.push_back(rng.uniform_int(4));
    return grad_check<D>(
        [&](Tape<D>* tape) { return nll_rows(tape, log_softmax_rows(tape, x), labels); }, {x});
}

// A gradient reversal layer is not the derivative of its forward pass, so a
// plain finite-difference sweep through it must not match. The checks below
// replace each grl site on the numeric side with its linearization around
// the unperturbed value: out = (1 + lambda) * anchor - lambda * x, whose true
// derivative equals the grl backward (-lambda) while the value at the anchor
// equals the identity forward.
inline TensorPtr<D> grl_linearized(Tape<D>* tape, const TensorPtr<D>& x, D lambda,
                                   const std::vector<D>& anchor) {
    auto offset = make_tensor<D>(x->shape, anchor);
    for (auto& v : offset->data) v *= (D(1) + lambda);
    return add(tape, scale(tape, x, -lambda), offset);
}

inline double grl_case(Rng& rng, double lambda) {
    auto x = random_tensor({4, 3}, rng);
    auto w = random_tensor({3, 2}, rng);
    auto b = random_tensor({2}, rng);
    auto coeffs = random_coeffs(8, rng);
    const std::vector<D> anchor = x->data;  // grl input is x itself
    return grad_check<D>(
        [&](Tape<D>* tape) {
            auto reversed = tape ? grl(tape, x, lambda) : grl_linearized(nullptr, x, lambda, anchor);
            return weighted_sum(tape, linear(tape, reversed, w, b), coeffs);
        },
        {x, w, b});
}

inline double pool_case(Rng& rng) {
    auto f = random_tensor({8, 4}, rng);
    auto w = random_tensor({8}, rng);
    auto coeffs = random_coeffs(4, rng);
    return grad_check<D>(
        [&](Tape<D>* tape) { return weighted_sum(tape, weighted_temporal_pool(tape, f, w), coeffs); }, {f, w});
}

inline double row_entropy_case(Rng& rng) {
    auto logits = random_tensor({6, 3}, rng, -1.5, 1.5);
    auto coeffs = random_coeffs(6, rng);
    return grad_check<D>(
        [&](Tape<D>* tape) {
            return weighted_sum(tape, row_entropy(tape, softmax_rows(tape, logits)), coeffs);
        },
        {logits});
}

inline double tmse_case(Rng& rng) {
    auto logits = random_tensor({8, 3}, rng, -2.0, 2.0);
    return grad_check<D>(
        [&](Tape<D>* tape) { return tmse(tape, log_softmax_rows(tape, logits), D(4)); }, {logits});
}

inline double datp_global_case(Rng& rng) {
    auto f = random_tensor({6, 4}, rng);
    auto d_logits = random_tensor({6, 2}, rng, -1.5, 1.5);
    auto w1 = random_tensor({4, 5}, rng);
    auto b1 = random_tensor({5}, rng);
    auto w2 = random_tensor({5, 2}, rng);
    auto b2 = random_tensor({2}, rng);
    const D lambda = D(0.7);
    DomainClassifierParams<D> dc{w1, b1, w2, b2};

    // anchor: the pooled vector at the unperturbed inputs
    auto d_hat0 = softmax_rows<D>(nullptr, d_logits);
    const std::vector<D> anchor = datp<D>(nullptr, f, d_hat0).first->data;

    return grad_check<D>(
        [&](Tape<D>* tape) {
            auto d_hat = softmax_rows(tape, d_logits);
            auto [pooled, w] = datp(tape, f, d_hat);
            TensorPtr<D> logits;
            if (tape) {
                logits = global_domain_forward(tape, dc, pooled, lambda);
            } else {
                auto reversed = grl_linearized(nullptr, pooled, lambda, anchor);
                logits = linear<D>(nullptr, relu<D>(nullptr, linear<D>(nullptr, reversed, dc.w1, dc.b1)), dc.w2,
                                   dc.b2);
            }
            return global_domain_loss(tape, logits, 1);
        },
        {f, d_logits, w1, b1, w2, b2});
}

inline ModelConfig toy_model_config() {
    ModelConfig cfg;
    cfg.num_stages = 2;
    cfg.layers_per_stage = 2;
    cfg.num_filters = 6;
    cfg.kernel_size = 3;
    cfg.input_dim = 4;
    cfg.num_classes = 3;
    cfg.da_stages = {1, 2};
    cfg.domain_hidden_dim = 5;
    return cfg;
}

// Numeric-side twin of model_forward + total_loss with every grl site
// linearized around its anchor value.
inline TensorPtr<D> model_loss_linearized(const ModelParams<D>& params, const TensorPtr<D>& input, D lambda,
                                          Mode mode, const std::vector<int>* labels, Domain domain,
                                          const LossWeights<D>& weights,
                                          const std::map<int, std::vector<D>>& feature_anchors,
                                          const std::map<int, std::vector<D>>& pooled_anchors) {
    std::vector<StageOutput<D>> outputs;
    TensorPtr<D> x = input;
    for (int s = 1; s <= params.config.num_stages; ++s) {
        const auto& stage = params.stages[static_cast<std::size_t>(s - 1)];
        auto out = stage_forward<D>(nullptr, stage, x);
        if (mode_has_local(mode) && params.config.da_stages.count(s)) {
            auto f_rev = grl_linearized(nullptr, out.features, lambda, feature_anchors.at(s));
            const auto& ld = *stage.local_dc;
            out.local_domain_logits =
                linear<D>(nullptr, relu<D>(nullptr, linear<D>(nullptr, f_rev, ld.w1, ld.b1)), ld.w2, ld.b2);
            if (mode_has_global(mode)) {
                if (mode_has_attention(mode)) {
                    auto d_hat = softmax_rows<D>(nullptr, out.local_domain_logits);
                    auto pooled = datp<D>(nullptr, out.features, d_hat);
                    out.pooled_feature = pooled.first;
                    out.attention_weights = pooled.second;
                } else {
                    auto ones = make_tensor<D>({out.features->shape[0]});
                    std::fill(ones->data.begin(), ones->data.end(), D(1));
                    out.pooled_feature = weighted_temporal_pool<D>(nullptr, out.features, ones);
                }
                auto h_rev = grl_linearized(nullptr, out.pooled_feature, lambda, pooled_anchors.at(s));
                const auto& gd = *stage.global_dc;
                out.video_domain_logits =
                    linear<D>(nullptr, relu<D>(nullptr, linear<D>(nullptr, h_rev, gd.w1, gd.b1)), gd.w2, gd.b2);
            }
        }
        x = out.frame_probs;
        outputs.push_back(std::move(out));
    }
    return total_loss<D>(nullptr, outputs, labels, domain, weights, mode).total;
}

// Full mixed_da forward + total loss on a toy sequence, checked w.r.t. every
// model parameter. eps is smaller here: the composed function crosses more
// relu kinks than a single op.
inline double full_model_case(Rng& rng, Domain domain) {
    auto params = build_model<D>(toy_model_config(), rng.next_u64());
    auto input = random_tensor({12, 4}, rng, -1.0, 1.0, false);
    std::vector<int> labels;
    for (int t = 0; t < 12; ++t) labels.push_back(rng.uniform_int(3));
    const std::vector<int>* label_ptr = domain == Domain::source ? &labels : nullptr;
    const D lambda = D(0.8);

    LossWeights<D> weights;
    weights.mu = D(0.05);  // large enough that the attentive term is exercised

    // anchors for the grl linearization, from an unperturbed forward
    std::map<int, std::vector<D>> feature_anchors;
    std::map<int, std::vector<D>> pooled_anchors;
    {
        auto outputs = model_forward<D>(nullptr, params, input, lambda, Mode::mixed_da);
        for (int s : params.config.da_stages) {
            feature_anchors[s] = outputs[static_cast<std::size_t>(s - 1)].features->data;
            pooled_anchors[s] = outputs[static_cast<std::size_t>(s - 1)].pooled_feature->data;
        }
    }

    std::vector<TensorPtr<D>> inputs;
    for (auto& p : params.named_params()) inputs.push_back(p.value);

    auto forward = [&](Tape<D>* tape) -> TensorPtr<D> {
        if (tape) {
            auto outputs = model_forward(tape, params, input, lambda, Mode::mixed_da);
            return total_loss(tape, outputs, label_ptr, domain, weights, Mode::mixed_da).total;
        }
        return model_loss_linearized(params, input, lambda, Mode::mixed_da, label_ptr, domain, weights,
                                     feature_anchors, pooled_anchors);
    };
    return grad_check<D>(forward, inputs, D(1e-6));
}

}  // namespace gradcases

inline std::vector<GradCase> builtin_grad_cases() {
    using namespace gradcases;
    std::vector<GradCase> cases;
    cases.push_back({"linear", 1e-6, linear_case});
    cases.push_back({"dilated_conv1d_d1", 1e-5, [](Rng& rng) { return dilated_conv_case(rng, 1); }});
    cases.push_back({"dilated_conv1d_d4", 1e-5, [](Rng& rng) { return dilated_conv_case(rng, 4); }});
    cases.push_back({"dilated_conv1d_d8", 1e-5, [](Rng& rng) { return dilated_conv_case(rng, 8); }});
    cases.push_back({"relu", 1e-6, relu_case});
    cases.push_back({"softmax_rows", 1e-6, softmax_case});
    cases.push_back({"log_softmax_rows", 1e-6, log_softmax_case});
    cases.push_back({"softmax_cross_entropy", 1e-6, softmax_cross_entropy_case});
    cases.push_back({"grl_lambda_0", 1e-6, [](Rng& rng) { return grl_case(rng, 0.0); }});
    cases.push_back({"grl_lambda_0.5", 1e-6, [](Rng& rng) { return grl_case(rng, 0.5); }});
    cases.push_back({"grl_lambda_1", 1e-6, [](Rng& rng) { return grl_case(rng, 1.0); }});
    cases.push_back({"weighted_temporal_pool", 1e-6, pool_case});
    cases.push_back({"row_entropy", 1e-6, row_entropy_case});
    cases.push_back({"tmse", 1e-5, tmse_case});
    cases.push_back({"datp_global_domain", 1e-5, datp_global_case});
    cases.push_back({"model_mixed_da_source", 1e-4, [](Rng& rng) { return full_model_case(rng, Domain::source); }});
    cases.push_back({"model_mixed_da_target", 1e-4, [](Rng& rng) { return full_model_case(rng, Domain::target); }});
    return cases;
}

namespace detail {

inline std::uint64_t case_tag(const std::string& name) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : name) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace detail

// `op_seeds` applies to single-op cases; the composed-model cases run
// min(op_seeds, model_seeds) times.
inline GradSuiteReport run_grad_suite(const std::vector<GradCase>& cases, int op_seeds, int model_seeds,
                                      std::uint64_t base_seed = 20240501) {
    GradSuiteReport report;
    const auto start = std::chrono::steady_clock::now();
    for (const auto& c : cases) {
        const bool is_model_case = c.name.rfind("model_", 0) == 0;
        const int seeds = is_model_case ? std::min(op_seeds, model_seeds) : op_seeds;
        GradSuiteRow row;
        row.name = c.name;
        row.tolerance = c.tolerance;
        for (int s = 0; s < seeds; ++s) {
            Rng rng(mix_seed(base_seed, detail::case_tag(c.name), static_cast<std::uint64_t>(s)));
            row.max_rel_err = std::max(row.max_rel_err, c.run(rng));
        }
        row.pass = row.max_rel_err < row.tolerance;
        report.all_pass = report.all_pass && row.pass;
        report.rows.push_back(row);
    }
    report.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

}  // namespace mtda
