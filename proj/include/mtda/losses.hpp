#pragma once

// Loss terms as pure differentiable functions over stage outputs. The
// domain losses enter the total with positive sign; the gradient reversal
// layers inside the model produce the adversarial direction, so the returned
// total is exactly the quantity every parameter minimizes.

#include <optional>
#include <string>
#include <vector>

#include "mtda/data.hpp"
#include "mtda/errors.hpp"
#include "mtda/model.hpp"
#include "mtda/tensor.hpp"

namespace mtda {

template <typename Real>
struct LossWeights {
    Real alpha = Real(0.15);      // smoothing weight inside the prediction loss
    Real beta_l = Real(1);        // local domain loss weight
    Real beta_g = Real(1);        // global domain loss weight
    Real mu = Real(1e-4);         // attentive entropy weight
    Real tmse_clamp = Real(4);    // truncation for the smoothing loss

    void validate() const {
        if (alpha < Real(0) || beta_l < Real(0) || beta_g < Real(0) || mu < Real(0) || tmse_clamp < Real(0)) {
            throw ConfigError("loss weights must be non-negative");
        }
    }
};

template <typename Real>
struct LossBreakdown {
    TensorPtr<Real> total;  // scalar on the tape; null when no term applies
    Real prediction = 0;
    Real local_domain = 0;
    Real global_domain = 0;
    Real attentive_entropy = 0;

    Real total_value() const { return total ? total->data[0] : Real(0); }
};

// Which domains the attentive entropy term applies to. The term itself is
// domain-agnostic, so the default is both.
enum class AeScope { both, source_only, target_only };

inline AeScope ae_scope_from_name(const std::string& name) {
    if (name == "both") return AeScope::both;
    if (name == "source") return AeScope::source_only;
    if (name == "target") return AeScope::target_only;
    throw ConfigError("unknown ae_scope '" + name + "' (expected both, source, or target)");
}

inline const char* ae_scope_name(AeScope s) {
    switch (s) {
        case AeScope::both: return "both";
        case AeScope::source_only: return "source";
        case AeScope::target_only: return "target";
    }
    return "?";
}

// Mean over frames of -log softmax(logits)[t, label_t].
template <typename Real>
TensorPtr<Real> classification_loss(Tape<Real>* tape, const TensorPtr<Real>& frame_logits,
                                    const std::vector<int>& labels) {
    return nll_rows(tape, log_softmax_rows(tape, frame_logits), labels);
}

// Truncated MSE over adjacent-frame log-probability differences.
template <typename Real>
TensorPtr<Real> smoothing_loss(Tape<Real>* tape, const TensorPtr<Real>& frame_log_probs, Real clamp) {
    return tmse(tape, frame_log_probs, clamp);
}

// Per-stage prediction loss: classification + alpha * smoothing.
template <typename Real>
TensorPtr<Real> prediction_loss(Tape<Real>* tape, const StageOutput<Real>& stage, const std::vector<int>& labels,
                                Real alpha, Real clamp) {
    auto log_probs = log_softmax_rows(tape, stage.frame_logits);
    auto cls = nll_rows(tape, log_probs, labels);
    if (alpha == Real(0)) return cls;
    return add(tape, cls, scale(tape, smoothing_loss(tape, log_probs, clamp), alpha));
}

// Mean over frames of binary cross-entropy against the domain label.
template <typename Real>
TensorPtr<Real> local_domain_loss(Tape<Real>* tape, const TensorPtr<Real>& d_hat_logits, int domain) {
    const std::vector<int> labels(static_cast<std::size_t>(d_hat_logits->rows()), domain);
    return nll_rows(tape, log_softmax_rows(tape, d_hat_logits), labels);
}

template <typename Real>
TensorPtr<Real> global_domain_loss(Tape<Real>* tape, const TensorPtr<Real>& video_logits, int domain) {
    return nll_rows(tape, log_softmax_rows(tape, video_logits), std::vector<int>{domain});
}

// (1/T) * sum_j (1 + H(d_hat_j)) * H(y_hat_j), natural-log entropies. The +1
// is the residual connection on the attention side.
template <typename Real>
TensorPtr<Real> attentive_entropy_loss(Tape<Real>* tape, const TensorPtr<Real>& d_hat_probs,
                                       const TensorPtr<Real>& y_hat_probs) {
    if (d_hat_probs->shape.size() != 2 || y_hat_probs->shape.size() != 2 ||
        d_hat_probs->shape[0] != y_hat_probs->shape[0]) {
        throw ShapeError("attentive_entropy_loss: shapes " + shape_str(d_hat_probs->shape) + " and " +
                         shape_str(y_hat_probs->shape) + " do not share a frame count");
    }
    auto h_d = row_entropy(tape, d_hat_probs);
    auto h_y = row_entropy(tape, y_hat_probs);
    return mean_all(tape, mul(tape, add_const(tape, h_d, Real(1)), h_y));
}

// Combines the per-stage terms: prediction over all stages (source only),
// domain and attentive-entropy terms over DA stages (both domains).
template <typename Real>
LossBreakdown<Real> total_loss(Tape<Real>* tape, const std::vector<StageOutput<Real>>& stage_outputs,
                               const std::vector<int>* labels, Domain domain, const LossWeights<Real>& weights,
                               Mode mode, AeScope ae_scope = AeScope::both) {
    weights.validate();
    if (domain == Domain::source && labels == nullptr) {
        throw ContractError("total_loss: source videos require labels");
    }
    if (domain == Domain::target && labels != nullptr) {
        throw ContractError("total_loss: target videos must not receive labels");
    }

    LossBreakdown<Real> breakdown;
    TensorPtr<Real> pred_term, local_term, global_term, ae_term;

    auto accumulate = [tape](TensorPtr<Real>& acc, const TensorPtr<Real>& term) {
        acc = acc ? add(tape, acc, term) : term;
    };

    if (domain == Domain::source) {
        for (const auto& stage : stage_outputs) {
            accumulate(pred_term, prediction_loss(tape, stage, *labels, weights.alpha, weights.tmse_clamp));
        }
    }

    const int d_label = domain_label(domain);
    const bool ae_applies = ae_scope == AeScope::both ||
                            (ae_scope == AeScope::source_only && domain == Domain::source) ||
                            (ae_scope == AeScope::target_only && domain == Domain::target);
    for (const auto& stage : stage_outputs) {
        if (mode_has_local(mode) && stage.local_domain_logits) {
            accumulate(local_term, local_domain_loss(tape, stage.local_domain_logits, d_label));
        }
        if (mode_has_global(mode) && stage.video_domain_logits) {
            accumulate(global_term, global_domain_loss(tape, stage.video_domain_logits, d_label));
        }
        if (mode_has_attention(mode) && ae_applies && stage.local_domain_logits) {
            auto d_hat = softmax_rows(tape, stage.local_domain_logits);
            accumulate(ae_term, attentive_entropy_loss(tape, d_hat, stage.frame_probs));
        }
    }

    TensorPtr<Real> total;
    auto add_weighted = [tape, &total](const TensorPtr<Real>& term, Real weight) {
        if (!term) return;
        auto scaled = weight == Real(1) ? term : scale(tape, term, weight);
        total = total ? add(tape, total, scaled) : scaled;
    };
    add_weighted(pred_term, Real(1));
    add_weighted(local_term, weights.beta_l);
    add_weighted(global_term, weights.beta_g);
    add_weighted(ae_term, weights.mu);

    breakdown.total = total ? total : make_scalar<Real>(0);
    breakdown.prediction = pred_term ? pred_term->data[0] : Real(0);
    breakdown.local_domain = local_term ? local_term->data[0] : Real(0);
    breakdown.global_domain = global_term ? global_term->data[0] : Real(0);
    breakdown.attentive_entropy = ae_term ? ae_term->data[0] : Real(0);
    return breakdown;
}

}  // namespace mtda
