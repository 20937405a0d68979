#include <gtest/gtest.h>

#include <cmath>

#include "mtda/losses.hpp"
#include "mtda/model.hpp"
#include "mtda/rng.hpp"

using mtda::AeScope;
using mtda::Domain;
using mtda::LossWeights;
using mtda::make_tensor;
using mtda::Mode;
using mtda::Rng;
using mtda::TensorPtr;

namespace {

constexpr double kLog2 = 0.6931471805599453;

TensorPtr<double> random_logits(int rows, int cols, Rng& rng, double lo = -2.0, double hi = 2.0) {
    auto t = make_tensor<double>({rows, cols});
    for (auto& v : t->data) v = rng.uniform(lo, hi);
    return t;
}

// ---- loop oracles: direct per-frame formulas, no tensor ops ----

double cls_oracle(const TensorPtr<double>& logits, const std::vector<int>& labels) {
    const int rows = logits->shape[0];
    const int cols = logits->shape[1];
    double total = 0;
    for (int r = 0; r < rows; ++r) {
        const double* row = logits->data.data() + static_cast<std::size_t>(r) * cols;
        double mx = row[0];
        for (int c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
        double sum = 0;
        for (int c = 0; c < cols; ++c) sum += std::exp(row[c] - mx);
        total -= row[labels[static_cast<std::size_t>(r)]] - mx - std::log(sum);
    }
    return total / rows;
}

double tmse_oracle(const TensorPtr<double>& log_probs, double clamp) {
    const int rows = log_probs->shape[0];
    const int cols = log_probs->shape[1];
    if (rows < 2) return 0.0;
    double total = 0;
    for (int t = 1; t < rows; ++t) {
        for (int c = 0; c < cols; ++c) {
            const double d = std::abs(log_probs->data[static_cast<std::size_t>(t) * cols + c] -
                                      log_probs->data[static_cast<std::size_t>(t - 1) * cols + c]);
            const double clipped = std::min(d, clamp);
            total += clipped * clipped;
        }
    }
    return total / ((rows - 1) * cols);
}

double bce_oracle(const TensorPtr<double>& logits, int domain) {
    const int rows = logits->rows();
    double total = 0;
    for (int r = 0; r < rows; ++r) {
        const double a = logits->data[static_cast<std::size_t>(r) * 2];
        const double b = logits->data[static_cast<std::size_t>(r) * 2 + 1];
        const double mx = std::max(a, b);
        const double lse = mx + std::log(std::exp(a - mx) + std::exp(b - mx));
        total -= (domain == 0 ? a : b) - lse;
    }
    return total / rows;
}

double entropy_of(const double* p, int n) {
    double h = 0;
    for (int i = 0; i < n; ++i) {
        if (p[i] > 0) h -= p[i] * std::log(p[i]);
    }
    return h;
}

double ae_oracle(const TensorPtr<double>& d_probs, const TensorPtr<double>& y_probs) {
    const int rows = d_probs->shape[0];
    const int classes = y_probs->shape[1];
    double total = 0;
    for (int j = 0; j < rows; ++j) {
        const double hd = entropy_of(d_probs->data.data() + static_cast<std::size_t>(j) * 2, 2);
        const double hy = entropy_of(y_probs->data.data() + static_cast<std::size_t>(j) * classes, classes);
        total += (1.0 + hd) * hy;
    }
    return total / rows;
}

TEST(Classification, ConfidentCorrectIsZero) {
    auto logits = make_tensor<double>({2, 3}, {1000, 0, 0, 0, 1000, 0});
    auto loss = mtda::classification_loss<double>(nullptr, logits, {0, 1});
    EXPECT_DOUBLE_EQ(loss->data[0], 0.0);
}

TEST(Classification, UniformLogitsGiveLogC) {
    auto logits = make_tensor<double>({3, 4});
    auto loss = mtda::classification_loss<double>(nullptr, logits, {2, 0, 3});
    EXPECT_NEAR(loss->data[0], std::log(4.0), 1e-12);
    EXPECT_NEAR(loss->data[0], 1.38629, 1e-5);
}

TEST(Classification, MatchesLoopOracle) {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        auto logits = random_logits(8, 5, rng);
        std::vector<int> labels;
        for (int t = 0; t < 8; ++t) labels.push_back(rng.uniform_int(5));
        auto loss = mtda::classification_loss<double>(nullptr, logits, labels);
        EXPECT_NEAR(loss->data[0], cls_oracle(logits, labels), 1e-10);
    }
}

TEST(Classification, OutOfRangeLabelNamesFrame) {
    auto logits = make_tensor<double>({3, 2});
    try {
        mtda::classification_loss<double>(nullptr, logits, {0, 5, 1});
        FAIL() << "expected DataError";
    } catch (const mtda::DataError& e) {
        EXPECT_NE(std::string(e.what()).find("frame 1"), std::string::npos) << e.what();
    }
}

TEST(Smoothing, IdenticalDistributionsGiveZero) {
    auto lp = make_tensor<double>({4, 3});
    for (int t = 0; t < 4; ++t) {
        lp->data[static_cast<std::size_t>(t) * 3] = -0.5;
        lp->data[static_cast<std::size_t>(t) * 3 + 1] = -1.2;
        lp->data[static_cast<std::size_t>(t) * 3 + 2] = -2.0;
    }
    EXPECT_DOUBLE_EQ(mtda::smoothing_loss<double>(nullptr, lp, 4.0)->data[0], 0.0);
}

TEST(Smoothing, SingleFrameIsZero) {
    auto lp = make_tensor<double>({1, 4});
    EXPECT_DOUBLE_EQ(mtda::smoothing_loss<double>(nullptr, lp, 4.0)->data[0], 0.0);
}

TEST(Smoothing, MatchesLoopOracle) {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        auto logits = random_logits(8, 3, rng, -3.0, 3.0);
        auto lp = mtda::log_softmax_rows<double>(nullptr, logits);
        auto loss = mtda::smoothing_loss<double>(nullptr, lp, 4.0);
        EXPECT_NEAR(loss->data[0], tmse_oracle(lp, 4.0), 1e-10);
    }
}

TEST(Prediction, AlphaZeroEqualsClassification) {
    Rng rng(11);
    auto logits = random_logits(6, 3, rng);
    mtda::StageOutput<double> stage;
    stage.frame_logits = logits;
    stage.frame_probs = mtda::softmax_rows<double>(nullptr, logits);
    const std::vector<int> labels{0, 1, 2, 0, 1, 2};
    auto with_alpha0 = mtda::prediction_loss<double>(nullptr, stage, labels, 0.0, 4.0);
    auto cls = mtda::classification_loss<double>(nullptr, logits, labels);
    EXPECT_DOUBLE_EQ(with_alpha0->data[0], cls->data[0]);
}

TEST(Prediction, AlphaCombinesClsAndTmse) {
    Rng rng(13);
    auto logits = random_logits(7, 4, rng);
    mtda::StageOutput<double> stage;
    stage.frame_logits = logits;
    stage.frame_probs = mtda::softmax_rows<double>(nullptr, logits);
    std::vector<int> labels;
    for (int t = 0; t < 7; ++t) labels.push_back(rng.uniform_int(4));
    auto loss = mtda::prediction_loss<double>(nullptr, stage, labels, 0.15, 4.0);
    auto lp = mtda::log_softmax_rows<double>(nullptr, logits);
    const double expected = cls_oracle(logits, labels) + 0.15 * tmse_oracle(lp, 4.0);
    EXPECT_NEAR(loss->data[0], expected, 1e-10);
}

TEST(Prediction, PerfectConfidentConstantLabelsGiveZero) {
    auto logits = make_tensor<double>({5, 3});
    for (int t = 0; t < 5; ++t) logits->data[static_cast<std::size_t>(t) * 3 + 1] = 1000.0;
    mtda::StageOutput<double> stage;
    stage.frame_logits = logits;
    stage.frame_probs = mtda::softmax_rows<double>(nullptr, logits);
    auto loss = mtda::prediction_loss<double>(nullptr, stage, std::vector<int>(5, 1), 0.15, 4.0);
    EXPECT_DOUBLE_EQ(loss->data[0], 0.0);
}

TEST(LocalDomain, ZeroLogitsGiveLog2) {
    auto logits = make_tensor<double>({6, 2});
    EXPECT_NEAR(mtda::local_domain_loss<double>(nullptr, logits, 0)->data[0], kLog2, 1e-12);
    EXPECT_NEAR(mtda::local_domain_loss<double>(nullptr, logits, 1)->data[0], kLog2, 1e-12);
}

TEST(LocalDomain, ConfidentCorrectIsZero) {
    auto logits = make_tensor<double>({3, 2});
    for (int t = 0; t < 3; ++t) logits->data[static_cast<std::size_t>(t) * 2 + 1] = 1000.0;
    EXPECT_DOUBLE_EQ(mtda::local_domain_loss<double>(nullptr, logits, 1)->data[0], 0.0);
}

TEST(LocalDomain, MatchesLoopOracle) {
    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        auto logits = random_logits(9, 2, rng);
        for (int domain : {0, 1}) {
            auto loss = mtda::local_domain_loss<double>(nullptr, logits, domain);
            EXPECT_NEAR(loss->data[0], bce_oracle(logits, domain), 1e-10);
        }
    }
}

TEST(GlobalDomain, MatchesSingleFrameLocalLoss) {
    Rng rng(19);
    auto video_logits = make_tensor<double>({2}, {rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)});
    auto frame_logits = make_tensor<double>({1, 2}, {video_logits->data[0], video_logits->data[1]});
    for (int domain : {0, 1}) {
        EXPECT_DOUBLE_EQ(mtda::global_domain_loss<double>(nullptr, video_logits, domain)->data[0],
                         mtda::local_domain_loss<double>(nullptr, frame_logits, domain)->data[0]);
    }
    auto zeros = make_tensor<double>({2});
    EXPECT_NEAR(mtda::global_domain_loss<double>(nullptr, zeros, 0)->data[0], kLog2, 1e-12);
}

TEST(AttentiveEntropy, ConfidentClassPredictionsGiveZero) {
    auto d = make_tensor<double>({4, 2}, std::vector<double>(8, 0.5));
    auto y = make_tensor<double>({4, 3});
    for (int t = 0; t < 4; ++t) y->data[static_cast<std::size_t>(t) * 3 + 2] = 1.0;
    EXPECT_DOUBLE_EQ(mtda::attentive_entropy_loss<double>(nullptr, d, y)->data[0], 0.0);
}

TEST(AttentiveEntropy, UniformPairValue) {
    auto d = make_tensor<double>({1, 2}, {0.5, 0.5});
    auto y = make_tensor<double>({1, 2}, {0.5, 0.5});
    const double expected = (1.0 + kLog2) * kLog2;
    EXPECT_NEAR(mtda::attentive_entropy_loss<double>(nullptr, d, y)->data[0], expected, 1e-12);
    EXPECT_NEAR(expected, 1.17360, 1e-5);
}

TEST(AttentiveEntropy, MatchesLoopOracle) {
    Rng rng(23);
    for (int trial = 0; trial < 50; ++trial) {
        auto d = mtda::softmax_rows<double>(nullptr, random_logits(7, 2, rng));
        auto y = mtda::softmax_rows<double>(nullptr, random_logits(7, 4, rng));
        auto loss = mtda::attentive_entropy_loss<double>(nullptr, d, y);
        EXPECT_NEAR(loss->data[0], ae_oracle(d, y), 1e-10);
    }
}

TEST(AttentiveEntropy, MonotoneInClassEntropy) {
    Rng rng(29);
    for (int trial = 0; trial < 100; ++trial) {
        auto d = mtda::softmax_rows<double>(nullptr, random_logits(5, 2, rng));
        auto y = mtda::softmax_rows<double>(nullptr, random_logits(5, 4, rng));
        const double before = mtda::attentive_entropy_loss<double>(nullptr, d, y)->data[0];
        // mix one frame toward uniform: entropy increases
        const int frame = rng.uniform_int(5);
        const double t = rng.uniform(0.1, 0.9);
        auto y2 = make_tensor<double>(y->shape, y->data);
        for (int c = 0; c < 4; ++c) {
            auto& v = y2->data[static_cast<std::size_t>(frame) * 4 + c];
            v = (1.0 - t) * v + t * 0.25;
        }
        const double after = mtda::attentive_entropy_loss<double>(nullptr, d, y2)->data[0];
        EXPECT_GE(after, before - 1e-12);
    }
}

// ---- total loss ----

struct ForwardFixture {
    mtda::ModelParams<double> params;
    TensorPtr<double> input;
    std::vector<int> labels;

    explicit ForwardFixture(std::uint64_t seed) : params(mtda::build_model<double>(config(), seed)) {
        Rng rng(seed);
        input = make_tensor<double>({10, 4});
        for (auto& v : input->data) v = rng.uniform(-1.0, 1.0);
        for (int t = 0; t < 10; ++t) labels.push_back(rng.uniform_int(3));
    }

    static mtda::ModelConfig config() {
        mtda::ModelConfig cfg;
        cfg.num_stages = 2;
        cfg.layers_per_stage = 2;
        cfg.num_filters = 6;
        cfg.input_dim = 4;
        cfg.num_classes = 3;
        cfg.da_stages = {1, 2};
        cfg.domain_hidden_dim = 5;
        return cfg;
    }
};

TEST(TotalLoss, BaselineWithZeroDaWeightsEqualsPredictionSum) {
    ForwardFixture fx(31);
    auto outputs = mtda::model_forward<double>(nullptr, fx.params, fx.input, 0.0, Mode::baseline);
    LossWeights<double> weights;
    weights.beta_l = 0;
    weights.beta_g = 0;
    weights.mu = 0;
    auto breakdown =
        mtda::total_loss<double>(nullptr, outputs, &fx.labels, Domain::source, weights, Mode::baseline);
    double expected = 0;
    for (const auto& stage : outputs) {
        expected += mtda::prediction_loss<double>(nullptr, stage, fx.labels, weights.alpha, weights.tmse_clamp)
                        ->data[0];
    }
    EXPECT_NEAR(breakdown.total_value(), expected, 1e-12);
    EXPECT_EQ(breakdown.local_domain, 0.0);
    EXPECT_EQ(breakdown.global_domain, 0.0);
    EXPECT_EQ(breakdown.attentive_entropy, 0.0);
}

TEST(TotalLoss, TargetVideoHasExactlyZeroPredictionTerm) {
    ForwardFixture fx(37);
    auto outputs = mtda::model_forward<double>(nullptr, fx.params, fx.input, 0.5, Mode::mixed_da);
    LossWeights<double> weights;
    auto breakdown = mtda::total_loss<double>(nullptr, outputs, nullptr, Domain::target, weights, Mode::mixed_da);
    EXPECT_EQ(breakdown.prediction, 0.0);
    EXPECT_GT(breakdown.local_domain, 0.0);
    EXPECT_GT(breakdown.global_domain, 0.0);
}

TEST(TotalLoss, RecombinationIdentity) {
    Rng rng(41);
    for (int trial = 0; trial < 20; ++trial) {
        ForwardFixture fx(100 + static_cast<std::uint64_t>(trial));
        auto outputs = mtda::model_forward<double>(nullptr, fx.params, fx.input, 0.7, Mode::mixed_da);
        LossWeights<double> weights;
        weights.alpha = rng.uniform(0.0, 0.3);
        weights.beta_l = rng.uniform(0.0, 2.0);
        weights.beta_g = rng.uniform(0.0, 2.0);
        weights.mu = rng.uniform(0.0, 0.1);
        const bool is_source = trial % 2 == 0;
        auto breakdown = mtda::total_loss<double>(nullptr, outputs, is_source ? &fx.labels : nullptr,
                                                  is_source ? Domain::source : Domain::target, weights,
                                                  Mode::mixed_da);
        const double recombined = breakdown.prediction + weights.beta_l * breakdown.local_domain +
                                  weights.beta_g * breakdown.global_domain +
                                  weights.mu * breakdown.attentive_entropy;
        const double total = breakdown.total_value();
        EXPECT_NEAR(total, recombined, 1e-9 * std::max(1.0, std::abs(total)));
        EXPECT_GE(breakdown.prediction, 0.0);
        EXPECT_GE(breakdown.local_domain, 0.0);
        EXPECT_GE(breakdown.global_domain, 0.0);
        EXPECT_GE(breakdown.attentive_entropy, 0.0);
        EXPECT_TRUE(std::isfinite(total));
    }
}

TEST(TotalLoss, LabelContractEnforced) {
    ForwardFixture fx(43);
    auto outputs = mtda::model_forward<double>(nullptr, fx.params, fx.input, 0.5, Mode::mixed_da);
    LossWeights<double> weights;
    EXPECT_THROW(
        mtda::total_loss<double>(nullptr, outputs, nullptr, Domain::source, weights, Mode::mixed_da),
        mtda::ContractError);
    EXPECT_THROW(
        mtda::total_loss<double>(nullptr, outputs, &fx.labels, Domain::target, weights, Mode::mixed_da),
        mtda::ContractError);
}

TEST(TotalLoss, AeScopeSwitch) {
    ForwardFixture fx(47);
    auto outputs = mtda::model_forward<double>(nullptr, fx.params, fx.input, 0.5, Mode::mixed_da);
    LossWeights<double> weights;
    auto on_target =
        mtda::total_loss<double>(nullptr, outputs, nullptr, Domain::target, weights, Mode::mixed_da,
                                 AeScope::source_only);
    EXPECT_EQ(on_target.attentive_entropy, 0.0);
    auto both = mtda::total_loss<double>(nullptr, outputs, nullptr, Domain::target, weights, Mode::mixed_da,
                                         AeScope::both);
    EXPECT_GT(both.attentive_entropy, 0.0);
}

}  // namespace
