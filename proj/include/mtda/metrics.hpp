#pragma once

// Segmentation metrics: frame-wise accuracy, segmental edit score, and
// segmental F1 at an IoU threshold, plus corpus-level aggregation.

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "mtda/errors.hpp"

namespace mtda {

// Maximal run of one label: [start, end) in frame indices.
struct Segment {
    int label = 0;
    int start = 0;
    int end = 0;

    int length() const { return end - start; }
    bool operator==(const Segment& other) const = default;
};

inline std::vector<Segment> segments_from_labels(const std::vector<int>& labels) {
    if (labels.empty()) throw DataError("segments_from_labels: empty sequence");
    std::vector<Segment> segs;
    int start = 0;
    for (std::size_t t = 1; t <= labels.size(); ++t) {
        if (t == labels.size() || labels[t] != labels[t - 1]) {
            segs.push_back({labels[t - 1], start, static_cast<int>(t)});
            start = static_cast<int>(t);
        }
    }
    return segs;
}

inline double frame_accuracy(const std::vector<int>& pred, const std::vector<int>& gt,
                             const std::set<int>& exclude = {}) {
    if (pred.size() != gt.size()) {
        throw DataError("frame_accuracy: length mismatch: pred " + std::to_string(pred.size()) + " vs gt " +
                        std::to_string(gt.size()));
    }
    if (pred.empty()) throw DataError("frame_accuracy: empty sequence");
    long long correct = 0;
    long long counted = 0;
    for (std::size_t t = 0; t < gt.size(); ++t) {
        if (exclude.count(gt[t])) continue;
        ++counted;
        if (pred[t] == gt[t]) ++correct;
    }
    if (counted == 0) return 0.0;
    return 100.0 * static_cast<double>(correct) / static_cast<double>(counted);
}

namespace detail {

inline std::vector<int> collapsed_labels(const std::vector<int>& labels, const std::set<int>& exclude) {
    std::vector<int> out;
    for (const Segment& s : segments_from_labels(labels)) {
        if (!exclude.count(s.label)) out.push_back(s.label);
    }
    return out;
}

// Iterative two-row Levenshtein with unit insert/delete/substitute costs.
inline int levenshtein(const std::vector<int>& a, const std::vector<int>& b) {
    const std::size_t n = b.size();
    std::vector<int> prev(n + 1), cur(n + 1);
    for (std::size_t j = 0; j <= n; ++j) prev[j] = static_cast<int>(j);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = static_cast<int>(i);
        for (std::size_t j = 1; j <= n; ++j) {
            const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[n];
}

}  // namespace detail

// 100 * (1 - Levenshtein(P, G) / max(|P|, |G|)) over collapsed segment-label
// strings. Symmetric in its arguments.
inline double edit_score(const std::vector<int>& pred, const std::vector<int>& gt,
                         const std::set<int>& exclude = {}) {
    if (pred.empty() || gt.empty()) throw DataError("edit_score: empty sequence");
    const auto p = detail::collapsed_labels(pred, exclude);
    const auto g = detail::collapsed_labels(gt, exclude);
    if (p.empty() && g.empty()) return 100.0;
    if (p.empty() || g.empty()) return 0.0;
    const int dist = detail::levenshtein(p, g);
    const double longest = static_cast<double>(std::max(p.size(), g.size()));
    return 100.0 * (1.0 - static_cast<double>(dist) / longest);
}

struct F1Counts {
    int tp = 0;
    int fp = 0;
    int fn = 0;
};

struct F1Score {
    double f1 = 0.0;
    double precision = 0.0;
    double recall = 0.0;
};

// Greedy matching in prediction order: each predicted segment picks the
// same-label ground-truth segment with the highest IoU (lowest index on
// ties); it scores a true positive when that IoU clears k/100 and the
// ground-truth segment is still unmatched.
inline F1Counts f1_counts(const std::vector<int>& pred, const std::vector<int>& gt, double k,
                          const std::set<int>& exclude = {}) {
    if (k <= 0.0 || k > 100.0) {
        throw ConfigError("f1_counts: threshold must be in (0, 100], got " + std::to_string(k));
    }
    if (pred.size() != gt.size()) {
        throw DataError("f1_counts: length mismatch: pred " + std::to_string(pred.size()) + " vs gt " +
                        std::to_string(gt.size()));
    }
    if (pred.empty()) throw DataError("f1_counts: empty sequence");

    std::vector<Segment> p_segs;
    std::vector<Segment> g_segs;
    for (const Segment& s : segments_from_labels(pred)) {
        if (!exclude.count(s.label)) p_segs.push_back(s);
    }
    for (const Segment& s : segments_from_labels(gt)) {
        if (!exclude.count(s.label)) g_segs.push_back(s);
    }

    const double threshold = k / 100.0;
    std::vector<bool> used(g_segs.size(), false);
    F1Counts counts;
    for (const Segment& p : p_segs) {
        double best_iou = -1.0;
        int best = -1;
        for (std::size_t gi = 0; gi < g_segs.size(); ++gi) {
            const Segment& g = g_segs[gi];
            if (g.label != p.label) continue;
            const int inter = std::max(0, std::min(p.end, g.end) - std::max(p.start, g.start));
            const int uni = p.length() + g.length() - inter;
            const double iou = static_cast<double>(inter) / static_cast<double>(uni);
            if (iou > best_iou) {
                best_iou = iou;
                best = static_cast<int>(gi);
            }
        }
        if (best >= 0 && best_iou >= threshold && !used[static_cast<std::size_t>(best)]) {
            used[static_cast<std::size_t>(best)] = true;
            ++counts.tp;
        } else {
            ++counts.fp;
        }
    }
    counts.fn = static_cast<int>(g_segs.size()) - counts.tp;
    return counts;
}

inline F1Score f1_from_counts(const F1Counts& c) {
    F1Score s;
    // 0/0 is defined as 0 throughout
    s.precision = (c.tp + c.fp) > 0 ? 100.0 * c.tp / static_cast<double>(c.tp + c.fp) : 0.0;
    s.recall = (c.tp + c.fn) > 0 ? 100.0 * c.tp / static_cast<double>(c.tp + c.fn) : 0.0;
    s.f1 = (s.precision + s.recall) > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    return s;
}

inline F1Score f1_at_k(const std::vector<int>& pred, const std::vector<int>& gt, double k,
                       const std::set<int>& exclude = {}) {
    return f1_from_counts(f1_counts(pred, gt, k, exclude));
}

struct MetricsReport {
    struct PerVideo {
        std::string id;
        double acc = 0.0;
        double edit = 0.0;
        std::map<int, double> f1;  // threshold -> percent
    };

    double acc = 0.0;                    // pooled over all frames
    double edit = 0.0;                   // mean of per-video edit scores
    std::map<int, double> f1;            // pooled TP/FP/FN (canonical)
    std::map<int, double> f1_video_mean; // mean of per-video F1 (recorded, not canonical)
    std::vector<PerVideo> per_video;
};

// Corpus aggregation: frame accuracy over pooled frames, edit score averaged
// per video, F1 from TP/FP/FN pooled over videos.
inline MetricsReport evaluate_corpus(const std::vector<std::pair<std::vector<int>, std::vector<int>>>& pairs,
                                     const std::vector<int>& ks = {10, 25, 50},
                                     const std::set<int>& exclude = {},
                                     const std::vector<std::string>& ids = {}) {
    if (pairs.empty()) throw ContractError("evaluate_corpus: empty video list");
    if (!ids.empty() && ids.size() != pairs.size()) {
        throw ContractError("evaluate_corpus: id count does not match video count");
    }

    MetricsReport report;
    long long correct = 0;
    long long counted = 0;
    double edit_sum = 0.0;
    std::map<int, F1Counts> pooled;
    std::map<int, double> f1_sum;

    for (std::size_t v = 0; v < pairs.size(); ++v) {
        const auto& [pred, gt] = pairs[v];
        if (pred.size() != gt.size()) {
            throw DataError("evaluate_corpus: length mismatch in video " + std::to_string(v));
        }
        MetricsReport::PerVideo row;
        row.id = ids.empty() ? "video_" + std::to_string(v) : ids[v];
        row.acc = frame_accuracy(pred, gt, exclude);
        row.edit = edit_score(pred, gt, exclude);
        for (std::size_t t = 0; t < gt.size(); ++t) {
            if (exclude.count(gt[t])) continue;
            ++counted;
            if (pred[t] == gt[t]) ++correct;
        }
        edit_sum += row.edit;
        for (int k : ks) {
            const F1Counts c = f1_counts(pred, gt, static_cast<double>(k), exclude);
            pooled[k].tp += c.tp;
            pooled[k].fp += c.fp;
            pooled[k].fn += c.fn;
            const double f1 = f1_from_counts(c).f1;
            row.f1[k] = f1;
            f1_sum[k] += f1;
        }
        report.per_video.push_back(std::move(row));
    }

    report.acc = counted > 0 ? 100.0 * static_cast<double>(correct) / static_cast<double>(counted) : 0.0;
    report.edit = edit_sum / static_cast<double>(pairs.size());
    for (int k : ks) {
        report.f1[k] = f1_from_counts(pooled[k]).f1;
        report.f1_video_mean[k] = f1_sum[k] / static_cast<double>(pairs.size());
    }
    return report;
}

}  // namespace mtda
