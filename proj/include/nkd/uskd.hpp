#pragma once
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "nkd/kd_losses.hpp"
#include "nkd/numeric.hpp"
#include "nkd/tensor.hpp"
#include "nkd/types.hpp"

// Teacher-free customized soft labels: batch-smoothed soft target value,
// weak-supervision logit from an intermediate feature, rank fusion, Zipf
// non-target labels, and the combined self-distillation objective.

namespace nkd {

enum class SmoothVariant { sq_mean_shift, softmax_rescale, sqrt_min_shift, max_div, mean_div, teacher_passthrough };
enum class RankVariant { weak_only, final_only, combined_raw, combined_normalized };

inline SmoothVariant parse_smooth_variant(const std::string& s) {
    if (s == "sq_mean_shift") return SmoothVariant::sq_mean_shift;
    if (s == "softmax_rescale") return SmoothVariant::softmax_rescale;
    if (s == "sqrt_min_shift") return SmoothVariant::sqrt_min_shift;
    if (s == "max_div") return SmoothVariant::max_div;
    if (s == "mean_div") return SmoothVariant::mean_div;
    if (s == "teacher_passthrough") return SmoothVariant::teacher_passthrough;
    throw ConfigError("unknown smooth variant: " + s);
}

inline RankVariant parse_rank_variant(const std::string& s) {
    if (s == "weak_only") return RankVariant::weak_only;
    if (s == "final_only") return RankVariant::final_only;
    if (s == "combined_raw") return RankVariant::combined_raw;
    if (s == "combined_normalized") return RankVariant::combined_normalized;
    throw ConfigError("unknown rank variant: " + s);
}

struct UskdConfig {
    double alpha = 1.0;     // target loss weight
    double beta = 0.1;      // non-target loss weight
    double mu = 0.005;      // weak supervision strength
    double ls_epsilon = 0.1; // label smoothing for the weak loss labels
    SmoothVariant smooth_variant = SmoothVariant::sq_mean_shift;
    RankVariant rank_variant = RankVariant::combined_normalized;
    // When set, L_weak also trains the backbone through the feature tap.
    // Off by default: the auxiliary head alone carries the weak supervision.
    bool weak_grad_to_backbone = false;

    void validate() const {
        if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw UsageError("UskdConfig: alpha must be >= 0");
        if (!(beta >= 0.0) || !std::isfinite(beta)) throw UsageError("UskdConfig: beta must be >= 0");
        if (!(mu > 0.0) || mu > 1.0) throw UsageError("UskdConfig: mu must be in (0,1]");
        if (!(ls_epsilon >= 0.0) || ls_epsilon >= 1.0) throw UsageError("UskdConfig: ls_epsilon must be in [0,1)");
    }
};

// Auxiliary linear head over the tapped feature; trained only by L_weak.
struct WeakHead {
    int classes = 0;
    int feature_dim = 0;
    Vec weight; // classes x feature_dim, row-major
    Vec bias;   // classes

    static WeakHead zeros(int classes, int feature_dim) {
        WeakHead h;
        h.classes = classes;
        h.feature_dim = feature_dim;
        h.weight.assign(static_cast<std::size_t>(classes) * feature_dim, 0.0);
        h.bias.assign(classes, 0.0);
        return h;
    }
};

enum class WeakMode { cnn_gap, vit_token };

// Per-sample customized label: detached soft target value, Zipf values in
// ascending non-target class order, and the rank that produced them.
struct SoftLabelSet {
    double p_target = 0.0;
    Vec z_nontarget;                     // length C-1, ascending class order
    std::vector<std::size_t> rank_order; // non-target class indices, best rank first
};

// Batch-level smoothing of the student's target probability into the soft
// target value P_t. The squared mean shift is the main method; the other
// variants drop the square. teacher_passthrough expects the teacher's target
// probabilities as the input batch and returns them unchanged. Output is a
// constant to the optimizer (no gradient flows through it).
inline Vec soft_target_label(const Vec& s_t_batch, const Vec& v_t_batch, SmoothVariant variant) {
    std::size_t n = s_t_batch.size();
    if (n == 0) throw UsageError("soft_target_label: empty batch");
    if (v_t_batch.size() != n) throw UsageError("soft_target_label: batch size mismatch");
    Vec out(n);
    switch (variant) {
    case SmoothVariant::sq_mean_shift: {
        double mean_sq = 0.0;
        for (double s : s_t_batch) mean_sq += s * s;
        mean_sq /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
            out[i] = s_t_batch[i] * s_t_batch[i] + v_t_batch[i] - mean_sq;
        break;
    }
    case SmoothVariant::softmax_rescale: {
        Vec sm = softmax_raw(s_t_batch, 1.0);
        double v_sum = std::accumulate(v_t_batch.begin(), v_t_batch.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) out[i] = sm[i] * v_sum;
        break;
    }
    case SmoothVariant::sqrt_min_shift: {
        double mn = *std::min_element(s_t_batch.begin(), s_t_batch.end());
        for (std::size_t i = 0; i < n; ++i) out[i] = std::sqrt(s_t_batch[i] - mn);
        break;
    }
    case SmoothVariant::max_div: {
        double mx = *std::max_element(s_t_batch.begin(), s_t_batch.end());
        for (std::size_t i = 0; i < n; ++i) out[i] = s_t_batch[i] / mx;
        break;
    }
    case SmoothVariant::mean_div: {
        double mean = std::accumulate(s_t_batch.begin(), s_t_batch.end(), 0.0) / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) out[i] = s_t_batch[i] / mean;
        break;
    }
    case SmoothVariant::teacher_passthrough:
        out = s_t_batch;
        break;
    }
    return out;
}

// L_target = -P_t log S_t with P_t a constant; gradient flows through S_t
// only, expressed w.r.t. the student logits.
inline LossResult target_loss(double p_t, const ProbVector& S, std::size_t t) {
    if (t >= S.size()) throw UsageError("target_loss: target index out of range");
    LossResult r;
    r.value = -p_t * log_floored(S[t], r.clamped);
    r.grad_student_logits.resize(S.size());
    for (std::size_t j = 0; j < S.size(); ++j)
        r.grad_student_logits[j] = p_t * (S[j] - (j == t ? 1.0 : 0.0));
    return r;
}

inline double target_loss_value(double p_t, double s_t) {
    bool clamped = false;
    return -p_t * log_floored(s_t, clamped);
}

// W = softmax(FC(GAP(F))) for feature maps, W = softmax(FC(F)) for tokens.
// cnn_gap expects a {D,H,W} feature, vit_token a {D} vector.
inline ProbVector weak_logit(const Tensor& feature, const WeakHead& head, WeakMode mode) {
    Vec pooled;
    if (mode == WeakMode::cnn_gap) {
        if (feature.shape.size() != 3 || feature.dim(0) != head.feature_dim)
            throw UsageError("weak_logit: cnn_gap expects a {D,H,W} feature matching the head");
        int d = feature.dim(0), hw = feature.dim(1) * feature.dim(2);
        pooled.resize(d);
        for (int c = 0; c < d; ++c) {
            double acc = 0.0;
            for (int i = 0; i < hw; ++i) acc += feature.data[static_cast<std::size_t>(c) * hw + i];
            pooled[c] = acc / hw;
        }
    } else {
        if (feature.shape.size() != 1 || feature.dim(0) != head.feature_dim)
            throw UsageError("weak_logit: vit_token expects a {D} feature matching the head");
        pooled = feature.data;
    }
    Vec preact(head.classes);
    for (int c = 0; c < head.classes; ++c) {
        const double* row = &head.weight[static_cast<std::size_t>(c) * head.feature_dim];
        double acc = head.bias[c];
        for (int i = 0; i < head.feature_dim; ++i) acc += row[i] * pooled[i];
        preact[c] = acc;
    }
    return ProbVector(softmax_raw(preact, 1.0));
}

// L_weak = mu * CE(smoothed labels, W). The gradient field holds the
// gradient w.r.t. the weak-head logits; nothing reaches the backbone here.
inline LossResult weak_loss(const ProbVector& W, const Vec& smoothed_labels, double mu) {
    if (W.size() != smoothed_labels.size()) throw UsageError("weak_loss: class count mismatch");
    if (!(mu > 0.0) || mu > 1.0) throw UsageError("weak_loss: mu must be in (0,1]");
    double lbl_sum = std::accumulate(smoothed_labels.begin(), smoothed_labels.end(), 0.0);
    if (std::abs(lbl_sum - 1.0) > 1e-9) throw UsageError("weak_loss: labels must sum to 1");
    LossResult r;
    r.grad_student_logits.resize(W.size());
    for (std::size_t i = 0; i < W.size(); ++i) {
        if (smoothed_labels[i] > 0.0) r.value -= smoothed_labels[i] * log_floored(W[i], r.clamped);
        r.grad_student_logits[i] = mu * (W[i] - smoothed_labels[i]);
    }
    r.value *= mu;
    return r;
}

// Non-target classes sorted by descending fused rank score R; exact ties
// break toward the lower class index.
inline std::vector<std::size_t> nontarget_rank(const ProbVector& W, const ProbVector& S, std::size_t t,
                                               RankVariant variant) {
    if (W.size() != S.size()) throw UsageError("nontarget_rank: class count mismatch");
    if (t >= S.size()) throw UsageError("nontarget_rank: target index out of range");
    bool uses_weak = variant != RankVariant::final_only;
    bool uses_final = variant != RankVariant::weak_only;
    if (uses_weak && 1.0 - W[t] < kDegenerateEps)
        throw DegenerateTarget("nontarget_rank: weak logit mass all on target");
    if (uses_final && 1.0 - S[t] < kDegenerateEps)
        throw DegenerateTarget("nontarget_rank: final logit mass all on target");

    std::vector<std::size_t> order;
    order.reserve(S.size() - 1);
    Vec score(S.size(), 0.0);
    for (std::size_t i = 0; i < S.size(); ++i) {
        if (i == t) continue;
        double r = 0.0;
        switch (variant) {
        case RankVariant::weak_only: r = W[i]; break;
        case RankVariant::final_only: r = S[i]; break;
        case RankVariant::combined_raw: r = W[i] + S[i]; break;
        case RankVariant::combined_normalized:
            r = W[i] / (1.0 - W[t]) + S[i] / (1.0 - S[t]);
            break;
        }
        score[i] = r;
        order.push_back(i);
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (score[a] != score[b]) return score[a] > score[b];
        return a < b;
    });
    return order;
}

// Z_k = (1/k) / H_n, strictly decreasing, sums to 1.
inline Vec zipf_distribution(std::size_t n_ranks) {
    if (n_ranks == 0) throw UsageError("zipf_distribution: need at least one rank");
    Vec z(n_ranks);
    double harmonic = 0.0;
    for (std::size_t k = 1; k <= n_ranks; ++k) harmonic += 1.0 / static_cast<double>(k);
    for (std::size_t k = 1; k <= n_ranks; ++k) z[k - 1] = 1.0 / (static_cast<double>(k) * harmonic);
    return z;
}

// Scatter rank-ordered Zipf values into ascending non-target class order.
inline Vec assign_by_rank(const Vec& zipf, const std::vector<std::size_t>& rank_order, std::size_t t,
                          std::size_t classes) {
    if (zipf.size() != rank_order.size() || zipf.size() + 1 != classes)
        throw UsageError("assign_by_rank: size mismatch");
    Vec out(classes - 1, 0.0);
    for (std::size_t k = 0; k < rank_order.size(); ++k) {
        std::size_t cls = rank_order[k];
        std::size_t slot = cls < t ? cls : cls - 1;
        out[slot] = zipf[k];
    }
    return out;
}

inline SoftLabelSet make_soft_label_set(double p_target, const ProbVector& W, const ProbVector& S,
                                        std::size_t t, RankVariant variant) {
    SoftLabelSet set;
    set.p_target = p_target;
    set.rank_order = nontarget_rank(W, S, t, variant);
    set.z_nontarget = assign_by_rank(zipf_distribution(S.size() - 1), set.rank_order, t, S.size());
    return set;
}

// L_non = -sum N(Z) log N(S) over non-target classes; Z is a constant.
// z_assigned is in ascending class order with class t removed.
inline LossResult uskd_nontarget_loss(const Vec& z_assigned, const ProbVector& S,
                                      const LogitVector& logits, std::size_t t) {
    if (S.size() != logits.size() || z_assigned.size() + 1 != S.size())
        throw UsageError("uskd_nontarget_loss: size mismatch");
    if (t >= S.size()) throw UsageError("uskd_nontarget_loss: target index out of range");
    ProbVector s_nt = nontarget_renormalize(S, t);
    double z_sum = std::accumulate(z_assigned.begin(), z_assigned.end(), 0.0);
    if (!(z_sum > 0.0)) throw UsageError("uskd_nontarget_loss: Z has no mass");

    LossResult r;
    r.grad_student_logits.assign(S.size(), 0.0);
    std::size_t k = 0;
    for (std::size_t j = 0; j < S.size(); ++j) {
        if (j == t) continue;
        double zn = z_assigned[k] / z_sum;
        if (zn > 0.0) r.value -= zn * log_floored(s_nt[k], r.clamped);
        r.grad_student_logits[j] = s_nt[k] - zn;
        ++k;
    }
    return r;
}

// Everything uskd_total_loss needs about one sample. P_t and the label set
// are precomputed per batch and enter as constants.
struct UskdSample {
    LogitVector student_logits;
    ProbVector S;     // softmax of student_logits
    ProbVector W;     // weak logit
    std::size_t target = 0;
    double v_t = 1.0; // original target label value
    double p_t = 1.0; // detached soft target value
    Vec z_assigned;   // detached Zipf labels, ascending class order minus t
    Vec smoothed_labels; // full-length labels for the weak loss
};

struct UskdTotalResult {
    LossResult total;      // value + gradient w.r.t. student logits
    Vec grad_weak_logits;  // gradient w.r.t. the weak-head logits
    double l_ori = 0.0, l_target = 0.0, l_non = 0.0, l_weak = 0.0;
};

// Eq.-13 style total: L_ori + alpha*L_target + beta*L_non + L_weak, with the
// weak-loss gradient partitioned off to the weak head.
inline UskdTotalResult uskd_total_loss(const UskdSample& sample, const UskdConfig& cfg) {
    cfg.validate();
    UskdTotalResult r;
    LossResult ori = ce_loss(sample.S, sample.target, sample.v_t);
    LossResult tgt = target_loss(sample.p_t, sample.S, sample.target);
    LossResult non = uskd_nontarget_loss(sample.z_assigned, sample.S, sample.student_logits, sample.target);
    LossResult weak = weak_loss(sample.W, sample.smoothed_labels, cfg.mu);

    r.l_ori = ori.value;
    r.l_target = tgt.value;
    r.l_non = non.value;
    r.l_weak = weak.value;
    r.total.value = ori.value + cfg.alpha * tgt.value + cfg.beta * non.value + weak.value;
    r.total.clamped = ori.clamped || tgt.clamped || non.clamped || weak.clamped;
    r.total.grad_student_logits.resize(sample.S.size());
    for (std::size_t j = 0; j < sample.S.size(); ++j)
        r.total.grad_student_logits[j] = ori.grad_student_logits[j] +
                                         cfg.alpha * tgt.grad_student_logits[j] +
                                         cfg.beta * non.grad_student_logits[j];
    r.grad_weak_logits = weak.grad_student_logits;
    return r;
}

} // namespace nkd
