#pragma once
#include <cmath>
#include <utility>

#include "nkd/numeric.hpp"
#include "nkd/types.hpp"

// Teacher-supervised distillation losses: CE, classical KD, its target /
// non-target decomposition, NKD, DKD, and the T1/T2 coefficient terms.
// Every loss returns the scalar value and the analytic gradient with respect
// to the student logits; teacher probabilities are constants.

namespace nkd {

struct KdConfig {
    double gamma = 1.5;  // non-target loss weight
    double lambda = 1.0; // temperature
    // Literal power reading of the tempered probabilities (probs^lambda
    // instead of the classical logits/lambda). Off by default; kept only for
    // side-by-side comparison of the two readings.
    bool literal_power_temperature = false;

    void validate() const {
        if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw UsageError("KdConfig: gamma must be finite and >= 0");
        if (!(lambda > 0.0) || !std::isfinite(lambda)) throw UsageError("KdConfig: lambda must be finite and > 0");
    }
};

struct DkdConfig {
    double alpha_dkd = 1.0;
    double beta_dkd = 1.0;

    void validate() const {
        if (!std::isfinite(alpha_dkd) || !std::isfinite(beta_dkd) || alpha_dkd < 0.0 || beta_dkd < 0.0)
            throw UsageError("DkdConfig: weights must be finite and >= 0");
    }
};

// L = -V_t log S_t. Gradient uses the softmax-CE identity, i.e. it is the
// gradient w.r.t. the logits that produced S.
inline LossResult ce_loss(const ProbVector& S, std::size_t t, double v_t) {
    if (t >= S.size()) throw UsageError("ce_loss: target index out of range");
    if (!(v_t > 0.0) || v_t > 1.0) throw UsageError("ce_loss: V_t must be in (0,1]");
    LossResult r;
    r.value = -v_t * log_floored(S[t], r.clamped);
    r.grad_student_logits.resize(S.size());
    for (std::size_t j = 0; j < S.size(); ++j)
        r.grad_student_logits[j] = v_t * (S[j] - (j == t ? 1.0 : 0.0));
    return r;
}

// L = -sum_i T_i log S_i (cross entropy of the teacher against the student)
inline LossResult kd_loss(const ProbVector& T, const ProbVector& S) {
    if (T.size() != S.size()) throw UsageError("kd_loss: class count mismatch");
    LossResult r;
    r.grad_student_logits.resize(S.size());
    for (std::size_t i = 0; i < S.size(); ++i) {
        if (T[i] > 0.0) r.value -= T[i] * log_floored(S[i], r.clamped);
        r.grad_student_logits[i] = S[i] - T[i];
    }
    return r;
}

// target / non-target split of kd_loss; the two terms sum to kd_loss exactly
inline std::pair<double, double> kd_decomposed(const ProbVector& T, const ProbVector& S, std::size_t t) {
    if (T.size() != S.size()) throw UsageError("kd_decomposed: class count mismatch");
    if (t >= S.size()) throw UsageError("kd_decomposed: target index out of range");
    bool clamped = false;
    double target = T[t] > 0.0 ? -T[t] * log_floored(S[t], clamped) : 0.0;
    double nontarget = 0.0;
    for (std::size_t i = 0; i < S.size(); ++i)
        if (i != t && T[i] > 0.0) nontarget -= T[i] * log_floored(S[i], clamped);
    return {target, nontarget};
}

namespace detail {

// Tempered student non-target distribution plus the chain-rule factor that
// maps d/d(renormalized probs) onto d/d(logits). Classical temperature
// differentiates through softmax(z/lambda): factor 1/lambda. The literal
// power reading differentiates through N(softmax(z)^lambda): factor lambda.
struct TemperedStudent {
    ProbVector nontarget; // renormalized, ascending class order without t
    double grad_factor;
};

inline TemperedStudent temper_student(const LogitVector& logits, std::size_t t, double lambda,
                                      bool literal_power) {
    if (literal_power) {
        ProbVector plain(softmax_raw(logits.values, 1.0));
        return {nontarget_renormalize(temper_probs(plain, lambda, true), t), lambda};
    }
    ProbVector tempered(softmax_raw(logits.values, lambda));
    return {nontarget_renormalize(tempered, t), 1.0 / lambda};
}

} // namespace detail

// Eq.-4 style loss: -T_t log S_t + gamma * lambda^2 * CE(N(T), N(S)) with
// both non-target distributions tempered and renormalized. The non-target
// gradient lives only on non-target logits and vanishes when N(T) == N(S).
inline LossResult nkd_loss(const ProbVector& T, const ProbVector& S, const LogitVector& logits,
                           std::size_t t, const KdConfig& cfg) {
    cfg.validate();
    if (T.size() != S.size() || S.size() != logits.size())
        throw UsageError("nkd_loss: class count mismatch");
    if (t >= S.size()) throw UsageError("nkd_loss: target index out of range");

    LossResult r;
    r.grad_student_logits.assign(S.size(), 0.0);

    // target term, untempered
    r.value = -T[t] * log_floored(S[t], r.clamped);
    for (std::size_t j = 0; j < S.size(); ++j)
        r.grad_student_logits[j] += T[t] * (S[j] - (j == t ? 1.0 : 0.0));

    // gamma = 0 drops the non-target term entirely, so one-hot teachers are
    // fine in that configuration
    if (cfg.gamma == 0.0) return r;
    if (1.0 - T[t] < kDegenerateEps || 1.0 - S[t] < kDegenerateEps)
        throw DegenerateTarget("nkd_loss: all probability mass on target class");

    ProbVector teacher_nt =
        nontarget_renormalize(temper_probs(T, cfg.lambda, cfg.literal_power_temperature), t);
    detail::TemperedStudent student =
        detail::temper_student(logits, t, cfg.lambda, cfg.literal_power_temperature);

    double mult = cfg.gamma * cfg.lambda * cfg.lambda;
    double ce_nt = 0.0;
    std::size_t k = 0;
    for (std::size_t j = 0; j < S.size(); ++j) {
        if (j == t) continue;
        if (teacher_nt[k] > 0.0) ce_nt -= teacher_nt[k] * log_floored(student.nontarget[k], r.clamped);
        r.grad_student_logits[j] += mult * student.grad_factor * (student.nontarget[k] - teacher_nt[k]);
        ++k;
    }
    r.value += mult * ce_nt;
    return r;
}

// Eq. 5: L_all = L_ori + L_nkd
inline LossResult total_kd_objective(const ProbVector& S, const ProbVector& T, const LogitVector& logits,
                                     std::size_t t, double v_t, const KdConfig& cfg) {
    LossResult ce = ce_loss(S, t, v_t);
    LossResult nkd = nkd_loss(T, S, logits, t, cfg);
    LossResult r;
    r.value = ce.value + nkd.value;
    r.clamped = ce.clamped || nkd.clamped;
    r.grad_student_logits.resize(S.size());
    for (std::size_t j = 0; j < S.size(); ++j)
        r.grad_student_logits[j] = ce.grad_student_logits[j] + nkd.grad_student_logits[j];
    return r;
}

// DKD: alpha * (-T_t log S_t - (1-T_t) log(1-S_t)) + beta * (-sum T^ log S^)
inline LossResult dkd_loss(const ProbVector& T, const ProbVector& S, std::size_t t, const DkdConfig& cfg) {
    cfg.validate();
    if (T.size() != S.size()) throw UsageError("dkd_loss: class count mismatch");
    if (t >= S.size()) throw UsageError("dkd_loss: target index out of range");
    if (1.0 - T[t] < kDegenerateEps || 1.0 - S[t] < kDegenerateEps)
        throw DegenerateTarget("dkd_loss: all probability mass on target class");

    LossResult r;
    r.grad_student_logits.assign(S.size(), 0.0);

    double tckd = -T[t] * log_floored(S[t], r.clamped) - (1.0 - T[t]) * log_floored(1.0 - S[t], r.clamped);
    double dtckd_dst = -T[t] / std::max(S[t], 1e-30) + (1.0 - T[t]) / std::max(1.0 - S[t], 1e-30);
    for (std::size_t j = 0; j < S.size(); ++j)
        r.grad_student_logits[j] += cfg.alpha_dkd * dtckd_dst * S[t] * ((j == t ? 1.0 : 0.0) - S[j]);

    ProbVector t_hat = nontarget_renormalize(T, t);
    ProbVector s_hat = nontarget_renormalize(S, t);
    double nckd = 0.0;
    std::size_t k = 0;
    for (std::size_t j = 0; j < S.size(); ++j) {
        if (j == t) continue;
        if (t_hat[k] > 0.0) nckd -= t_hat[k] * log_floored(s_hat[k], r.clamped);
        r.grad_student_logits[j] += cfg.beta_dkd * (s_hat[k] - t_hat[k]);
        ++k;
    }
    r.value = cfg.alpha_dkd * tckd + cfg.beta_dkd * nckd;
    return r;
}

struct T1T2 {
    double t1 = 0.0; // -T_t log S_t
    double t2 = 0.0; // -(1-T_t) log(1-S_t)
    bool clamped = false;
};

inline T1T2 t1_t2_terms(double t_t, double s_t) {
    T1T2 r;
    r.t1 = -t_t * log_floored(s_t, r.clamped);
    r.t2 = -(1.0 - t_t) * log_floored(1.0 - s_t, r.clamped);
    return r;
}

} // namespace nkd
