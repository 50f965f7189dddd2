#pragma once
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>

#include "nkd/errors.hpp"
#include "nkd/types.hpp"

// Numeric primitives shared by the loss modules and the networks: stable
// softmax, non-target renormalization, and the central-difference oracle.

namespace nkd {

// 1 - p[t] below this is treated as "all mass on the target".
constexpr double kDegenerateEps = 1e-12;

inline Vec softmax_raw(const Vec& z, double temperature) {
    double m = *std::max_element(z.begin(), z.end());
    Vec out(z.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        out[i] = std::exp((z[i] - m) / temperature);
        sum += out[i];
    }
    for (double& x : out) x /= sum;
    return out;
}

// Max-subtracted softmax of z / temperature.
inline ProbVector softmax_stable(const LogitVector& z, double temperature) {
    if (!(temperature > 0.0)) throw UsageError("softmax_stable: temperature must be > 0");
    return ProbVector(softmax_raw(z.values, temperature));
}

// Restrict p to the non-target classes and rescale to sum 1. Output is in
// ascending class order with class t removed.
inline ProbVector nontarget_renormalize(const ProbVector& p, std::size_t t) {
    if (t >= p.size()) throw UsageError("nontarget_renormalize: target index out of range");
    if (p.size() < 2) throw UsageError("nontarget_renormalize: need at least 2 classes");
    double rest = 1.0 - p[t];
    if (rest < kDegenerateEps)
        throw DegenerateTarget("nontarget_renormalize: all probability mass on target class");
    Vec out;
    out.reserve(p.size() - 1);
    for (std::size_t i = 0; i < p.size(); ++i)
        if (i != t) out.push_back(p[i] / rest);
    return ProbVector(std::move(out));
}

// Temperature applied to a probability vector. Classical reading: probs to
// the power 1/lambda, renormalized (identical to softmax of logits/lambda).
// The literal Eq.-4 power reading (probs^lambda) sits behind the flag.
inline ProbVector temper_probs(const ProbVector& p, double temperature, bool literal_power = false) {
    if (!(temperature > 0.0)) throw UsageError("temper_probs: temperature must be > 0");
    double expo = literal_power ? temperature : 1.0 / temperature;
    Vec out(p.values);
    double sum = 0.0;
    for (double& x : out) {
        x = std::pow(x, expo);
        sum += x;
    }
    if (!(sum > 0.0) || !std::isfinite(sum))
        throw NumericalError("temper_probs: tempered mass not positive finite");
    for (double& x : out) x /= sum;
    return ProbVector(std::move(out));
}

// Central finite difference (f(x+h e_i) - f(x-h e_i)) / 2h per coordinate.
// The independent oracle for every analytic-gradient claim in the suite.
inline Vec finite_diff_grad(const std::function<double(const Vec&)>& f, const Vec& x, double h) {
    Vec g(x.size());
    Vec xp = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double orig = xp[i];
        xp[i] = orig + h;
        double fp = f(xp);
        xp[i] = orig - h;
        double fm = f(xp);
        xp[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

// relative error with a small absolute floor so near-zero pairs compare sanely
inline double rel_error(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

inline double max_rel_error(const Vec& a, const Vec& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, rel_error(a[i], b[i]));
    return worst;
}

inline std::size_t argmax_lowest(const Vec& v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

} // namespace nkd
