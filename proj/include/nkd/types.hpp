#pragma once
#include <cmath>
#include <cstddef>
#include <vector>

#include "nkd/errors.hpp"

namespace nkd {

using Vec = std::vector<double>;

inline bool all_finite(const Vec& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

// Pre-softmax class scores. C >= 2, all entries finite.
struct LogitVector {
    Vec values;

    LogitVector() = default;
    explicit LogitVector(Vec v) : values(std::move(v)) {
        if (values.size() < 2) throw UsageError("LogitVector: need at least 2 classes");
        if (!all_finite(values)) throw UsageError("LogitVector: non-finite entry");
    }

    std::size_t size() const { return values.size(); }
    double operator[](std::size_t i) const { return values[i]; }
};

// Post-softmax distribution: entries >= 0, sum == 1 within 1e-9.
struct ProbVector {
    Vec values;

    ProbVector() = default;
    explicit ProbVector(Vec v) : values(std::move(v)) {
        if (values.empty()) throw UsageError("ProbVector: empty");
        double sum = 0.0;
        for (double x : values) {
            if (!(x >= 0.0) || !std::isfinite(x)) throw UsageError("ProbVector: entry outside [0,1]");
            sum += x;
        }
        if (std::abs(sum - 1.0) > 1e-9) throw UsageError("ProbVector: entries do not sum to 1");
    }

    std::size_t size() const { return values.size(); }
    double operator[](std::size_t i) const { return values[i]; }
};

// Scalar loss in nats plus its analytic gradient w.r.t. the student logits.
// `clamped` flags that a log argument hit the 1e-30 floor.
struct LossResult {
    double value = 0.0;
    Vec grad_student_logits;
    bool clamped = false;
};

// log with the documented floor; sets the flag instead of silently saturating
inline double log_floored(double p, bool& clamped) {
    constexpr double kLogFloor = 1e-30;
    if (p < kLogFloor) {
        clamped = true;
        return std::log(kLogFloor);
    }
    return std::log(p);
}

} // namespace nkd
