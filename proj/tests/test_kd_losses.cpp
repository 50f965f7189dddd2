#include <gtest/gtest.h>

#include <cmath>

#include "nkd/kd_losses.hpp"
#include "nkd/numeric.hpp"
#include "nkd/rng.hpp"

using namespace nkd;

// Golden constants below were produced by tests/oracle/derive_constants.py
// (mpmath, 50 digits) and are locked at 1e-9.
namespace {

constexpr double kLn2 = 0.693147180559945;

ProbVector random_probs(Rng& rng, std::size_t classes, double spread = 3.0) {
    Vec z(classes);
    for (double& v : z) v = rng.uniform(-spread, spread);
    return ProbVector(softmax_raw(z, 1.0));
}

LogitVector random_logits(Rng& rng, std::size_t classes, double spread = 3.0) {
    Vec z(classes);
    for (double& v : z) v = rng.uniform(-spread, spread);
    return LogitVector(z);
}

} // namespace

TEST(CeLoss, Examples) {
    EXPECT_NEAR(ce_loss(ProbVector({1.0, 0.0}), 0, 1.0).value, 0.0, 1e-15);
    EXPECT_NEAR(ce_loss(ProbVector({0.5, 0.5}), 0, 1.0).value, kLn2, 1e-9);
    EXPECT_NEAR(ce_loss(ProbVector({0.5, 0.5}), 0, 0.8).value, 0.554517744447956, 1e-9);
}

TEST(CeLoss, ClampsZeroProbabilityWithWarning) {
    LossResult r = ce_loss(ProbVector({0.0, 1.0}), 0, 1.0);
    EXPECT_TRUE(r.clamped);
    EXPECT_TRUE(std::isfinite(r.value));
}

TEST(CeLoss, GradientMatchesFiniteDifferences) {
    Rng rng(11);
    for (int trial = 0; trial < 30; ++trial) {
        LogitVector z = random_logits(rng, 10);
        std::size_t t = rng.below(10);
        double v_t = rng.uniform(0.5, 1.0);
        LossResult r = ce_loss(softmax_stable(z, 1.0), t, v_t);
        auto f = [&](const Vec& x) {
            return ce_loss(ProbVector(softmax_raw(x, 1.0)), t, v_t).value;
        };
        Vec fd = finite_diff_grad(f, z.values, 1e-5);
        EXPECT_LT(max_rel_error(r.grad_student_logits, fd), 1e-4);
    }
}

TEST(KdLoss, Examples) {
    EXPECT_NEAR(kd_loss(ProbVector({0.5, 0.5}), ProbVector({0.5, 0.5})).value, kLn2, 1e-9);
    EXPECT_NEAR(kd_loss(ProbVector({1.0, 0.0}), ProbVector({0.5, 0.5})).value, kLn2, 1e-9);
    EXPECT_NEAR(kd_loss(ProbVector({0.7, 0.2, 0.1}), ProbVector({0.5, 0.3, 0.2})).value,
                0.886941378500559, 1e-9);
}

TEST(KdDecomposed, Examples) {
    auto [t1, n1] = kd_decomposed(ProbVector({1.0, 0.0}), ProbVector({0.5, 0.5}), 0);
    EXPECT_NEAR(t1, kLn2, 1e-9);
    EXPECT_NEAR(n1, 0.0, 1e-15);

    auto [t2, n2] = kd_decomposed(ProbVector({0.5, 0.25, 0.25}), ProbVector({0.5, 0.25, 0.25}), 0);
    EXPECT_NEAR(t2, 0.346573590279973, 1e-9);
    EXPECT_NEAR(n2, kLn2, 1e-9);

    auto [t3, n3] = kd_decomposed(ProbVector({0.7, 0.2, 0.1}), ProbVector({0.5, 0.3, 0.2}), 0);
    EXPECT_NEAR(t3, 0.485203026391962, 1e-9);
    EXPECT_NEAR(n3, 0.401738352108597, 1e-9);
}

TEST(KdDecomposed, IdentityOnRandomTriples) {
    Rng rng(12);
    for (std::size_t classes : {3u, 10u, 100u}) {
        for (int trial = 0; trial < 1000; ++trial) {
            ProbVector T = random_probs(rng, classes);
            ProbVector S = random_probs(rng, classes);
            std::size_t t = rng.below(classes);
            auto [target, nontarget] = kd_decomposed(T, S, t);
            EXPECT_NEAR(target + nontarget, kd_loss(T, S).value, 1e-12);
        }
    }
}

TEST(KdLoss, GradientMatchesFiniteDifferences) {
    Rng rng(13);
    for (int trial = 0; trial < 30; ++trial) {
        LogitVector z = random_logits(rng, 10);
        ProbVector T = random_probs(rng, 10);
        LossResult r = kd_loss(T, softmax_stable(z, 1.0));
        auto f = [&](const Vec& x) { return kd_loss(T, ProbVector(softmax_raw(x, 1.0))).value; };
        Vec fd = finite_diff_grad(f, z.values, 1e-5);
        EXPECT_LT(max_rel_error(r.grad_student_logits, fd), 1e-4);
    }
}

TEST(NkdLoss, Examples) {
    KdConfig cfg{1.0, 1.0};
    ProbVector even({0.5, 0.25, 0.25});
    LogitVector logits({std::log(0.5), std::log(0.25), std::log(0.25)});
    EXPECT_NEAR(nkd_loss(even, even, logits, 0, cfg).value, 1.039720770839918, 1e-9);

    ProbVector T({0.7, 0.2, 0.1});
    ProbVector S({0.5, 0.3, 0.2});
    LogitVector z({std::log(0.5), std::log(0.3), std::log(0.2)});
    EXPECT_NEAR(nkd_loss(T, S, z, 0, cfg).value, 1.13118368619401, 1e-9);

    KdConfig cfg15{1.5, 1.0};
    EXPECT_NEAR(nkd_loss(T, S, z, 0, cfg15).value, 1.45417401609503, 1e-9);
}

TEST(NkdLoss, DegenerateTeacherRejected) {
    KdConfig cfg;
    ProbVector degenerate({1.0, 0.0});
    ProbVector fine({0.5, 0.5});
    LogitVector z({0.0, 0.0});
    EXPECT_THROW(nkd_loss(degenerate, fine, z, 0, cfg), DegenerateTarget);
}

TEST(NkdLoss, GradientMatchesFiniteDifferences) {
    Rng rng(14);
    for (KdConfig cfg : {KdConfig{1.0, 1.0}, KdConfig{1.5, 2.0}, KdConfig{0.7, 4.0},
                         KdConfig{1.5, 2.0, true}}) {
        for (int trial = 0; trial < 20; ++trial) {
            LogitVector z = random_logits(rng, 10);
            ProbVector T = random_probs(rng, 10);
            std::size_t t = rng.below(10);
            LossResult r = nkd_loss(T, softmax_stable(z, 1.0), z, t, cfg);
            auto f = [&](const Vec& x) {
                LogitVector lv(x);
                return nkd_loss(T, softmax_stable(lv, 1.0), lv, t, cfg).value;
            };
            Vec fd = finite_diff_grad(f, z.values, 1e-5);
            EXPECT_LT(max_rel_error(r.grad_student_logits, fd), 1e-4)
                << "gamma=" << cfg.gamma << " lambda=" << cfg.lambda
                << " literal=" << cfg.literal_power_temperature;
        }
    }
}

// the non-target part of the gradient vanishes when the renormalized
// tempered distributions coincide
TEST(NkdLoss, NonTargetGradientZeroAtMatchedDistributions) {
    Rng rng(15);
    for (double lambda : {1.0, 2.0}) {
        for (int trial = 0; trial < 50; ++trial) {
            std::size_t classes = 3 + rng.below(8);
            LogitVector z = random_logits(rng, classes);
            ProbVector S = softmax_stable(z, 1.0);
            std::size_t t = rng.below(classes);
            ProbVector tempered = softmax_stable(z, lambda);

            // teacher non-target mass proportional to the student's tempered
            // probabilities raised to lambda => tempered distributions match
            double t_target = rng.uniform(0.2, 0.8);
            Vec tv(classes);
            double mass = 0.0;
            for (std::size_t i = 0; i < classes; ++i)
                if (i != t) mass += std::pow(tempered[i], lambda);
            for (std::size_t i = 0; i < classes; ++i)
                tv[i] = i == t ? t_target
                               : (1.0 - t_target) * std::pow(tempered[i], lambda) / mass;
            ProbVector T(tv);

            KdConfig cfg{1.3, lambda};
            LossResult r = nkd_loss(T, S, z, t, cfg);
            for (std::size_t j = 0; j < classes; ++j) {
                if (j == t) continue;
                double target_part = T[t] * S[j];
                EXPECT_NEAR(r.grad_student_logits[j] - target_part, 0.0, 1e-9);
            }
        }
    }
}

// CE(N(T), N(S)) over student non-target distributions is minimized at
// N(S) = N(T): Gibbs' inequality against the entropy of N(T)
TEST(NkdLoss, NonTargetTermMinimizedAtTeacher) {
    Rng rng(16);
    for (int trial = 0; trial < 200; ++trial) {
        std::size_t classes = 3 + rng.below(10);
        ProbVector T = random_probs(rng, classes);
        ProbVector S = random_probs(rng, classes);
        std::size_t t = rng.below(classes);
        ProbVector tn = nontarget_renormalize(T, t);
        ProbVector sn = nontarget_renormalize(S, t);
        double ce = 0.0, entropy = 0.0;
        for (std::size_t k = 0; k + 1 < classes; ++k) {
            ce -= tn[k] * std::log(sn[k]);
            entropy -= tn[k] * std::log(tn[k]);
        }
        EXPECT_GE(ce, entropy - 1e-9);
    }
    // equality case
    ProbVector T({0.5, 0.3, 0.2});
    ProbVector tn = nontarget_renormalize(T, 0);
    double ce_eq = 0.0, h = 0.0;
    for (std::size_t k = 0; k < 2; ++k) {
        ce_eq -= tn[k] * std::log(tn[k]);
        h -= tn[k] * std::log(tn[k]);
    }
    EXPECT_NEAR(ce_eq, h, 1e-9);
}

TEST(NkdLoss, DoublingGammaDoublesNonTargetContribution) {
    Rng rng(17);
    for (int trial = 0; trial < 100; ++trial) {
        LogitVector z = random_logits(rng, 10);
        ProbVector T = random_probs(rng, 10);
        ProbVector S = softmax_stable(z, 1.0);
        std::size_t t = rng.below(10);
        double gamma = rng.uniform(0.2, 2.0);
        double v0 = nkd_loss(T, S, z, t, {0.0, 1.0}).value;
        double v1 = nkd_loss(T, S, z, t, {gamma, 1.0}).value;
        double v2 = nkd_loss(T, S, z, t, {2.0 * gamma, 1.0}).value;
        EXPECT_NEAR(v2 - v1, v1 - v0, 1e-12);
    }
}

TEST(TotalKdObjective, AdditivityAndDegenerateConfig) {
    Rng rng(18);
    for (int trial = 0; trial < 50; ++trial) {
        LogitVector z = random_logits(rng, 10);
        ProbVector T = random_probs(rng, 10);
        ProbVector S = softmax_stable(z, 1.0);
        std::size_t t = rng.below(10);
        KdConfig cfg{1.5, 1.0};
        LossResult total = total_kd_objective(S, T, z, t, 1.0, cfg);
        double parts = ce_loss(S, t, 1.0).value + nkd_loss(T, S, z, t, cfg).value;
        EXPECT_NEAR(total.value, parts, 1e-12);
    }

    // gamma=0, lambda=1, one-hot teacher collapses to exactly twice the CE
    // loss (the non-target term is dropped, so the one-hot teacher is legal)
    LogitVector z({0.3, -0.2, 0.9});
    ProbVector S = softmax_stable(z, 1.0);
    LossResult total = total_kd_objective(S, ProbVector({0.0, 1.0, 0.0}), z, 1, 1.0, {0.0, 1.0});
    EXPECT_NEAR(total.value, 2.0 * ce_loss(S, 1, 1.0).value, 1e-12);
}

TEST(TotalKdObjective, ComponentsExample) {
    // components (0.693147, 1.039721) -> 1.732868
    ProbVector even({0.5, 0.25, 0.25});
    LogitVector logits({std::log(0.5), std::log(0.25), std::log(0.25)});
    ProbVector half({0.5, 0.25, 0.25});
    LossResult r = total_kd_objective(half, even, logits, 0, 1.0, {1.0, 1.0});
    EXPECT_NEAR(r.value, kLn2 + 1.039720770839918, 1e-9);
}

TEST(DkdLoss, OneHotTeacherIsDegenerate) {
    EXPECT_THROW(dkd_loss(ProbVector({1.0, 0.0, 0.0}), ProbVector({0.5, 0.3, 0.2}), 0, {1.0, 1.0}),
                 DegenerateTarget);
}

TEST(DkdLoss, ReconstructsKdWithPerSampleBeta) {
    ProbVector T({0.7, 0.2, 0.1});
    ProbVector S({0.5, 0.3, 0.2});
    DkdConfig cfg{1.0, 1.0 - 0.7};
    EXPECT_NEAR(dkd_loss(T, S, 0, cfg).value, 0.886941378500559, 1e-9);
    EXPECT_NEAR(dkd_loss(T, S, 0, cfg).value, kd_loss(T, S).value, 1e-12);
}

TEST(DkdLoss, SymmetricBinaryTckd) {
    ProbVector even({0.5, 0.25, 0.25});
    EXPECT_NEAR(dkd_loss(even, even, 0, {1.0, 0.0}).value, kLn2, 1e-9);
}

TEST(DkdLoss, IdentityOnRandomTriples) {
    Rng rng(19);
    for (std::size_t classes : {3u, 10u, 100u}) {
        for (int trial = 0; trial < 1000; ++trial) {
            ProbVector T = random_probs(rng, classes);
            ProbVector S = random_probs(rng, classes);
            std::size_t t = rng.below(classes);
            DkdConfig cfg{1.0, 1.0 - T[t]};
            EXPECT_NEAR(dkd_loss(T, S, t, cfg).value, kd_loss(T, S).value, 1e-12);
        }
    }
}

TEST(DkdLoss, GradientMatchesFiniteDifferences) {
    Rng rng(20);
    for (int trial = 0; trial < 30; ++trial) {
        LogitVector z = random_logits(rng, 10);
        ProbVector T = random_probs(rng, 10);
        std::size_t t = rng.below(10);
        DkdConfig cfg{rng.uniform(0.2, 2.0), rng.uniform(0.2, 2.0)};
        LossResult r = dkd_loss(T, softmax_stable(z, 1.0), t, cfg);
        auto f = [&](const Vec& x) {
            return dkd_loss(T, ProbVector(softmax_raw(x, 1.0)), t, cfg).value;
        };
        Vec fd = finite_diff_grad(f, z.values, 1e-5);
        EXPECT_LT(max_rel_error(r.grad_student_logits, fd), 1e-4);
    }
}

TEST(T1T2Terms, Examples) {
    T1T2 a = t1_t2_terms(1.0, 0.5);
    EXPECT_NEAR(a.t1, kLn2, 1e-9);
    EXPECT_NEAR(a.t2, 0.0, 1e-15);

    T1T2 b = t1_t2_terms(0.7, 0.5);
    EXPECT_NEAR(b.t1, 0.485203026391962, 1e-9);
    EXPECT_NEAR(b.t2, 0.207944154167984, 1e-9);

    T1T2 c = t1_t2_terms(0.5, 0.5);
    EXPECT_NEAR(c.t1, c.t2, 1e-15);
    EXPECT_NEAR(c.t1, 0.346573590279973, 1e-9);
}

TEST(T1T2Terms, BoundaryClamps) {
    T1T2 r = t1_t2_terms(0.5, 1.0);
    EXPECT_TRUE(r.clamped);
    EXPECT_TRUE(std::isfinite(r.t2));
}
