#pragma once
#include <cstdio>
#include <string>
#include <vector>

#include "nkd/harness.hpp"

// Gradient audit for a configured recipe: finite differences against the
// analytic gradients, both at the logits and through the network parameters.

namespace nkd {

struct GradcheckReport {
    double max_rel_err = 0.0;
    double matched_nontarget_norm = 0.0; // nkd: grad at N(T)=N(S), should vanish
    int probes = 0;
    bool pass = false;
    std::vector<std::string> lines;

    void note(const std::string& line) { lines.push_back(line); }
};

inline GradcheckReport gradcheck(ExperimentConfig cfg) {
    // any recipe is auditable; a missing teacher checkpoint is fine here
    if (!cfg.seed_set) throw ConfigError("config: seed is mandatory");
    cfg.kd.validate();
    cfg.dkd.validate();
    cfg.uskd.validate();
    GradcheckReport report;

    NetSpec spec = cfg.student;
    if (spec.in_channels == 0) {
        spec.in_channels = 1;
        spec.in_h = 16;
        spec.in_w = 16;
    }
    spec.validate();
    int classes = spec.num_classes;
    const int batch = 6;
    const double h = 1e-5;

    Rng input_rng(derive_seed(cfg.seed, "gradcheck/input"));
    Tensor input = Tensor::zeros({batch, spec.in_channels, spec.in_h, spec.in_w});
    for (double& v : input.data) v = input_rng.uniform(-1.5, 1.5);
    std::vector<int> targets(batch);
    for (int& t : targets) t = static_cast<int>(input_rng.below(classes));

    ParamSet params = init_params(spec, derive_seed(cfg.seed, "init/student"));
    bool uskd = cfg.recipe == Recipe::uskd;
    if (uskd)
        harness_detail::append_weak_head_params(params, classes, spec.tap_feature_dim(), cfg.seed);

    // a teacher checkpoint is used when given; otherwise a random teacher of
    // twice the width stands in, which is enough for a gradient audit
    bool with_teacher = cfg.needs_teacher() || cfg.recipe == Recipe::kd ||
                        cfg.recipe == Recipe::nkd || cfg.recipe == Recipe::dkd;
    std::vector<Vec> trows;
    if (with_teacher) {
        NetSpec tspec = spec;
        if (!cfg.teacher_checkpoint.empty()) {
            Checkpoint ck = load_checkpoint(cfg.teacher_checkpoint);
            tspec = ck.spec;
            if (tspec.num_classes != classes)
                throw ConfigError("gradcheck: teacher class count mismatch");
            Tensor tl = forward_eval(tspec, ck.params, input);
            for (int b = 0; b < batch; ++b) {
                Vec row(tl.data.begin() + static_cast<std::size_t>(b) * classes,
                        tl.data.begin() + static_cast<std::size_t>(b + 1) * classes);
                trows.push_back(softmax_raw(row, 1.0));
            }
        } else {
            for (int& w : tspec.stage_widths) w *= 2;
            ParamSet tparams = init_params(tspec, derive_seed(cfg.seed, "gradcheck/teacher"));
            Tensor tl = forward_eval(tspec, tparams, input);
            for (int b = 0; b < batch; ++b) {
                Vec row(tl.data.begin() + static_cast<std::size_t>(b) * classes,
                        tl.data.begin() + static_cast<std::size_t>(b + 1) * classes);
                trows.push_back(softmax_raw(row, 1.0));
            }
        }
    }

    Vec zipf = zipf_distribution(static_cast<std::size_t>(classes) - 1);

    // base pass: analytic gradients and the captured detached state
    TapeForward base = forward_with_tap(spec, params, input);
    WeakHead weak;
    const Tensor* tap = nullptr;
    if (uskd) {
        weak = harness_detail::weak_head_from_params(params, classes, spec.tap_feature_dim());
        tap = &base.tape.value(base.tap_node);
    }
    FrozenUskd frozen;
    StepInputs si{cfg, base.tape.value(base.logits_node), tap,          targets,
                  with_teacher ? &trows : nullptr,        uskd ? &weak : nullptr,
                  &zipf,                                  nullptr,      uskd ? &frozen : nullptr};
    BatchLossResult analytic = batch_loss(si);

    base.tape.seed_grad(base.logits_node, analytic.grad_logits);
    if (!analytic.grad_tap.empty()) base.tape.seed_grad(base.tap_node, analytic.grad_tap);
    base.tape.run_backward();
    ParamSet grads = grads_like(params);
    for (auto& [name, node] : base.param_nodes) grads.find(name)->values = base.tape.grad(node).data;
    if (uskd) {
        grads.find(harness_detail::kWeakWeightName)->values = analytic.grad_weak_weight;
        grads.find(harness_detail::kWeakBiasName)->values = analytic.grad_weak_bias;
    }

    // loss closure with detached quantities pinned to the base pass
    auto loss_at_params = [&](const ParamSet& p) {
        TapeForward f = forward_with_tap(spec, p, input);
        WeakHead wh;
        const Tensor* tp = nullptr;
        if (uskd) {
            wh = harness_detail::weak_head_from_params(p, classes, spec.tap_feature_dim());
            tp = &f.tape.value(f.tap_node);
        }
        StepInputs s{cfg,   f.tape.value(f.logits_node),     tp,
                     targets, with_teacher ? &trows : nullptr, uskd ? &wh : nullptr,
                     &zipf,  uskd ? &frozen : nullptr,        nullptr};
        return batch_loss(s).total;
    };

    // logits-level probes (every coordinate of the batch logits)
    {
        const Tensor& logits = base.tape.value(base.logits_node);
        auto loss_at_logits = [&](const Vec& data) {
            Tensor lt({batch, classes}, data);
            StepInputs s{cfg,   lt,                              tap,
                         targets, with_teacher ? &trows : nullptr, uskd ? &weak : nullptr,
                         &zipf,  uskd ? &frozen : nullptr,        nullptr};
            return batch_loss(s).total;
        };
        Vec fd = finite_diff_grad(loss_at_logits, logits.data, h);
        double err = max_rel_error(analytic.grad_logits, fd);
        report.max_rel_err = std::max(report.max_rel_err, err);
        report.probes += static_cast<int>(fd.size());
        char buf[128];
        std::snprintf(buf, sizeof(buf), "logits      : %3d probes, max rel err %.3e",
                      static_cast<int>(fd.size()), err);
        report.note(buf);
    }

    // parameter-level probes: ~60 coordinates spread across every array
    {
        Rng pick(derive_seed(cfg.seed, "gradcheck/sample"));
        int per_entry = std::max<int>(1, 60 / static_cast<int>(params.entries.size()));
        double worst = 0.0;
        int probes = 0;
        for (std::size_t e = 0; e < params.entries.size(); ++e) {
            for (int k = 0; k < per_entry; ++k) {
                std::size_t coord = pick.below(params.entries[e].values.size());
                double orig = params.entries[e].values[coord];
                params.entries[e].values[coord] = orig + h;
                double up = loss_at_params(params);
                params.entries[e].values[coord] = orig - h;
                double down = loss_at_params(params);
                params.entries[e].values[coord] = orig;
                double fd = (up - down) / (2.0 * h);
                worst = std::max(worst, rel_error(grads.entries[e].values[coord], fd));
                ++probes;
            }
        }
        report.max_rel_err = std::max(report.max_rel_err, worst);
        report.probes += probes;
        char buf[128];
        std::snprintf(buf, sizeof(buf), "parameters  : %3d probes, max rel err %.3e", probes,
                      worst);
        report.note(buf);
    }

    // nkd: the non-target gradient vanishes at matched renormalized
    // distributions (softmax-CE stationarity)
    if (cfg.recipe == Recipe::nkd) {
        Rng rng(derive_seed(cfg.seed, "gradcheck/matched"));
        double worst = 0.0;
        for (int trial = 0; trial < 20; ++trial) {
            Vec z(classes);
            for (double& v : z) v = rng.uniform(-2.0, 2.0);
            LogitVector logits(z);
            ProbVector S = softmax_stable(logits, 1.0);
            std::size_t t = rng.below(classes);
            ProbVector tempered = softmax_stable(logits, cfg.kd.lambda);
            double t_target = rng.uniform(0.2, 0.8);
            Vec tv(classes);
            double mass = 0.0;
            for (int i = 0; i < classes; ++i)
                if (static_cast<std::size_t>(i) != t) mass += std::pow(tempered[i], cfg.kd.lambda);
            for (int i = 0; i < classes; ++i)
                tv[i] = static_cast<std::size_t>(i) == t
                            ? t_target
                            : (1.0 - t_target) * std::pow(tempered[i], cfg.kd.lambda) / mass;
            LossResult r = nkd_loss(ProbVector(tv), S, logits, t, cfg.kd);
            for (int j = 0; j < classes; ++j) {
                if (static_cast<std::size_t>(j) == t) continue;
                worst = std::max(worst, std::abs(r.grad_student_logits[j] - t_target * S[j]));
            }
        }
        report.matched_nontarget_norm = worst;
        char buf[128];
        std::snprintf(buf, sizeof(buf), "nkd matched : non-target grad at N(T)=N(S) %.3e", worst);
        report.note(buf);
    }

    if (uskd) {
        // gradient partition: the backbone gradient must not react to the
        // weak loss unless the backbone flag is set
        ExperimentConfig other = cfg;
        other.uskd.mu = std::min(1.0, cfg.uskd.mu * 7.0 + 0.01);
        StepInputs s2{other, base.tape.value(base.logits_node), tap,          targets,
                      with_teacher ? &trows : nullptr,          &weak,        &zipf,
                      uskd ? &frozen : nullptr,                 nullptr};
        BatchLossResult alt = batch_loss(s2);
        double gap = 0.0;
        for (std::size_t i = 0; i < analytic.grad_logits.size(); ++i)
            gap = std::max(gap, std::abs(analytic.grad_logits[i] - alt.grad_logits[i]));
        report.note("uskd        : backbone grad shift under mu change " +
                    std::to_string(gap) + (cfg.uskd.weak_grad_to_backbone ? " (flag on)" : ""));
        if (!cfg.uskd.weak_grad_to_backbone && gap != 0.0) report.max_rel_err = 1.0;
    }

    report.pass = report.max_rel_err <= 1e-4 &&
                  (cfg.recipe != Recipe::nkd || report.matched_nontarget_norm <= 1e-9);
    return report;
}

} // namespace nkd
