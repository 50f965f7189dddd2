#pragma once
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "nkd/checkpoint.hpp"
#include "nkd/config.hpp"
#include "nkd/data.hpp"
#include "nkd/kd_losses.hpp"
#include "nkd/metrics.hpp"
#include "nkd/nets.hpp"
#include "nkd/uskd.hpp"

// Experiment runner: training loops for the baseline/kd/nkd/dkd/uskd
// recipes, evaluation, the gradient-check command, and the sweep driver.

namespace nkd {

struct TeacherContext {
    NetSpec spec;
    ParamSet params;
    Vec mean, stddev;
};

namespace harness_detail {

inline constexpr const char* kWeakWeightName = "weak_fc.weight";
inline constexpr const char* kWeakBiasName = "weak_fc.bias";

// s_t softmax mass all on the target: the non-target losses are undefined
// for that sample, so the training loop drops their contribution instead of
// aborting a long run. Never fires at sane learning rates.
inline bool degenerate_target(double target_prob) { return 1.0 - target_prob < kDegenerateEps; }

// pooled feature the weak head consumes: GAP over {B,D,H,W} taps, the raw
// row for {B,D} taps (the token-vector case)
inline Vec gap_of_sample(const Tensor& tap, int b) {
    if (tap.shape.size() == 2) {
        int d = tap.dim(1);
        return Vec(tap.data.begin() + static_cast<std::size_t>(b) * d,
                   tap.data.begin() + static_cast<std::size_t>(b + 1) * d);
    }
    int d = tap.dim(1), hw = tap.dim(2) * tap.dim(3);
    Vec g(d, 0.0);
    for (int c = 0; c < d; ++c) {
        const double* row = &tap.data[tap.off4(b, c, 0, 0)];
        for (int i = 0; i < hw; ++i) g[c] += row[i];
        g[c] /= hw;
    }
    return g;
}

inline WeakHead weak_head_from_params(const ParamSet& params, int classes, int feature_dim) {
    const ParamEntry* w = params.find(kWeakWeightName);
    const ParamEntry* b = params.find(kWeakBiasName);
    if (!w || !b) throw UsageError("weak head parameters missing");
    WeakHead head;
    head.classes = classes;
    head.feature_dim = feature_dim;
    head.weight = w->values;
    head.bias = b->values;
    return head;
}

inline void append_weak_head_params(ParamSet& params, int classes, int feature_dim,
                                    std::uint64_t master_seed) {
    auto& w = params.add(kWeakWeightName, {classes, feature_dim});
    Rng rng(derive_seed(master_seed, "init/weak"));
    double bound = std::sqrt(3.0 / feature_dim);
    for (double& v : w.values) v = rng.uniform(-bound, bound);
    params.add(kWeakBiasName, {classes});
}

} // namespace harness_detail

// Mean loss over one batch plus everything the optimizer step needs.
struct BatchLossResult {
    double total = 0.0;
    double l_ori = 0.0, l_target = 0.0, l_non = 0.0, l_weak = 0.0;
    Vec grad_logits;                       // {B*C}, gradient of the batch mean
    Vec grad_weak_weight, grad_weak_bias;  // uskd only
    Vec grad_tap;                          // uskd with weak_grad_to_backbone
};

// Detached per-batch state (P_t, Z, pooled features). Captured once on the
// base pass and pinned during finite-difference probes so the probes measure
// the same function the analytic gradient differentiates.
struct FrozenUskd {
    Vec p_t;
    std::vector<Vec> z_assigned;
    std::vector<Vec> gap_rows;
};

struct StepInputs {
    const ExperimentConfig& cfg;
    const Tensor& logits;                   // {B,C}
    const Tensor* tap = nullptr;            // uskd
    const std::vector<int>& targets;
    const std::vector<Vec>* teacher_probs = nullptr; // per-sample rows
    const WeakHead* weak = nullptr;
    const Vec* zipf = nullptr;              // cached zipf_distribution(C-1)
    const FrozenUskd* frozen = nullptr;     // pin detached quantities (gradcheck)
    FrozenUskd* capture = nullptr;          // record detached quantities
};

inline BatchLossResult batch_loss(const StepInputs& in) {
    const ExperimentConfig& cfg = in.cfg;
    int batch = in.logits.dim(0);
    int classes = in.logits.dim(1);
    double inv_b = 1.0 / batch;
    BatchLossResult out;
    out.grad_logits.assign(in.logits.data.size(), 0.0);

    // per-sample softmax rows
    std::vector<Vec> s_rows(batch);
    for (int b = 0; b < batch; ++b) {
        Vec row(in.logits.data.begin() + static_cast<std::size_t>(b) * classes,
                in.logits.data.begin() + static_cast<std::size_t>(b + 1) * classes);
        s_rows[b] = softmax_raw(row, 1.0);
    }

    double v_t = 1.0;
    if (cfg.smooth_v_t)
        v_t = 1.0 - cfg.uskd.ls_epsilon + cfg.uskd.ls_epsilon / classes;

    auto add_grad_row = [&](int b, const Vec& g, double scale) {
        double* dst = &out.grad_logits[static_cast<std::size_t>(b) * classes];
        for (int j = 0; j < classes; ++j) dst[j] += scale * g[j];
    };

    switch (cfg.recipe) {
    case Recipe::baseline: {
        for (int b = 0; b < batch; ++b) {
            LossResult ce = ce_loss(ProbVector(s_rows[b]), in.targets[b], v_t);
            out.l_ori += ce.value * inv_b;
            add_grad_row(b, ce.grad_student_logits, inv_b);
        }
        out.total = out.l_ori;
        break;
    }
    case Recipe::kd: {
        double gamma = cfg.kd.gamma, lambda = cfg.kd.lambda;
        for (int b = 0; b < batch; ++b) {
            std::size_t t = in.targets[b];
            LossResult ce = ce_loss(ProbVector(s_rows[b]), t, v_t);
            out.l_ori += ce.value * inv_b;
            add_grad_row(b, ce.grad_student_logits, inv_b);

            Vec zrow(in.logits.data.begin() + static_cast<std::size_t>(b) * classes,
                     in.logits.data.begin() + static_cast<std::size_t>(b + 1) * classes);
            Vec s_temp = softmax_raw(zrow, lambda);
            ProbVector t_temp = temper_probs(ProbVector((*in.teacher_probs)[b]), lambda);
            auto [target_term, nontarget_term] = kd_decomposed(t_temp, ProbVector(s_temp), t);
            out.l_target += target_term * inv_b;
            out.l_non += nontarget_term * inv_b;
            out.total += gamma * lambda * lambda * (target_term + nontarget_term) * inv_b;
            // d/dz of lambda^2 * CE(T_l, softmax(z/l)) = lambda * (S_l - T_l)
            double* dst = &out.grad_logits[static_cast<std::size_t>(b) * classes];
            for (int j = 0; j < classes; ++j)
                dst[j] += gamma * lambda * (s_temp[j] - t_temp[j]) * inv_b;
        }
        out.total += out.l_ori;
        break;
    }
    case Recipe::nkd: {
        for (int b = 0; b < batch; ++b) {
            std::size_t t = in.targets[b];
            ProbVector S(s_rows[b]);
            LossResult ce = ce_loss(S, t, v_t);
            out.l_ori += ce.value * inv_b;
            add_grad_row(b, ce.grad_student_logits, inv_b);

            const Vec& trow = (*in.teacher_probs)[b];
            Vec zrow(in.logits.data.begin() + static_cast<std::size_t>(b) * classes,
                     in.logits.data.begin() + static_cast<std::size_t>(b + 1) * classes);
            KdConfig kd_cfg = cfg.kd;
            if (harness_detail::degenerate_target(trow[t]) ||
                harness_detail::degenerate_target(S[t]))
                kd_cfg.gamma = 0.0; // drop the undefined non-target term
            LossResult nkd = nkd_loss(ProbVector(trow), S, LogitVector(zrow), t, kd_cfg);
            bool clamped = false;
            double target_term = -trow[t] * log_floored(S[t], clamped);
            double nontarget_ce =
                kd_cfg.gamma > 0.0
                    ? (nkd.value - target_term) / (kd_cfg.gamma * kd_cfg.lambda * kd_cfg.lambda)
                    : 0.0;
            out.l_target += target_term * inv_b;
            out.l_non += nontarget_ce * inv_b;
            out.total += nkd.value * inv_b;
            add_grad_row(b, nkd.grad_student_logits, inv_b);
        }
        out.total += out.l_ori;
        break;
    }
    case Recipe::dkd: {
        for (int b = 0; b < batch; ++b) {
            std::size_t t = in.targets[b];
            ProbVector S(s_rows[b]);
            LossResult ce = ce_loss(S, t, v_t);
            out.l_ori += ce.value * inv_b;
            add_grad_row(b, ce.grad_student_logits, inv_b);

            const Vec& trow = (*in.teacher_probs)[b];
            if (harness_detail::degenerate_target(trow[t]) ||
                harness_detail::degenerate_target(S[t])) {
                // hats undefined; fall back to the always-defined TCKD part
                T1T2 terms = t1_t2_terms(trow[t], S[t]);
                double tckd = terms.t1 + terms.t2;
                out.l_target += tckd * inv_b;
                out.total += cfg.dkd.alpha_dkd * tckd * inv_b;
                double slope = -trow[t] / std::max(S[t], 1e-30) +
                               (1.0 - trow[t]) / std::max(1.0 - S[t], 1e-30);
                Vec g(classes);
                for (int j = 0; j < classes; ++j)
                    g[j] = cfg.dkd.alpha_dkd * slope * S[t] *
                           ((static_cast<std::size_t>(j) == t ? 1.0 : 0.0) - S[j]);
                add_grad_row(b, g, inv_b);
                continue;
            }
            LossResult dkd = dkd_loss(ProbVector(trow), S, t, cfg.dkd);
            T1T2 terms = t1_t2_terms(trow[t], S[t]);
            double tckd = terms.t1 + terms.t2;
            double nckd = cfg.dkd.beta_dkd > 0.0
                              ? (dkd.value - cfg.dkd.alpha_dkd * tckd) / cfg.dkd.beta_dkd
                              : 0.0;
            out.l_target += tckd * inv_b;
            out.l_non += nckd * inv_b;
            out.total += dkd.value * inv_b;
            add_grad_row(b, dkd.grad_student_logits, inv_b);
        }
        out.total += out.l_ori;
        break;
    }
    case Recipe::uskd: {
        if (!in.tap || !in.weak || !in.zipf)
            throw UsageError("uskd recipe needs the tap feature and weak head");
        const UskdConfig& u = cfg.uskd;
        int d = in.weak->feature_dim;
        out.grad_weak_weight.assign(static_cast<std::size_t>(classes) * d, 0.0);
        out.grad_weak_bias.assign(classes, 0.0);
        if (u.weak_grad_to_backbone) out.grad_tap.assign(in.tap->data.size(), 0.0);

        // soft target values are a batch-level construct
        Vec p_t;
        if (in.frozen) {
            p_t = in.frozen->p_t;
        } else {
            Vec s_t_batch(batch), v_t_batch(batch, v_t);
            for (int b = 0; b < batch; ++b) s_t_batch[b] = s_rows[b][in.targets[b]];
            Vec p_source = s_t_batch;
            if (u.smooth_variant == SmoothVariant::teacher_passthrough) {
                if (!in.teacher_probs)
                    throw UsageError("teacher_passthrough needs teacher probabilities");
                for (int b = 0; b < batch; ++b) p_source[b] = (*in.teacher_probs)[b][in.targets[b]];
            }
            p_t = soft_target_label(p_source, v_t_batch, u.smooth_variant);
        }
        if (in.capture) in.capture->p_t = p_t;

        bool spatial_tap = in.tap->shape.size() == 4;
        int hw = spatial_tap ? in.tap->dim(2) * in.tap->dim(3) : 1;
        for (int b = 0; b < batch; ++b) {
            std::size_t t = in.targets[b];
            UskdSample sample;
            Vec zrow(in.logits.data.begin() + static_cast<std::size_t>(b) * classes,
                     in.logits.data.begin() + static_cast<std::size_t>(b + 1) * classes);
            sample.student_logits = LogitVector(zrow);
            sample.S = ProbVector(s_rows[b]);
            sample.target = t;
            sample.v_t = v_t;
            sample.p_t = p_t[b];
            sample.smoothed_labels = smooth_labels(t, classes, u.ls_epsilon);

            // pooled feature: pinned by `frozen` unless the weak gradient
            // intentionally reaches the backbone
            Vec gap;
            if (in.frozen && !u.weak_grad_to_backbone) {
                gap = in.frozen->gap_rows[b];
            } else {
                gap = harness_detail::gap_of_sample(*in.tap, b);
            }
            sample.W = weak_logit(Tensor({d}, gap), *in.weak, WeakMode::vit_token);

            bool degenerate = harness_detail::degenerate_target(s_rows[b][t]) ||
                              harness_detail::degenerate_target(sample.W[t]);
            if (in.frozen) {
                sample.z_assigned = in.frozen->z_assigned[b];
                degenerate = false;
            } else if (!degenerate) {
                auto order = nontarget_rank(sample.W, sample.S, t, u.rank_variant);
                sample.z_assigned = assign_by_rank(*in.zipf, order, t, classes);
            } else {
                sample.z_assigned.assign(classes - 1, 1.0 / (classes - 1));
            }
            if (in.capture) {
                in.capture->z_assigned.push_back(sample.z_assigned);
                in.capture->gap_rows.push_back(gap);
            }

            UskdConfig sample_cfg = u;
            if (degenerate) sample_cfg.beta = 0.0; // non-target loss undefined
            UskdTotalResult r = uskd_total_loss(sample, sample_cfg);
            out.l_ori += r.l_ori * inv_b;
            out.l_target += r.l_target * inv_b;
            out.l_non += (degenerate ? 0.0 : r.l_non) * inv_b;
            out.l_weak += r.l_weak * inv_b;
            out.total += r.total.value * inv_b;
            add_grad_row(b, r.total.grad_student_logits, inv_b);

            // weak-head gradient: preactivation residual x pooled feature
            for (int c = 0; c < classes; ++c) {
                double gw = r.grad_weak_logits[c] * inv_b;
                out.grad_weak_bias[c] += gw;
                double* wrow = &out.grad_weak_weight[static_cast<std::size_t>(c) * d];
                for (int i = 0; i < d; ++i) wrow[i] += gw * gap[i];
            }
            if (u.weak_grad_to_backbone) {
                for (int i = 0; i < d; ++i) {
                    double acc = 0.0;
                    for (int c = 0; c < classes; ++c)
                        acc += r.grad_weak_logits[c] * inv_b *
                               in.weak->weight[static_cast<std::size_t>(c) * d + i];
                    double spread = acc / hw;
                    std::size_t dst_base = spatial_tap
                                               ? in.tap->off4(b, i, 0, 0)
                                               : static_cast<std::size_t>(b) * d + i;
                    double* dst = &out.grad_tap[dst_base];
                    for (int p = 0; p < hw; ++p) dst[p] += spread;
                }
            }
        }
        break;
    }
    }
    return out;
}

// fraction of argmax-correct predictions x100; argmax ties break low
inline double eval_top1(const NetSpec& spec, const ParamSet& params, const Dataset& ds,
                        const Vec& mean, const Vec& stddev, int eval_batch = 256) {
    if (ds.count == 0) throw ConfigError("eval: empty dataset");
    if (ds.max_label() >= spec.num_classes)
        throw ConfigError("eval: dataset labels exceed checkpoint class count");
    if (ds.channels != spec.in_channels || ds.height != spec.in_h || ds.width != spec.in_w)
        throw ConfigError("eval: dataset geometry does not match checkpoint spec");
    long correct = 0;
    for (int start = 0; start < ds.count; start += eval_batch) {
        int end = std::min(ds.count, start + eval_batch);
        std::vector<int> idx(end - start);
        for (int i = start; i < end; ++i) idx[i - start] = i;
        Tensor input = make_batch(ds, idx, mean, stddev);
        Tensor logits = forward_eval(spec, params, input);
        int classes = logits.dim(1);
        for (int b = 0; b < end - start; ++b) {
            Vec row(logits.data.begin() + static_cast<std::size_t>(b) * classes,
                    logits.data.begin() + static_cast<std::size_t>(b + 1) * classes);
            if (static_cast<int>(argmax_lowest(row)) == ds.labels[start + b]) ++correct;
        }
    }
    return 100.0 * static_cast<double>(correct) / ds.count;
}

namespace harness_detail {

inline Dataset load_split(const DatasetConfig& dc, bool train, Dataset::Split split) {
    const std::string& images = train ? dc.train_images : dc.test_images;
    const std::string& labels = train ? dc.train_labels : dc.test_labels;
    Dataset ds = dc.format == "cifar" ? load_cifar_binary(images, split)
                                      : load_idx(images, labels, split);
    return ds;
}

// deterministic subsample: seeded shuffle, keep the first n, restore order
inline void limit_dataset(Dataset& ds, int limit, std::uint64_t seed, const char* stream) {
    if (limit <= 0 || limit >= ds.count) return;
    std::vector<int> perm(ds.count);
    for (int i = 0; i < ds.count; ++i) perm[i] = i;
    Rng rng(derive_seed(seed, stream));
    for (int i = ds.count - 1; i > 0; --i) {
        int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i) + 1));
        std::swap(perm[i], perm[j]);
    }
    perm.resize(limit);
    std::sort(perm.begin(), perm.end());
    Dataset out;
    out.count = limit;
    out.channels = ds.channels;
    out.height = ds.height;
    out.width = ds.width;
    out.split = ds.split;
    out.images.resize(static_cast<std::size_t>(limit) * ds.image_size());
    out.labels.resize(limit);
    for (int i = 0; i < limit; ++i) {
        const double* src = ds.image(perm[i]);
        std::copy(src, src + ds.image_size(), &out.images[static_cast<std::size_t>(i) * ds.image_size()]);
        out.labels[i] = ds.labels[perm[i]];
    }
    ds = std::move(out);
}

inline TeacherContext load_teacher(const std::string& path, int student_classes) {
    Checkpoint ck = load_checkpoint(path);
    if (ck.spec.num_classes != student_classes)
        throw ConfigError("teacher checkpoint class count does not match student");
    return {ck.spec, std::move(ck.params), std::move(ck.norm_mean), std::move(ck.norm_std)};
}

inline std::vector<Vec> teacher_rows(const TeacherContext& teacher, const Dataset& ds,
                                     const std::vector<int>& idx) {
    Tensor input = make_batch(ds, idx, teacher.mean, teacher.stddev);
    Tensor logits = forward_eval(teacher.spec, teacher.params, input);
    int classes = logits.dim(1);
    std::vector<Vec> rows(idx.size());
    for (std::size_t b = 0; b < idx.size(); ++b) {
        Vec row(logits.data.begin() + b * classes, logits.data.begin() + (b + 1) * classes);
        rows[b] = softmax_raw(row, 1.0);
    }
    return rows;
}

inline double scheduled_lr(const OptimConfig& o, int epoch) {
    double lr = o.lr;
    for (int m : o.decay_epochs)
        if (epoch >= m) lr *= o.decay_factor;
    return lr;
}

} // namespace harness_detail

struct RunResult {
    MetricsRow final_row;
    std::string checkpoint_path;
    std::vector<MetricsRow> rows;
};

inline RunResult run(ExperimentConfig cfg, bool quiet = false) {
    cfg.validate(true);
    namespace fs = std::filesystem;

    Dataset train = harness_detail::load_split(cfg.dataset, true, Dataset::Split::train);
    harness_detail::limit_dataset(train, cfg.dataset.train_limit, cfg.seed, "subsample/train");
    if (cfg.dataset.test_images.empty()) throw ConfigError("config: test dataset paths are mandatory");
    Dataset test = harness_detail::load_split(cfg.dataset, false, Dataset::Split::test);
    harness_detail::limit_dataset(test, cfg.dataset.test_limit, cfg.seed, "subsample/test");

    NetSpec spec = cfg.student;
    if (spec.in_channels == 0) {
        spec.in_channels = train.channels;
        spec.in_h = train.height;
        spec.in_w = train.width;
    }
    spec.validate();
    if (train.max_label() >= spec.num_classes || test.max_label() >= spec.num_classes)
        throw ConfigError("config: dataset labels exceed the model class count");
    if (cfg.batch_size > train.count)
        throw ConfigError("config: batch_size exceeds the training set size");

    Vec mean, stddev;
    compute_norm_stats(train, mean, stddev);

    TeacherContext teacher;
    bool with_teacher = cfg.needs_teacher();
    if (with_teacher) {
        teacher = harness_detail::load_teacher(cfg.teacher_checkpoint, spec.num_classes);
        if (teacher.spec.in_channels != train.channels || teacher.spec.in_h != train.height ||
            teacher.spec.in_w != train.width)
            throw ConfigError("teacher checkpoint geometry does not match the dataset");
    }

    ParamSet params = init_params(spec, derive_seed(cfg.seed, "init/student"));
    bool uskd = cfg.recipe == Recipe::uskd;
    if (uskd)
        harness_detail::append_weak_head_params(params, spec.num_classes, spec.tap_feature_dim(),
                                                cfg.seed);
    Vec zipf = zipf_distribution(static_cast<std::size_t>(spec.num_classes) - 1);

    OptimState optim;
    optim.lr = cfg.optim.lr;
    optim.momentum = cfg.optim.momentum;
    optim.weight_decay = cfg.optim.weight_decay;

    fs::create_directories(cfg.outdir);
    std::ofstream metrics(fs::path(cfg.outdir) / "metrics.csv");
    if (!metrics) throw ConfigError("cannot write metrics under " + cfg.outdir);
    metrics << kMetricsHeader << "\n";

    RunResult result;
    auto record = [&](const MetricsRow& row) {
        metrics << to_csv(row) << "\n";
        metrics.flush();
        result.rows.push_back(row);
        result.final_row = row;
        if (!quiet)
            std::cout << "epoch " << row.epoch << " loss " << row.train_loss << " top1 "
                      << row.test_top1 << "\n";
    };

    if (cfg.epochs == 0) {
        MetricsRow row;
        row.epoch = 0;
        row.recipe = recipe_name(cfg.recipe);
        row.seed = cfg.seed;
        row.test_top1 = eval_top1(spec, params, test, mean, stddev);
        record(row);
    }

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        optim.lr = harness_detail::scheduled_lr(cfg.optim, epoch);
        auto batches = epoch_batches(train.count, BatchPlan{cfg.seed, cfg.batch_size, epoch - 1});

        double sum_total = 0, sum_ori = 0, sum_target = 0, sum_non = 0, sum_weak = 0;
        long samples = 0;
        int step = 0;
        for (const auto& idx : batches) {
            ++step;
            Tensor input = make_batch(train, idx, mean, stddev);
            TapeForward f = forward_with_tap(spec, params, input);

            std::vector<Vec> trows;
            WeakHead weak;
            const Tensor* tap = nullptr;
            if (with_teacher) trows = harness_detail::teacher_rows(teacher, train, idx);
            if (uskd) {
                weak = harness_detail::weak_head_from_params(params, spec.num_classes,
                                                             spec.tap_feature_dim());
                tap = &f.tape.value(f.tap_node);
            }
            std::vector<int> targets(idx.size());
            for (std::size_t b = 0; b < idx.size(); ++b) targets[b] = train.labels[idx[b]];

            StepInputs si{cfg, f.tape.value(f.logits_node), tap, targets,
                          with_teacher ? &trows : nullptr, uskd ? &weak : nullptr, &zipf};
            BatchLossResult loss = batch_loss(si);
            if (!std::isfinite(loss.total))
                throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) +
                                     " step " + std::to_string(step));

            double bsz = static_cast<double>(idx.size());
            sum_total += loss.total * bsz;
            sum_ori += loss.l_ori * bsz;
            sum_target += loss.l_target * bsz;
            sum_non += loss.l_non * bsz;
            sum_weak += loss.l_weak * bsz;
            samples += static_cast<long>(idx.size());

            f.tape.seed_grad(f.logits_node, loss.grad_logits);
            if (!loss.grad_tap.empty()) f.tape.seed_grad(f.tap_node, loss.grad_tap);
            f.tape.run_backward();

            ParamSet grads = grads_like(params);
            for (auto& [name, node] : f.param_nodes) {
                ParamEntry* g = grads.find(name);
                g->values = f.tape.grad(node).data;
            }
            if (uskd) {
                grads.find(harness_detail::kWeakWeightName)->values = loss.grad_weak_weight;
                grads.find(harness_detail::kWeakBiasName)->values = loss.grad_weak_bias;
            }
            sgd_step(params, grads, optim);
        }

        MetricsRow row;
        row.epoch = epoch;
        row.recipe = recipe_name(cfg.recipe);
        row.seed = cfg.seed;
        row.train_loss = sum_total / samples;
        row.l_ori = sum_ori / samples;
        row.l_target = sum_target / samples;
        row.l_non = sum_non / samples;
        row.l_weak = sum_weak / samples;
        row.test_top1 = eval_top1(spec, params, test, mean, stddev);
        row.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        record(row);
    }

    Checkpoint ck;
    ck.spec = spec;
    ck.params = std::move(params);
    ck.norm_mean = mean;
    ck.norm_std = stddev;
    std::string ckpt_path = (fs::path(cfg.outdir) / "final.dkck").string();
    save_checkpoint(ckpt_path, ck);
    result.checkpoint_path = ckpt_path;
    return result;
}

// evaluate a checkpoint on a dataset, normalizing with the stats stored in
// the checkpoint header
inline double eval_checkpoint(const std::string& ckpt_path, const std::string& images,
                              const std::string& labels, const std::string& format = "idx",
                              int limit = 0) {
    Checkpoint ck = load_checkpoint(ckpt_path);
    Dataset ds = format == "cifar" ? load_cifar_binary(images, Dataset::Split::test)
                                   : load_idx(images, labels, Dataset::Split::test);
    harness_detail::limit_dataset(ds, limit, 0, "subsample/eval");
    return eval_top1(ck.spec, ck.params, ds, ck.norm_mean, ck.norm_std);
}

} // namespace nkd
