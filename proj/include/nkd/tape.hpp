#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "nkd/numeric.hpp"
#include "nkd/tensor.hpp"

// Micro reverse-mode tape. Ops execute eagerly at record time; backward
// replays the node list in reverse. One forward/backward pair per tape
// (single writer); independent tapes are safe to run in parallel.

namespace nkd {

enum class OpKind { leaf, affine, conv3x3, relu, maxpool2, gap, square, reduce_sum, softmax_ce };

struct TapeNode {
    OpKind kind = OpKind::leaf;
    int in0 = -1, in1 = -1, in2 = -1; // data, weight, bias
    Tensor value;
    Tensor grad;
    std::vector<int> aux;    // maxpool argmax offsets / softmax_ce targets
    Vec saved;               // softmax_ce probabilities
};

class TapeGraph {
public:
    // ---- recording (forward runs immediately) ----

    int add_input(Tensor x) { return push(OpKind::leaf, std::move(x)); }
    int add_param(Tensor x) { return push(OpKind::leaf, std::move(x)); }

    // y[b,o] = sum_i x[b,i] * w[o,i] + b[o]
    int affine(int x, int w, int b) {
        const Tensor& X = val(x);
        const Tensor& W = val(w);
        const Tensor& B = val(b);
        if (X.shape.size() != 2 || W.shape.size() != 2 || B.shape.size() != 1 ||
            X.dim(1) != W.dim(1) || W.dim(0) != B.dim(0))
            throw UsageError("affine: shape mismatch");
        int batch = X.dim(0), out = W.dim(0), in = W.dim(1);
        Tensor Y = Tensor::zeros({batch, out});
        for (int bi = 0; bi < batch; ++bi) {
            const double* xr = &X.data[static_cast<std::size_t>(bi) * in];
            for (int o = 0; o < out; ++o) {
                const double* wr = &W.data[static_cast<std::size_t>(o) * in];
                double acc = B.data[o];
                for (int i = 0; i < in; ++i) acc += xr[i] * wr[i];
                Y.at2(bi, o) = acc;
            }
        }
        return push(OpKind::affine, std::move(Y), x, w, b);
    }

    // 3x3 convolution, stride 1, zero padding 1 (spatial size preserved)
    int conv3x3(int x, int k, int b) {
        const Tensor& X = val(x);
        const Tensor& K = val(k);
        const Tensor& B = val(b);
        if (X.shape.size() != 4 || K.shape.size() != 4 || K.dim(2) != 3 || K.dim(3) != 3 ||
            K.dim(1) != X.dim(1) || B.shape.size() != 1 || B.dim(0) != K.dim(0))
            throw UsageError("conv3x3: shape mismatch");
        int batch = X.dim(0), cin = X.dim(1), h = X.dim(2), w = X.dim(3), cout = K.dim(0);
        Tensor Y = Tensor::zeros({batch, cout, h, w});
        for (int bi = 0; bi < batch; ++bi)
            for (int co = 0; co < cout; ++co) {
                double bias = B.data[co];
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx < w; ++xx) Y.data[Y.off4(bi, co, y, xx)] = bias;
                for (int ci = 0; ci < cin; ++ci)
                    for (int dy = 0; dy < 3; ++dy)
                        for (int dx = 0; dx < 3; ++dx) {
                            double kv = K.data[K.off4(co, ci, dy, dx)];
                            if (kv == 0.0) continue;
                            int y0 = std::max(0, 1 - dy), y1 = std::min(h, h + 1 - dy);
                            for (int y = y0; y < y1; ++y) {
                                int x0 = std::max(0, 1 - dx), x1 = std::min(w, w + 1 - dx);
                                const double* xr = &X.data[X.off4(bi, ci, y + dy - 1, 0)];
                                double* yr = &Y.data[Y.off4(bi, co, y, 0)];
                                for (int xx = x0; xx < x1; ++xx) yr[xx] += kv * xr[xx + dx - 1];
                            }
                        }
            }
        return push(OpKind::conv3x3, std::move(Y), x, k, b);
    }

    int relu(int x) {
        Tensor Y = val(x);
        for (double& v : Y.data) v = v > 0.0 ? v : 0.0;
        return push(OpKind::relu, std::move(Y), x);
    }

    // 2x2 max pooling, stride 2, floor on odd sizes; ties keep the first cell
    int maxpool2(int x) {
        const Tensor& X = val(x);
        if (X.shape.size() != 4) throw UsageError("maxpool2: expected 4-d input");
        int batch = X.dim(0), c = X.dim(1), h = X.dim(2) / 2, w = X.dim(3) / 2;
        if (h == 0 || w == 0) throw UsageError("maxpool2: spatial size too small");
        Tensor Y = Tensor::zeros({batch, c, h, w});
        std::vector<int> arg(Y.data.size());
        for (int bi = 0; bi < batch; ++bi)
            for (int ci = 0; ci < c; ++ci)
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx < w; ++xx) {
                        std::size_t best = X.off4(bi, ci, 2 * y, 2 * xx);
                        double bv = X.data[best];
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx) {
                                std::size_t o = X.off4(bi, ci, 2 * y + dy, 2 * xx + dx);
                                if (X.data[o] > bv) { bv = X.data[o]; best = o; }
                            }
                        std::size_t yo = Y.off4(bi, ci, y, xx);
                        Y.data[yo] = bv;
                        arg[yo] = static_cast<int>(best);
                    }
        int id = push(OpKind::maxpool2, std::move(Y), x);
        nodes_[id].aux = std::move(arg);
        return id;
    }

    // global average pooling {B,C,H,W} -> {B,C}
    int gap(int x) {
        const Tensor& X = val(x);
        if (X.shape.size() != 4) throw UsageError("gap: expected 4-d input");
        int batch = X.dim(0), c = X.dim(1), hw = X.dim(2) * X.dim(3);
        Tensor Y = Tensor::zeros({batch, c});
        for (int bi = 0; bi < batch; ++bi)
            for (int ci = 0; ci < c; ++ci) {
                const double* row = &X.data[X.off4(bi, ci, 0, 0)];
                double acc = 0.0;
                for (int i = 0; i < hw; ++i) acc += row[i];
                Y.at2(bi, ci) = acc / hw;
            }
        return push(OpKind::gap, std::move(Y), x);
    }

    int square(int x) {
        Tensor Y = val(x);
        for (double& v : Y.data) v *= v;
        return push(OpKind::square, std::move(Y), x);
    }

    int reduce_sum(int x) {
        const Tensor& X = val(x);
        double acc = 0.0;
        for (double v : X.data) acc += v;
        return push(OpKind::reduce_sum, Tensor::scalar(acc), x);
    }

    // mean over the batch of -log softmax(x[b])[target[b]]
    int softmax_ce(int x, std::vector<int> targets) {
        const Tensor& X = val(x);
        if (X.shape.size() != 2 || static_cast<int>(targets.size()) != X.dim(0))
            throw UsageError("softmax_ce: shape mismatch");
        int batch = X.dim(0), classes = X.dim(1);
        Vec probs(X.data.size());
        double loss = 0.0;
        for (int bi = 0; bi < batch; ++bi) {
            Vec row(X.data.begin() + static_cast<std::size_t>(bi) * classes,
                    X.data.begin() + static_cast<std::size_t>(bi + 1) * classes);
            Vec p = softmax_raw(row, 1.0);
            int t = targets[bi];
            if (t < 0 || t >= classes) throw UsageError("softmax_ce: target out of range");
            bool clamped = false;
            loss -= log_floored(p[t], clamped);
            std::copy(p.begin(), p.end(), probs.begin() + static_cast<std::size_t>(bi) * classes);
        }
        int id = push(OpKind::softmax_ce, Tensor::scalar(loss / batch), x);
        nodes_[id].aux = std::move(targets);
        nodes_[id].saved = std::move(probs);
        return id;
    }

    // ---- access ----

    std::size_t size() const { return nodes_.size(); }
    const Tensor& value(int node) const { return val(node); }
    const Tensor& grad(int node) const { return nodes_.at(node).grad; }

    // ---- backward ----

    // Accumulate an output gradient at `node`; several seeds may be planted
    // (e.g. the logits node and the tap node) before run_backward().
    void seed_grad(int node, const Vec& g) {
        ensure_grad(node);
        Tensor& gt = nodes_.at(node).grad;
        if (g.size() != gt.data.size()) throw UsageError("seed_grad: size mismatch");
        for (std::size_t i = 0; i < g.size(); ++i) gt.data[i] += g[i];
        seeded_ = true;
    }

    void backward_scalar(double seed) {
        if (nodes_.empty()) throw UsageError("tape backward before forward");
        if (!nodes_.back().value.is_scalar())
            throw UsageError("backward_scalar: recorded output is not scalar");
        if (!std::isfinite(seed)) throw UsageError("backward_scalar: non-finite seed");
        seed_grad(static_cast<int>(nodes_.size()) - 1, Vec{seed});
        run_backward();
    }

    void run_backward() {
        if (nodes_.empty() || !seeded_) throw UsageError("tape backward before forward");
        if (backward_done_) throw UsageError("tape backward ran twice without reset");
        for (auto& n : nodes_) ensure_grad_node(n);
        for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) backprop(id);
        backward_done_ = true;
    }

    // clears gradients and seeds so the same recorded graph can be replayed
    void reset_backward() {
        for (auto& n : nodes_) n.grad = Tensor();
        seeded_ = false;
        backward_done_ = false;
    }

private:
    std::vector<TapeNode> nodes_;
    bool seeded_ = false;
    bool backward_done_ = false;

    const Tensor& val(int id) const { return nodes_.at(id).value; }

    int push(OpKind kind, Tensor value, int in0 = -1, int in1 = -1, int in2 = -1) {
        TapeNode n;
        n.kind = kind;
        n.in0 = in0;
        n.in1 = in1;
        n.in2 = in2;
        n.value = std::move(value);
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    void ensure_grad(int id) { ensure_grad_node(nodes_.at(id)); }

    static void ensure_grad_node(TapeNode& n) {
        if (n.grad.data.empty() && n.value.numel() > 0) n.grad = Tensor::zeros(n.value.shape);
    }

    void backprop(int id) {
        TapeNode& n = nodes_[id];
        const Vec& g = n.grad.data;
        switch (n.kind) {
        case OpKind::leaf:
            break;
        case OpKind::affine: {
            const Tensor& X = nodes_[n.in0].value;
            const Tensor& W = nodes_[n.in1].value;
            Tensor& gx = nodes_[n.in0].grad;
            Tensor& gw = nodes_[n.in1].grad;
            Tensor& gb = nodes_[n.in2].grad;
            int batch = X.dim(0), in = X.dim(1), out = W.dim(0);
            for (int bi = 0; bi < batch; ++bi) {
                const double* xr = &X.data[static_cast<std::size_t>(bi) * in];
                double* gxr = &gx.data[static_cast<std::size_t>(bi) * in];
                for (int o = 0; o < out; ++o) {
                    double go = g[static_cast<std::size_t>(bi) * out + o];
                    if (go == 0.0) continue;
                    const double* wr = &W.data[static_cast<std::size_t>(o) * in];
                    double* gwr = &gw.data[static_cast<std::size_t>(o) * in];
                    for (int i = 0; i < in; ++i) {
                        gxr[i] += go * wr[i];
                        gwr[i] += go * xr[i];
                    }
                    gb.data[o] += go;
                }
            }
            break;
        }
        case OpKind::conv3x3: {
            const Tensor& X = nodes_[n.in0].value;
            const Tensor& K = nodes_[n.in1].value;
            Tensor& gx = nodes_[n.in0].grad;
            Tensor& gk = nodes_[n.in1].grad;
            Tensor& gb = nodes_[n.in2].grad;
            int batch = X.dim(0), cin = X.dim(1), h = X.dim(2), w = X.dim(3), cout = K.dim(0);
            for (int bi = 0; bi < batch; ++bi)
                for (int co = 0; co < cout; ++co) {
                    const double* gr0 = &g[n.value.off4(bi, co, 0, 0)];
                    for (int i = 0; i < h * w; ++i) gb.data[co] += gr0[i];
                    for (int ci = 0; ci < cin; ++ci)
                        for (int dy = 0; dy < 3; ++dy)
                            for (int dx = 0; dx < 3; ++dx) {
                                double kv = K.data[K.off4(co, ci, dy, dx)];
                                double acc = 0.0;
                                int y0 = std::max(0, 1 - dy), y1 = std::min(h, h + 1 - dy);
                                for (int y = y0; y < y1; ++y) {
                                    int x0 = std::max(0, 1 - dx), x1 = std::min(w, w + 1 - dx);
                                    const double* xr = &X.data[X.off4(bi, ci, y + dy - 1, 0)];
                                    double* gxr = &gx.data[X.off4(bi, ci, y + dy - 1, 0)];
                                    const double* gyr = &g[n.value.off4(bi, co, y, 0)];
                                    for (int xx = x0; xx < x1; ++xx) {
                                        acc += gyr[xx] * xr[xx + dx - 1];
                                        gxr[xx + dx - 1] += gyr[xx] * kv;
                                    }
                                }
                                gk.data[K.off4(co, ci, dy, dx)] += acc;
                            }
                }
            break;
        }
        case OpKind::relu: {
            const Tensor& X = nodes_[n.in0].value;
            Tensor& gx = nodes_[n.in0].grad;
            for (std::size_t i = 0; i < g.size(); ++i)
                if (X.data[i] > 0.0) gx.data[i] += g[i];
            break;
        }
        case OpKind::maxpool2: {
            Tensor& gx = nodes_[n.in0].grad;
            for (std::size_t i = 0; i < g.size(); ++i) gx.data[static_cast<std::size_t>(n.aux[i])] += g[i];
            break;
        }
        case OpKind::gap: {
            const Tensor& X = nodes_[n.in0].value;
            Tensor& gx = nodes_[n.in0].grad;
            int batch = X.dim(0), c = X.dim(1), hw = X.dim(2) * X.dim(3);
            for (int bi = 0; bi < batch; ++bi)
                for (int ci = 0; ci < c; ++ci) {
                    double go = g[static_cast<std::size_t>(bi) * c + ci] / hw;
                    double* gxr = &gx.data[X.off4(bi, ci, 0, 0)];
                    for (int i = 0; i < hw; ++i) gxr[i] += go;
                }
            break;
        }
        case OpKind::square: {
            const Tensor& X = nodes_[n.in0].value;
            Tensor& gx = nodes_[n.in0].grad;
            for (std::size_t i = 0; i < g.size(); ++i) gx.data[i] += 2.0 * X.data[i] * g[i];
            break;
        }
        case OpKind::reduce_sum: {
            Tensor& gx = nodes_[n.in0].grad;
            for (double& v : gx.data) v += g[0];
            break;
        }
        case OpKind::softmax_ce: {
            const Tensor& X = nodes_[n.in0].value;
            Tensor& gx = nodes_[n.in0].grad;
            int batch = X.dim(0), classes = X.dim(1);
            double scale = g[0] / batch;
            for (int bi = 0; bi < batch; ++bi) {
                int t = n.aux[bi];
                for (int j = 0; j < classes; ++j) {
                    std::size_t o = static_cast<std::size_t>(bi) * classes + j;
                    gx.data[o] += scale * (n.saved[o] - (j == t ? 1.0 : 0.0));
                }
            }
            break;
        }
        }
    }
};

} // namespace nkd
