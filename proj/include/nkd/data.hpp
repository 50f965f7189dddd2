#pragma once
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "nkd/rng.hpp"
#include "nkd/tensor.hpp"
#include "nkd/types.hpp"

// Dataset ingestion (IDX and CIFAR-10 binary), label smoothing, seeded
// batching, and normalization statistics.

namespace nkd {

struct Dataset {
    enum class Split { train, test };
    int count = 0, channels = 0, height = 0, width = 0;
    Vec images; // count*channels*height*width, pixel values in [0,1]
    std::vector<int> labels;
    Split split = Split::train;

    std::size_t image_size() const { return static_cast<std::size_t>(channels) * height * width; }
    const double* image(int i) const { return &images[static_cast<std::size_t>(i) * image_size()]; }

    int max_label() const {
        int m = 0;
        for (int l : labels) m = std::max(m, l);
        return m;
    }
};

namespace detail {
inline std::uint32_t read_be32(std::istream& is, const std::string& what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError("truncated " + what);
    return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
           (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

inline void write_be32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    os.write(reinterpret_cast<const char*>(b), 4);
}
} // namespace detail

// IDX pair (big-endian headers): images magic 0x00000803 with dims N,H,W,
// labels magic 0x00000801 with dim N. Pixels are scaled to [0,1].
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                        Dataset::Split split = Dataset::Split::train) {
    std::ifstream im(images_path, std::ios::binary);
    if (!im) throw FormatError("cannot open " + images_path);
    if (detail::read_be32(im, "image magic") != 0x00000803u)
        throw FormatError("bad IDX image magic in " + images_path);
    std::uint32_t n = detail::read_be32(im, "image count");
    std::uint32_t h = detail::read_be32(im, "image rows");
    std::uint32_t w = detail::read_be32(im, "image cols");

    std::ifstream lb(labels_path, std::ios::binary);
    if (!lb) throw FormatError("cannot open " + labels_path);
    if (detail::read_be32(lb, "label magic") != 0x00000801u)
        throw FormatError("bad IDX label magic in " + labels_path);
    std::uint32_t nl = detail::read_be32(lb, "label count");
    if (nl != n) throw FormatError("IDX image/label count mismatch");
    if (n == 0) throw FormatError("IDX dataset is empty");

    Dataset ds;
    ds.count = static_cast<int>(n);
    ds.channels = 1;
    ds.height = static_cast<int>(h);
    ds.width = static_cast<int>(w);
    ds.split = split;

    std::size_t pixels = static_cast<std::size_t>(n) * h * w;
    std::vector<unsigned char> raw(pixels);
    if (!im.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(pixels)))
        throw FormatError("truncated IDX image data in " + images_path);
    ds.images.resize(pixels);
    for (std::size_t i = 0; i < pixels; ++i) ds.images[i] = raw[i] / 255.0;

    std::vector<unsigned char> lraw(n);
    if (!lb.read(reinterpret_cast<char*>(lraw.data()), static_cast<std::streamsize>(n)))
        throw FormatError("truncated IDX label data in " + labels_path);
    ds.labels.assign(lraw.begin(), lraw.end());
    return ds;
}

// standard MNIST-style file naming: <prefix>-images-idx3-ubyte etc.
inline Dataset load_idx_prefix(const std::string& prefix, Dataset::Split split = Dataset::Split::train) {
    return load_idx(prefix + "-images-idx3-ubyte", prefix + "-labels-idx1-ubyte", split);
}

// writes the byte-quantized dataset back out (round(pixel*255))
inline void write_idx(const std::string& images_path, const std::string& labels_path, const Dataset& ds) {
    if (ds.channels != 1) throw UsageError("write_idx: IDX stores single-channel images");
    std::ofstream im(images_path, std::ios::binary);
    if (!im) throw FormatError("cannot open " + images_path + " for writing");
    detail::write_be32(im, 0x00000803u);
    detail::write_be32(im, static_cast<std::uint32_t>(ds.count));
    detail::write_be32(im, static_cast<std::uint32_t>(ds.height));
    detail::write_be32(im, static_cast<std::uint32_t>(ds.width));
    std::vector<unsigned char> raw(ds.images.size());
    for (std::size_t i = 0; i < ds.images.size(); ++i)
        raw[i] = static_cast<unsigned char>(std::lround(std::clamp(ds.images[i], 0.0, 1.0) * 255.0));
    im.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));

    std::ofstream lb(labels_path, std::ios::binary);
    if (!lb) throw FormatError("cannot open " + labels_path + " for writing");
    detail::write_be32(lb, 0x00000801u);
    detail::write_be32(lb, static_cast<std::uint32_t>(ds.count));
    for (int l : ds.labels) {
        unsigned char c = static_cast<unsigned char>(l);
        lb.write(reinterpret_cast<const char*>(&c), 1);
    }
    if (!im || !lb) throw FormatError("write_idx: write failed");
}

// CIFAR-10 binary: records of 1 label byte + 3072 pixel bytes (3x32x32)
inline Dataset load_cifar_binary(const std::string& path, Dataset::Split split = Dataset::Split::train) {
    std::ifstream is(path, std::ios::binary | std::ios::ate);
    if (!is) throw FormatError("cannot open " + path);
    std::streamsize size = is.tellg();
    constexpr std::streamsize kRecord = 1 + 3072;
    if (size == 0 || size % kRecord != 0)
        throw FormatError("truncated CIFAR binary file " + path);
    is.seekg(0);

    Dataset ds;
    ds.count = static_cast<int>(size / kRecord);
    ds.channels = 3;
    ds.height = 32;
    ds.width = 32;
    ds.split = split;
    ds.images.resize(static_cast<std::size_t>(ds.count) * 3072);
    ds.labels.resize(ds.count);
    std::vector<unsigned char> rec(kRecord);
    for (int i = 0; i < ds.count; ++i) {
        if (!is.read(reinterpret_cast<char*>(rec.data()), kRecord))
            throw FormatError("truncated CIFAR record in " + path);
        ds.labels[i] = rec[0];
        double* out = &ds.images[static_cast<std::size_t>(i) * 3072];
        for (int p = 0; p < 3072; ++p) out[p] = rec[1 + p] / 255.0;
    }
    return ds;
}

// target gets 1-eps+eps/C, every other class eps/C
inline Vec smooth_labels(std::size_t t, std::size_t classes, double epsilon) {
    if (t >= classes) throw UsageError("smooth_labels: target out of range");
    if (epsilon < 0.0 || epsilon >= 1.0) throw UsageError("smooth_labels: epsilon must be in [0,1)");
    Vec v(classes, epsilon / static_cast<double>(classes));
    v[t] += 1.0 - epsilon;
    return v;
}

struct BatchPlan {
    std::uint64_t seed = 0;
    int batch_size = 1;
    int epoch = 0;
};

// Seeded Fisher-Yates permutation of [0,N), cut into batches; the last
// partial batch is kept. The permutation stream mixes seed and epoch.
inline std::vector<std::vector<int>> epoch_batches(int count, const BatchPlan& plan) {
    if (plan.batch_size < 1 || plan.batch_size > count)
        throw UsageError("epoch_batches: batch size must be in [1, N]");
    std::vector<int> perm(count);
    for (int i = 0; i < count; ++i) perm[i] = i;
    Rng rng(derive_seed(plan.seed, "shuffle", static_cast<std::uint64_t>(plan.epoch)));
    for (int i = count - 1; i > 0; --i) {
        int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i) + 1));
        std::swap(perm[i], perm[j]);
    }
    std::vector<std::vector<int>> out;
    for (int start = 0; start < count; start += plan.batch_size) {
        int end = std::min(count, start + plan.batch_size);
        out.emplace_back(perm.begin() + start, perm.begin() + end);
    }
    return out;
}

// per-channel mean/std over a split; std floored away from zero
inline void compute_norm_stats(const Dataset& ds, Vec& mean, Vec& stddev) {
    mean.assign(ds.channels, 0.0);
    stddev.assign(ds.channels, 0.0);
    std::size_t per_channel = static_cast<std::size_t>(ds.height) * ds.width;
    std::size_t n = static_cast<std::size_t>(ds.count) * per_channel;
    for (int i = 0; i < ds.count; ++i) {
        const double* img = ds.image(i);
        for (int c = 0; c < ds.channels; ++c) {
            const double* ch = img + static_cast<std::size_t>(c) * per_channel;
            for (std::size_t p = 0; p < per_channel; ++p) mean[c] += ch[p];
        }
    }
    for (int c = 0; c < ds.channels; ++c) mean[c] /= static_cast<double>(n);
    for (int i = 0; i < ds.count; ++i) {
        const double* img = ds.image(i);
        for (int c = 0; c < ds.channels; ++c) {
            const double* ch = img + static_cast<std::size_t>(c) * per_channel;
            for (std::size_t p = 0; p < per_channel; ++p) {
                double d = ch[p] - mean[c];
                stddev[c] += d * d;
            }
        }
    }
    for (int c = 0; c < ds.channels; ++c) stddev[c] = std::max(std::sqrt(stddev[c] / n), 1e-8);
}

// gather + normalize a batch into a {B,C,H,W} tensor
inline Tensor make_batch(const Dataset& ds, const std::vector<int>& indices, const Vec& mean,
                         const Vec& stddev) {
    std::size_t per_channel = static_cast<std::size_t>(ds.height) * ds.width;
    Tensor t = Tensor::zeros({static_cast<int>(indices.size()), ds.channels, ds.height, ds.width});
    for (std::size_t b = 0; b < indices.size(); ++b) {
        const double* img = ds.image(indices[b]);
        double* out = &t.data[b * ds.image_size()];
        for (int c = 0; c < ds.channels; ++c)
            for (std::size_t p = 0; p < per_channel; ++p) {
                std::size_t o = static_cast<std::size_t>(c) * per_channel + p;
                out[o] = (img[o] - mean[c]) / stddev[c];
            }
    }
    return t;
}

} // namespace nkd
