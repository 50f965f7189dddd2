#pragma once
#include <cmath>
#include <cstdint>
#include <string>

#include "nkd/data.hpp"
#include "nkd/rng.hpp"

// Synthetic desk-scale image classification task in IDX format: oriented
// sinusoidal gratings, one orientation per class, with random phase, angular
// jitter and pixel noise. Orientation is a local, translation-invariant cue,
// so a small conv+GAP model can learn it, while the jitter makes neighbouring
// orientations genuinely confusable — the soft-label structure distillation
// feeds on.

namespace nkd {

struct SynthSpec {
    int classes = 10;
    int size = 16;
    int count = 3000;
    std::uint64_t seed = 0;
    double angle_jitter = 0.25; // stddev, in units of the class angular step
    double noise = 0.35;        // additive pixel noise stddev
    double frequency = 0.25;    // grating frequency, cycles per pixel
    double amplitude = 0.45;
};

inline Dataset make_synth_dataset(const SynthSpec& spec, Dataset::Split split) {
    if (spec.classes < 2 || spec.size < 4 || spec.count < 1)
        throw UsageError("make_synth_dataset: bad spec");
    Dataset ds;
    ds.count = spec.count;
    ds.channels = 1;
    ds.height = spec.size;
    ds.width = spec.size;
    ds.split = split;
    ds.images.resize(static_cast<std::size_t>(spec.count) * spec.size * spec.size);
    ds.labels.resize(spec.count);

    constexpr double kPi = 3.14159265358979323846;
    const char* stream = split == Dataset::Split::train ? "synthdata/train" : "synthdata/test";
    double step = kPi / spec.classes; // orientations live on a half circle
    for (int i = 0; i < spec.count; ++i) {
        int label = i % spec.classes;
        ds.labels[i] = label;
        Rng rng(derive_seed(spec.seed, stream, static_cast<std::uint64_t>(i)));
        double theta = step * (label + spec.angle_jitter * rng.gaussian());
        double phase = rng.uniform(0.0, 2.0 * kPi);
        double kx = 2.0 * kPi * spec.frequency * std::cos(theta);
        double ky = 2.0 * kPi * spec.frequency * std::sin(theta);
        double* img = &ds.images[static_cast<std::size_t>(i) * spec.size * spec.size];
        for (int y = 0; y < spec.size; ++y)
            for (int x = 0; x < spec.size; ++x) {
                double v = 0.5 + spec.amplitude * std::sin(kx * x + ky * y + phase);
                v += spec.noise * rng.gaussian();
                v = std::min(1.0, std::max(0.0, v));
                // byte-quantize so an IDX round trip is exact
                img[static_cast<std::size_t>(y) * spec.size + x] = std::lround(v * 255.0) / 255.0;
            }
    }
    return ds;
}

// standard MNIST-style file pair under dir with the given prefix
inline void write_synth_idx(const std::string& dir, const std::string& prefix, const Dataset& ds) {
    write_idx(dir + "/" + prefix + "-images-idx3-ubyte", dir + "/" + prefix + "-labels-idx1-ubyte",
              ds);
}

} // namespace nkd
