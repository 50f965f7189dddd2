#pragma once
#include <cstdint>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "nkd/rng.hpp"
#include "nkd/tape.hpp"
#include "nkd/tensor.hpp"

// Tiny teacher/student models: an MLP and a two-stage CNN
// ([conv3x3 -> relu -> maxpool2] x2 -> GAP -> linear), both exposing an
// intermediate feature tap for the weak head, plus SGD with momentum.

namespace nkd {

struct NetSpec {
    enum class Kind { mlp, cnn2stage };
    Kind kind = Kind::cnn2stage;
    std::vector<int> stage_widths; // hidden widths (mlp) or channels (cnn)
    int num_classes = 10;
    int tap_stage = 0; // 1-based; 0 = deepest stage
    int in_channels = 1, in_h = 16, in_w = 16;

    int stages() const { return static_cast<int>(stage_widths.size()); }
    int effective_tap() const { return tap_stage == 0 ? stages() : tap_stage; }

    void validate() const {
        if (num_classes < 2) throw ConfigError("NetSpec: need at least 2 classes");
        for (int w : stage_widths)
            if (w < 1) throw ConfigError("NetSpec: stage width must be positive");
        // an MLP with no hidden stage is a plain linear model (and has no tap)
        if (stages() > 0 && (effective_tap() < 1 || effective_tap() > stages()))
            throw ConfigError("NetSpec: tap stage out of range");
        if (kind == Kind::cnn2stage && stages() != 2)
            throw ConfigError("NetSpec: cnn2stage takes exactly 2 stages");
        if (in_channels < 1 || in_h < 1 || in_w < 1) throw ConfigError("NetSpec: bad input shape");
        if (kind == Kind::cnn2stage && (in_h < 4 || in_w < 4))
            throw ConfigError("NetSpec: cnn2stage needs at least 4x4 input");
    }

    // feature width seen by the weak head at the tap
    int tap_feature_dim() const {
        if (stages() == 0) throw ConfigError("NetSpec: model has no tap stage");
        return stage_widths[effective_tap() - 1];
    }

    // canonical description; stored and hashed in checkpoints
    std::string canonical() const {
        std::ostringstream os;
        os << (kind == Kind::mlp ? "mlp" : "cnn2stage") << ";in=" << in_channels << "x" << in_h
           << "x" << in_w << ";stages=";
        for (std::size_t i = 0; i < stage_widths.size(); ++i)
            os << (i ? "," : "") << stage_widths[i];
        os << ";classes=" << num_classes << ";tap=" << effective_tap();
        return os.str();
    }

    static NetSpec from_canonical(const std::string& text);
};

struct ParamEntry {
    std::string name;
    std::vector<int> shape;
    Vec values;
};

// Named parameter arrays in fixed (insertion) order.
struct ParamSet {
    std::vector<ParamEntry> entries;

    ParamEntry& add(std::string name, std::vector<int> shape) {
        entries.push_back({std::move(name), std::move(shape), {}});
        entries.back().values.assign(static_cast<std::size_t>(Tensor::numel_of(entries.back().shape)), 0.0);
        return entries.back();
    }

    ParamEntry* find(const std::string& name) {
        for (auto& e : entries)
            if (e.name == name) return &e;
        return nullptr;
    }
    const ParamEntry* find(const std::string& name) const {
        for (auto& e : entries)
            if (e.name == name) return &e;
        return nullptr;
    }

    std::size_t total_values() const {
        std::size_t n = 0;
        for (auto& e : entries) n += e.values.size();
        return n;
    }
};

// zeroed clone with identical names/shapes, used for gradients
inline ParamSet grads_like(const ParamSet& params) {
    ParamSet g;
    for (const auto& e : params.entries) g.add(e.name, e.shape);
    return g;
}

inline std::vector<std::string> backbone_param_names(const NetSpec& spec) {
    std::vector<std::string> names;
    if (spec.kind == NetSpec::Kind::cnn2stage) {
        names = {"conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias", "fc.weight", "fc.bias"};
    } else {
        for (int s = 1; s <= spec.stages(); ++s) {
            names.push_back("fc" + std::to_string(s) + ".weight");
            names.push_back("fc" + std::to_string(s) + ".bias");
        }
        names.push_back("fc_out.weight");
        names.push_back("fc_out.bias");
    }
    return names;
}

namespace detail {
inline std::vector<int> param_shape(const NetSpec& spec, const std::string& name) {
    if (spec.kind == NetSpec::Kind::cnn2stage) {
        int c1 = spec.stage_widths[0], c2 = spec.stage_widths[1];
        if (name == "conv1.weight") return {c1, spec.in_channels, 3, 3};
        if (name == "conv1.bias") return {c1};
        if (name == "conv2.weight") return {c2, c1, 3, 3};
        if (name == "conv2.bias") return {c2};
        if (name == "fc.weight") return {spec.num_classes, c2};
        if (name == "fc.bias") return {spec.num_classes};
    } else {
        int in = spec.in_channels * spec.in_h * spec.in_w;
        for (int s = 1; s <= spec.stages(); ++s) {
            if (name == "fc" + std::to_string(s) + ".weight") return {spec.stage_widths[s - 1], in};
            if (name == "fc" + std::to_string(s) + ".bias") return {spec.stage_widths[s - 1]};
            in = spec.stage_widths[s - 1];
        }
        if (name == "fc_out.weight") return {spec.num_classes, spec.stage_widths.back()};
        if (name == "fc_out.bias") return {spec.num_classes};
    }
    throw UsageError("param_shape: unknown parameter " + name);
}

inline int fan_in_of(const std::vector<int>& shape) {
    if (shape.size() == 4) return shape[1] * shape[2] * shape[3];
    if (shape.size() == 2) return shape[1];
    return 0; // bias
}
} // namespace detail

// Fan-in scaled uniform init: weights ~ U(-sqrt(3/fan_in), +sqrt(3/fan_in))
// (variance 1/fan_in), biases zero. Bit-reproducible for a given (spec, seed):
// each parameter draws from its own derived stream.
inline ParamSet init_params(const NetSpec& spec, std::uint64_t seed) {
    spec.validate();
    ParamSet params;
    std::uint64_t index = 0;
    for (const auto& name : backbone_param_names(spec)) {
        auto& entry = params.add(name, detail::param_shape(spec, name));
        int fan_in = detail::fan_in_of(entry.shape);
        if (fan_in > 0) {
            Rng rng(derive_seed(seed, "init/" + name, index));
            double bound = std::sqrt(3.0 / fan_in);
            for (double& v : entry.values) v = rng.uniform(-bound, bound);
        }
        ++index;
    }
    return params;
}

// Forward pass recorded on a fresh tape; logits and the tapped stage output
// stay addressable for a joint backward.
struct TapeForward {
    TapeGraph tape;
    int logits_node = -1;
    int tap_node = -1;
    std::vector<std::pair<std::string, int>> param_nodes; // name -> tape node
};

inline TapeForward forward_with_tap(const NetSpec& spec, const ParamSet& params, const Tensor& input) {
    spec.validate();
    TapeForward f;
    auto param_node = [&](const std::string& name) {
        const ParamEntry* e = params.find(name);
        if (!e) throw UsageError("forward_with_tap: missing parameter " + name);
        int id = f.tape.add_param(Tensor(e->shape, e->values));
        f.param_nodes.emplace_back(name, id);
        return id;
    };

    if (spec.kind == NetSpec::Kind::cnn2stage) {
        if (input.shape.size() != 4 || input.dim(1) != spec.in_channels ||
            input.dim(2) != spec.in_h || input.dim(3) != spec.in_w)
            throw UsageError("forward_with_tap: input shape does not match spec");
        int x = f.tape.add_input(input);
        for (int s = 1; s <= 2; ++s) {
            int w = param_node("conv" + std::to_string(s) + ".weight");
            int b = param_node("conv" + std::to_string(s) + ".bias");
            x = f.tape.conv3x3(x, w, b);
            x = f.tape.relu(x);
            x = f.tape.maxpool2(x);
            if (spec.effective_tap() == s) f.tap_node = x;
        }
        int pooled = f.tape.gap(x);
        int w = param_node("fc.weight");
        int b = param_node("fc.bias");
        f.logits_node = f.tape.affine(pooled, w, b);
    } else {
        int flat = spec.in_channels * spec.in_h * spec.in_w;
        Tensor x2 = input;
        if (x2.shape.size() == 4) x2 = Tensor({x2.dim(0), flat}, x2.data);
        if (x2.shape.size() != 2 || x2.dim(1) != flat)
            throw UsageError("forward_with_tap: input shape does not match spec");
        int x = f.tape.add_input(std::move(x2));
        for (int s = 1; s <= spec.stages(); ++s) {
            int w = param_node("fc" + std::to_string(s) + ".weight");
            int b = param_node("fc" + std::to_string(s) + ".bias");
            x = f.tape.affine(x, w, b);
            x = f.tape.relu(x);
            if (spec.effective_tap() == s) f.tap_node = x;
        }
        int w = param_node("fc_out.weight");
        int b = param_node("fc_out.bias");
        f.logits_node = f.tape.affine(x, w, b);
    }
    return f;
}

// inference-only logits
inline Tensor forward_eval(const NetSpec& spec, const ParamSet& params, const Tensor& input) {
    TapeForward f = forward_with_tap(spec, params, input);
    return f.tape.value(f.logits_node);
}

struct OptimState {
    double lr = 0.01;
    double momentum = 0.0;
    double weight_decay = 0.0;
    std::vector<Vec> buffers; // one per parameter entry, lazily sized

    void validate() const {
        if (!(lr > 0.0)) throw ConfigError("OptimState: lr must be > 0");
        if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("OptimState: momentum must be in [0,1)");
        if (weight_decay < 0.0) throw ConfigError("OptimState: weight_decay must be >= 0");
    }
};

// v <- momentum*v + grad + wd*param;  param <- param - lr*v
inline void sgd_step(ParamSet& params, const ParamSet& grads, OptimState& state) {
    state.validate();
    if (grads.entries.size() != params.entries.size())
        throw UsageError("sgd_step: gradient/parameter layout mismatch");
    if (state.buffers.empty()) state.buffers.resize(params.entries.size());
    for (std::size_t p = 0; p < params.entries.size(); ++p) {
        auto& param = params.entries[p];
        const auto& grad = grads.entries[p];
        if (grad.values.size() != param.values.size())
            throw UsageError("sgd_step: shape mismatch for " + param.name);
        if (!all_finite(grad.values))
            throw NumericalError("sgd_step: non-finite gradient for " + param.name);
        Vec& buf = state.buffers[p];
        if (buf.size() != param.values.size()) buf.assign(param.values.size(), 0.0);
        for (std::size_t i = 0; i < param.values.size(); ++i) {
            buf[i] = state.momentum * buf[i] + grad.values[i] + state.weight_decay * param.values[i];
            param.values[i] -= state.lr * buf[i];
        }
    }
}

inline NetSpec NetSpec::from_canonical(const std::string& text) {
    NetSpec spec;
    spec.stage_widths.clear();
    std::stringstream ss(text);
    std::string field;
    bool first = true;
    while (std::getline(ss, field, ';')) {
        if (first) {
            if (field == "mlp") spec.kind = Kind::mlp;
            else if (field == "cnn2stage") spec.kind = Kind::cnn2stage;
            else throw FormatError("NetSpec: unknown kind " + field);
            first = false;
            continue;
        }
        auto eq = field.find('=');
        if (eq == std::string::npos) throw FormatError("NetSpec: malformed field " + field);
        std::string key = field.substr(0, eq), val = field.substr(eq + 1);
        if (key == "in") {
            if (std::sscanf(val.c_str(), "%dx%dx%d", &spec.in_channels, &spec.in_h, &spec.in_w) != 3)
                throw FormatError("NetSpec: malformed input shape " + val);
        } else if (key == "stages") {
            std::stringstream vs(val);
            std::string tok;
            while (std::getline(vs, tok, ',')) spec.stage_widths.push_back(std::stoi(tok));
        } else if (key == "classes") {
            spec.num_classes = std::stoi(val);
        } else if (key == "tap") {
            spec.tap_stage = std::stoi(val);
        } else {
            throw FormatError("NetSpec: unknown field " + key);
        }
    }
    spec.validate();
    return spec;
}

} // namespace nkd
