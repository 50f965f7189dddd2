#pragma once
#include <numeric>
#include <vector>

#include "nkd/errors.hpp"
#include "nkd/types.hpp"

namespace nkd {

// Dense row-major array of doubles. Empty shape = scalar.
struct Tensor {
    std::vector<int> shape;
    Vec data;

    Tensor() = default;
    Tensor(std::vector<int> s, Vec d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != static_cast<std::size_t>(numel_of(shape)))
            throw UsageError("Tensor: data size does not match shape");
    }

    static long numel_of(const std::vector<int>& s) {
        long n = 1;
        for (int d : s) n *= d;
        return n;
    }

    static Tensor zeros(std::vector<int> s) {
        long n = numel_of(s);
        return Tensor(std::move(s), Vec(static_cast<std::size_t>(n), 0.0));
    }

    static Tensor scalar(double v) { return Tensor({}, Vec{v}); }

    long numel() const { return static_cast<long>(data.size()); }
    bool is_scalar() const { return shape.empty() && data.size() == 1; }

    int dim(std::size_t i) const { return shape[i]; }

    // flat offsets for the layouts used here: {B,D} and {B,C,H,W}
    double& at2(int b, int d) { return data[static_cast<std::size_t>(b) * shape[1] + d]; }
    double at2(int b, int d) const { return data[static_cast<std::size_t>(b) * shape[1] + d]; }

    std::size_t off4(int b, int c, int y, int x) const {
        return ((static_cast<std::size_t>(b) * shape[1] + c) * shape[2] + y) * shape[3] + x;
    }
};

} // namespace nkd
