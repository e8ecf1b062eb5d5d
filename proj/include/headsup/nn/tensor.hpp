#pragma once

#include <numeric>
#include <vector>

#include "headsup/common.hpp"

namespace headsup::nn {

// Dense row-major float tensor, up to 4 dims.
struct Tensor {
    std::vector<int> shape;
    std::vector<float> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s, float fill = 0.0f) : shape(std::move(s)) {
        v.assign(numel_of(shape), fill);
    }
    Tensor(std::vector<int> s, std::vector<float> data) : shape(std::move(s)), v(std::move(data)) {
        require(v.size() == numel_of(shape), "ShapeMismatch", "tensor data size != shape product");
    }

    static size_t numel_of(const std::vector<int>& s) {
        size_t n = 1;
        for (int d : s) n *= static_cast<size_t>(d);
        return n;
    }

    static Tensor scalar(float x) { return Tensor({1}, std::vector<float>{x}); }

    static Tensor randn(std::vector<int> s, Rng& rng, float stddev = 1.0f) {
        Tensor t(std::move(s));
        for (auto& x : t.v) x = rng.normalf() * stddev;
        return t;
    }

    size_t numel() const { return v.size(); }
    int dim(int i) const { return shape[i]; }
    int ndim() const { return static_cast<int>(shape.size()); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    Tensor reshaped(std::vector<int> s) const {
        require(numel_of(s) == numel(), "ShapeMismatch", "reshape changes element count");
        Tensor t;
        t.shape = std::move(s);
        t.v = v;
        return t;
    }

    float* data() { return v.data(); }
    const float* data() const { return v.data(); }
};

}  // namespace headsup::nn
