#pragma once
// Dense row-major float32 tensor. Rank is arbitrary but most code treats
// tensors as matrices: rank-1 tensors act as a single row.
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "add/error.hpp"
#include "add/rng.hpp"

namespace add {

struct Tensor {
    std::vector<int64_t> shape;
    std::vector<float> data;

    Tensor() = default;
    Tensor(std::vector<int64_t> s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
        require(numel_of(shape) == static_cast<int64_t>(data.size()),
                "tensor: data length does not match shape");
    }

    static int64_t numel_of(const std::vector<int64_t>& s) {
        int64_t n = 1;
        for (int64_t d : s) {
            require(d > 0, "tensor: shape entries must be positive");
            n *= d;
        }
        return n;
    }

    static Tensor zeros(std::vector<int64_t> s) {
        int64_t n = numel_of(s);
        return Tensor(std::move(s), std::vector<float>(static_cast<size_t>(n), 0.0f));
    }

    static Tensor full(std::vector<int64_t> s, float v) {
        int64_t n = numel_of(s);
        return Tensor(std::move(s), std::vector<float>(static_cast<size_t>(n), v));
    }

    static Tensor row(std::vector<float> d) {
        int64_t n = static_cast<int64_t>(d.size());
        return Tensor({n}, std::move(d));
    }

    static Tensor gaussian(std::vector<int64_t> s, Rng& rng) {
        Tensor t = zeros(std::move(s));
        for (float& v : t.data) v = rng.gaussian();
        return t;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }

    // matrix view: rank-1 is one row, rank>=2 collapses leading dims into rows
    int64_t rows() const {
        if (shape.size() <= 1) return 1;
        int64_t r = 1;
        for (size_t i = 0; i + 1 < shape.size(); ++i) r *= shape[i];
        return r;
    }
    int64_t cols() const { return shape.empty() ? 0 : shape.back(); }

    float& at(int64_t r, int64_t c) { return data[static_cast<size_t>(r * cols() + c)]; }
    float at(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * cols() + c)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (float v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline std::string shape_str(const Tensor& t) {
    std::string s = "[";
    for (size_t i = 0; i < t.shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(t.shape[i]);
    }
    return s + "]";
}

} // namespace add
