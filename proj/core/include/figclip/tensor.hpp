#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "figclip/errors.hpp"
#include "figclip/rng.hpp"

namespace figclip {

// Arithmetic precision for a tape / model. Values are held in doubles either
// way; in f32 mode every op result is rounded to float precision, so any
// value that can reach a checkpoint is exactly representable as f32.
enum class Precision : uint8_t { f32, f64 };

inline double quantize(double v, Precision p) {
    return p == Precision::f32 ? static_cast<double>(static_cast<float>(v)) : v;
}

// Dense multi-dimensional value-semantic array. Most ops in the tape work on
// rank 1 or 2; higher ranks are used for storage only.
struct Tensor {
    std::vector<size_t> shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty unless allocated; same length as data otherwise
    bool requires_grad = false;

    Tensor() = default;
    explicit Tensor(std::vector<size_t> s) : shape(std::move(s)), data(numel_of(shape), 0.0) {}
    Tensor(std::vector<size_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != numel_of(shape))
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " != product of shape " + shape_str(shape));
    }

    static size_t numel_of(const std::vector<size_t>& s) {
        size_t n = 1;
        for (size_t d : s) n *= d;
        return n;
    }

    static std::string shape_str(const std::vector<size_t>& s) {
        std::string out = "[";
        for (size_t i = 0; i < s.size(); ++i) {
            if (i) out += ",";
            out += std::to_string(s[i]);
        }
        return out + "]";
    }

    size_t numel() const { return data.size(); }
    size_t ndim() const { return shape.size(); }
    size_t rows() const { return shape.empty() ? 1 : shape[0]; }
    size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    double& at(size_t i) { return data[i]; }
    double at(size_t i) const { return data[i]; }
    double& at2(size_t r, size_t c) { return data[r * shape[1] + c]; }
    double at2(size_t r, size_t c) const { return data[r * shape[1] + c]; }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
    void zero_grad() { grad.assign(data.size(), 0.0); }

    void round_to(Precision p) {
        if (p == Precision::f64) return;
        for (double& v : data) v = static_cast<double>(static_cast<float>(v));
    }

    static Tensor zeros(std::vector<size_t> s) { return Tensor(std::move(s)); }

    static Tensor full(std::vector<size_t> s, double v) {
        Tensor t(std::move(s));
        for (double& x : t.data) x = v;
        return t;
    }

    static Tensor gaussian(std::vector<size_t> s, double std_dev, Rng& rng) {
        Tensor t(std::move(s));
        for (double& x : t.data) x = rng.gaussian() * std_dev;
        return t;
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(op) + ": " + Tensor::shape_str(a.shape) + " vs " +
                         Tensor::shape_str(b.shape));
}

// A named model weight. Frozen parameters never accumulate gradient.
struct Parameter {
    std::string name;  // hierarchical, e.g. "backbone.block3.attn.q"
    Tensor tensor;
    bool frozen = true;
};

}  // namespace figclip
