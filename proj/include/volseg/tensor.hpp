#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "volseg/errors.hpp"

namespace volseg {

// Dense N-d array, row-major, last axis fastest.
template <typename T>
struct Tensor {
    std::vector<size_t> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<size_t> s) : shape(std::move(s)) {
        data.assign(element_count(shape), T(0));
    }
    Tensor(std::vector<size_t> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != element_count(shape)) {
            throw ShapeMismatch("tensor data length does not match shape");
        }
    }

    static size_t element_count(const std::vector<size_t>& s) {
        size_t n = 1;
        for (size_t d : s) n *= d;
        return n;
    }
    size_t size() const { return data.size(); }

    static Tensor zeros(std::vector<size_t> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<size_t> s, T value) {
        Tensor t(std::move(s));
        for (T& v : t.data) v = value;
        return t;
    }
    static Tensor scalar(T value) { return Tensor({1}, {value}); }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = U(data[i]);
        return out;
    }

    bool all_finite() const {
        for (T v : data) {
            if (!std::isfinite(double(v))) return false;
        }
        return true;
    }
};

inline std::string shape_string(const std::vector<size_t>& s) {
    std::string out = "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

}  // namespace volseg
