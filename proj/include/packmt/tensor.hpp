#pragma once

// Dense row-major tensor over float or double. Training runs in float;
// gradient verification re-runs small graphs in double.

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "packmt/common.hpp"

namespace packmt {

template <typename T>
struct Tensor {
    std::vector<std::int64_t> shape;
    std::vector<T> data;
    std::string name;

    Tensor() = default;

    Tensor(std::vector<std::int64_t> s, std::vector<T> d, std::string n = {})
        : shape(std::move(s)), data(std::move(d)), name(std::move(n)) {
        if (numel_of(shape) != static_cast<std::int64_t>(data.size()))
            throw ContractViolation("Tensor: shape/data size mismatch for '" + name + "'");
    }

    static std::int64_t numel_of(const std::vector<std::int64_t>& s) {
        std::int64_t n = 1;
        for (std::int64_t d : s) {
            if (d <= 0) throw ContractViolation("Tensor: dimensions must be positive");
            n *= d;
        }
        return n;
    }

    static Tensor zeros(std::vector<std::int64_t> s) {
        const auto n = numel_of(s);
        return Tensor(std::move(s), std::vector<T>(static_cast<std::size_t>(n), T(0)));
    }

    static Tensor full(std::vector<std::int64_t> s, T v) {
        const auto n = numel_of(s);
        return Tensor(std::move(s), std::vector<T>(static_cast<std::size_t>(n), v));
    }

    static Tensor scalar(T v) { return Tensor({1}, {v}); }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }

    std::int64_t dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
    int rank() const { return static_cast<int>(shape.size()); }

    T& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> d(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) d[i] = static_cast<U>(data[i]);
        return Tensor<U>(shape, std::move(d), name);
    }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }
};

template <typename T>
void fill_normal(Tensor<T>& t, rng::Stream& rs, double mean, double stddev) {
    for (auto& v : t.data) v = static_cast<T>(rs.normal(mean, stddev));
}

inline std::string shape_str(const std::vector<std::int64_t>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

}  // namespace packmt
