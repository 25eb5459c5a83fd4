#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace jamlab::nn {

// Dense row-major tensor. Training uses the float instantiation; gradient
// verification re-executes the same code in double.
template <typename S>
struct TensorT {
    std::vector<std::int64_t> shape;
    std::vector<S> data;

    TensorT() = default;
    TensorT(std::vector<std::int64_t> shp, std::vector<S> values)
        : shape(std::move(shp)), data(std::move(values)) {
        if (numel_of(shape) != static_cast<std::int64_t>(data.size())) {
            throw std::invalid_argument("tensor: shape does not match data length");
        }
    }

    static std::int64_t numel_of(const std::vector<std::int64_t>& shp) {
        std::int64_t n = 1;
        for (std::int64_t d : shp) {
            if (d <= 0) throw std::invalid_argument("tensor: dims must be positive");
            n *= d;
        }
        return n;
    }

    static TensorT zeros(std::vector<std::int64_t> shp) {
        const std::int64_t n = numel_of(shp);
        return TensorT(std::move(shp), std::vector<S>(static_cast<std::size_t>(n), S(0)));
    }

    static TensorT full(std::vector<std::int64_t> shp, S value) {
        const std::int64_t n = numel_of(shp);
        return TensorT(std::move(shp), std::vector<S>(static_cast<std::size_t>(n), value));
    }

    static TensorT scalar(S value) { return TensorT({1}, {value}); }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    std::int64_t dim(std::size_t i) const { return shape.at(i); }
    std::size_t rank() const { return shape.size(); }

    template <typename T>
    TensorT<T> cast() const {
        TensorT<T> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<T>(data[i]);
        return out;
    }
};

using TensorF = TensorT<float>;
using TensorD = TensorT<double>;

inline std::string shape_str(const std::vector<std::int64_t>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

}  // namespace jamlab::nn
