#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace mgfte {

/// Dense row-major tensor. Rank-2 everywhere in this pipeline: row vectors
/// are 1xN, scalars 1x1.
template <typename S>
struct TensorT {
    std::vector<std::size_t> shape;
    std::vector<S> data;

    TensorT() = default;
    TensorT(std::vector<std::size_t> shp, std::vector<S> values)
        : shape(std::move(shp)), data(std::move(values)) {
        if (numel() != data.size())
            throw std::invalid_argument("tensor: shape/data size mismatch");
    }

    static TensorT zeros(std::size_t r, std::size_t c) {
        return TensorT({r, c}, std::vector<S>(r * c, S(0)));
    }
    static TensorT full(std::size_t r, std::size_t c, S v) {
        return TensorT({r, c}, std::vector<S>(r * c, v));
    }
    static TensorT scalar(S v) { return TensorT({1, 1}, {v}); }
    static TensorT row_vector(std::vector<S> v) {
        std::size_t n = v.size();
        return TensorT({1, n}, std::move(v));
    }

    std::size_t numel() const {
        std::size_t n = 1;
        for (std::size_t s : shape) n *= s;
        return shape.empty() ? 0 : n;
    }
    bool rank2() const { return shape.size() == 2; }
    std::size_t rows() const { return shape.at(0); }
    std::size_t cols() const { return shape.at(1); }

    S& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    const S& at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

    S& operator[](std::size_t i) { return data[i]; }
    const S& operator[](std::size_t i) const { return data[i]; }

    S item() const {
        if (numel() != 1) throw std::invalid_argument("tensor: item() on non-scalar");
        return data[0];
    }

    bool all_finite() const {
        for (S v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    bool same_shape(const TensorT& o) const { return shape == o.shape; }

    bool operator==(const TensorT& o) const { return shape == o.shape && data == o.data; }
};

using Tensor = TensorT<double>;

enum class Axis { rows, cols };

namespace detail {

template <typename S>
void require_rank2(const TensorT<S>& x, const char* op) {
    if (!x.rank2()) throw std::invalid_argument(std::string(op) + ": rank-2 tensor required");
}

}  // namespace detail

/// Row- or column-normalized softmax, stable via max subtraction.
/// Axis::rows -> every row sums to 1; Axis::cols -> every column sums to 1.
template <typename S>
TensorT<S> softmax_axis(const TensorT<S>& x, Axis axis) {
    detail::require_rank2(x, "softmax_axis");
    TensorT<S> y = TensorT<S>::zeros(x.rows(), x.cols());
    if (axis == Axis::rows) {
        for (std::size_t r = 0; r < x.rows(); ++r) {
            S m = x.at(r, 0);
            for (std::size_t c = 1; c < x.cols(); ++c) m = std::max(m, x.at(r, c));
            S z = S(0);
            for (std::size_t c = 0; c < x.cols(); ++c) {
                y.at(r, c) = std::exp(x.at(r, c) - m);
                z += y.at(r, c);
            }
            for (std::size_t c = 0; c < x.cols(); ++c) y.at(r, c) /= z;
        }
    } else {
        for (std::size_t c = 0; c < x.cols(); ++c) {
            S m = x.at(0, c);
            for (std::size_t r = 1; r < x.rows(); ++r) m = std::max(m, x.at(r, c));
            S z = S(0);
            for (std::size_t r = 0; r < x.rows(); ++r) {
                y.at(r, c) = std::exp(x.at(r, c) - m);
                z += y.at(r, c);
            }
            for (std::size_t r = 0; r < x.rows(); ++r) y.at(r, c) /= z;
        }
    }
    return y;
}

/// Squared Euclidean distance ||x-y||^2 between two equal-length vectors.
template <typename S>
S sq_euclidean(const std::vector<S>& x, const std::vector<S>& y) {
    if (x.size() != y.size())
        throw std::invalid_argument("sq_euclidean: length mismatch");
    S acc = S(0);
    for (std::size_t i = 0; i < x.size(); ++i) {
        S d = x[i] - y[i];
        acc += d * d;
    }
    return acc;
}

/// log(sum(exp(x))) over a nonempty vector; -inf entries encode masked states.
template <typename S>
S logsumexp(const std::vector<S>& x) {
    if (x.empty()) throw std::invalid_argument("logsumexp: empty input");
    S m = x[0];
    for (S v : x) m = std::max(m, v);
    if (m == -std::numeric_limits<S>::infinity()) return m;
    S z = S(0);
    for (S v : x) z += std::exp(v - m);
    return m + std::log(z);
}

}  // namespace mgfte
