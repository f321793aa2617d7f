#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "gramreg/errors.hpp"

namespace gramreg {

/// Dense row-major n-dimensional array. Operations return new tensors;
/// existing values are never mutated through the public surface, so tensors
/// can be shared freely across threads.
template <typename T>
class Tensor {
    static_assert(std::is_floating_point_v<T>, "Tensor requires a real scalar type");

public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape, T fill = T{0})
        : shape_(std::move(shape)), data_(count(shape_), fill) {}

    static Tensor from(std::vector<std::size_t> shape, std::vector<T> values) {
        if (count(shape) != values.size()) {
            throw DimensionError("tensor init: " + std::to_string(values.size()) +
                                 " values for shape " + shape_string(shape));
        }
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = std::move(values);
        return t;
    }

    static Tensor identity(std::size_t n) {
        Tensor t({n, n});
        for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = T{1};
        return t;
    }

    std::size_t rank() const { return shape_.size(); }
    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t numel() const { return data_.size(); }

    const std::vector<T>& data() const { return data_; }
    std::vector<T>& data() { return data_; }

    T& operator[](std::size_t flat) { return data_[flat]; }
    const T& operator[](std::size_t flat) const { return data_[flat]; }

    template <typename... Is>
    T& at(Is... idx) {
        return data_[offset({static_cast<std::size_t>(idx)...})];
    }
    template <typename... Is>
    const T& at(Is... idx) const {
        return data_[offset({static_cast<std::size_t>(idx)...})];
    }

    /// Same elements, new extents. Element count must be unchanged.
    Tensor reshape(std::vector<std::size_t> new_shape) const {
        if (count(new_shape) != data_.size()) {
            throw DimensionError("reshape " + shape_string(shape_) + " -> " +
                                 shape_string(new_shape));
        }
        Tensor t;
        t.shape_ = std::move(new_shape);
        t.data_ = data_;
        return t;
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    static std::string shape_string(const std::vector<std::size_t>& s) {
        std::ostringstream os;
        os << '(';
        for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
        os << ')';
        return os.str();
    }

private:
    static std::size_t count(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        return n;
    }

    std::size_t offset(std::initializer_list<std::size_t> idx) const {
        std::size_t o = 0;
        std::size_t axis = 0;
        for (std::size_t i : idx) o = o * shape_[axis++] + i;
        return o;
    }

    std::vector<std::size_t> shape_;
    std::vector<T> data_;
};

namespace detail {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (!a.same_shape(b)) {
        throw DimensionError(std::string(op) + ": shapes " +
                             Tensor<T>::shape_string(a.shape()) + " vs " +
                             Tensor<T>::shape_string(b.shape()));
    }
}

}  // namespace detail

/// Matrix product of a (m x k) and b (k x n). Each output element accumulates
/// its k terms left to right, independent of the loop nest, so results are
/// reproducible bit for bit.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: " + Tensor<T>::shape_string(a.shape()) + " x " +
                             Tensor<T>::shape_string(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<T> out({m, n});
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    T* po = out.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const T av = pa[i * k + p];
            const T* brow = pb + p * n;
            T* orow = po + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "add");
    Tensor<T> out = a;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b[i];
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "sub");
    Tensor<T> out = a;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b[i];
    return out;
}

/// Hadamard product.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "mul");
    Tensor<T> out = a;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b[i];
    return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, T scalar) {
    Tensor<T> out = a;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += scalar;
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, T scalar) {
    Tensor<T> out = a;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= scalar;
    return out;
}

template <typename T>
Tensor<T> max_scalar(const Tensor<T>& a, T scalar) {
    Tensor<T> out = a;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = out[i] > scalar ? out[i] : scalar;
    return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    return max_scalar(a, T{0});
}

template <typename T>
T sigmoid_scalar(T x) {
    // Split at 0 so exp never overflows.
    if (x >= T{0}) {
        const T e = std::exp(-x);
        return T{1} / (T{1} + e);
    }
    const T e = std::exp(x);
    return e / (T{1} + e);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    Tensor<T> out = a;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = sigmoid_scalar(out[i]);
    return out;
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
    Tensor<T> out = a;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(out[i]);
    return out;
}

/// Full reduction, ascending flat order.
template <typename T>
T sum(const Tensor<T>& a) {
    if (a.numel() == 0) throw DomainError("sum of empty tensor");
    T s{0};
    for (std::size_t i = 0; i < a.numel(); ++i) s += a[i];
    return s;
}

template <typename T>
T mean(const Tensor<T>& a) {
    return sum(a) / static_cast<T>(a.numel());
}

template <typename T>
T max(const Tensor<T>& a) {
    if (a.numel() == 0) throw DomainError("max of empty tensor");
    T m = a[0];
    for (std::size_t i = 1; i < a.numel(); ++i)
        if (a[i] > m) m = a[i];
    return m;
}

namespace detail {

template <typename T>
std::vector<std::size_t> reduced_shape(const Tensor<T>& a, std::size_t axis) {
    if (axis >= a.rank()) throw DimensionError("reduce: axis out of range");
    if (a.dim(axis) == 0) throw DomainError("reduce over empty axis");
    std::vector<std::size_t> s;
    for (std::size_t i = 0; i < a.rank(); ++i)
        if (i != axis) s.push_back(a.dim(i));
    if (s.empty()) s.push_back(1);
    return s;
}

// Iterates a[..., j, ...] for j along `axis`, visiting output positions in
// row-major order and axis elements in ascending order.
template <typename T, typename F>
void reduce_axis(const Tensor<T>& a, std::size_t axis, F&& combine) {
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= a.dim(i);
    for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
    const std::size_t extent = a.dim(axis);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t out_pos = o * inner + in;
            for (std::size_t j = 0; j < extent; ++j) {
                combine(out_pos, j, a[(o * extent + j) * inner + in]);
            }
        }
    }
}

}  // namespace detail

template <typename T>
Tensor<T> sum(const Tensor<T>& a, std::size_t axis) {
    Tensor<T> out(detail::reduced_shape(a, axis));
    detail::reduce_axis(a, axis, [&](std::size_t pos, std::size_t, T v) { out[pos] += v; });
    return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a, std::size_t axis) {
    Tensor<T> out = sum(a, axis);
    const T inv = T{1} / static_cast<T>(a.dim(axis));
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= inv;
    return out;
}

/// Max along one axis plus the winning index per output element, for
/// backprop routing. Ties resolve to the lowest index.
template <typename T>
struct AxisMax {
    Tensor<T> values;
    std::vector<std::size_t> argmax;
};

template <typename T>
AxisMax<T> max(const Tensor<T>& a, std::size_t axis) {
    AxisMax<T> r;
    r.values = Tensor<T>(detail::reduced_shape(a, axis));
    r.argmax.assign(r.values.numel(), 0);
    detail::reduce_axis(a, axis, [&](std::size_t pos, std::size_t j, T v) {
        if (j == 0 || v > r.values[pos]) {
            r.values[pos] = v;
            r.argmax[pos] = j;
        }
    });
    return r;
}

}  // namespace gramreg
