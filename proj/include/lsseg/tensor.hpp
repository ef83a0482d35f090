#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lsseg/errors.hpp"

namespace lsseg {

/// Dimensions of a 4-D (batch, channel, height, width) tensor.
struct Shape4 {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    std::size_t numel() const {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    friend bool operator==(const Shape4&, const Shape4&) = default;
};

std::string to_string(const Shape4& s);

/// Dense row-major (w fastest) 4-D array.
template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape4 shape, T fill = T(0));
    Tensor(Shape4 shape, std::vector<T> data);

    const Shape4& shape() const { return shape_; }
    int n() const { return shape_.n; }
    int c() const { return shape_.c; }
    int h() const { return shape_.h; }
    int w() const { return shape_.w; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    std::size_t index(int ni, int ci, int yi, int xi) const {
        return ((static_cast<std::size_t>(ni) * shape_.c + ci) * shape_.h + yi) * shape_.w + xi;
    }
    T& at(int ni, int ci, int yi, int xi) { return data_[index(ni, ci, yi, xi)]; }
    const T& at(int ni, int ci, int yi, int xi) const { return data_[index(ni, ci, yi, xi)]; }

    /// Pointer to the start of the (ni, ci) plane.
    T* plane(int ni, int ci) { return data_.data() + index(ni, ci, 0, 0); }
    const T* plane(int ni, int ci) const { return data_.data() + index(ni, ci, 0, 0); }

    void fill(T v);

    template <class U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape4 shape_{};
    std::vector<T> data_;
};

/// A trainable tensor with its gradient and SGD momentum buffer.
template <class T>
struct Param {
    Tensor<T> value;
    Tensor<T> grad;
    Tensor<T> momentum;

    Param() = default;
    explicit Param(Tensor<T> v)
        : value(std::move(v)), grad(value.shape()), momentum(value.shape()) {}

    void zero_grad() { grad.fill(T(0)); }
};

/// Per-pixel class labels, (n, h, w).
struct LabelMap {
    int n = 0;
    int h = 0;
    int w = 0;
    std::vector<std::int32_t> labels;

    LabelMap() = default;
    LabelMap(int n_, int h_, int w_, std::int32_t fill = 0)
        : n(n_), h(h_), w(w_), labels(static_cast<std::size_t>(n_) * h_ * w_, fill) {}

    std::size_t size() const { return labels.size(); }
    std::int32_t& at(int ni, int yi, int xi) {
        return labels[(static_cast<std::size_t>(ni) * h + yi) * w + xi];
    }
    std::int32_t at(int ni, int yi, int xi) const {
        return labels[(static_cast<std::size_t>(ni) * h + yi) * w + xi];
    }
};

/// Per-class loss weights; one strictly positive entry per class.
class ClassWeights {
public:
    ClassWeights() = default;
    explicit ClassWeights(std::vector<double> w);

    std::size_t size() const { return w_.size(); }
    double operator[](std::size_t c) const { return w_[c]; }
    const std::vector<double>& values() const { return w_; }

    /// (0.2, 1.2, 2.2) for background, liver, lesion.
    static ClassWeights three_class();
    /// (0.2, 1.2) for background, liver.
    static ClassWeights two_class();

private:
    std::vector<double> w_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace lsseg
