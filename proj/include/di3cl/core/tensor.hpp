#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "di3cl/core/error.hpp"

namespace di3cl {

/// Heap storage aligned to the widest SIMD packet. Vectorized reductions over a
/// mapped buffer peel a scalar prologue up to the first aligned element, so an
/// arbitrary malloc address would change the summation order between runs.
template <typename T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

/// Dense rank-4 array, row-major. Lower ranks use trailing extents of 1.
///
/// Feature batches flowing through the network use the channel-major layout
/// (C, N, H, W): every channel of the whole batch is one contiguous block, so a
/// convolution is a single GEMM and batch normalization reduces over a
/// contiguous span. Single images are (C, 1, H, W).
template <typename T>
class Tensor {
public:
    using Shape = std::array<int, 4>;

    Tensor() : shape_{0, 0, 0, 0} {}
    explicit Tensor(Shape s, T fill = T(0)) : shape_(s), data_(count(s), fill) {}
    Tensor(int d0, int d1, int d2, int d3, T fill = T(0)) : Tensor(Shape{d0, d1, d2, d3}, fill) {}

    const Shape& shape() const { return shape_; }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> span() { return data_; }
    std::span<const T> span() const { return data_; }
    AlignedVector<T>& storage() { return data_; }
    const AlignedVector<T>& storage() const { return data_; }

    std::size_t offset(int a, int b, int c, int d) const {
        return ((static_cast<std::size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d;
    }
    T& operator()(int a, int b, int c, int d) { return data_[offset(a, b, c, d)]; }
    T operator()(int a, int b, int c, int d) const { return data_[offset(a, b, c, d)]; }
    T& operator[](std::size_t i) { return data_[i]; }
    T operator[](std::size_t i) const { return data_[i]; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
    void resize(Shape s) {
        shape_ = s;
        data_.assign(count(s), T(0));
    }
    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    Tensor& operator+=(const Tensor& o) {
        require_same(o, "+=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }

    void require_same(const Tensor& o, const char* what) const {
        if (!same_shape(o)) throw ShapeError(std::string("tensor shape mismatch in ") + what);
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_);
        std::transform(data_.begin(), data_.end(), out.data(), [](T v) { return static_cast<U>(v); });
        return out;
    }

    static std::size_t count(const Shape& s) {
        return static_cast<std::size_t>(s[0]) * s[1] * s[2] * s[3];
    }

private:
    Shape shape_;
    AlignedVector<T> data_;
};

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

/// Views a tensor as a rows x (size/rows) row-major matrix.
template <typename T>
MatMap<T> as_matrix(Tensor<T>& t, int rows) {
    return MatMap<T>(t.data(), rows, static_cast<Eigen::Index>(t.size() / rows));
}
template <typename T>
ConstMatMap<T> as_matrix(const Tensor<T>& t, int rows) {
    return ConstMatMap<T>(t.data(), rows, static_cast<Eigen::Index>(t.size() / rows));
}

/// Copies image n of a (C, N, H, W) batch into a (C, 1, H, W) tensor.
template <typename T>
Tensor<T> slice_batch(const Tensor<T>& batch, int n) {
    const int c = batch.dim(0), h = batch.dim(2), w = batch.dim(3);
    Tensor<T> out(c, 1, h, w);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int ch = 0; ch < c; ++ch)
        std::copy_n(batch.data() + batch.offset(ch, n, 0, 0), plane, out.data() + out.offset(ch, 0, 0, 0));
    return out;
}

/// Gathers single-channel H x W images into a (1, N, H, W) batch.
template <typename T>
Tensor<T> stack_images(std::span<const Tensor<T>> images) {
    if (images.empty()) throw ShapeError("stack_images: empty input");
    const auto s = images.front().shape();
    const int n = static_cast<int>(images.size());
    Tensor<T> out(s[0], n, s[2], s[3]);
    const std::size_t plane = static_cast<std::size_t>(s[2]) * s[3];
    for (int i = 0; i < n; ++i) {
        if (images[static_cast<std::size_t>(i)].shape() != s) throw ShapeError("stack_images: ragged batch");
        for (int ch = 0; ch < s[0]; ++ch)
            std::copy_n(images[static_cast<std::size_t>(i)].data() + images[static_cast<std::size_t>(i)].offset(ch, 0, 0, 0),
                        plane, out.data() + out.offset(ch, i, 0, 0));
    }
    return out;
}

}  // namespace di3cl
