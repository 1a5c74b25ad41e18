// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dmae {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

/// Raised when tensor shapes do not line up for an operation.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Raised in checked mode when an op produces a non-finite value, and by the
/// training loops when a loss turns NaN.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

template <typename S>
using RowMatrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename S>
using MatrixMap = Eigen::Map<RowMatrix<S>>;

template <typename S>
using ConstMatrixMap = Eigen::Map<const RowMatrix<S>>;

/// Dense row-major tensor. The last axis is the contiguous one; `rows()` folds
/// every leading axis so any tensor can be viewed as a (rows x cols) matrix.
template <typename S>
class Tensor {
public:
    using value_type = S;

    Tensor() = default;

    explicit Tensor(Shape shape, S fill = S{0})
        : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

    Tensor(Shape shape, std::vector<S> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != shape_size(shape_))
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
    }

    [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
    [[nodiscard]] std::size_t rank() const noexcept { return shape_.size(); }
    [[nodiscard]] std::size_t dim(std::size_t i) const { return shape_.at(i); }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
    [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

    [[nodiscard]] std::size_t cols() const { return shape_.empty() ? 1 : shape_.back(); }
    [[nodiscard]] std::size_t rows() const { return cols() == 0 ? 0 : size() / cols(); }

    [[nodiscard]] S* ptr() noexcept { return data_.data(); }
    [[nodiscard]] const S* ptr() const noexcept { return data_.data(); }
    [[nodiscard]] std::span<S> data() noexcept { return data_; }
    [[nodiscard]] std::span<const S> data() const noexcept { return data_; }
    [[nodiscard]] const std::vector<S>& vec() const noexcept { return data_; }

    S& operator[](std::size_t i) { return data_[i]; }
    const S& operator[](std::size_t i) const { return data_[i]; }

    template <typename... I>
    S& at(I... idx) {
        return data_[offset({static_cast<std::size_t>(idx)...})];
    }
    template <typename... I>
    const S& at(I... idx) const {
        return data_[offset({static_cast<std::size_t>(idx)...})];
    }

    [[nodiscard]] MatrixMap<S> matrix() {
        return MatrixMap<S>(data_.data(), static_cast<Eigen::Index>(rows()),
                            static_cast<Eigen::Index>(cols()));
    }
    [[nodiscard]] ConstMatrixMap<S> matrix() const {
        return ConstMatrixMap<S>(data_.data(), static_cast<Eigen::Index>(rows()),
                                 static_cast<Eigen::Index>(cols()));
    }

    void fill(S v) { std::fill(data_.begin(), data_.end(), v); }

    [[nodiscard]] Tensor reshaped(Shape s) const {
        if (shape_size(s) != size())
            throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
        return Tensor(std::move(s), data_);
    }

    template <typename T>
    [[nodiscard]] Tensor<T> cast() const {
        std::vector<T> out(data_.size());
        std::transform(data_.begin(), data_.end(), out.begin(), [](S v) { return static_cast<T>(v); });
        return Tensor<T>(shape_, std::move(out));
    }

    [[nodiscard]] bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](S v) { return std::isfinite(v); });
    }

    Tensor& operator+=(const Tensor& o) {
        require_same_shape(o, "+=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

    void require_same_shape(const Tensor& o, const char* what) const {
        if (shape_ != o.shape_)
            throw ShapeError(std::string(what) + ": shape " + shape_str(shape_) + " vs " +
                             shape_str(o.shape_));
    }

private:
    std::size_t offset(std::initializer_list<std::size_t> idx) const {
        if (idx.size() != shape_.size())
            throw ShapeError("index rank " + std::to_string(idx.size()) + " for tensor of shape " +
                             shape_str(shape_));
        std::size_t off = 0;
        std::size_t k = 0;
        for (std::size_t i : idx) off = off * shape_[k++] + i;
        return off;
    }

    Shape shape_;
    std::vector<S> data_;
};

/// Swap the last two axes of a rank-3 tensor: (B, A, C) -> (B, C, A).
template <typename S>
Tensor<S> swap_last_axes(const Tensor<S>& x) {
    if (x.rank() != 3) throw ShapeError("swap_last_axes expects rank 3, got " + shape_str(x.shape()));
    const std::size_t b = x.dim(0), a = x.dim(1), c = x.dim(2);
    Tensor<S> out({b, c, a});
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < a; ++j)
            for (std::size_t k = 0; k < c; ++k) out[(i * c + k) * a + j] = x[(i * a + j) * c + k];
    return out;
}

}  // namespace dmae
