#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "waveq/errors.hpp"

namespace waveq {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

inline Index shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

/// Dense n-dimensional array stored contiguously in row-major order.
///
/// Rank-1 and rank-2 tensors expose Eigen views through vector() and
/// matrix(), so arithmetic is written as ordinary Eigen expressions.
template <typename Scalar>
class Tensor {
public:
    using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
    using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

    Tensor() = default;

    explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(Vector<Scalar>::Zero(shape_size(shape_))) {}

    Tensor(Shape shape, Vector<Scalar> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (shape_size(shape_) != data_.size())
            throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_string(shape_));
    }

    Tensor(Shape shape, std::initializer_list<Scalar> values)
        : Tensor(std::move(shape), Eigen::Map<const Vector<Scalar>>(values.begin(), Index(values.size()))) {}

    static Tensor from_matrix(const RowMatrix<Scalar>& m) {
        Tensor t({m.rows(), m.cols()});
        t.matrix() = m;
        return t;
    }

    static Tensor from_vector(const Vector<Scalar>& v) { return Tensor({v.size()}, v); }

    const Shape& shape() const { return shape_; }
    Index rank() const { return Index(shape_.size()); }
    Index size() const { return data_.size(); }
    Index dim(Index i) const { return shape_.at(std::size_t(i)); }

    Vector<Scalar>& vector() { return data_; }
    const Vector<Scalar>& vector() const { return data_; }

    Scalar* data() { return data_.data(); }
    const Scalar* data() const { return data_.data(); }

    Scalar& operator[](Index i) { return data_[i]; }
    const Scalar& operator[](Index i) const { return data_[i]; }

    /// Rank-2 view; rank-1 tensors are viewed as a single row.
    MatrixMap matrix() {
        auto [r, c] = matrix_extents();
        return MatrixMap(data_.data(), r, c);
    }
    ConstMatrixMap matrix() const {
        auto [r, c] = matrix_extents();
        return ConstMatrixMap(data_.data(), r, c);
    }

    /// Same data, new shape with identical element count.
    Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

    bool all_finite() const { return data_.allFinite(); }

    template <typename Other>
    Tensor<Other> cast() const {
        return Tensor<Other>(shape_, data_.template cast<Other>());
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    std::pair<Index, Index> matrix_extents() const {
        if (shape_.size() == 2) return {shape_[0], shape_[1]};
        if (shape_.size() == 1) return {1, shape_[0]};
        throw DimensionError("matrix view requires rank 1 or 2, got shape " + shape_string(shape_));
    }

    Shape shape_;
    Vector<Scalar> data_;
};

using TensorD = Tensor<double>;

}  // namespace waveq
