// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

#ifndef CSIPRED_TENSOR_HPP
#define CSIPRED_TENSOR_HPP

#include <Eigen/Dense>

#include <complex>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace csipred {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

/// Dense row-major N-d array backed by an Eigen column vector.
///
/// The last axis is contiguous. `matrix(cols)` views the storage as a
/// row-major (size / cols) x cols matrix, which is how every point-wise
/// linear map in the library is evaluated.
template <typename Scalar>
class Tensor {
public:
    using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
    using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using MatrixMap = Eigen::Map<RowMatrix>;
    using ConstMatrixMap = Eigen::Map<const RowMatrix>;

    Tensor() = default;

    explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(Vector::Zero(numel(shape_))) {}

    Tensor(Shape shape, Vector data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != numel(shape_))
            throw std::invalid_argument("Tensor: data size " + std::to_string(data_.size()) +
                                        " does not match shape " + to_string(shape_));
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor constant(Shape shape, Scalar value) {
        Tensor t(std::move(shape));
        t.data_.setConstant(value);
        return t;
    }

    static Tensor from(Shape shape, std::initializer_list<Scalar> values) {
        Vector v(static_cast<Index>(values.size()));
        Index i = 0;
        for (const auto& x : values) v[i++] = x;
        return Tensor(std::move(shape), std::move(v));
    }

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    Index size() const { return data_.size(); }
    bool empty() const { return data_.size() == 0; }

    /// Size of axis `axis`; negative values count from the end.
    Index dim(int axis) const {
        const int a = axis < 0 ? rank() + axis : axis;
        if (a < 0 || a >= rank()) throw std::out_of_range("Tensor::dim: axis out of range");
        return shape_[static_cast<std::size_t>(a)];
    }

    Vector& data() { return data_; }
    const Vector& data() const { return data_; }
    Scalar* ptr() { return data_.data(); }
    const Scalar* ptr() const { return data_.data(); }

    Scalar& operator[](Index i) { return data_[i]; }
    const Scalar& operator[](Index i) const { return data_[i]; }

    template <typename... I>
    Scalar& operator()(I... idx) {
        return data_[offset({static_cast<Index>(idx)...})];
    }
    template <typename... I>
    const Scalar& operator()(I... idx) const {
        return data_[offset({static_cast<Index>(idx)...})];
    }

    Index offset(std::initializer_list<Index> idx) const {
        if (idx.size() != shape_.size()) throw std::invalid_argument("Tensor: index rank mismatch");
        Index off = 0;
        std::size_t a = 0;
        for (Index i : idx) off = off * shape_[a++] + i;
        return off;
    }

    MatrixMap matrix(Index cols) {
        return MatrixMap(data_.data(), cols ? data_.size() / cols : 0, cols);
    }
    ConstMatrixMap matrix(Index cols) const {
        return ConstMatrixMap(data_.data(), cols ? data_.size() / cols : 0, cols);
    }
    MatrixMap matrix() { return matrix(shape_.empty() ? 1 : shape_.back()); }
    ConstMatrixMap matrix() const { return matrix(shape_.empty() ? 1 : shape_.back()); }

    Tensor reshaped(Shape shape) const {
        if (numel(shape) != size())
            throw std::invalid_argument("Tensor::reshaped: cannot view " + to_string(shape_) + " as " +
                                        to_string(shape));
        return Tensor(std::move(shape), data_);
    }

    template <typename Other>
    Tensor<Other> cast() const {
        return Tensor<Other>(shape_, data_.template cast<Other>());
    }

    bool operator==(const Tensor& other) const {
        return shape_ == other.shape_ && data_ == other.data_;
    }

private:
    Shape shape_;
    Vector data_;
};

using RealTensor = Tensor<float>;
using CsiTensor = Tensor<std::complex<float>>;

/// Generic axis permutation; `perm[i]` names the source axis of output axis i.
template <typename Scalar>
Tensor<Scalar> permute(const Tensor<Scalar>& x, const std::vector<int>& perm) {
    const int r = x.rank();
    if (static_cast<int>(perm.size()) != r) throw std::invalid_argument("permute: rank mismatch");
    Shape out_shape(static_cast<std::size_t>(r));
    std::vector<Index> in_strides(static_cast<std::size_t>(r), 1);
    for (int a = r - 2; a >= 0; --a) in_strides[a] = in_strides[a + 1] * x.shape()[a + 1];
    std::vector<Index> strides(static_cast<std::size_t>(r));
    for (int a = 0; a < r; ++a) {
        out_shape[a] = x.shape()[perm[a]];
        strides[a] = in_strides[perm[a]];
    }
    Tensor<Scalar> out(out_shape);
    std::vector<Index> counter(static_cast<std::size_t>(r), 0);
    Index src = 0;
    for (Index i = 0; i < out.size(); ++i) {
        out[i] = x[src];
        for (int a = r - 1; a >= 0; --a) {
            src += strides[a];
            if (++counter[a] < out_shape[a]) break;
            src -= strides[a] * out_shape[a];
            counter[a] = 0;
        }
    }
    return out;
}

inline std::vector<int> inverse_permutation(const std::vector<int>& perm) {
    std::vector<int> inv(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) inv[static_cast<std::size_t>(perm[i])] = static_cast<int>(i);
    return inv;
}

}  // namespace csipred

#endif  // CSIPRED_TENSOR_HPP
