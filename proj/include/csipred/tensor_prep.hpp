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

#ifndef CSIPRED_TENSOR_PREP_HPP
#define CSIPRED_TENSOR_PREP_HPP

#include "csipred/tensor.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <utility>

namespace csipred {

inline constexpr double kStdFloor = 1e-8;

/// [Re(vec(H)); Im(vec(H))] with column-stacking vec.
template <typename Derived>
auto vectorize_csi(const Eigen::MatrixBase<Derived>& h) {
    using Real = typename Eigen::NumTraits<typename Derived::Scalar>::Real;
    const Index n = h.size();
    Eigen::Matrix<Real, Eigen::Dynamic, 1> out(2 * n);
    Index i = 0;
    for (Index c = 0; c < h.cols(); ++c)
        for (Index r = 0; r < h.rows(); ++r, ++i) {
            out[i] = std::real(h(r, c));
            out[n + i] = std::imag(h(r, c));
        }
    return out;
}

template <typename Derived>
auto devectorize_csi(const Eigen::MatrixBase<Derived>& v, Index n_bs, Index n_ue) {
    using Real = typename Derived::Scalar;
    const Index n = n_bs * n_ue;
    if (v.size() != 2 * n)
        throw std::invalid_argument("devectorize_csi: length " + std::to_string(v.size()) + " != 2 * " +
                                    std::to_string(n_bs) + " * " + std::to_string(n_ue));
    Eigen::Matrix<std::complex<Real>, Eigen::Dynamic, Eigen::Dynamic> h(n_bs, n_ue);
    Index i = 0;
    for (Index c = 0; c < n_ue; ++c)
        for (Index r = 0; r < n_bs; ++r, ++i) h(r, c) = std::complex<Real>(v[i], v[n + i]);
    return h;
}

/// [B, K, L, N] -> [B*K, L, N]
template <typename Scalar>
Tensor<Scalar> merge_subcarriers(const Tensor<Scalar>& x) {
    if (x.rank() != 4) throw std::invalid_argument("merge_subcarriers: expects [B, K, L, N]");
    return x.reshaped({x.dim(0) * x.dim(1), x.dim(2), x.dim(3)});
}

/// [B*K, L, N] -> [B, K, L, N]
template <typename Scalar>
Tensor<Scalar> split_subcarriers(const Tensor<Scalar>& x, Index subcarriers) {
    if (x.rank() != 3 || subcarriers < 1 || x.dim(0) % subcarriers != 0)
        throw std::invalid_argument("split_subcarriers: leading axis not divisible by subcarrier count");
    return x.reshaped({x.dim(0) / subcarriers, subcarriers, x.dim(1), x.dim(2)});
}

/// Mean and population standard deviation over every element.
struct NormStats {
    double mean = 0.0;
    double std = 1.0;
};

template <typename Scalar>
NormStats compute_stats(const Tensor<Scalar>& x) {
    if (x.empty()) throw std::invalid_argument("normalize: empty tensor");
    const auto values = x.data().template cast<double>().array();
    const double mean = values.mean();
    const double var = (values - mean).square().mean();
    return {mean, std::max(std::sqrt(var), kStdFloor)};
}

template <typename Scalar>
Tensor<Scalar> apply_normalization(const Tensor<Scalar>& x, const NormStats& stats) {
    return Tensor<Scalar>(x.shape(),
                          ((x.data().template cast<double>().array() - stats.mean) / stats.std).template cast<Scalar>().matrix());
}

template <typename Scalar>
std::pair<Tensor<Scalar>, NormStats> normalize(const Tensor<Scalar>& x) {
    const NormStats stats = compute_stats(x);
    return {apply_normalization(x, stats), stats};
}

template <typename Scalar>
Tensor<Scalar> denormalize(const Tensor<Scalar>& x, const NormStats& stats) {
    return Tensor<Scalar>(x.shape(),
                          (x.data().template cast<double>().array() * stats.std + stats.mean).template cast<Scalar>().matrix());
}

/// History / target pair of one realization, one row per subcarrier.
template <typename Scalar>
struct RealCsiWindow {
    Tensor<Scalar> history;  // [K, L, N]
    Tensor<Scalar> target;   // [K, P, N]
};

/// Vectorizes every (t, k) slice of a [T, K, N_BS, N_UE] realization and
/// splits the time axis at `history`.
template <typename Scalar>
RealCsiWindow<Scalar> to_real_window(const CsiTensor& h, Index history) {
    if (h.rank() != 4) throw std::invalid_argument("to_real_window: expects [T, K, N_BS, N_UE]");
    const Index steps = h.dim(0), k = h.dim(1), n_bs = h.dim(2), n_ue = h.dim(3);
    if (history < 1 || history >= steps) throw std::invalid_argument("to_real_window: history out of range");
    const Index n = 2 * n_bs * n_ue;
    const Index horizon = steps - history;
    RealCsiWindow<Scalar> w{Tensor<Scalar>({k, history, n}), Tensor<Scalar>({k, horizon, n})};
    using Mat = Eigen::Matrix<std::complex<float>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    for (Index t = 0; t < steps; ++t)
        for (Index kk = 0; kk < k; ++kk) {
            Eigen::Map<const Mat> slice(h.ptr() + (t * k + kk) * n_bs * n_ue, n_bs, n_ue);
            const auto v = vectorize_csi(slice).template cast<Scalar>().eval();
            if (t < history)
                w.history.data().segment((kk * history + t) * n, n) = v;
            else
                w.target.data().segment((kk * horizon + (t - history)) * n, n) = v;
        }
    return w;
}

}  // namespace csipred

#endif  // CSIPRED_TENSOR_PREP_HPP
