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

#ifndef CSIPRED_AUTOGRAD_HPP
#define CSIPRED_AUTOGRAD_HPP

#include "csipred/tensor.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace csipred::ad {

template <typename Scalar>
struct Node {
    Tensor<Scalar> value;
    Tensor<Scalar> grad;  // empty until something flows into it
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    bool has_grad() const { return grad.size() == value.size() && grad.shape() == value.shape(); }

    Tensor<Scalar>& grad_buffer() {
        if (!has_grad()) grad = Tensor<Scalar>::zeros(value.shape());
        return grad;
    }
};

/// Handle on a node of the dynamically recorded computation graph.
///
/// Leaves created with `leaf(..., true)` collect gradients; every other
/// node keeps its parents alive only as long as a handle to it exists.
template <typename Scalar>
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node<Scalar>> node) : node_(std::move(node)) {}

    const Tensor<Scalar>& value() const { return node_->value; }
    Tensor<Scalar>& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    Index dim(int axis) const { return node_->value.dim(axis); }
    int rank() const { return node_->value.rank(); }

    bool requires_grad() const { return node_ && node_->requires_grad; }
    void set_requires_grad(bool flag) { node_->requires_grad = flag; }

    bool has_grad() const { return node_->has_grad(); }
    const Tensor<Scalar>& grad() const { return node_->grad; }
    void zero_grad() { node_->grad = Tensor<Scalar>(); }

    Node<Scalar>* node() const { return node_.get(); }
    const std::shared_ptr<Node<Scalar>>& shared() const { return node_; }
    explicit operator bool() const { return static_cast<bool>(node_); }

private:
    std::shared_ptr<Node<Scalar>> node_;
};

/// Thread-local switch; while disabled, ops record no graph.
class GradMode {
public:
    static bool enabled();
    static void set_enabled(bool flag);
};

class NoGradGuard {
public:
    NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
    ~NoGradGuard() { GradMode::set_enabled(previous_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

template <typename Scalar>
Var<Scalar> leaf(Tensor<Scalar> value, bool requires_grad = false) {
    auto node = std::make_shared<Node<Scalar>>();
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    return Var<Scalar>(std::move(node));
}

template <typename Scalar>
Var<Scalar> constant(Tensor<Scalar> value) {
    return leaf(std::move(value), false);
}

/// Seeds d(output)/d(output) = 1 for a scalar output and propagates.
template <typename Scalar>
void backward(const Var<Scalar>& output);

// ---- element-wise -------------------------------------------------------

template <typename Scalar> Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar> Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar> Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar> Var<Scalar> scale(const Var<Scalar>& a, Scalar factor);
template <typename Scalar> Var<Scalar> add_scalar(const Var<Scalar>& a, Scalar offset);

/// x + y where y's shape equals the trailing axes of x.
template <typename Scalar> Var<Scalar> add_trailing(const Var<Scalar>& x, const Var<Scalar>& y);
/// x * w where w's shape equals the leading axes of x (w broadcast over the rest).
template <typename Scalar> Var<Scalar> mul_leading(const Var<Scalar>& x, const Var<Scalar>& w);

template <typename Scalar> Var<Scalar> relu(const Var<Scalar>& x);
template <typename Scalar> Var<Scalar> sigmoid(const Var<Scalar>& x);
template <typename Scalar> Var<Scalar> tanh(const Var<Scalar>& x);
/// Tanh approximation used by GPT-2.
template <typename Scalar> Var<Scalar> gelu(const Var<Scalar>& x);

// ---- shape --------------------------------------------------------------

template <typename Scalar> Var<Scalar> reshape(const Var<Scalar>& x, Shape shape);
template <typename Scalar> Var<Scalar> permute(const Var<Scalar>& x, std::vector<int> perm);
template <typename Scalar> Var<Scalar> slice(const Var<Scalar>& x, int axis, Index start, Index length);
template <typename Scalar> Var<Scalar> concat(const std::vector<Var<Scalar>>& parts, int axis);

// ---- linear algebra -----------------------------------------------------

/// y[..., o] = sum_i x[..., i] * weight[o, i] + bias[o]; bias may be empty.
template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias);

/// Batched product over the leading axis: [G, m, k] x [G, k, n] (or [G, n, k] when transposed).
template <typename Scalar>
Var<Scalar> bmm(const Var<Scalar>& a, const Var<Scalar>& b, bool transpose_b = false);

/// Softmax over the last axis. With `causal`, the input is [..., Lq, Lk] and
/// entries with key index > query index are excluded.
template <typename Scalar> Var<Scalar> softmax(const Var<Scalar>& x, bool causal = false);

/// Layer normalisation over the last axis with affine gain/bias.
template <typename Scalar>
Var<Scalar> layer_norm(const Var<Scalar>& x, const Var<Scalar>& gain, const Var<Scalar>& bias,
                       Scalar eps = Scalar(1e-5));

// ---- convolution / pooling ----------------------------------------------

/// 2-D convolution, stride 1, zero padding `pad`, input [B, Cin, H, W],
/// weight [Cout, Cin, kh, kw], bias [Cout] (may be empty).
template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias, int pad);

/// Adaptive average pooling of [B, C, H, W] to [B, C, out_h, out_w]; bin i
/// covers floor(i*S/O) .. ceil((i+1)*S/O).
template <typename Scalar>
Var<Scalar> adaptive_avg_pool2d(const Var<Scalar>& x, Index out_h, Index out_w);

/// Per-channel projection: x [B, C, S], filters [C, S] -> [B, C]. Filters are constants.
template <typename Scalar>
Var<Scalar> channel_project(const Var<Scalar>& x, const Tensor<Scalar>& filters);

/// Mean over the last axis.
template <typename Scalar> Var<Scalar> mean_last(const Var<Scalar>& x);

// ---- reductions ---------------------------------------------------------

template <typename Scalar> Var<Scalar> sum(const Var<Scalar>& x);

/// ||pred - truth||^2 / ||truth||^2 with `truth` treated as data.
template <typename Scalar> Var<Scalar> nmse_loss(const Var<Scalar>& pred, const Tensor<Scalar>& truth);

}  // namespace csipred::ad

#endif  // CSIPRED_AUTOGRAD_HPP
