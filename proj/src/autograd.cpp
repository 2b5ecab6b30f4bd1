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

#include "csipred/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace csipred::ad {

namespace {
thread_local bool grad_mode_enabled = true;
}

bool GradMode::enabled() { return grad_mode_enabled; }
void GradMode::set_enabled(bool flag) { grad_mode_enabled = flag; }

namespace {

template <typename Scalar>
using NodePtr = std::shared_ptr<Node<Scalar>>;

template <typename Scalar>
Var<Scalar> make_result(Tensor<Scalar> value, std::vector<NodePtr<Scalar>> parents,
                        std::function<void(Node<Scalar>&)> fn) {
    auto node = std::make_shared<Node<Scalar>>();
    node->value = std::move(value);
    if (GradMode::enabled()) {
        const bool any = std::any_of(parents.begin(), parents.end(),
                                     [](const NodePtr<Scalar>& p) { return p && p->requires_grad; });
        if (any) {
            node->requires_grad = true;
            node->parents = std::move(parents);
            node->backward_fn = std::move(fn);
        }
    }
    return Var<Scalar>(std::move(node));
}

template <typename Scalar>
void check_same_shape(const Var<Scalar>& a, const Var<Scalar>& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                                    to_string(b.shape()));
}

template <typename Scalar>
bool wants(const NodePtr<Scalar>& p) {
    return p && p->requires_grad;
}

template <typename Scalar, typename Derivative>
Var<Scalar> unary(const Var<Scalar>& x, Tensor<Scalar> out, Derivative derivative) {
    return make_result<Scalar>(std::move(out), {x.shared()}, [derivative](Node<Scalar>& self) {
        auto& px = self.parents[0];
        if (!wants(px)) return;
        px->grad_buffer().data().array() +=
            self.grad.data().array() * derivative(px->value.data().array(), self.value.data().array());
    });
}

}  // namespace

template <typename Scalar>
void backward(const Var<Scalar>& output) {
    if (output.value().size() != 1) throw std::invalid_argument("backward: output must be a scalar");
    if (!output.requires_grad()) return;

    std::vector<Node<Scalar>*> order;
    std::unordered_set<Node<Scalar>*> visited;
    std::vector<std::pair<Node<Scalar>*, std::size_t>> stack{{output.node(), 0}};
    visited.insert(output.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<Scalar>* p = node->parents[next++].get();
            if (p && p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    output.node()->grad_buffer().data().array() += Scalar(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<Scalar>* node = *it;
        if (node->backward_fn && node->has_grad()) node->backward_fn(*node);
    }
}

// ---- element-wise -------------------------------------------------------

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
    check_same_shape(a, b, "add");
    Tensor<Scalar> out(a.shape(), a.value().data() + b.value().data());
    return make_result<Scalar>(std::move(out), {a.shared(), b.shared()}, [](Node<Scalar>& self) {
        for (auto& p : self.parents)
            if (wants(p)) p->grad_buffer().data() += self.grad.data();
    });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
    check_same_shape(a, b, "sub");
    Tensor<Scalar> out(a.shape(), a.value().data() - b.value().data());
    return make_result<Scalar>(std::move(out), {a.shared(), b.shared()}, [](Node<Scalar>& self) {
        if (wants(self.parents[0])) self.parents[0]->grad_buffer().data() += self.grad.data();
        if (wants(self.parents[1])) self.parents[1]->grad_buffer().data() -= self.grad.data();
    });
}

template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
    check_same_shape(a, b, "mul");
    Tensor<Scalar> out(a.shape(), a.value().data().cwiseProduct(b.value().data()));
    return make_result<Scalar>(std::move(out), {a.shared(), b.shared()}, [](Node<Scalar>& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (wants(pa)) pa->grad_buffer().data() += self.grad.data().cwiseProduct(pb->value.data());
        if (wants(pb)) pb->grad_buffer().data() += self.grad.data().cwiseProduct(pa->value.data());
    });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar factor) {
    Tensor<Scalar> out(a.shape(), a.value().data() * factor);
    return make_result<Scalar>(std::move(out), {a.shared()}, [factor](Node<Scalar>& self) {
        if (wants(self.parents[0])) self.parents[0]->grad_buffer().data() += self.grad.data() * factor;
    });
}

template <typename Scalar>
Var<Scalar> add_scalar(const Var<Scalar>& a, Scalar offset) {
    Tensor<Scalar> out(a.shape(), a.value().data().array() + offset);
    return make_result<Scalar>(std::move(out), {a.shared()}, [](Node<Scalar>& self) {
        if (wants(self.parents[0])) self.parents[0]->grad_buffer().data() += self.grad.data();
    });
}

template <typename Scalar>
Var<Scalar> add_trailing(const Var<Scalar>& x, const Var<Scalar>& y) {
    const Shape& xs = x.shape();
    const Shape& ys = y.shape();
    if (ys.size() > xs.size() || !std::equal(ys.begin(), ys.end(), xs.end() - static_cast<long>(ys.size())))
        throw std::invalid_argument("add_trailing: " + to_string(ys) + " is not a suffix of " + to_string(xs));
    const Index cols = y.value().size();
    Tensor<Scalar> out = x.value();
    out.matrix(cols).rowwise() += y.value().data().transpose();
    return make_result<Scalar>(std::move(out), {x.shared(), y.shared()}, [cols](Node<Scalar>& self) {
        if (wants(self.parents[0])) self.parents[0]->grad_buffer().data() += self.grad.data();
        if (wants(self.parents[1]))
            self.parents[1]->grad_buffer().data() += self.grad.matrix(cols).colwise().sum().transpose();
    });
}

template <typename Scalar>
Var<Scalar> mul_leading(const Var<Scalar>& x, const Var<Scalar>& w) {
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    if (ws.size() > xs.size() || !std::equal(ws.begin(), ws.end(), xs.begin()))
        throw std::invalid_argument("mul_leading: " + to_string(ws) + " is not a prefix of " + to_string(xs));
    const Index inner = x.value().size() / std::max<Index>(w.value().size(), 1);
    Tensor<Scalar> out = x.value();
    out.matrix(inner).array().colwise() *= w.value().data().array();
    return make_result<Scalar>(std::move(out), {x.shared(), w.shared()}, [inner](Node<Scalar>& self) {
        auto& px = self.parents[0];
        auto& pw = self.parents[1];
        auto g = self.grad.matrix(inner);
        if (wants(px))
            px->grad_buffer().matrix(inner).array() += g.array().colwise() * pw->value.data().array();
        if (wants(pw))
            pw->grad_buffer().data() += g.cwiseProduct(px->value.matrix(inner)).rowwise().sum();
    });
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& x) {
    Tensor<Scalar> out(x.shape(), x.value().data().cwiseMax(Scalar(0)));
    return unary(x, std::move(out), [](const auto& in, const auto&) { return (in > Scalar(0)).template cast<Scalar>(); });
}

template <typename Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& x) {
    Tensor<Scalar> out(x.shape(), (Scalar(1) / (Scalar(1) + (-x.value().data().array()).exp())).matrix());
    return unary(x, std::move(out), [](const auto&, const auto& y) { return y * (Scalar(1) - y); });
}

template <typename Scalar>
Var<Scalar> tanh(const Var<Scalar>& x) {
    Tensor<Scalar> out(x.shape(), x.value().data().array().tanh().matrix());
    return unary(x, std::move(out), [](const auto&, const auto& y) { return Scalar(1) - y * y; });
}

template <typename Scalar>
Var<Scalar> gelu(const Var<Scalar>& x) {
    constexpr double kAlpha = 0.7978845608028654;  // sqrt(2 / pi)
    constexpr double kBeta = 0.044715;
    const auto a = Scalar(kAlpha);
    const auto b = Scalar(kBeta);
    const auto& in = x.value().data().array();
    Tensor<Scalar> out(x.shape(), (Scalar(0.5) * in * (Scalar(1) + (a * (in + b * in.cube())).tanh())).matrix());
    return unary(x, std::move(out), [a, b](const auto& v, const auto&) {
        auto t = (a * (v + b * v.cube())).tanh();
        return Scalar(0.5) * (Scalar(1) + t) +
               Scalar(0.5) * v * (Scalar(1) - t * t) * a * (Scalar(1) + Scalar(3) * b * v.square());
    });
}

// ---- shape --------------------------------------------------------------

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& x, Shape shape) {
    Tensor<Scalar> out = x.value().reshaped(std::move(shape));
    return make_result<Scalar>(std::move(out), {x.shared()}, [](Node<Scalar>& self) {
        if (wants(self.parents[0])) self.parents[0]->grad_buffer().data() += self.grad.data();
    });
}

template <typename Scalar>
Var<Scalar> permute(const Var<Scalar>& x, std::vector<int> perm) {
    Tensor<Scalar> out = csipred::permute(x.value(), perm);
    return make_result<Scalar>(std::move(out), {x.shared()}, [perm](Node<Scalar>& self) {
        if (wants(self.parents[0]))
            self.parents[0]->grad_buffer().data() += csipred::permute(self.grad, inverse_permutation(perm)).data();
    });
}

namespace {
struct AxisSplit {
    Index outer = 1;
    Index extent = 1;
    Index inner = 1;
};

AxisSplit split_at(const Shape& shape, int axis) {
    AxisSplit s;
    for (int a = 0; a < axis; ++a) s.outer *= shape[a];
    s.extent = shape[axis];
    for (std::size_t a = static_cast<std::size_t>(axis) + 1; a < shape.size(); ++a) s.inner *= shape[a];
    return s;
}

int normalize_axis(int axis, int rank) {
    const int a = axis < 0 ? axis + rank : axis;
    if (a < 0 || a >= rank) throw std::out_of_range("axis out of range");
    return a;
}
}  // namespace

template <typename Scalar>
Var<Scalar> slice(const Var<Scalar>& x, int axis, Index start, Index length) {
    axis = normalize_axis(axis, x.rank());
    const AxisSplit s = split_at(x.shape(), axis);
    if (start < 0 || length < 0 || start + length > s.extent) throw std::out_of_range("slice: range out of bounds");
    Shape shape = x.shape();
    shape[axis] = length;
    Tensor<Scalar> out(shape);
    const Index block = length * s.inner;
    for (Index o = 0; o < s.outer; ++o)
        out.data().segment(o * block, block) = x.value().data().segment((o * s.extent + start) * s.inner, block);
    return make_result<Scalar>(std::move(out), {x.shared()}, [s, start, block](Node<Scalar>& self) {
        auto& px = self.parents[0];
        if (!wants(px)) return;
        auto& g = px->grad_buffer();
        for (Index o = 0; o < s.outer; ++o)
            g.data().segment((o * s.extent + start) * s.inner, block) += self.grad.data().segment(o * block, block);
    });
}

template <typename Scalar>
Var<Scalar> concat(const std::vector<Var<Scalar>>& parts, int axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    axis = normalize_axis(axis, parts.front().rank());
    Shape shape = parts.front().shape();
    shape[axis] = 0;
    for (const auto& p : parts) {
        Shape ps = p.shape();
        if (static_cast<int>(ps.size()) != static_cast<int>(shape.size()))
            throw std::invalid_argument("concat: rank mismatch");
        shape[axis] += ps[axis];
        ps[axis] = shape[axis];
        if (ps != shape) throw std::invalid_argument("concat: shape mismatch off the concatenation axis");
    }
    const AxisSplit s = split_at(shape, axis);
    Tensor<Scalar> out(shape);
    std::vector<Index> offsets;
    std::vector<NodePtr<Scalar>> parents;
    Index offset = 0;
    for (const auto& p : parts) {
        const Index len = p.shape()[axis];
        const Index block = len * s.inner;
        for (Index o = 0; o < s.outer; ++o)
            out.data().segment((o * s.extent + offset) * s.inner, block) = p.value().data().segment(o * block, block);
        offsets.push_back(offset);
        parents.push_back(p.shared());
        offset += len;
    }
    return make_result<Scalar>(std::move(out), std::move(parents), [s, offsets, axis](Node<Scalar>& self) {
        for (std::size_t i = 0; i < self.parents.size(); ++i) {
            auto& p = self.parents[i];
            if (!wants(p)) continue;
            const Index block = p->value.shape()[axis] * s.inner;
            auto& g = p->grad_buffer();
            for (Index o = 0; o < s.outer; ++o)
                g.data().segment(o * block, block) +=
                    self.grad.data().segment((o * s.extent + offsets[i]) * s.inner, block);
        }
    });
}

// ---- linear algebra -----------------------------------------------------

template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias) {
    if (weight.rank() != 2) throw std::invalid_argument("linear: weight must be rank 2");
    const Index out_features = weight.dim(0);
    const Index in_features = weight.dim(1);
    if (x.rank() < 1 || x.dim(-1) != in_features)
        throw std::invalid_argument("linear: input " + to_string(x.shape()) + " does not end in " +
                                    std::to_string(in_features));
    const bool has_bias = static_cast<bool>(bias);
    if (has_bias && bias.value().size() != out_features) throw std::invalid_argument("linear: bias size mismatch");
    Shape shape = x.shape();
    shape.back() = out_features;
    Tensor<Scalar> out(shape);
    out.matrix(out_features).noalias() = x.value().matrix(in_features) * weight.value().matrix(in_features).transpose();
    if (has_bias) out.matrix(out_features).rowwise() += bias.value().data().transpose();
    std::vector<NodePtr<Scalar>> parents{x.shared(), weight.shared()};
    if (has_bias) parents.push_back(bias.shared());
    return make_result<Scalar>(std::move(out), std::move(parents),
                               [in_features, out_features](Node<Scalar>& self) {
        auto& px = self.parents[0];
        auto& pw = self.parents[1];
        auto g = self.grad.matrix(out_features);
        if (wants(px)) px->grad_buffer().matrix(in_features).noalias() += g * pw->value.matrix(in_features);
        if (wants(pw)) pw->grad_buffer().matrix(in_features).noalias() += g.transpose() * px->value.matrix(in_features);
        if (self.parents.size() > 2 && wants(self.parents[2]))
            self.parents[2]->grad_buffer().data() += g.colwise().sum().transpose();
    });
}

template <typename Scalar>
Var<Scalar> bmm(const Var<Scalar>& a, const Var<Scalar>& b, bool transpose_b) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0))
        throw std::invalid_argument("bmm: expects [G, m, k] operands with equal G");
    const Index groups = a.dim(0);
    const Index m = a.dim(1);
    const Index k = a.dim(2);
    const Index n = transpose_b ? b.dim(1) : b.dim(2);
    if ((transpose_b ? b.dim(2) : b.dim(1)) != k) throw std::invalid_argument("bmm: inner dimension mismatch");
    using Mat = typename Tensor<Scalar>::RowMatrix;
    using Map = Eigen::Map<Mat>;
    using CMap = Eigen::Map<const Mat>;
    const Index bn_rows = transpose_b ? n : k;
    const Index bn_cols = transpose_b ? k : n;
    Tensor<Scalar> out({groups, m, n});
    for (Index g = 0; g < groups; ++g) {
        CMap A(a.value().ptr() + g * m * k, m, k);
        CMap B(b.value().ptr() + g * k * n, bn_rows, bn_cols);
        Map C(out.ptr() + g * m * n, m, n);
        if (transpose_b)
            C.noalias() = A * B.transpose();
        else
            C.noalias() = A * B;
    }
    return make_result<Scalar>(std::move(out), {a.shared(), b.shared()},
                               [=](Node<Scalar>& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        Scalar* ga = wants(pa) ? pa->grad_buffer().ptr() : nullptr;
        Scalar* gb = wants(pb) ? pb->grad_buffer().ptr() : nullptr;
        for (Index g = 0; g < groups; ++g) {
            CMap G(self.grad.ptr() + g * m * n, m, n);
            CMap A(pa->value.ptr() + g * m * k, m, k);
            CMap B(pb->value.ptr() + g * k * n, bn_rows, bn_cols);
            if (ga) {
                Map GA(ga + g * m * k, m, k);
                if (transpose_b)
                    GA.noalias() += G * B;
                else
                    GA.noalias() += G * B.transpose();
            }
            if (gb) {
                Map GB(gb + g * k * n, bn_rows, bn_cols);
                if (transpose_b)
                    GB.noalias() += G.transpose() * A;
                else
                    GB.noalias() += A.transpose() * G;
            }
        }
    });
}

template <typename Scalar>
Var<Scalar> softmax(const Var<Scalar>& x, bool causal) {
    const Index cols = x.dim(-1);
    const Index lq = causal ? x.dim(-2) : 1;
    if (causal && lq > cols) throw std::invalid_argument("softmax: causal mask needs Lk >= Lq");
    Tensor<Scalar> out(x.shape());
    auto in = x.value().matrix(cols);
    auto y = out.matrix(cols);
    for (Index r = 0; r < in.rows(); ++r) {
        const Index valid = causal ? (r % lq) + 1 + (cols - lq) : cols;
        auto row = in.row(r).head(valid);
        const Scalar mx = row.maxCoeff();
        y.row(r).head(valid) = (row.array() - mx).exp().matrix();
        y.row(r).head(valid) /= y.row(r).head(valid).sum();
    }
    return make_result<Scalar>(std::move(out), {x.shared()}, [cols](Node<Scalar>& self) {
        auto& px = self.parents[0];
        if (!wants(px)) return;
        auto yv = self.value.matrix(cols);
        auto g = self.grad.matrix(cols);
        auto gx = px->grad_buffer().matrix(cols);
        for (Index r = 0; r < yv.rows(); ++r) {
            const Scalar dot = g.row(r).dot(yv.row(r));
            gx.row(r).array() += yv.row(r).array() * (g.row(r).array() - dot);
        }
    });
}

template <typename Scalar>
Var<Scalar> layer_norm(const Var<Scalar>& x, const Var<Scalar>& gain, const Var<Scalar>& bias, Scalar eps) {
    const Index cols = x.dim(-1);
    if (gain.value().size() != cols || bias.value().size() != cols)
        throw std::invalid_argument("layer_norm: affine parameters must match the last axis");
    Tensor<Scalar> normalized(x.shape());
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std(x.value().size() / cols);
    auto in = x.value().matrix(cols);
    auto xh = normalized.matrix(cols);
    for (Index r = 0; r < in.rows(); ++r) {
        const Scalar mean = in.row(r).mean();
        const Scalar var = (in.row(r).array() - mean).square().mean();
        inv_std[r] = Scalar(1) / std::sqrt(var + eps);
        xh.row(r) = ((in.row(r).array() - mean) * inv_std[r]).matrix();
    }
    Tensor<Scalar> out = normalized;
    out.matrix(cols).array().rowwise() *= gain.value().data().transpose().array();
    out.matrix(cols).rowwise() += bias.value().data().transpose();
    return make_result<Scalar>(std::move(out), {x.shared(), gain.shared(), bias.shared()},
                               [cols, normalized = std::move(normalized), inv_std](Node<Scalar>& self) {
        auto g = self.grad.matrix(cols);
        auto xh = normalized.matrix(cols);
        auto& px = self.parents[0];
        auto& pg = self.parents[1];
        auto& pb = self.parents[2];
        if (wants(pg)) pg->grad_buffer().data() += g.cwiseProduct(xh).colwise().sum().transpose();
        if (wants(pb)) pb->grad_buffer().data() += g.colwise().sum().transpose();
        if (wants(px)) {
            auto gx = px->grad_buffer().matrix(cols);
            const auto gamma = pg->value.data().transpose().array();
            for (Index r = 0; r < g.rows(); ++r) {
                auto gxh = (g.row(r).array() * gamma).eval();
                const Scalar m1 = gxh.mean();
                const Scalar m2 = (gxh * xh.row(r).array()).mean();
                gx.row(r).array() += inv_std[r] * (gxh - m1 - xh.row(r).array() * m2);
            }
        }
    });
}

// ---- convolution / pooling ----------------------------------------------

template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias, int pad) {
    if (x.rank() != 4 || weight.rank() != 4 || weight.dim(1) != x.dim(1))
        throw std::invalid_argument("conv2d: expects x [B, Cin, H, W] and weight [Cout, Cin, kh, kw]");
    const Index batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
    const Index cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
    const Index oh = h + 2 * pad - kh + 1, ow = w + 2 * pad - kw + 1;
    if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv2d: kernel larger than padded input");
    const bool has_bias = static_cast<bool>(bias);
    const Index patch = cin * kh * kw;
    const Index positions = oh * ow;
    using Mat = typename Tensor<Scalar>::RowMatrix;

    // cols[b] is [patch, positions]
    auto cols = std::make_shared<std::vector<Mat>>(static_cast<std::size_t>(batch));
    Tensor<Scalar> out({batch, cout, oh, ow});
    const auto wmat = weight.value().matrix(patch);
    for (Index b = 0; b < batch; ++b) {
        Mat& c = (*cols)[static_cast<std::size_t>(b)];
        c.setZero(patch, positions);
        const Scalar* xb = x.value().ptr() + b * cin * h * w;
        for (Index ci = 0; ci < cin; ++ci)
            for (Index i = 0; i < kh; ++i)
                for (Index j = 0; j < kw; ++j) {
                    const Index row = (ci * kh + i) * kw + j;
                    for (Index y = 0; y < oh; ++y) {
                        const Index sy = y + i - pad;
                        if (sy < 0 || sy >= h) continue;
                        for (Index xx = 0; xx < ow; ++xx) {
                            const Index sx = xx + j - pad;
                            if (sx < 0 || sx >= w) continue;
                            c(row, y * ow + xx) = xb[(ci * h + sy) * w + sx];
                        }
                    }
                }
        Eigen::Map<Mat> ob(out.ptr() + b * cout * positions, cout, positions);
        ob.noalias() = wmat * c;
        if (has_bias) ob.colwise() += bias.value().data();
    }
    std::vector<NodePtr<Scalar>> parents{x.shared(), weight.shared()};
    if (has_bias) parents.push_back(bias.shared());
    return make_result<Scalar>(std::move(out), std::move(parents), [=](Node<Scalar>& self) {
        auto& px = self.parents[0];
        auto& pw = self.parents[1];
        const bool gbias = self.parents.size() > 2 && wants(self.parents[2]);
        for (Index b = 0; b < batch; ++b) {
            Eigen::Map<const Mat> g(self.grad.ptr() + b * cout * positions, cout, positions);
            const Mat& c = (*cols)[static_cast<std::size_t>(b)];
            if (wants(pw)) pw->grad_buffer().matrix(patch).noalias() += g * c.transpose();
            if (gbias) self.parents[2]->grad_buffer().data() += g.rowwise().sum();
            if (wants(px)) {
                const Mat gc = pw->value.matrix(patch).transpose() * g;
                Scalar* gxb = px->grad_buffer().ptr() + b * cin * h * w;
                for (Index ci = 0; ci < cin; ++ci)
                    for (Index i = 0; i < kh; ++i)
                        for (Index j = 0; j < kw; ++j) {
                            const Index row = (ci * kh + i) * kw + j;
                            for (Index y = 0; y < oh; ++y) {
                                const Index sy = y + i - pad;
                                if (sy < 0 || sy >= h) continue;
                                for (Index xx = 0; xx < ow; ++xx) {
                                    const Index sx = xx + j - pad;
                                    if (sx < 0 || sx >= w) continue;
                                    gxb[(ci * h + sy) * w + sx] += gc(row, y * ow + xx);
                                }
                            }
                        }
            }
        }
    });
}

namespace {
struct PoolBins {
    std::vector<Index> begin, end;
};

PoolBins adaptive_bins(Index in, Index out) {
    PoolBins bins;
    for (Index i = 0; i < out; ++i) {
        bins.begin.push_back((i * in) / out);
        bins.end.push_back(((i + 1) * in + out - 1) / out);
    }
    return bins;
}
}  // namespace

template <typename Scalar>
Var<Scalar> adaptive_avg_pool2d(const Var<Scalar>& x, Index out_h, Index out_w) {
    if (x.rank() != 4) throw std::invalid_argument("adaptive_avg_pool2d: expects [B, C, H, W]");
    if (out_h < 1 || out_w < 1) throw std::invalid_argument("adaptive_avg_pool2d: output size must be positive");
    const Index maps = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    const PoolBins rows = adaptive_bins(h, out_h);
    const PoolBins colsb = adaptive_bins(w, out_w);
    Tensor<Scalar> out({x.dim(0), x.dim(1), out_h, out_w});
    for (Index m = 0; m < maps; ++m) {
        const Scalar* src = x.value().ptr() + m * h * w;
        Scalar* dst = out.ptr() + m * out_h * out_w;
        for (Index i = 0; i < out_h; ++i)
            for (Index j = 0; j < out_w; ++j) {
                Scalar acc(0);
                for (Index r = rows.begin[i]; r < rows.end[i]; ++r)
                    for (Index c = colsb.begin[j]; c < colsb.end[j]; ++c) acc += src[r * w + c];
                dst[i * out_w + j] =
                    acc / Scalar((rows.end[i] - rows.begin[i]) * (colsb.end[j] - colsb.begin[j]));
            }
    }
    return make_result<Scalar>(std::move(out), {x.shared()}, [=](Node<Scalar>& self) {
        auto& px = self.parents[0];
        if (!wants(px)) return;
        Scalar* gx = px->grad_buffer().ptr();
        for (Index m = 0; m < maps; ++m) {
            const Scalar* g = self.grad.ptr() + m * out_h * out_w;
            for (Index i = 0; i < out_h; ++i)
                for (Index j = 0; j < out_w; ++j) {
                    const Scalar share =
                        g[i * out_w + j] / Scalar((rows.end[i] - rows.begin[i]) * (colsb.end[j] - colsb.begin[j]));
                    for (Index r = rows.begin[i]; r < rows.end[i]; ++r)
                        for (Index c = colsb.begin[j]; c < colsb.end[j]; ++c) gx[m * h * w + r * w + c] += share;
                }
        }
    });
}

template <typename Scalar>
Var<Scalar> channel_project(const Var<Scalar>& x, const Tensor<Scalar>& filters) {
    if (x.rank() != 3 || filters.rank() != 2 || x.dim(1) != filters.dim(0) || x.dim(2) != filters.dim(1))
        throw std::invalid_argument("channel_project: x " + to_string(x.shape()) + " incompatible with filters " +
                                    to_string(filters.shape()));
    const Index batch = x.dim(0), channels = x.dim(1), span = x.dim(2);
    Tensor<Scalar> out({batch, channels});
    const auto f = filters.matrix(span);
    for (Index b = 0; b < batch; ++b) {
        Eigen::Map<const typename Tensor<Scalar>::RowMatrix> xb(x.value().ptr() + b * channels * span, channels, span);
        out.matrix(channels).row(b) = xb.cwiseProduct(f).rowwise().sum().transpose();
    }
    return make_result<Scalar>(std::move(out), {x.shared()}, [=](Node<Scalar>& self) {
        auto& px = self.parents[0];
        if (!wants(px)) return;
        const auto fm = filters.matrix(span);
        for (Index b = 0; b < batch; ++b) {
            Eigen::Map<typename Tensor<Scalar>::RowMatrix> gx(px->grad_buffer().ptr() + b * channels * span, channels,
                                                              span);
            gx.array() += fm.array().colwise() * self.grad.matrix(channels).row(b).transpose().array();
        }
    });
}

template <typename Scalar>
Var<Scalar> mean_last(const Var<Scalar>& x) {
    const Index cols = x.dim(-1);
    Shape shape(x.shape().begin(), x.shape().end() - 1);
    Tensor<Scalar> out(shape, x.value().matrix(cols).rowwise().mean());
    return make_result<Scalar>(std::move(out), {x.shared()}, [cols](Node<Scalar>& self) {
        auto& px = self.parents[0];
        if (!wants(px)) return;
        px->grad_buffer().matrix(cols).colwise() += self.grad.data() / Scalar(cols);
    });
}

// ---- reductions ---------------------------------------------------------

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& x) {
    Tensor<Scalar> out(Shape{}, Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Constant(1, x.value().data().sum()));
    return make_result<Scalar>(std::move(out), {x.shared()}, [](Node<Scalar>& self) {
        if (wants(self.parents[0])) self.parents[0]->grad_buffer().data().array() += self.grad[0];
    });
}

template <typename Scalar>
Var<Scalar> nmse_loss(const Var<Scalar>& pred, const Tensor<Scalar>& truth) {
    if (pred.shape() != truth.shape())
        throw std::invalid_argument("nmse_loss: shape mismatch " + to_string(pred.shape()) + " vs " +
                                    to_string(truth.shape()));
    const Scalar denom = truth.data().squaredNorm();
    if (!(denom > Scalar(0))) throw std::invalid_argument("nmse_loss: reference tensor has zero norm");
    const Scalar num = (pred.value().data() - truth.data()).squaredNorm();
    Tensor<Scalar> out(Shape{}, Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Constant(1, num / denom));
    return make_result<Scalar>(std::move(out), {pred.shared()}, [truth, denom](Node<Scalar>& self) {
        auto& pp = self.parents[0];
        if (wants(pp))
            pp->grad_buffer().data() += (self.grad[0] * Scalar(2) / denom) * (pp->value.data() - truth.data());
    });
}

#define CSIPRED_INSTANTIATE_AD(T)                                                                          \
    template void backward<T>(const Var<T>&);                                                              \
    template Var<T> add<T>(const Var<T>&, const Var<T>&);                                                  \
    template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                                  \
    template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                                  \
    template Var<T> scale<T>(const Var<T>&, T);                                                            \
    template Var<T> add_scalar<T>(const Var<T>&, T);                                                       \
    template Var<T> add_trailing<T>(const Var<T>&, const Var<T>&);                                         \
    template Var<T> mul_leading<T>(const Var<T>&, const Var<T>&);                                          \
    template Var<T> relu<T>(const Var<T>&);                                                                \
    template Var<T> sigmoid<T>(const Var<T>&);                                                             \
    template Var<T> tanh<T>(const Var<T>&);                                                                \
    template Var<T> gelu<T>(const Var<T>&);                                                                \
    template Var<T> reshape<T>(const Var<T>&, Shape);                                                      \
    template Var<T> permute<T>(const Var<T>&, std::vector<int>);                                           \
    template Var<T> slice<T>(const Var<T>&, int, Index, Index);                                            \
    template Var<T> concat<T>(const std::vector<Var<T>>&, int);                                            \
    template Var<T> linear<T>(const Var<T>&, const Var<T>&, const Var<T>&);                                \
    template Var<T> bmm<T>(const Var<T>&, const Var<T>&, bool);                                            \
    template Var<T> softmax<T>(const Var<T>&, bool);                                                       \
    template Var<T> layer_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, T);                         \
    template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, int);                           \
    template Var<T> adaptive_avg_pool2d<T>(const Var<T>&, Index, Index);                                   \
    template Var<T> channel_project<T>(const Var<T>&, const Tensor<T>&);                                   \
    template Var<T> mean_last<T>(const Var<T>&);                                                           \
    template Var<T> sum<T>(const Var<T>&);                                                                 \
    template Var<T> nmse_loss<T>(const Var<T>&, const Tensor<T>&);

CSIPRED_INSTANTIATE_AD(float)
CSIPRED_INSTANTIATE_AD(double)

}  // namespace csipred::ad
