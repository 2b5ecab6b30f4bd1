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

// Multi-spectral channel attention: each group of channel maps is summarised
// by one 2-D DCT coefficient instead of the plain spatial mean, and the
// resulting descriptor drives a sigmoid-gated bottleneck that rescales the
// channels.

#ifndef CSIPRED_SPECTRAL_ATTENTION_HPP
#define CSIPRED_SPECTRAL_ATTENTION_HPP

#include "csipred/autograd.hpp"
#include "csipred/channel.hpp"
#include "csipred/parameters.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace csipred {

struct FrequencyIndex {
    Index u = 0;
    Index v = 0;
    auto operator<=>(const FrequencyIndex&) const = default;
};

/// F[h, w] = cos(pi u (h + 1/2) / H) cos(pi v (w + 1/2) / W), unnormalised.
template <typename Scalar = double>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> dct_basis(Index u, Index v, Index height, Index width) {
    if (height < 1 || width < 1) throw std::invalid_argument("dct_basis: dimensions must be positive");
    if (u < 0 || u >= height || v < 0 || v >= width)
        throw std::out_of_range("dct_basis: frequency (" + std::to_string(u) + ", " + std::to_string(v) +
                                ") outside " + std::to_string(height) + "x" + std::to_string(width));
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> f(height, width);
    const double pi = kPi;
    for (Index h = 0; h < height; ++h)
        for (Index w = 0; w < width; ++w)
            f(h, w) = static_cast<Scalar>(std::cos(pi * static_cast<double>(u) * (static_cast<double>(h) + 0.5) /
                                                   static_cast<double>(height)) *
                                          std::cos(pi * static_cast<double>(v) * (static_cast<double>(w) + 0.5) /
                                                   static_cast<double>(width)));
    return f;
}

/// Frobenius inner product of a feature map with a basis.
template <typename DerivedQ, typename DerivedF>
typename DerivedQ::Scalar dct_project(const Eigen::MatrixBase<DerivedQ>& q, const Eigen::MatrixBase<DerivedF>& basis) {
    if (q.rows() != basis.rows() || q.cols() != basis.cols())
        throw std::invalid_argument("dct_project: map and basis shapes differ");
    return q.cwiseProduct(basis).sum();
}

enum class FrequencySelection { ZigzagLow, ExplicitList };

/// JPEG zigzag traversal of an H x W grid starting at (0, 0).
std::vector<FrequencyIndex> zigzag_order(Index height, Index width);

std::vector<FrequencyIndex> select_frequencies(Index n, Index height, Index width, FrequencySelection strategy,
                                               const std::vector<FrequencyIndex>& explicit_list = {});

/// Immutable set of DCT bases on an H' x W' grid plus the ordered frequency
/// assigned to each channel group.
template <typename Scalar>
class DctBasisSet {
public:
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

    DctBasisSet(Index height, Index width, std::vector<FrequencyIndex> selected)
        : DctBasisSet(height, width, std::move(selected), Scalar(1), false) {}

    /// n copies of (0, 0), each projection scaled by `scale`. Used to express
    /// global average pooling (scale = 1 / (H' W')) in the multi-spectral form.
    static DctBasisSet repeated_dc(Index n, Index height, Index width, Scalar scale) {
        return DctBasisSet(height, width, std::vector<FrequencyIndex>(static_cast<std::size_t>(n)), scale, true);
    }

    Index height() const { return height_; }
    Index width() const { return width_; }
    Index groups() const { return static_cast<Index>(selected_.size()); }
    Scalar projection_scale() const { return scale_; }
    const std::vector<FrequencyIndex>& selected() const { return selected_; }
    const Matrix& basis(Index group) const { return bases_.at(static_cast<std::size_t>(group)); }

    /// [channels, H' W'] filter bank: channel c uses the basis of group c / (channels / n).
    Tensor<Scalar> channel_filters(Index channels) const {
        if (channels % groups() != 0)
            throw std::invalid_argument("DctBasisSet: " + std::to_string(channels) + " channels not divisible into " +
                                        std::to_string(groups()) + " groups");
        const Index per_group = channels / groups();
        const Index span = height_ * width_;
        Tensor<Scalar> filters({channels, span});
        for (Index c = 0; c < channels; ++c) {
            const Matrix& f = basis(c / per_group);
            for (Index h = 0; h < height_; ++h)
                for (Index w = 0; w < width_; ++w) filters[c * span + h * width_ + w] = scale_ * f(h, w);
        }
        return filters;
    }

private:
    DctBasisSet(Index height, Index width, std::vector<FrequencyIndex> selected, Scalar scale, bool allow_repeats)
        : height_(height), width_(width), scale_(scale), selected_(std::move(selected)) {
        if (selected_.empty()) throw std::invalid_argument("DctBasisSet: no frequencies selected");
        std::set<FrequencyIndex> seen;
        for (const auto& f : selected_) {
            if (!allow_repeats && !seen.insert(f).second)
                throw std::invalid_argument("DctBasisSet: duplicate frequency (" + std::to_string(f.u) + ", " +
                                            std::to_string(f.v) + ")");
            bases_.push_back(dct_basis<Scalar>(f.u, f.v, height_, width_));
        }
    }

    Index height_;
    Index width_;
    Scalar scale_;
    std::vector<FrequencyIndex> selected_;
    std::vector<Matrix> bases_;
};

/// Bottleneck FC1 (L_c -> L_c / R) and FC2 (L_c / R -> L_c).
template <typename Scalar>
struct MscaParams {
    ad::Var<Scalar> fc1_weight, fc1_bias, fc2_weight, fc2_bias;
    Index reduction = 16;
    Index groups = 1;

    Index channels() const { return fc1_weight.dim(1); }
    Index group_size() const { return channels() / groups; }
};

inline void validate_msca_shape(Index channels, Index groups, Index reduction) {
    if (channels < 1 || groups < 1 || reduction < 1)
        throw std::invalid_argument("msca: channels, groups and reduction must be positive");
    if (channels % groups != 0)
        throw std::invalid_argument("msca: L_c = " + std::to_string(channels) + " not divisible by n = " +
                                    std::to_string(groups));
    if (channels / reduction < 1)
        throw std::invalid_argument("msca: reduction ratio " + std::to_string(reduction) + " exceeds L_c = " +
                                    std::to_string(channels));
}

/// Fan-in uniform weights, zero biases. Creates fresh trainable leaves; pass
/// a ParameterSet and prefix to register them there.
template <typename Scalar>
MscaParams<Scalar> msca_init(Index channels, Index groups, Index reduction, Rng& rng,
                             ParameterSet<Scalar>* params = nullptr, const std::string& prefix = "msca",
                             const std::string& group = "sca") {
    validate_msca_shape(channels, groups, reduction);
    const Index hidden = channels / reduction;
    auto make = [&](const std::string& name, Tensor<Scalar> t) {
        return params ? params->add(prefix + "." + name, group, std::move(t)) : ad::leaf(std::move(t), true);
    };
    MscaParams<Scalar> p;
    p.fc1_weight = make("fc1.weight", init::fan_in_uniform<Scalar>({hidden, channels}, channels, rng));
    p.fc1_bias = make("fc1.bias", Tensor<Scalar>::zeros({hidden}));
    p.fc2_weight = make("fc2.weight", init::fan_in_uniform<Scalar>({channels, hidden}, hidden, rng));
    p.fc2_bias = make("fc2.bias", Tensor<Scalar>::zeros({channels}));
    p.reduction = reduction;
    p.groups = groups;
    return p;
}

/// Adaptive average pooling of [B, C, N, E] to the basis grid, skipped when
/// the sizes already agree.
template <typename Scalar>
ad::Var<Scalar> pool_to_grid(const ad::Var<Scalar>& x, Index height, Index width) {
    if (x.dim(2) == height && x.dim(3) == width) return x;
    return ad::adaptive_avg_pool2d(x, height, width);
}

/// Y_dct [B, L_c]: group k of the channel maps projected on basis (u_k, v_k).
template <typename Scalar>
ad::Var<Scalar> msca_descriptor(const ad::Var<Scalar>& x, const DctBasisSet<Scalar>& basis) {
    if (x.rank() != 4) throw std::invalid_argument("msca: expects [B, L_c, N, E_c]");
    const Index batch = x.dim(0), channels = x.dim(1);
    const auto pooled = pool_to_grid(x, basis.height(), basis.width());
    const auto flat = ad::reshape(pooled, {batch, channels, basis.height() * basis.width()});
    return ad::channel_project(flat, basis.channel_filters(channels));
}

/// Y_gap [B, L_c]: per-channel mean of the pooled maps.
template <typename Scalar>
ad::Var<Scalar> gap_descriptor(const ad::Var<Scalar>& x, Index height, Index width) {
    if (x.rank() != 4) throw std::invalid_argument("gap attention: expects [B, L_c, N, E_c]");
    const auto pooled = pool_to_grid(x, height, width);
    return ad::mean_last(ad::reshape(pooled, {x.dim(0), x.dim(1), height * width}));
}

/// sigmoid(FC2(relu(FC1(y)))), [B, L_c] in (0, 1).
template <typename Scalar>
ad::Var<Scalar> attention_weights(const ad::Var<Scalar>& descriptor, const MscaParams<Scalar>& p) {
    const auto hidden = ad::relu(ad::linear(descriptor, p.fc1_weight, p.fc1_bias));
    return ad::sigmoid(ad::linear(hidden, p.fc2_weight, p.fc2_bias));
}

template <typename Scalar>
void check_msca_input(const ad::Var<Scalar>& x, const MscaParams<Scalar>& p) {
    if (x.rank() != 4) throw std::invalid_argument("msca: expects [B, L_c, N, E_c]");
    if (x.dim(1) != p.channels())
        throw std::invalid_argument("msca: input has " + std::to_string(x.dim(1)) + " channels, params expect " +
                                    std::to_string(p.channels()));
    validate_msca_shape(p.channels(), p.groups, p.reduction);
}

/// Rescales the un-pooled input by the attention weights.
template <typename Scalar>
ad::Var<Scalar> msca_forward(const ad::Var<Scalar>& x, const MscaParams<Scalar>& p, const DctBasisSet<Scalar>& basis) {
    check_msca_input(x, p);
    if (basis.groups() != p.groups)
        throw std::invalid_argument("msca: basis set has " + std::to_string(basis.groups()) + " frequencies, params " +
                                    std::to_string(p.groups) + " groups");
    return ad::mul_leading(x, attention_weights(msca_descriptor(x, basis), p));
}

/// Same gate driven by the global-average descriptor.
template <typename Scalar>
ad::Var<Scalar> gap_attention_forward(const ad::Var<Scalar>& x, const MscaParams<Scalar>& p, Index height,
                                      Index width) {
    check_msca_input(x, p);
    return ad::mul_leading(x, attention_weights(gap_descriptor(x, height, width), p));
}

}  // namespace csipred

#endif  // CSIPRED_SPECTRAL_ATTENTION_HPP
