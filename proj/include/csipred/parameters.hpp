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

#ifndef CSIPRED_PARAMETERS_HPP
#define CSIPRED_PARAMETERS_HPP

#include "csipred/autograd.hpp"
#include "csipred/channel.hpp"

#include <cmath>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace csipred {

/// Named, grouped parameter tensors with a per-tensor trainable flag.
///
/// Layers keep `ad::Var` handles that share nodes with the entries here, so
/// in-place updates through `entries()` are seen by every forward pass.
template <typename Scalar>
class ParameterSet {
public:
    struct Entry {
        std::string name;
        std::string group;
        ad::Var<Scalar> var;
        bool trainable = true;
    };

    ParameterSet() = default;
    ParameterSet(const ParameterSet&) = delete;
    ParameterSet& operator=(const ParameterSet&) = delete;
    ParameterSet(ParameterSet&&) noexcept = default;
    ParameterSet& operator=(ParameterSet&&) noexcept = default;

    ad::Var<Scalar> add(const std::string& name, const std::string& group, Tensor<Scalar> init, bool trainable = true) {
        if (index_.count(name)) throw std::invalid_argument("ParameterSet: duplicate parameter '" + name + "'");
        auto var = ad::leaf(std::move(init), trainable);
        index_[name] = entries_.size();
        entries_.push_back({name, group, var, trainable});
        return var;
    }

    std::vector<Entry>& entries() { return entries_; }
    const std::vector<Entry>& entries() const { return entries_; }

    Entry* find(const std::string& name) {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : &entries_[it->second];
    }
    const Entry* find(const std::string& name) const {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : &entries_[it->second];
    }

    Entry& at(const std::string& name) {
        Entry* e = find(name);
        if (!e) throw std::out_of_range("ParameterSet: no parameter '" + name + "'");
        return *e;
    }
    const Entry& at(const std::string& name) const {
        const Entry* e = find(name);
        if (!e) throw std::out_of_range("ParameterSet: no parameter '" + name + "'");
        return *e;
    }

    void set_trainable(Entry& e, bool flag) {
        e.trainable = flag;
        e.var.set_requires_grad(flag);
    }

    void set_all_trainable(bool flag) {
        for (auto& e : entries_) set_trainable(e, flag);
    }

    void zero_grad() {
        for (auto& e : entries_) e.var.zero_grad();
    }

    Index total_count() const {
        Index n = 0;
        for (const auto& e : entries_) n += e.var.value().size();
        return n;
    }

    Index trainable_count() const {
        Index n = 0;
        for (const auto& e : entries_)
            if (e.trainable) n += e.var.value().size();
        return n;
    }

private:
    std::vector<Entry> entries_;
    std::map<std::string, std::size_t> index_;
};

namespace init {

template <typename Scalar>
Tensor<Scalar> uniform(Shape shape, double bound, Rng& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor<Scalar> t(std::move(shape));
    for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(dist(rng));
    return t;
}

/// U(-1/sqrt(fan_in), 1/sqrt(fan_in))
template <typename Scalar>
Tensor<Scalar> fan_in_uniform(Shape shape, Index fan_in, Rng& rng) {
    return uniform<Scalar>(std::move(shape), 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
}

template <typename Scalar>
Tensor<Scalar> normal(Shape shape, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    Tensor<Scalar> t(std::move(shape));
    for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(dist(rng));
    return t;
}

}  // namespace init

/// Fully connected layer with weight [out, in] and bias [out].
template <typename Scalar>
struct Linear {
    ad::Var<Scalar> weight;
    ad::Var<Scalar> bias;

    Linear() = default;
    Linear(ParameterSet<Scalar>& params, const std::string& name, const std::string& group, Index in, Index out,
           Rng& rng, bool trainable = true) {
        weight = params.add(name + ".weight", group, init::fan_in_uniform<Scalar>({out, in}, in, rng), trainable);
        bias = params.add(name + ".bias", group, Tensor<Scalar>::zeros({out}), trainable);
    }

    Index in_features() const { return weight.dim(1); }
    Index out_features() const { return weight.dim(0); }

    ad::Var<Scalar> operator()(const ad::Var<Scalar>& x) const { return ad::linear(x, weight, bias); }
};

/// Same-padded square-kernel 2-D convolution.
template <typename Scalar>
struct Conv2d {
    ad::Var<Scalar> weight;
    ad::Var<Scalar> bias;
    int pad = 1;

    Conv2d() = default;
    Conv2d(ParameterSet<Scalar>& params, const std::string& name, const std::string& group, Index in, Index out,
           Index kernel, Rng& rng) {
        if (kernel % 2 == 0) throw std::invalid_argument("Conv2d: same padding needs an odd kernel");
        pad = static_cast<int>(kernel / 2);
        weight = params.add(name + ".weight", group,
                            init::fan_in_uniform<Scalar>({out, in, kernel, kernel}, in * kernel * kernel, rng));
        bias = params.add(name + ".bias", group, Tensor<Scalar>::zeros({out}));
    }

    ad::Var<Scalar> operator()(const ad::Var<Scalar>& x) const { return ad::conv2d(x, weight, bias, pad); }
};

template <typename Scalar>
struct LayerNorm {
    ad::Var<Scalar> weight;
    ad::Var<Scalar> bias;

    LayerNorm() = default;
    LayerNorm(ParameterSet<Scalar>& params, const std::string& name, const std::string& group, Index width,
              bool trainable = true) {
        weight = params.add(name + ".weight", group, Tensor<Scalar>::constant({width}, Scalar(1)), trainable);
        bias = params.add(name + ".bias", group, Tensor<Scalar>::zeros({width}), trainable);
    }

    ad::Var<Scalar> operator()(const ad::Var<Scalar>& x) const { return ad::layer_norm(x, weight, bias); }
};

}  // namespace csipred

#endif  // CSIPRED_PARAMETERS_HPP
