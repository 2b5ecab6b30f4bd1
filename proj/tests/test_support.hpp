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

#ifndef CSIPRED_TEST_SUPPORT_HPP
#define CSIPRED_TEST_SUPPORT_HPP

#include "csipred/autograd.hpp"
#include "csipred/channel.hpp"
#include "csipred/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace csipred::testing {

template <typename Scalar = double>
Tensor<Scalar> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
    std::normal_distribution<double> dist(0.0, scale);
    Tensor<Scalar> t(std::move(shape));
    for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(dist(rng));
    return t;
}

/// sum(out * R) for a fixed random R: a scalar with generic gradients.
template <typename Scalar>
ad::Var<Scalar> random_projection(const ad::Var<Scalar>& out, std::uint64_t seed) {
    Rng rng(seed);
    return ad::sum(ad::mul(out, ad::constant(random_tensor<Scalar>(out.shape(), rng))));
}

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst;
    Index checked = 0;
};

/// Relative error |a - n| / max(|a|, |n|, floor).
inline constexpr double kGradRelFloor = 1e-7;

/// Central differences on `leaves`. With `max_coords` > 0, that many
/// coordinates are sampled uniformly over all leaves; otherwise every
/// coordinate is checked.
inline GradCheckResult check_gradients(std::vector<std::pair<std::string, ad::Var<double>>> leaves,
                                       const std::function<ad::Var<double>()>& loss_fn, Index max_coords = 0,
                                       std::uint64_t seed = 7, double step = 1e-5) {
    for (auto& [name, v] : leaves) v.zero_grad();
    const auto loss = loss_fn();
    ad::backward(loss);

    std::vector<std::pair<std::size_t, Index>> coords;
    for (std::size_t l = 0; l < leaves.size(); ++l)
        for (Index i = 0; i < leaves[l].second.value().size(); ++i) coords.emplace_back(l, i);
    if (max_coords > 0 && static_cast<Index>(coords.size()) > max_coords) {
        Rng rng(seed);
        std::shuffle(coords.begin(), coords.end(), rng);
        coords.resize(static_cast<std::size_t>(max_coords));
    }

    GradCheckResult r;
    for (const auto& [l, i] : coords) {
        auto& v = leaves[l].second;
        const double analytic = v.has_grad() ? v.grad()[i] : 0.0;
        double& x = v.mutable_value()[i];
        const double saved = x;
        double plus = 0.0, minus = 0.0;
        {
            ad::NoGradGuard guard;
            x = saved + step;
            plus = loss_fn().value()[0];
            x = saved - step;
            minus = loss_fn().value()[0];
        }
        x = saved;
        const double numeric = (plus - minus) / (2.0 * step);
        const double rel =
            std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kGradRelFloor});
        ++r.checked;
        if (rel > r.max_rel_error) {
            r.max_rel_error = rel;
            r.worst = leaves[l].first + "[" + std::to_string(i) + "] analytic " + std::to_string(analytic) +
                      " numeric " + std::to_string(numeric);
        }
    }
    for (auto& [name, v] : leaves) v.zero_grad();
    return r;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("csipred_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

/// Desk-system dataset with the given preset and sample counts.
inline DatasetSpec small_spec(const ScenarioPreset& preset, std::vector<double> velocities, Index train, Index val,
                              Index test, std::uint64_t seed) {
    DatasetSpec spec;
    spec.system = SystemConfig::desk();
    spec.preset = preset;
    spec.velocities_kmh = std::move(velocities);
    if (train > 0) spec.samples_per_velocity[Split::Train] = train;
    if (val > 0) spec.samples_per_velocity[Split::Val] = val;
    if (test > 0) spec.samples_per_velocity[Split::Test] = test;
    spec.seed = seed;
    return spec;
}

/// Single cluster, single ray preset.
inline ScenarioPreset single_ray_preset() {
    ScenarioPreset p = uma_nlos_preset();
    p.name = "single-ray";
    p.num_clusters = 1;
    p.rays_per_cluster = 1;
    p.cluster_shadowing_db = 0.0;
    return p;
}

}  // namespace csipred::testing

#endif  // CSIPRED_TEST_SUPPORT_HPP
