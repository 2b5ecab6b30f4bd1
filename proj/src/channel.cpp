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

#include "csipred/channel.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>

namespace csipred {

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

void ScenarioPreset::validate() const {
    if (num_clusters < 1) throw std::invalid_argument("ScenarioPreset: need at least one cluster");
    if (rays_per_cluster < 1) throw std::invalid_argument("ScenarioPreset: need at least one ray per cluster");
    if (!(delay_spread > 0.0)) throw std::invalid_argument("ScenarioPreset: delay spread must be positive");
    if (!(per_cluster_power_decay >= 1.0))
        throw std::invalid_argument("ScenarioPreset: per-cluster power decay must be >= 1");
}

// Cluster-level values follow the median large-scale parameters of the
// 38.901 NLOS tables at 2.4 GHz, rounded.
ScenarioPreset uma_nlos_preset() {
    ScenarioPreset p;
    p.name = "UMa-NLOS";
    p.num_clusters = 20;
    p.rays_per_cluster = 20;
    p.delay_spread = 430e-9;
    p.per_cluster_power_decay = 2.3;
    p.cluster_shadowing_db = 3.0;
    p.angular_spread_deg = {.aoa = 70.0, .aod = 25.0, .zoa = 18.0, .zod = 8.0};
    p.intra_cluster_spread_deg = {.aoa = 15.0, .aod = 2.0, .zoa = 7.0, .zod = 3.0};
    return p;
}

ScenarioPreset umi_nlos_preset() {
    ScenarioPreset p;
    p.name = "UMi-NLOS";
    p.num_clusters = 19;
    p.rays_per_cluster = 20;
    p.delay_spread = 190e-9;
    p.per_cluster_power_decay = 2.1;
    p.cluster_shadowing_db = 3.0;
    p.angular_spread_deg = {.aoa = 55.0, .aod = 33.0, .zoa = 22.0, .zod = 10.0};
    p.intra_cluster_spread_deg = {.aoa = 22.0, .aod = 10.0, .zoa = 7.0, .zod = 3.0};
    return p;
}

ScenarioPreset preset_by_name(const std::string& name) {
    std::string key = name;
    std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return std::tolower(c); });
    if (key == "uma-nlos") return uma_nlos_preset();
    if (key == "umi-nlos") return umi_nlos_preset();
    throw std::invalid_argument("unknown scenario preset '" + name + "'");
}

SystemConfig SystemConfig::desk() {
    SystemConfig s;
    s.n_bs = 2;
    s.n_ue = 2;
    s.subcarriers = 4;
    s.history = 12;
    s.horizon = 6;
    return s;
}

void SystemConfig::validate() const {
    if (n_bs < 1 || n_ue < 1 || subcarriers < 1 || history < 1 || horizon < 1)
        throw std::invalid_argument("SystemConfig: counts must be positive");
    if (!(subcarrier_spacing > 0.0) || !(carrier > 0.0) || !(sample_period > 0.0))
        throw std::invalid_argument("SystemConfig: spacing, carrier and sample period must be positive");
}

Eigen::Vector3d unit_direction(double theta, double phi) {
    return {std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi), std::cos(theta)};
}

double doppler_shift(const Eigen::Vector3d& velocity, double theta, double phi, double carrier) {
    return carrier / kSpeedOfLight * velocity.dot(unit_direction(theta, phi));
}

namespace {

double wrap_angle(double a) {
    a = std::fmod(a + kPi, 2.0 * kPi);
    if (a <= 0.0) a += 2.0 * kPi;
    return a - kPi;
}

double deg(double d) { return d * kPi / 180.0; }

double clamp_zenith(double z) { return std::clamp(z, 0.0, kPi); }

}  // namespace

RaySet sample_ray_set(const ScenarioPreset& preset, double velocity_kmh, double carrier, Rng& rng) {
    preset.validate();
    if (!(velocity_kmh >= 0.0)) throw std::invalid_argument("sample_ray_set: velocity must be non-negative");

    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto n_clusters = static_cast<std::size_t>(preset.num_clusters);
    const Index n_rays = preset.rays_per_cluster;

    RaySet set;
    const double heading = 2.0 * kPi * uniform(rng) - kPi;
    set.velocity = velocity_kmh / 3.6 * Eigen::Vector3d(std::cos(heading), std::sin(heading), 0.0);

    // exponential delay profile
    const double r_tau = preset.per_cluster_power_decay;
    std::vector<double> delays(n_clusters);
    for (auto& d : delays) d = -r_tau * preset.delay_spread * std::log(1.0 - uniform(rng));
    std::sort(delays.begin(), delays.end());
    const double first = delays.front();
    for (auto& d : delays) d -= first;

    std::vector<double> powers(n_clusters);
    double total = 0.0;
    for (std::size_t n = 0; n < n_clusters; ++n) {
        const double shadow = preset.cluster_shadowing_db * normal(rng);
        powers[n] = std::exp(-delays[n] * (r_tau - 1.0) / (r_tau * preset.delay_spread)) * std::pow(10.0, -shadow / 10.0);
        total += powers[n];
    }

    const double aoa_centre = 2.0 * kPi * uniform(rng) - kPi;
    const double aod_centre = 2.0 * kPi * uniform(rng) - kPi;
    const AngularSpread& cs = preset.angular_spread_deg;
    const AngularSpread& rs = preset.intra_cluster_spread_deg;

    set.rays.reserve(n_clusters * static_cast<std::size_t>(n_rays));
    for (std::size_t n = 0; n < n_clusters; ++n) {
        const double aoa_n = wrap_angle(aoa_centre + deg(cs.aoa) * normal(rng));
        const double aod_n = wrap_angle(aod_centre + deg(cs.aod) * normal(rng));
        const double zoa_n = clamp_zenith(kPi / 2 + deg(cs.zoa) * normal(rng));
        const double zod_n = clamp_zenith(kPi / 2 + deg(cs.zod) * normal(rng));
        const double amplitude = std::sqrt(powers[n] / total / static_cast<double>(n_rays));
        for (Index m = 0; m < n_rays; ++m) {
            Ray r;
            r.aoa = wrap_angle(aoa_n + deg(rs.aoa) * normal(rng));
            r.aod = wrap_angle(aod_n + deg(rs.aod) * normal(rng));
            r.zoa = clamp_zenith(zoa_n + deg(rs.zoa) * normal(rng));
            r.zod = clamp_zenith(zod_n + deg(rs.zod) * normal(rng));
            r.delay = delays[n];
            r.gain = std::polar(amplitude, 2.0 * kPi * uniform(rng));
            set.rays.push_back(r);
        }
    }
    refresh_doppler(set, carrier);
    return set;
}

void refresh_doppler(RaySet& rays, double carrier) {
    for (auto& r : rays.rays) r.doppler = doppler_shift(rays.velocity, r.zoa, r.aoa, carrier);
}

Eigen::VectorXcd array_response(double theta, double phi, Index num_antennas) {
    if (num_antennas < 1) throw std::invalid_argument("array_response: need at least one antenna");
    const double step = kPi * std::sin(theta) * std::cos(phi);
    Eigen::VectorXcd a(num_antennas);
    for (Index m = 0; m < num_antennas; ++m) a[m] = std::polar(1.0, step * static_cast<double>(m));
    return a;
}

Eigen::MatrixXcd evaluate_channel(const RaySet& rays, double t, double f, const SystemConfig& sys) {
    if (!std::isfinite(t) || !std::isfinite(f)) throw std::invalid_argument("evaluate_channel: non-finite t or f");
    Eigen::MatrixXcd h = Eigen::MatrixXcd::Zero(sys.n_bs, sys.n_ue);
    for (const Ray& r : rays.rays) {
        const std::complex<double> coeff =
            r.gain * std::polar(1.0, -2.0 * kPi * f * r.delay) * std::polar(1.0, 2.0 * kPi * r.doppler * t);
        h.noalias() += coeff * array_response(r.zoa, r.aoa, sys.n_bs) * array_response(r.zod, r.aod, sys.n_ue).adjoint();
    }
    return h;
}

CsiTensor sample_grid(const RaySet& rays, const SystemConfig& sys) {
    sys.validate();
    const Index steps = sys.steps();
    const Index k = sys.subcarriers;
    const Index n_rays = static_cast<Index>(rays.rays.size());
    const Index antennas = sys.n_bs * sys.n_ue;

    // Each ray contributes coeff(t, f) * vec_rowmajor(a_BS a_UE^H), so the whole
    // grid is one [T*K, R] x [R, N_BS*N_UE] product.
    Eigen::MatrixXcd coeff(steps * k, n_rays);
    Eigen::MatrixXcd outer(n_rays, antennas);
    for (Index r = 0; r < n_rays; ++r) {
        const Ray& ray = rays.rays[static_cast<std::size_t>(r)];
        const Eigen::VectorXcd a_bs = array_response(ray.zoa, ray.aoa, sys.n_bs);
        const Eigen::VectorXcd a_ue = array_response(ray.zod, ray.aod, sys.n_ue);
        for (Index i = 0; i < sys.n_bs; ++i)
            for (Index j = 0; j < sys.n_ue; ++j) outer(r, i * sys.n_ue + j) = a_bs[i] * std::conj(a_ue[j]);
        for (Index t = 0; t < steps; ++t) {
            const std::complex<double> time_phase =
                std::polar(1.0, 2.0 * kPi * ray.doppler * static_cast<double>(t) * sys.sample_period);
            for (Index kk = 0; kk < k; ++kk)
                coeff(t * k + kk, r) =
                    ray.gain * std::polar(1.0, -2.0 * kPi * sys.subcarrier_frequency(kk) * ray.delay) * time_phase;
        }
    }
    const Eigen::MatrixXcd grid = coeff * outer;  // column-major [T*K, antennas]
    CsiTensor h({steps, k, sys.n_bs, sys.n_ue});
    for (Index row = 0; row < steps * k; ++row)
        for (Index a = 0; a < antennas; ++a) h[row * antennas + a] = std::complex<float>(grid(row, a));
    return h;
}

ChannelRealization generate_realization(const SystemConfig& sys, const ScenarioPreset& preset, double velocity_kmh,
                                        std::uint64_t seed) {
    Rng rng(seed);
    const RaySet rays = sample_ray_set(preset, velocity_kmh, sys.carrier, rng);
    return {sample_grid(rays, sys), velocity_kmh, preset.name, seed};
}

CsiTensor add_observation_noise(const CsiTensor& h, double snr_db, Rng& rng) {
    if (std::isinf(snr_db) && snr_db > 0) return h;
    if (!std::isfinite(snr_db)) throw std::invalid_argument("add_observation_noise: SNR must be finite or +inf");
    if (h.empty()) return h;
    const double signal = static_cast<double>(h.data().squaredNorm()) / static_cast<double>(h.size());
    const double sigma = std::sqrt(signal / std::pow(10.0, snr_db / 10.0) / 2.0);
    std::normal_distribution<double> normal(0.0, sigma);
    CsiTensor out = h;
    for (Index i = 0; i < out.size(); ++i) {
        const double re = normal(rng);
        const double im = normal(rng);
        out[i] += std::complex<float>(static_cast<float>(re), static_cast<float>(im));
    }
    return out;
}

PilotBlock transmit_pilots(const Eigen::MatrixXcd& h, const Eigen::MatrixXcd& pilots, double noise_variance, Rng& rng) {
    if (pilots.rows() != h.cols()) throw std::invalid_argument("transmit_pilots: pilot rows must equal N_UE");
    PilotBlock block{pilots, h * pilots, noise_variance};
    if (noise_variance > 0.0) {
        std::normal_distribution<double> normal(0.0, std::sqrt(noise_variance / 2.0));
        for (Index i = 0; i < block.received.size(); ++i)
            block.received.data()[i] += std::complex<double>(normal(rng), normal(rng));
    }
    return block;
}

Eigen::MatrixXcd ls_estimate(const PilotBlock& block) {
    const Eigen::MatrixXcd& x = block.pilots;
    if (x.cols() < x.rows())
        throw std::invalid_argument("ls_estimate: ill-posed pilots, T_p = " + std::to_string(x.cols()) +
                                    " < N_UE = " + std::to_string(x.rows()));
    if (block.received.cols() != x.cols()) throw std::invalid_argument("ls_estimate: Y_p and X_p lengths differ");
    const Eigen::MatrixXcd gram = x * x.adjoint();
    Eigen::FullPivLU<Eigen::MatrixXcd> lu(gram);
    if (lu.rank() < gram.rows()) throw std::invalid_argument("ls_estimate: ill-posed pilots, X_p is rank deficient");
    return block.received * x.adjoint() * lu.inverse();
}

}  // namespace csipred
