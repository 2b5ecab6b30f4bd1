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

// Geometry-based stochastic channel model (clusters of rays with delay,
// Doppler and array phase terms) for time-varying UL MIMO-OFDM CSI.

#ifndef CSIPRED_CHANNEL_HPP
#define CSIPRED_CHANNEL_HPP

#include "csipred/tensor.hpp"

#include <Eigen/Dense>

#include <complex>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

namespace csipred {

using Rng = std::mt19937_64;

inline constexpr double kSpeedOfLight = 3.0e8;  // m/s
inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kNoiselessSnr = std::numeric_limits<double>::infinity();

/// splitmix64 mix of a base seed and a stream index.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

struct AngularSpread {
    double aoa = 0.0;  // degrees
    double aod = 0.0;
    double zoa = 0.0;
    double zod = 0.0;
};

struct ScenarioPreset {
    std::string name;
    Index num_clusters = 20;
    Index rays_per_cluster = 20;
    double delay_spread = 0.0;             // seconds
    double per_cluster_power_decay = 2.3;  // delay scaling r_tau of the exponential profile
    double cluster_shadowing_db = 3.0;
    AngularSpread angular_spread_deg;      // spread of cluster centres
    AngularSpread intra_cluster_spread_deg;

    void validate() const;
};

ScenarioPreset uma_nlos_preset();
ScenarioPreset umi_nlos_preset();
/// "UMa-NLOS" or "UMi-NLOS".
ScenarioPreset preset_by_name(const std::string& name);

struct SystemConfig {
    Index n_bs = 4;
    Index n_ue = 4;
    Index subcarriers = 12;
    double subcarrier_spacing = 120e3;  // Hz
    double carrier = 2.4e9;             // Hz
    double sample_period = 0.625e-3;    // s
    Index history = 24;                 // L
    Index horizon = 6;                  // P

    static SystemConfig paper() { return {}; }
    static SystemConfig desk();

    void validate() const;
    Index features() const { return 2 * n_bs * n_ue; }
    Index steps() const { return history + horizon; }
    double subcarrier_frequency(Index k) const {
        return carrier + static_cast<double>(k - subcarriers / 2) * subcarrier_spacing;
    }
    bool operator==(const SystemConfig&) const = default;
};

struct Ray {
    std::complex<double> gain;
    double delay = 0.0;    // s
    double doppler = 0.0;  // Hz
    double zoa = 0.0;      // rad
    double aoa = 0.0;
    double zod = 0.0;
    double aod = 0.0;
};

struct RaySet {
    std::vector<Ray> rays;
    Eigen::Vector3d velocity = Eigen::Vector3d::Zero();  // m/s
};

/// Unit vector pointing along (zenith theta, azimuth phi).
Eigen::Vector3d unit_direction(double theta, double phi);

/// (f_c / c) <v, r(theta, phi)>
double doppler_shift(const Eigen::Vector3d& velocity, double theta, double phi, double carrier);

/// Draws N*M rays for `preset`. The UE moves horizontally at `velocity_kmh`
/// in a random azimuth. Total ray power sums to one.
RaySet sample_ray_set(const ScenarioPreset& preset, double velocity_kmh, double carrier, Rng& rng);

/// Recomputes every ray's Doppler after changing `rays.velocity`.
void refresh_doppler(RaySet& rays, double carrier);

/// Half-wavelength ULA response: element m has phase pi * m * sin(theta) * cos(phi).
Eigen::VectorXcd array_response(double theta, double phi, Index num_antennas);

/// Sum over rays of gain * exp(-j2 pi f tau) * exp(j2 pi nu t) * a_BS a_UE^H, [N_BS, N_UE].
Eigen::MatrixXcd evaluate_channel(const RaySet& rays, double t, double f, const SystemConfig& sys);

struct ChannelRealization {
    CsiTensor h;  // [L + P, K, N_BS, N_UE]
    double velocity_kmh = 0.0;
    std::string scenario;
    std::uint64_t seed = 0;
};

/// Samples `evaluate_channel` on the time/subcarrier grid of `sys` for one
/// fixed ray set.
ChannelRealization generate_realization(const SystemConfig& sys, const ScenarioPreset& preset, double velocity_kmh,
                                        std::uint64_t seed);

/// Evaluates a given ray set on the grid of `sys`.
CsiTensor sample_grid(const RaySet& rays, const SystemConfig& sys);

/// DL channel from UL channel by TDD reciprocity (plain transpose).
template <typename Derived>
auto apply_reciprocity(const Eigen::MatrixBase<Derived>& h_ul) {
    return h_ul.transpose().eval();
}

/// Adds CN(0, P_s / 10^(snr/10)) noise, P_s the mean |H|^2 of `h`.
/// `kNoiselessSnr` returns the input unchanged.
CsiTensor add_observation_noise(const CsiTensor& h, double snr_db, Rng& rng);

struct PilotBlock {
    Eigen::MatrixXcd pilots;    // X_p [N_UE, T_p]
    Eigen::MatrixXcd received;  // Y_p [N_BS, T_p]
    double noise_variance = 0.0;
};

/// Y = H X + N for known pilots.
PilotBlock transmit_pilots(const Eigen::MatrixXcd& h, const Eigen::MatrixXcd& pilots, double noise_variance, Rng& rng);

/// Y X^H (X X^H)^-1; throws std::invalid_argument for rank-deficient pilots.
Eigen::MatrixXcd ls_estimate(const PilotBlock& block);

}  // namespace csipred

#endif  // CSIPRED_CHANNEL_HPP
