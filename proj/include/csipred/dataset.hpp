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

// Dataset container: a directory holding a text `manifest` and one tensor
// file per split ([S, L + P, K, N_BS, N_UE] complex, velocity-major sample
// order). Realizations are stored clean; noise is added when windows are
// drawn for training or evaluation.

#ifndef CSIPRED_DATASET_HPP
#define CSIPRED_DATASET_HPP

#include "csipred/channel.hpp"
#include "csipred/io.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace csipred {

inline constexpr int kDatasetSchemaVersion = 1;

enum class Split { Train, Val, Test };

std::string to_string(Split split);
Split parse_split(const std::string& name);

/// Velocity grid and per-velocity sample counts.
struct DatasetProfile {
    std::vector<double> velocities_kmh;
    std::map<Split, Index> samples_per_velocity;

    /// 13 velocities 0..60 km/h, 800 / 200 / 1000 samples per velocity.
    static DatasetProfile paper();
    /// 7 velocities 0..60 km/h, 24 / 6 / 12 samples per velocity.
    static DatasetProfile desk();
};

struct DatasetSpec {
    SystemConfig system;
    ScenarioPreset preset = uma_nlos_preset();
    std::vector<double> velocities_kmh;
    std::map<Split, Index> samples_per_velocity;  // splits to generate
    std::uint64_t seed = 0;
};

struct DatasetSplit {
    SystemConfig system;
    std::string scenario;
    Split split = Split::Train;
    std::vector<double> velocities_kmh;
    Index samples_per_velocity = 0;
    CsiTensor channels;  // [S, L + P, K, N_BS, N_UE]

    Index size() const { return channels.empty() ? 0 : channels.dim(0); }
    double velocity_of(Index sample) const;
    /// One realization, [L + P, K, N_BS, N_UE].
    CsiTensor sample(Index index) const;
    std::vector<Index> indices_with_velocity(double velocity_kmh) const;
};

std::uint64_t realization_seed(std::uint64_t dataset_seed, Split split, Index sample);

/// Generates one split in memory.
DatasetSplit generate_split(const DatasetSpec& spec, Split split);

/// Writes manifest + one tensor file per requested split. Refuses to touch
/// an existing dataset unless `force` is set.
void build_dataset(const std::filesystem::path& dir, const DatasetSpec& spec, bool force = false);

io::KeyValueFile load_manifest(const std::filesystem::path& dir);
DatasetSplit load_split(const std::filesystem::path& dir, Split split);

void write_system(io::KeyValueFile& kv, const SystemConfig& sys, const std::string& prefix = "");
SystemConfig read_system(const io::KeyValueFile& kv, const std::string& prefix = "");
void write_preset(io::KeyValueFile& kv, const ScenarioPreset& preset, const std::string& prefix = "preset.");
ScenarioPreset read_preset(const io::KeyValueFile& kv, const std::string& prefix = "preset.");

}  // namespace csipred

#endif  // CSIPRED_DATASET_HPP
