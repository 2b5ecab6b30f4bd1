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

// Checkpoint directory: `weights` (named tensor container) and `meta`
// (key=value: variant kind, model config, system config, per-tensor
// trainable flags, training step, validation NMSE).

#ifndef CSIPRED_CHECKPOINT_HPP
#define CSIPRED_CHECKPOINT_HPP

#include "csipred/io.hpp"
#include "csipred/model.hpp"

#include <filesystem>
#include <limits>
#include <string>

namespace csipred {

struct CheckpointInfo {
    SystemConfig system;
    std::string scenario;
    long long step = 0;
    double val_nmse_db = std::numeric_limits<double>::quiet_NaN();
};

void write_model_config(io::KeyValueFile& kv, const ModelConfig& cfg, const std::string& prefix = "model.");
ModelConfig read_model_config(const io::KeyValueFile& kv, const ModelConfig& defaults,
                              const std::string& prefix = "model.");

io::NamedTensors export_parameters(const ParameterSet<float>& params);

void save_checkpoint(const std::filesystem::path& dir, const Predictor<float>& model, const CheckpointInfo& info);

struct LoadedCheckpoint {
    Predictor<float> model;
    CheckpointInfo info;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace csipred

#endif  // CSIPRED_CHECKPOINT_HPP
