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

#ifndef CSIPRED_EVALUATION_HPP
#define CSIPRED_EVALUATION_HPP

#include "csipred/dataset.hpp"
#include "csipred/model.hpp"
#include "csipred/training.hpp"

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace csipred {

/// Anything that maps a window batch to a [B, P, N] prediction.
class Forecaster {
public:
    virtual ~Forecaster() = default;
    virtual RealTensor predict(const WindowBatch& batch) const = 0;
    virtual std::string label() const = 0;
    virtual Index horizon() const = 0;
};

class ModelForecaster final : public Forecaster {
public:
    ModelForecaster(std::shared_ptr<const Predictor<float>> model, std::string label);
    RealTensor predict(const WindowBatch& batch) const override;
    std::string label() const override { return label_; }
    Index horizon() const override { return model_->config().horizon; }

private:
    std::shared_ptr<const Predictor<float>> model_;
    std::string label_;
};

/// Returns the true targets.
class OracleForecaster final : public Forecaster {
public:
    explicit OracleForecaster(Index horizon) : horizon_(horizon) {}
    RealTensor predict(const WindowBatch& batch) const override { return batch.target; }
    std::string label() const override { return "oracle"; }
    Index horizon() const override { return horizon_; }

private:
    Index horizon_;
};

/// Predicts all zeros.
class ZeroForecaster final : public Forecaster {
public:
    explicit ZeroForecaster(Index horizon) : horizon_(horizon) {}
    RealTensor predict(const WindowBatch& batch) const override { return RealTensor(batch.target.shape()); }
    std::string label() const override { return "zero"; }
    Index horizon() const override { return horizon_; }

private:
    Index horizon_;
};

enum class SweepAxis { Snr, Velocity, Step };

std::string to_string(SweepAxis axis);
SweepAxis parse_sweep_axis(const std::string& name);

struct EvalRecord {
    SweepAxis axis = SweepAxis::Snr;
    double value = 0.0;
    double nmse = 0.0;
    double nmse_db = 0.0;
    Index samples = 0;
    std::string variant;
    std::string scenario;
};

struct SweepOptions {
    double fixed_snr_db = 10.0;  // used by the velocity and step axes
    std::uint64_t seed = 0;
    Index batch_size = 8;
};

/// Default grids: SNR {0, 5, ..., 20}, the dataset's velocities, steps 1..P.
std::vector<double> default_grid(SweepAxis axis, const DatasetSplit& split);

/// NMSE per step p = 1..P, returned as separate accumulators.
std::vector<NmseAccumulator> per_step_accumulators(const RealTensor& pred, const RealTensor& truth);

std::vector<EvalRecord> evaluate_sweep(const Forecaster& forecaster, const DatasetSplit& split, SweepAxis axis,
                                       const std::vector<double>& grid, const SweepOptions& options = {});

/// Tab-separated table with a header row.
void write_records_tsv(const std::filesystem::path& path, const std::vector<EvalRecord>& records);
std::vector<EvalRecord> read_records_tsv(const std::filesystem::path& path);

/// NMSE (dB) versus the sweep axis, one polyline per variant.
void write_sweep_svg(const std::filesystem::path& path, const std::vector<EvalRecord>& records,
                     const std::string& title);

struct ComparisonResult {
    std::vector<EvalRecord> records;  // grid-major, variants in input order
    std::filesystem::path table;
    std::filesystem::path plot;
};

/// Evaluates every forecaster on the same grid and writes `<stem>.tsv` and
/// `<stem>.svg` into `out_dir`.
ComparisonResult compare_variants(const std::vector<const Forecaster*>& forecasters, const DatasetSplit& split,
                                  SweepAxis axis, const std::vector<double>& grid, const SweepOptions& options,
                                  const std::filesystem::path& out_dir, const std::string& stem);

/// Downlink prediction from an uplink history [L, K, N_BS, N_UE]: forecast,
/// devectorize, then transpose each predicted step. Returns
/// [P, K, N_UE, N_BS]. `future` supplies targets for stubs that need them.
CsiTensor predict_dl(const Forecaster& forecaster, const CsiTensor& ul_history, Index horizon,
                     const CsiTensor* future = nullptr);

}  // namespace csipred

#endif  // CSIPRED_EVALUATION_HPP
