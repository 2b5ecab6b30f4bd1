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

#ifndef CSIPRED_TRAINING_HPP
#define CSIPRED_TRAINING_HPP

#include "csipred/checkpoint.hpp"
#include "csipred/dataset.hpp"
#include "csipred/model.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace csipred {

inline constexpr double kNmseDbFloor = -100.0;

/// ||pred - truth||^2 / ||truth||^2.
template <typename DerivedA, typename DerivedB>
double nmse(const Eigen::MatrixBase<DerivedA>& pred, const Eigen::MatrixBase<DerivedB>& truth) {
    if (pred.rows() != truth.rows() || pred.cols() != truth.cols())
        throw std::invalid_argument("nmse: shape mismatch");
    const double den = truth.template cast<double>().squaredNorm();
    if (!(den > 0.0)) throw std::invalid_argument("nmse: truth has zero norm");
    return (pred.template cast<double>() - truth.template cast<double>()).squaredNorm() / den;
}

template <typename Scalar>
double nmse(const Tensor<Scalar>& pred, const Tensor<Scalar>& truth) {
    if (pred.shape() != truth.shape()) throw std::invalid_argument("nmse: shape mismatch");
    return nmse(pred.data(), truth.data());
}

/// 10 log10(x), floored at -100 dB.
double nmse_db(double nmse_linear);

/// Running ratio-of-sums NMSE.
struct NmseAccumulator {
    double error = 0.0;      // sum ||pred - truth||^2
    double reference = 0.0;  // sum ||truth||^2
    Index count = 0;

    template <typename Scalar>
    void add(const Tensor<Scalar>& pred, const Tensor<Scalar>& truth, Index samples = 1) {
        if (pred.shape() != truth.shape()) throw std::invalid_argument("nmse: shape mismatch");
        error += (pred.data().template cast<double>() - truth.data().template cast<double>()).squaredNorm();
        reference += truth.data().template cast<double>().squaredNorm();
        count += samples;
    }
    void merge(const NmseAccumulator& other) {
        error += other.error;
        reference += other.reference;
        count += other.count;
    }
    double value() const;
    double db() const { return nmse_db(value()); }
};

/// Adam with per-parameter moment buffers. Only entries flagged trainable
/// that received a gradient are updated.
class Adam {
public:
    explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    template <typename Scalar>
    void step(ParameterSet<Scalar>& params);

    long long steps() const { return t_; }
    double learning_rate() const { return lr_; }

private:
    double lr_, beta1_, beta2_, eps_;
    long long t_ = 0;
    std::map<std::string, std::pair<Eigen::VectorXd, Eigen::VectorXd>> moments_;
};

/// Model-ready history/target rows, one per (realization, subcarrier).
struct WindowBatch {
    RealTensor history;  // [B, L, N]
    RealTensor target;   // [B, P, N]
    std::vector<Index> samples;  // realization index of each group of K rows
};

/// Windows of the listed realizations. Histories get observation noise at
/// `snr_db[i]` (pass +inf for clean) using the per-sample `seeds`.
WindowBatch make_windows(const DatasetSplit& split, const std::vector<Index>& samples,
                         const std::vector<double>& snr_db, const std::vector<std::uint64_t>& seeds);

struct TrainConfig {
    std::filesystem::path dataset;
    std::filesystem::path out_dir;
    VariantKind kind = VariantKind::Full;
    std::string profile = "desk";
    std::optional<ModelConfig> model;  // overrides the profile defaults
    std::optional<std::filesystem::path> weight_archive;
    Index epochs = 40;
    Index batch_size = 8;  // realizations per step (K rows each)
    double learning_rate = 1e-3;
    double snr_lo = 0.0;
    double snr_hi = 20.0;
    double val_snr = 10.0;
    std::uint64_t seed = 0;
    /// Stop once the epoch's training NMSE reaches this level (dB).
    std::optional<double> stop_at_train_db;
    bool verify_frozen = false;
    bool quiet = true;

    void validate() const;
};

struct EpochLog {
    Index epoch = 0;
    double train_nmse_db = 0.0;
    double val_nmse_db = 0.0;
    double lr = 0.0;
    double wall_seconds = 0.0;
};

struct TrainResult {
    std::vector<EpochLog> log;
    double best_val_nmse_db = 0.0;
    Index best_epoch = 0;
    std::filesystem::path checkpoint;
};

class NonFiniteLoss : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Writes `<out_dir>/checkpoint` (best validation) and `<out_dir>/train_log.tsv`.
TrainResult train(const TrainConfig& cfg);

struct TrainableReport {
    Index total = 0;
    Index trainable = 0;
    struct Group {
        Index total = 0;
        Index trainable = 0;
    };
    std::map<std::string, Group> groups;
};

template <typename Scalar>
TrainableReport trainable_report(const Predictor<Scalar>& model);

/// Validation-style NMSE of a model on a split at a fixed SNR.
NmseAccumulator evaluate_split(const Predictor<float>& model, const DatasetSplit& split, double snr_db,
                               std::uint64_t seed, Index batch_size);

}  // namespace csipred

#endif  // CSIPRED_TRAINING_HPP
