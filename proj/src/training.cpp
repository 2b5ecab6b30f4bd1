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

#include "csipred/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>

namespace csipred {

double nmse_db(double nmse_linear) {
    if (!(nmse_linear > 0.0)) return kNmseDbFloor;
    return std::max(10.0 * std::log10(nmse_linear), kNmseDbFloor);
}

double NmseAccumulator::value() const {
    if (!(reference > 0.0)) throw std::invalid_argument("nmse: truth has zero norm");
    return error / reference;
}

template <typename Scalar>
void Adam::step(ParameterSet<Scalar>& params) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& e : params.entries()) {
        if (!e.trainable || !e.var.has_grad()) continue;
        const Eigen::VectorXd g = e.var.grad().data().template cast<double>();
        auto [it, fresh] = moments_.try_emplace(e.name);
        auto& [m, v] = it->second;
        if (fresh || m.size() != g.size()) {
            m = Eigen::VectorXd::Zero(g.size());
            v = Eigen::VectorXd::Zero(g.size());
        }
        m = beta1_ * m + (1.0 - beta1_) * g;
        v = beta2_ * v + (1.0 - beta2_) * g.cwiseAbs2();
        const Eigen::VectorXd update = lr_ * (m / c1).array() / ((v / c2).array().sqrt() + eps_);
        auto& value = e.var.mutable_value().data();
        value = (value.template cast<double>() - update).template cast<Scalar>();
    }
}

template void Adam::step<float>(ParameterSet<float>&);
template void Adam::step<double>(ParameterSet<double>&);

WindowBatch make_windows(const DatasetSplit& split, const std::vector<Index>& samples,
                         const std::vector<double>& snr_db, const std::vector<std::uint64_t>& seeds) {
    if (samples.empty()) throw std::invalid_argument("make_windows: no samples");
    if (snr_db.size() != samples.size() || seeds.size() != samples.size())
        throw std::invalid_argument("make_windows: snr/seed lists must match the sample list");
    const SystemConfig& sys = split.system;
    const Index k = sys.subcarriers, l = sys.history, p = sys.horizon, n = sys.features();
    const Index count = static_cast<Index>(samples.size());
    WindowBatch batch{RealTensor({count * k, l, n}), RealTensor({count * k, p, n}), samples};
    const Index hist_span = l * k * sys.n_bs * sys.n_ue;
    for (Index i = 0; i < count; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        CsiTensor h = split.sample(samples[ui]);
        const auto clean = to_real_window<float>(h, l);
        batch.target.data().segment(i * k * p * n, k * p * n) = clean.target.data();
        if (std::isinf(snr_db[ui]) && snr_db[ui] > 0) {
            batch.history.data().segment(i * k * l * n, k * l * n) = clean.history.data();
            continue;
        }
        Rng rng(seeds[ui]);
        const CsiTensor past({l, k, sys.n_bs, sys.n_ue}, h.data().head(hist_span));
        h.data().head(hist_span) = add_observation_noise(past, snr_db[ui], rng).data();
        batch.history.data().segment(i * k * l * n, k * l * n) = to_real_window<float>(h, l).history.data();
    }
    return batch;
}

void TrainConfig::validate() const {
    if (epochs < 1) throw std::invalid_argument("train: epochs must be positive");
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be positive");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("train: learning_rate must be positive");
    if (!(snr_lo <= snr_hi)) throw std::invalid_argument("train: snr_lo must not exceed snr_hi");
    if (profile != "paper" && profile != "desk") throw std::invalid_argument("train: unknown profile " + profile);
}

NmseAccumulator evaluate_split(const Predictor<float>& model, const DatasetSplit& split, double snr_db,
                               std::uint64_t seed, Index batch_size) {
    ad::NoGradGuard no_grad;
    NmseAccumulator acc;
    for (Index start = 0; start < split.size(); start += batch_size) {
        const Index count = std::min(batch_size, split.size() - start);
        std::vector<Index> idx(static_cast<std::size_t>(count));
        std::iota(idx.begin(), idx.end(), start);
        std::vector<std::uint64_t> seeds;
        for (Index i : idx) seeds.push_back(derive_seed(seed, static_cast<std::uint64_t>(i)));
        const auto w = make_windows(split, idx, std::vector<double>(idx.size(), snr_db), seeds);
        acc.add(model.forward(w.history).value(), w.target, count);
    }
    return acc;
}

namespace {

struct FrozenSnapshot {
    std::vector<std::pair<std::string, RealTensor>> tensors;

    explicit FrozenSnapshot(const ParameterSet<float>& params) {
        for (const auto& e : params.entries())
            if (!e.trainable) tensors.emplace_back(e.name, e.var.value());
    }

    void verify(const ParameterSet<float>& params, Index epoch) const {
        for (const auto& [name, t] : tensors)
            if (!(params.find(name)->var.value() == t))
                throw std::logic_error("frozen tensor '" + name + "' changed during epoch " + std::to_string(epoch));
    }
};

}  // namespace

TrainResult train(const TrainConfig& cfg) {
    cfg.validate();
    const auto start_time = std::chrono::steady_clock::now();
    const DatasetSplit train_split = load_split(cfg.dataset, Split::Train);
    const DatasetSplit val_split = load_split(cfg.dataset, Split::Val);
    if (!(train_split.system == val_split.system)) throw io::IoError("train/val splits disagree on the system config");

    const ModelConfig mcfg = cfg.model ? *cfg.model : ModelConfig::for_profile(cfg.profile, train_split.system);
    if (mcfg.features != train_split.system.features() || mcfg.history != train_split.system.history ||
        mcfg.horizon != train_split.system.horizon)
        throw std::invalid_argument("train: model (N, L, P) does not match the dataset");

    auto model = build_variant<float>(cfg.kind, mcfg, derive_seed(cfg.seed, 1), cfg.weight_archive);
    auto& params = model.parameters();
    const FrozenSnapshot frozen(params);
    Adam adam(cfg.learning_rate);

    std::error_code ec;
    std::filesystem::create_directories(cfg.out_dir, ec);
    if (ec) throw io::IoError("cannot create " + cfg.out_dir.string() + ": " + ec.message());
    std::ofstream log(cfg.out_dir / "train_log.tsv", std::ios::trunc);
    if (!log) throw io::IoError("cannot open training log in " + cfg.out_dir.string());
    log << "epoch\ttrain_nmse_db\tval_nmse_db\tlr\twall_time_s\n";

    TrainResult result;
    result.checkpoint = cfg.out_dir / "checkpoint";
    result.best_val_nmse_db = std::numeric_limits<double>::infinity();

    std::vector<Index> order(static_cast<std::size_t>(train_split.size()));
    std::iota(order.begin(), order.end(), Index{0});
    std::uniform_real_distribution<double> snr_dist(cfg.snr_lo, cfg.snr_hi);
    const std::uint64_t noise_stream = derive_seed(cfg.seed, 2);

    for (Index epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const std::uint64_t epoch_seed = derive_seed(noise_stream, static_cast<std::uint64_t>(epoch));
        Rng shuffle_rng(derive_seed(epoch_seed, 0));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        NmseAccumulator train_acc;
        for (std::size_t s = 0; s < order.size(); s += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t e = std::min(order.size(), s + static_cast<std::size_t>(cfg.batch_size));
            std::vector<Index> idx(order.begin() + static_cast<std::ptrdiff_t>(s),
                                   order.begin() + static_cast<std::ptrdiff_t>(e));
            std::vector<double> snr;
            std::vector<std::uint64_t> seeds;
            for (Index i : idx) {
                const std::uint64_t sample_seed = derive_seed(epoch_seed, static_cast<std::uint64_t>(i) + 1);
                Rng snr_rng(sample_seed);
                snr.push_back(cfg.snr_lo == cfg.snr_hi ? cfg.snr_lo : snr_dist(snr_rng));
                seeds.push_back(derive_seed(sample_seed, 1));
            }
            const auto w = make_windows(train_split, idx, snr, seeds);
            const auto pred = model.forward(w.history);
            const auto loss = ad::nmse_loss(pred, w.target);
            if (!std::isfinite(loss.value()[0]))
                throw NonFiniteLoss("non-finite loss at epoch " + std::to_string(epoch) + ", batch starting at " +
                                    std::to_string(s) + " (variant " + to_string(cfg.kind) + ")");
            train_acc.add(pred.value(), w.target, static_cast<Index>(idx.size()));
            ad::backward(loss);
            adam.step(params);
            params.zero_grad();
        }
        if (cfg.verify_frozen) frozen.verify(params, epoch);

        const double val_db =
            evaluate_split(model, val_split, cfg.val_snr, derive_seed(cfg.seed, 3), cfg.batch_size).db();
        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
        EpochLog entry{epoch, train_acc.db(), val_db, adam.learning_rate(), wall};
        result.log.push_back(entry);
        log << entry.epoch << '\t' << io::format_double(entry.train_nmse_db) << '\t'
            << io::format_double(entry.val_nmse_db) << '\t' << io::format_double(entry.lr) << '\t'
            << io::format_double(entry.wall_seconds) << '\n';
        log.flush();
        if (!cfg.quiet)
            std::cerr << "epoch " << epoch << "  train " << entry.train_nmse_db << " dB  val " << val_db << " dB  ("
                      << wall << " s)\n";

        if (val_db < result.best_val_nmse_db) {
            result.best_val_nmse_db = val_db;
            result.best_epoch = epoch;
            save_checkpoint(result.checkpoint, model,
                            {train_split.system, train_split.scenario, adam.steps(), val_db});
        }
        if (cfg.stop_at_train_db && entry.train_nmse_db <= *cfg.stop_at_train_db) break;
    }
    return result;
}

template <typename Scalar>
TrainableReport trainable_report(const Predictor<Scalar>& model) {
    TrainableReport r;
    for (const auto& e : model.parameters().entries()) {
        const Index n = e.var.value().size();
        auto& g = r.groups[e.group];
        g.total += n;
        r.total += n;
        if (e.trainable) {
            g.trainable += n;
            r.trainable += n;
        }
    }
    return r;
}

template TrainableReport trainable_report<float>(const Predictor<float>&);
template TrainableReport trainable_report<double>(const Predictor<double>&);

}  // namespace csipred
