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

#include "test_support.hpp"

#include "csipred/checkpoint.hpp"
#include "csipred/io.hpp"
#include "csipred/training.hpp"

#include <doctest.h>

#include <fstream>

using namespace csipred;
using testing::random_tensor;

namespace {

TrainConfig tiny_run(const std::filesystem::path& data, const std::filesystem::path& out, VariantKind kind) {
    TrainConfig cfg;
    cfg.dataset = data;
    cfg.out_dir = out;
    cfg.kind = kind;
    cfg.epochs = 3;
    cfg.batch_size = 4;
    cfg.seed = 5;
    return cfg;
}

std::vector<std::string> lines(const std::filesystem::path& p) {
    std::ifstream is(p);
    std::vector<std::string> out;
    for (std::string l; std::getline(is, l);) out.push_back(l);
    return out;
}

}  // namespace

TEST_CASE("nmse identities") {
    Rng rng(1);
    const auto t = random_tensor<double>({3, 6, 8}, rng);
    const auto zero = Tensor<double>::zeros(t.shape());
    Tensor<double> twice(t.shape(), (2.0 * t.data()).eval());
    CHECK(nmse(t, t) == 0.0);
    CHECK(nmse_db(nmse(t, t)) == kNmseDbFloor);
    CHECK(nmse(zero, t) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(nmse_db(nmse(zero, t)) == doctest::Approx(0.0));
    CHECK(nmse(twice, t) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(nmse_db(0.1) == doctest::Approx(-10.0).epsilon(1e-12));
    CHECK_THROWS_AS(nmse(t, zero), std::invalid_argument);
    CHECK_THROWS_AS(nmse(t, Tensor<double>::zeros({3, 6})), std::invalid_argument);

    const auto p = random_tensor<double>(t.shape(), rng);
    CHECK(nmse(p, t) > 0.0);
}

TEST_CASE("accumulator is a ratio of sums") {
    Rng rng(2);
    const auto t1 = random_tensor<float>({2, 3}, rng), t2 = random_tensor<float>({2, 3}, rng, 5.0);
    const auto p1 = random_tensor<float>({2, 3}, rng), p2 = random_tensor<float>({2, 3}, rng);
    NmseAccumulator a, b;
    a.add(p1, t1);
    b.add(p2, t2, 2);
    a.merge(b);
    const double num = (p1.data().cast<double>() - t1.data().cast<double>()).squaredNorm() +
                       (p2.data().cast<double>() - t2.data().cast<double>()).squaredNorm();
    const double den = t1.data().cast<double>().squaredNorm() + t2.data().cast<double>().squaredNorm();
    CHECK(a.value() == doctest::Approx(num / den).epsilon(1e-12));
    CHECK(a.count == 3);
    CHECK(a.db() == doctest::Approx(10.0 * std::log10(num / den)).epsilon(1e-12));
}

TEST_CASE("Adam updates only trainable parameters with gradients") {
    ParameterSet<double> params;
    auto a = params.add("a", "g", Tensor<double>::from({2}, {1.0, -1.0}));
    auto frozen = params.add("frozen", "g", Tensor<double>::from({2}, {3.0, 4.0}), false);
    auto unused = params.add("unused", "g", Tensor<double>::from({1}, {0.5}));
    const auto before_frozen = frozen.value();
    const auto before_unused = unused.value();
    Adam adam(0.1);
    for (int i = 0; i < 3; ++i) {
        ad::backward(ad::sum(ad::mul(ad::add(a, frozen), ad::add(a, frozen))));
        adam.step(params);
        params.zero_grad();
    }
    CHECK(frozen.value() == before_frozen);
    CHECK(unused.value() == before_unused);
    CHECK(a.value()[0] < 1.0);
    // first Adam step moves each coordinate by ~lr against the gradient sign
    ParameterSet<double> one;
    auto x = one.add("x", "g", Tensor<double>::from({1}, {2.0}));
    Adam first(0.01);
    ad::backward(ad::sum(ad::mul(x, x)));
    first.step(one);
    CHECK(x.value()[0] == doctest::Approx(1.99).epsilon(1e-9));
    CHECK(first.steps() == 1);
}

TEST_CASE("train config validation") {
    TrainConfig cfg;
    cfg.snr_lo = 10;
    cfg.snr_hi = 5;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.epochs = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.learning_rate = -1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("windows add noise to histories only") {
    testing::TempDir dir("windows");
    build_dataset(dir.path(), testing::small_spec(uma_nlos_preset(), {10.0}, 3, 0, 0, 2));
    const auto split = load_split(dir.path(), Split::Train);
    const auto sys = split.system;
    const auto clean = make_windows(split, {0, 2}, {kNoiselessSnr, kNoiselessSnr}, {1, 2});
    const auto noisy = make_windows(split, {0, 2}, {0.0, 0.0}, {1, 2});
    CHECK(clean.history.shape() == Shape{2 * sys.subcarriers, sys.history, sys.features()});
    CHECK(clean.target.shape() == Shape{2 * sys.subcarriers, sys.horizon, sys.features()});
    CHECK(clean.samples == std::vector<Index>{0, 2});
    CHECK(noisy.target == clean.target);
    CHECK(noisy.history != clean.history);
    const double ratio = nmse(noisy.history, clean.history);
    CHECK(ratio > 0.7);
    CHECK(ratio < 1.3);
    CHECK(make_windows(split, {0, 2}, {0.0, 0.0}, {1, 2}).history == noisy.history);
}

TEST_CASE("training run: log, best checkpoint, frozen tensors and seed stability") {
    testing::TempDir dir("train");
    build_dataset(dir.path() / "data", testing::small_spec(uma_nlos_preset(), {0.0, 30.0}, 4, 2, 0, 3));

    auto cfg = tiny_run(dir.path() / "data", dir.path() / "a", VariantKind::Full);
    cfg.verify_frozen = true;
    const auto initial = build_variant<float>(VariantKind::Full, ModelConfig::desk(), derive_seed(cfg.seed, 1));
    const auto r1 = train(cfg);
    REQUIRE(r1.log.size() == 3);

    const auto log = lines(cfg.out_dir / "train_log.tsv");
    REQUIRE(log.size() == 4);
    CHECK(log[0] == "epoch\ttrain_nmse_db\tval_nmse_db\tlr\twall_time_s");

    double best = std::numeric_limits<double>::infinity();
    for (const auto& e : r1.log) best = std::min(best, e.val_nmse_db);
    CHECK(r1.best_val_nmse_db == best);
    const auto ckpt = load_checkpoint(r1.checkpoint);
    CHECK(ckpt.info.val_nmse_db == doctest::Approx(best).epsilon(1e-12));
    CHECK(ckpt.model.kind() == VariantKind::Full);

    bool frozen_same = true, ln_moved = false, wpe_moved = false;
    for (const auto& e : ckpt.model.parameters().entries()) {
        const auto& init = initial.parameters().at(e.name).var.value();
        if (is_frozen_backbone_tensor(e.name)) frozen_same &= e.var.value() == init;
        if (e.name == "backbone.ln_f.weight") ln_moved = e.var.value() != init;
        if (e.name == "backbone.wpe") wpe_moved = e.var.value() != init;
        CHECK(e.trainable == !is_frozen_backbone_tensor(e.name));
    }
    CHECK(frozen_same);
    CHECK(ln_moved);
    CHECK(wpe_moved);

    cfg.out_dir = dir.path() / "b";
    const auto r2 = train(cfg);
    REQUIRE(r2.log.size() == r1.log.size());
    for (std::size_t i = 0; i < r1.log.size(); ++i) {
        CHECK(r2.log[i].train_nmse_db == r1.log[i].train_nmse_db);
        CHECK(r2.log[i].val_nmse_db == r1.log[i].val_nmse_db);
    }
}

TEST_CASE("training rejects a mismatched model config") {
    testing::TempDir dir("mismatch");
    build_dataset(dir.path() / "data", testing::small_spec(uma_nlos_preset(), {0.0}, 2, 1, 0, 3));
    auto cfg = tiny_run(dir.path() / "data", dir.path() / "o", VariantKind::Full);
    cfg.model = ModelConfig::paper();
    CHECK_THROWS_AS(train(cfg), std::invalid_argument);
}

TEST_CASE("checkpoint round trip preserves values, flags and config") {
    testing::TempDir dir("ckpt");
    auto cfg = ModelConfig::desk();
    cfg.frequency_strategy = FrequencySelection::ExplicitList;
    cfg.frequency_list = {{0, 0}, {1, 2}, {3, 3}, {2, 0}};
    const auto m = build_variant<float>(VariantKind::GapAdapter, cfg, 4);
    CheckpointInfo info{SystemConfig::desk(), "UMi-NLOS", 42, -7.25};
    save_checkpoint(dir.path() / "c", m, info);
    CHECK(std::filesystem::exists(dir.path() / "c" / "weights"));
    CHECK(std::filesystem::exists(dir.path() / "c" / "meta"));

    const auto back = load_checkpoint(dir.path() / "c");
    CHECK(back.model.kind() == VariantKind::GapAdapter);
    CHECK(back.info.step == 42);
    CHECK(back.info.val_nmse_db == -7.25);
    CHECK(back.info.scenario == "UMi-NLOS");
    CHECK(back.info.system == SystemConfig::desk());
    CHECK(back.model.config().frequency_list == cfg.frequency_list);
    const auto& a = m.parameters().entries();
    const auto& b = back.model.parameters().entries();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].name == b[i].name);
        CHECK(a[i].trainable == b[i].trainable);
        CHECK(a[i].var.value() == b[i].var.value());
    }
    const auto meta = io::KeyValueFile::load(dir.path() / "c" / "meta");
    CHECK(meta.get("kind") == "gap_adapter");
    CHECK(meta.get("trainable.backbone.h.0.attn.c_attn.weight") == "0");
    CHECK(meta.get("trainable.backbone.wpe") == "1");

    Rng rng(4);
    const auto x = random_tensor<float>({2, cfg.history, cfg.features}, rng);
    ad::NoGradGuard guard;
    CHECK(back.model.forward(x).value() == m.forward(x).value());
}

TEST_CASE("trainable report counts") {
    const auto full = build_variant<float>(VariantKind::Full, ModelConfig::desk(), 1);
    const auto r = trainable_report(full);
    CHECK(r.total == full.parameters().total_count());
    CHECK(r.trainable == full.parameters().trainable_count());
    CHECK(r.trainable < r.total);
    CHECK(r.groups.at("backbone_attn").trainable == 0);
    CHECK(r.groups.at("backbone_ffn").trainable == 0);
    CHECK(r.groups.at("backbone_ln").trainable == r.groups.at("backbone_ln").total);
    CHECK(r.groups.at("positional").trainable == r.groups.at("positional").total);
    Index sum = 0;
    for (const auto& [name, g] : r.groups) sum += g.total;
    CHECK(sum == r.total);

    Rng rng(1);
    const auto x = random_tensor<float>({1, full.config().history, full.config().features}, rng);
    (void)full.forward(x);
    const auto again = trainable_report(full);
    CHECK(again.total == r.total);
    CHECK(again.trainable == r.trainable);

    const auto fft = trainable_report(build_variant<float>(VariantKind::BackboneOnlyFft, ModelConfig::desk(), 1));
    CHECK(fft.trainable == fft.total);
}
