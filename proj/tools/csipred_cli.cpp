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

// csipred: generate-data | train | evaluate | compare | ablate | report

#include "csipred/checkpoint.hpp"
#include "csipred/dataset.hpp"
#include "csipred/evaluation.hpp"
#include "csipred/training.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <set>

namespace fs = std::filesystem;
using namespace csipred;

namespace {

struct Common {
    std::string config;
    std::uint64_t seed = 0;
    std::string profile = "desk";
    std::string out = "out";
    bool force = false;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("config", c.config, "key=value config file")->check(CLI::ExistingFile);
    cmd->add_option("--seed", c.seed, "base RNG seed")->capture_default_str();
    cmd->add_option("--profile", c.profile, "size profile")
        ->check(CLI::IsMember({"paper", "desk"}))
        ->capture_default_str();
    cmd->add_option("--out", c.out, "output directory")->capture_default_str();
    cmd->add_flag("--force", c.force, "overwrite existing outputs");
}

io::KeyValueFile load_config(const Common& c, const std::set<std::string>& keys,
                             const std::vector<std::string>& prefixes = {}) {
    io::KeyValueFile kv = c.config.empty() ? io::KeyValueFile() : io::KeyValueFile::load(c.config);
    for (const auto& k : kv.keys()) {
        if (keys.count(k)) continue;
        bool ok = false;
        for (const auto& p : prefixes) ok = ok || k.rfind(p, 0) == 0;
        if (!ok) throw std::invalid_argument("unknown config key '" + k + "'");
    }
    return kv;
}

void prepare_out(const fs::path& dir, const std::vector<std::string>& products, bool force) {
    for (const auto& p : products)
        if (fs::exists(dir / p) && !force)
            throw io::IoError((dir / p).string() + " already exists (use --force to overwrite)");
    fs::create_directories(dir);
}

SystemConfig system_for(const io::KeyValueFile& kv, const std::string& profile) {
    const SystemConfig base = profile == "paper" ? SystemConfig::paper() : SystemConfig::desk();
    io::KeyValueFile merged;
    write_system(merged, base);
    for (const auto& k : kv.keys())
        if (merged.contains(k)) merged.set(k, kv.get(k));
    return read_system(merged);
}

std::vector<double> grid_or(const io::KeyValueFile& kv, const std::string& key, std::vector<double> fallback) {
    return kv.contains(key) ? kv.get_doubles(key) : fallback;
}

// ---- generate-data -------------------------------------------------------

int cmd_generate(const Common& c) {
    const auto kv = load_config(
        c,
        {"scenario", "velocities_kmh", "train_per_velocity", "val_per_velocity", "test_per_velocity", "n_bs", "n_ue",
         "subcarriers", "subcarrier_spacing_hz", "carrier_hz", "sample_period_s", "history", "horizon"},
        {"preset."});
    const DatasetProfile profile = c.profile == "paper" ? DatasetProfile::paper() : DatasetProfile::desk();
    DatasetSpec spec;
    spec.system = system_for(kv, c.profile);
    io::KeyValueFile preset_kv;
    write_preset(preset_kv, preset_by_name(kv.get_or("scenario", "UMa-NLOS")));
    for (const auto& k : kv.keys())
        if (k.rfind("preset.", 0) == 0) preset_kv.set(k, kv.get(k));
    spec.preset = read_preset(preset_kv);
    spec.velocities_kmh = grid_or(kv, "velocities_kmh", profile.velocities_kmh);
    for (Split s : {Split::Train, Split::Val, Split::Test}) {
        const Index n = kv.get_int_or(to_string(s) + "_per_velocity", profile.samples_per_velocity.at(s));
        if (n > 0) spec.samples_per_velocity[s] = n;
    }
    spec.seed = c.seed;
    build_dataset(c.out, spec, c.force);
    std::cout << "dataset written to " << c.out << " (" << spec.preset.name << ", " << spec.velocities_kmh.size()
              << " velocities)\n";
    return 0;
}

// ---- train ---------------------------------------------------------------

const std::set<std::string> kTrainKeys = {"dataset",     "variant",     "epochs",  "batch_size",       "learning_rate",
                                          "snr_lo",      "snr_hi",      "val_snr", "stop_at_train_db", "verify_frozen",
                                          "weight_archive"};

TrainConfig train_config(const io::KeyValueFile& kv, const Common& c) {
    TrainConfig t;
    t.dataset = kv.get("dataset");
    t.kind = parse_variant_kind(kv.get_or("variant", "full"));
    t.profile = c.profile;
    t.epochs = kv.get_int_or("epochs", t.epochs);
    t.batch_size = kv.get_int_or("batch_size", t.batch_size);
    t.learning_rate = kv.get_double_or("learning_rate", t.learning_rate);
    t.snr_lo = kv.get_double_or("snr_lo", t.snr_lo);
    t.snr_hi = kv.get_double_or("snr_hi", t.snr_hi);
    t.val_snr = kv.get_double_or("val_snr", t.val_snr);
    if (kv.contains("stop_at_train_db")) t.stop_at_train_db = kv.get_double("stop_at_train_db");
    t.verify_frozen = kv.get_int_or("verify_frozen", 0) != 0;
    if (kv.contains("weight_archive")) t.weight_archive = kv.get("weight_archive");
    bool has_model_keys = false;
    for (const auto& k : kv.keys()) has_model_keys = has_model_keys || k.rfind("model.", 0) == 0;
    if (has_model_keys) {
        const auto sys = read_system(load_manifest(t.dataset));
        t.model = read_model_config(kv, ModelConfig::for_profile(c.profile, sys));
    }
    t.seed = c.seed;
    t.quiet = false;
    return t;
}

int cmd_train(const Common& c) {
    const auto kv = load_config(c, kTrainKeys, {"model."});
    TrainConfig t = train_config(kv, c);
    t.out_dir = c.out;
    prepare_out(t.out_dir, {"checkpoint", "train_log.tsv"}, c.force);
    const auto r = train(t);
    std::cout << "best val NMSE " << r.best_val_nmse_db << " dB at epoch " << r.best_epoch << "; checkpoint "
              << r.checkpoint << "\n";
    return 0;
}

// ---- evaluate / compare --------------------------------------------------

const std::set<std::string> kEvalKeys = {"dataset",   "split",         "axes",      "snr_grid", "velocity_grid",
                                         "step_grid", "fixed_snr",     "batch_size"};

struct EvalSetup {
    DatasetSplit split;
    std::vector<SweepAxis> axes;
    SweepOptions options;
    io::KeyValueFile kv;

    std::vector<double> grid(SweepAxis a) const {
        const std::string key = to_string(a) + "_grid";
        return grid_or(kv, key, default_grid(a, split));
    }
};

EvalSetup eval_setup(const io::KeyValueFile& kv, const Common& c) {
    EvalSetup e;
    e.kv = kv;
    e.split = load_split(kv.get("dataset"), parse_split(kv.get_or("split", "test")));
    for (const auto& a : kv.contains("axes") ? kv.get_list("axes") : std::vector<std::string>{"snr", "velocity", "step"})
        e.axes.push_back(parse_sweep_axis(a));
    e.options.fixed_snr_db = kv.get_double_or("fixed_snr", 10.0);
    e.options.batch_size = kv.get_int_or("batch_size", 8);
    e.options.seed = c.seed;
    return e;
}

std::shared_ptr<const Predictor<float>> load_model(const fs::path& dir, const DatasetSplit& split) {
    auto ckpt = load_checkpoint(dir);
    if (!(ckpt.info.system == split.system))
        throw std::invalid_argument("checkpoint " + dir.string() + " was trained on a different system config");
    return std::make_shared<const Predictor<float>>(std::move(ckpt.model));
}

int cmd_evaluate(const Common& c) {
    auto keys = kEvalKeys;
    keys.insert("checkpoint");
    keys.insert("label");
    const auto kv = load_config(c, keys);
    const auto e = eval_setup(kv, c);
    const auto model = load_model(kv.get("checkpoint"), e.split);
    const ModelForecaster f(model, kv.get_or("label", to_string(model->kind())));
    std::vector<std::string> products;
    for (auto a : e.axes) products.push_back("eval_" + to_string(a) + ".tsv");
    prepare_out(c.out, products, c.force);
    for (auto a : e.axes) {
        const auto recs = evaluate_sweep(f, e.split, a, e.grid(a), e.options);
        write_records_tsv(fs::path(c.out) / ("eval_" + to_string(a) + ".tsv"), recs);
        write_sweep_svg(fs::path(c.out) / ("eval_" + to_string(a) + ".svg"), recs,
                        "NMSE vs " + to_string(a) + " (" + e.split.scenario + ")");
        for (const auto& r : recs)
            std::cout << to_string(a) << "=" << r.value << "\t" << r.nmse_db << " dB\n";
    }
    return 0;
}

int run_comparison(const std::vector<fs::path>& checkpoints, std::vector<std::string> labels, const EvalSetup& e,
                   const fs::path& out, const std::string& stem_prefix) {
    if (labels.empty())
        for (const auto& p : checkpoints) labels.push_back(p.parent_path().filename().string());
    if (labels.size() != checkpoints.size()) throw std::invalid_argument("labels and checkpoints differ in count");
    std::vector<std::unique_ptr<ModelForecaster>> owned;
    std::vector<const Forecaster*> fs_list;
    for (std::size_t i = 0; i < checkpoints.size(); ++i) {
        owned.push_back(std::make_unique<ModelForecaster>(load_model(checkpoints[i], e.split), labels[i]));
        fs_list.push_back(owned.back().get());
    }
    for (auto a : e.axes) {
        const auto r = compare_variants(fs_list, e.split, a, e.grid(a), e.options, out, stem_prefix + to_string(a));
        std::cout << "wrote " << r.table << " and " << r.plot << "\n";
    }
    return 0;
}

int cmd_compare(const Common& c) {
    auto keys = kEvalKeys;
    keys.insert("checkpoints");
    keys.insert("labels");
    const auto kv = load_config(c, keys);
    const auto e = eval_setup(kv, c);
    std::vector<fs::path> ckpts;
    for (const auto& s : kv.get_list("checkpoints")) ckpts.emplace_back(s);
    std::vector<std::string> products;
    for (auto a : e.axes) products.push_back("compare_" + to_string(a) + ".tsv");
    prepare_out(c.out, products, c.force);
    return run_comparison(ckpts, kv.contains("labels") ? kv.get_list("labels") : std::vector<std::string>{}, e,
                          c.out, "compare_");
}

// ---- ablate --------------------------------------------------------------

int cmd_ablate(const Common& c) {
    auto keys = kTrainKeys;
    keys.insert(kEvalKeys.begin(), kEvalKeys.end());
    keys.insert("variants");
    keys.insert("seeds");
    keys.erase("variant");
    const auto kv = load_config(c, keys, {"model."});
    const fs::path out = c.out;
    prepare_out(out, {"ablation_summary.tsv"}, c.force);

    std::vector<VariantKind> kinds;
    for (const auto& v : kv.contains("variants") ? kv.get_list("variants")
                                                  : std::vector<std::string>{"full", "no_backbone", "backbone_only_fft"})
        kinds.push_back(parse_variant_kind(v));
    std::vector<std::uint64_t> seeds;
    for (double s : grid_or(kv, "seeds", {static_cast<double>(c.seed)})) seeds.push_back(static_cast<std::uint64_t>(s));

    const auto e = eval_setup(kv, c);
    std::ofstream summary(out / "ablation_summary.tsv", std::ios::trunc);
    summary << "variant\tseed\tbest_val_nmse_db\ttest_nmse_db\n";
    for (std::uint64_t seed : seeds) {
        std::vector<fs::path> ckpts;
        std::vector<std::string> labels;
        for (VariantKind k : kinds) {
            Common tc = c;
            tc.seed = seed;
            TrainConfig t = train_config(kv, tc);
            t.kind = k;
            t.out_dir = out / (to_string(k) + "_seed" + std::to_string(seed));
            const auto r = train(t);
            const auto model = load_model(r.checkpoint, e.split);
            const double test_db = evaluate_split(*model, e.split, e.options.fixed_snr_db, c.seed, e.options.batch_size).db();
            summary << to_string(k) << '\t' << seed << '\t' << io::format_double(r.best_val_nmse_db) << '\t'
                    << io::format_double(test_db) << '\n';
            summary.flush();
            ckpts.push_back(r.checkpoint);
            labels.push_back(to_string(k));
        }
        if (ckpts.size() >= 2)
            run_comparison(ckpts, labels, e, out, "ablation_seed" + std::to_string(seed) + "_");
    }
    std::cout << "summary in " << (out / "ablation_summary.tsv") << "\n";
    return 0;
}

// ---- report --------------------------------------------------------------

int cmd_report(const Common& c) {
    const auto kv = load_config(c, {"checkpoints", "variants", "n_bs", "n_ue", "subcarriers", "subcarrier_spacing_hz",
                                    "carrier_hz", "sample_period_s", "history", "horizon"},
                                {"model."});
    prepare_out(c.out, {"trainable.tsv"}, c.force);
    std::ofstream os(fs::path(c.out) / "trainable.tsv", std::ios::trunc);
    os << "source\tvariant\tgroup\ttotal\ttrainable\n";
    auto emit = [&](const std::string& source, const Predictor<float>& m) {
        const auto r = trainable_report(m);
        for (const auto& [g, counts] : r.groups)
            os << source << '\t' << to_string(m.kind()) << '\t' << g << '\t' << counts.total << '\t'
               << counts.trainable << '\n';
        os << source << '\t' << to_string(m.kind()) << "\tall\t" << r.total << '\t' << r.trainable << '\n';
        std::cout << source << " (" << to_string(m.kind()) << "): " << r.trainable << " / " << r.total
                  << " trainable (" << 100.0 * static_cast<double>(r.trainable) / static_cast<double>(r.total)
                  << " %)\n";
    };
    if (kv.contains("checkpoints"))
        for (const auto& p : kv.get_list("checkpoints")) {
            const auto ck = load_checkpoint(p);
            emit(p, ck.model);
            std::cout << "  step " << ck.info.step << ", val NMSE " << ck.info.val_nmse_db << " dB\n";
        }
    const SystemConfig sys = system_for(kv, c.profile);
    const ModelConfig mcfg = read_model_config(kv, ModelConfig::for_profile(c.profile, sys));
    const auto variants = kv.contains("variants") ? kv.get_list("variants")
                                                  : (kv.contains("checkpoints") ? std::vector<std::string>{}
                                                                                : std::vector<std::string>{"full"});
    for (const auto& v : variants) emit(c.profile + "-profile", Predictor<float>(parse_variant_kind(v), mcfg, c.seed));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MIMO-OFDM channel prediction toolkit"};
    app.require_subcommand(1);
    Common gen, tr, ev, cmp, abl, rep;
    auto* g = app.add_subcommand("generate-data", "simulate channel realizations into a dataset directory");
    add_common(g, gen);
    auto* t = app.add_subcommand("train", "train one predictor variant");
    add_common(t, tr);
    auto* e = app.add_subcommand("evaluate", "NMSE sweeps of one checkpoint");
    add_common(e, ev);
    auto* c = app.add_subcommand("compare", "aligned sweeps of several checkpoints");
    add_common(c, cmp);
    auto* a = app.add_subcommand("ablate", "train and compare ablation variants over seeds");
    add_common(a, abl);
    auto* r = app.add_subcommand("report", "parameter and trainability accounting");
    add_common(r, rep);
    CLI11_PARSE(app, argc, argv);
    try {
        if (g->parsed()) return cmd_generate(gen);
        if (t->parsed()) return cmd_train(tr);
        if (e->parsed()) return cmd_evaluate(ev);
        if (c->parsed()) return cmd_compare(cmp);
        if (a->parsed()) return cmd_ablate(abl);
        if (r->parsed()) return cmd_report(rep);
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 1;
    }
    return 0;
}
