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

#include "csipred/dataset.hpp"

#include <algorithm>
#include <cmath>

namespace csipred {

std::string to_string(Split split) {
    switch (split) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "?";
}

Split parse_split(const std::string& name) {
    if (name == "train") return Split::Train;
    if (name == "val") return Split::Val;
    if (name == "test") return Split::Test;
    throw std::invalid_argument("unknown split '" + name + "'");
}

DatasetProfile DatasetProfile::paper() {
    DatasetProfile p;
    for (int v = 0; v <= 60; v += 5) p.velocities_kmh.push_back(v);
    p.samples_per_velocity = {{Split::Train, 800}, {Split::Val, 200}, {Split::Test, 1000}};
    return p;
}

DatasetProfile DatasetProfile::desk() {
    DatasetProfile p;
    for (int v = 0; v <= 60; v += 10) p.velocities_kmh.push_back(v);
    p.samples_per_velocity = {{Split::Train, 24}, {Split::Val, 6}, {Split::Test, 12}};
    return p;
}

double DatasetSplit::velocity_of(Index sample) const {
    if (samples_per_velocity < 1 || sample < 0 || sample >= size())
        throw std::out_of_range("DatasetSplit: sample index out of range");
    return velocities_kmh.at(static_cast<std::size_t>(sample / samples_per_velocity));
}

CsiTensor DatasetSplit::sample(Index index) const {
    if (index < 0 || index >= size()) throw std::out_of_range("DatasetSplit: sample index out of range");
    Shape shape(channels.shape().begin() + 1, channels.shape().end());
    const Index n = numel(shape);
    return CsiTensor(shape, channels.data().segment(index * n, n));
}

std::vector<Index> DatasetSplit::indices_with_velocity(double velocity_kmh) const {
    std::vector<Index> out;
    for (Index i = 0; i < size(); ++i)
        if (std::abs(velocity_of(i) - velocity_kmh) < 1e-9) out.push_back(i);
    return out;
}

std::uint64_t realization_seed(std::uint64_t dataset_seed, Split split, Index sample) {
    return derive_seed(derive_seed(dataset_seed, static_cast<std::uint64_t>(split)), static_cast<std::uint64_t>(sample));
}

DatasetSplit generate_split(const DatasetSpec& spec, Split split) {
    spec.system.validate();
    spec.preset.validate();
    if (spec.velocities_kmh.empty()) throw std::invalid_argument("build_dataset: velocity list is empty");
    const auto it = spec.samples_per_velocity.find(split);
    if (it == spec.samples_per_velocity.end() || it->second < 1)
        throw std::invalid_argument("build_dataset: no sample count for split " + to_string(split));
    const Index per_velocity = it->second;
    const Index total = per_velocity * static_cast<Index>(spec.velocities_kmh.size());
    const SystemConfig& sys = spec.system;

    DatasetSplit out;
    out.system = sys;
    out.scenario = spec.preset.name;
    out.split = split;
    out.velocities_kmh = spec.velocities_kmh;
    out.samples_per_velocity = per_velocity;
    out.channels = CsiTensor({total, sys.steps(), sys.subcarriers, sys.n_bs, sys.n_ue});
    const Index stride = sys.steps() * sys.subcarriers * sys.n_bs * sys.n_ue;
    // Each sample has its own derived seed, so the result does not depend on
    // generation order.
    for (Index i = 0; i < total; ++i) {
        const double v = spec.velocities_kmh[static_cast<std::size_t>(i / per_velocity)];
        const auto r = generate_realization(sys, spec.preset, v, realization_seed(spec.seed, split, i));
        out.channels.data().segment(i * stride, stride) = r.h.data();
    }
    return out;
}

void write_system(io::KeyValueFile& kv, const SystemConfig& sys, const std::string& prefix) {
    kv.set(prefix + "n_bs", sys.n_bs);
    kv.set(prefix + "n_ue", sys.n_ue);
    kv.set(prefix + "subcarriers", sys.subcarriers);
    kv.set(prefix + "subcarrier_spacing_hz", sys.subcarrier_spacing);
    kv.set(prefix + "carrier_hz", sys.carrier);
    kv.set(prefix + "sample_period_s", sys.sample_period);
    kv.set(prefix + "history", sys.history);
    kv.set(prefix + "horizon", sys.horizon);
}

SystemConfig read_system(const io::KeyValueFile& kv, const std::string& prefix) {
    SystemConfig s;
    s.n_bs = kv.get_int_or(prefix + "n_bs", s.n_bs);
    s.n_ue = kv.get_int_or(prefix + "n_ue", s.n_ue);
    s.subcarriers = kv.get_int_or(prefix + "subcarriers", s.subcarriers);
    s.subcarrier_spacing = kv.get_double_or(prefix + "subcarrier_spacing_hz", s.subcarrier_spacing);
    s.carrier = kv.get_double_or(prefix + "carrier_hz", s.carrier);
    s.sample_period = kv.get_double_or(prefix + "sample_period_s", s.sample_period);
    s.history = kv.get_int_or(prefix + "history", s.history);
    s.horizon = kv.get_int_or(prefix + "horizon", s.horizon);
    s.validate();
    return s;
}

void write_preset(io::KeyValueFile& kv, const ScenarioPreset& p, const std::string& prefix) {
    kv.set(prefix + "name", p.name);
    kv.set(prefix + "num_clusters", p.num_clusters);
    kv.set(prefix + "rays_per_cluster", p.rays_per_cluster);
    kv.set(prefix + "delay_spread_s", p.delay_spread);
    kv.set(prefix + "per_cluster_power_decay", p.per_cluster_power_decay);
    kv.set(prefix + "cluster_shadowing_db", p.cluster_shadowing_db);
    kv.set(prefix + "angular_spread_deg",
           std::vector<double>{p.angular_spread_deg.aoa, p.angular_spread_deg.aod, p.angular_spread_deg.zoa,
                               p.angular_spread_deg.zod});
    kv.set(prefix + "intra_cluster_spread_deg",
           std::vector<double>{p.intra_cluster_spread_deg.aoa, p.intra_cluster_spread_deg.aod,
                               p.intra_cluster_spread_deg.zoa, p.intra_cluster_spread_deg.zod});
}

ScenarioPreset read_preset(const io::KeyValueFile& kv, const std::string& prefix) {
    const std::string name = kv.get_or(prefix + "name", "UMa-NLOS");
    ScenarioPreset p = (name == "UMi-NLOS") ? umi_nlos_preset() : uma_nlos_preset();
    p.name = name;
    p.num_clusters = kv.get_int_or(prefix + "num_clusters", p.num_clusters);
    p.rays_per_cluster = kv.get_int_or(prefix + "rays_per_cluster", p.rays_per_cluster);
    p.delay_spread = kv.get_double_or(prefix + "delay_spread_s", p.delay_spread);
    p.per_cluster_power_decay = kv.get_double_or(prefix + "per_cluster_power_decay", p.per_cluster_power_decay);
    p.cluster_shadowing_db = kv.get_double_or(prefix + "cluster_shadowing_db", p.cluster_shadowing_db);
    auto spread = [&](const std::string& key, AngularSpread& s) {
        if (!kv.contains(key)) return;
        const auto v = kv.get_doubles(key);
        if (v.size() != 4) throw std::invalid_argument(key + ": expected aoa,aod,zoa,zod");
        s = {v[0], v[1], v[2], v[3]};
    };
    spread(prefix + "angular_spread_deg", p.angular_spread_deg);
    spread(prefix + "intra_cluster_spread_deg", p.intra_cluster_spread_deg);
    p.validate();
    return p;
}

void build_dataset(const std::filesystem::path& dir, const DatasetSpec& spec, bool force) {
    namespace fs = std::filesystem;
    if (spec.velocities_kmh.empty()) throw std::invalid_argument("build_dataset: velocity list is empty");
    if (spec.samples_per_velocity.empty()) throw std::invalid_argument("build_dataset: no splits requested");
    if (fs::exists(dir / "manifest") && !force)
        throw io::IoError("dataset already exists at " + dir.string() + " (use --force to overwrite)");
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw io::IoError("cannot create " + dir.string() + ": " + ec.message());

    io::KeyValueFile manifest;
    manifest.set("schema_version", kDatasetSchemaVersion);
    manifest.set("dtype", "complex64");
    manifest.set("layout", "sample,time,subcarrier,bs_antenna,ue_antenna");
    manifest.set("scenario", spec.preset.name);
    manifest.set("seed", std::to_string(spec.seed));
    write_system(manifest, spec.system);
    write_preset(manifest, spec.preset);
    manifest.set("velocities_kmh", spec.velocities_kmh);
    std::string splits;
    for (const auto& [split, count] : spec.samples_per_velocity) {
        const DatasetSplit data = generate_split(spec, split);
        const std::string name = to_string(split);
        const std::string file = name + ".scacsi";
        io::save_tensor(dir / file, data.channels);
        manifest.set(name + ".file", file);
        manifest.set(name + ".samples_per_velocity", count);
        manifest.set(name + ".samples", data.size());
        std::string shape;
        for (Index d : data.channels.shape()) shape += (shape.empty() ? "" : ",") + std::to_string(d);
        manifest.set(name + ".shape", shape);
        splits += (splits.empty() ? "" : ",") + name;
    }
    manifest.set("splits", splits);
    manifest.save(dir / "manifest");
}

io::KeyValueFile load_manifest(const std::filesystem::path& dir) {
    auto kv = io::KeyValueFile::load(dir / "manifest");
    if (kv.get_int("schema_version") != kDatasetSchemaVersion)
        throw io::IoError("dataset schema version mismatch in " + dir.string());
    return kv;
}

DatasetSplit load_split(const std::filesystem::path& dir, Split split) {
    const auto manifest = load_manifest(dir);
    const std::string name = to_string(split);
    if (!manifest.contains(name + ".file"))
        throw io::IoError("dataset " + dir.string() + " has no '" + name + "' split");
    DatasetSplit out;
    out.system = read_system(manifest);
    out.scenario = manifest.get("scenario");
    out.split = split;
    out.velocities_kmh = manifest.get_doubles("velocities_kmh");
    out.samples_per_velocity = manifest.get_int(name + ".samples_per_velocity");
    out.channels = io::load_tensor(dir / manifest.get(name + ".file"));
    const SystemConfig& s = out.system;
    const Shape expected{static_cast<Index>(out.velocities_kmh.size()) * out.samples_per_velocity, s.steps(),
                         s.subcarriers, s.n_bs, s.n_ue};
    if (out.channels.shape() != expected)
        throw io::IoError("split '" + name + "' has shape " + to_string(out.channels.shape()) + ", manifest implies " +
                          to_string(expected));
    return out;
}

}  // namespace csipred
