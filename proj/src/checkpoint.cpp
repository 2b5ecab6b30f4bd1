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

#include "csipred/checkpoint.hpp"

#include "csipred/dataset.hpp"

#include <map>

namespace csipred {

namespace {

std::string frequency_list_text(const std::vector<FrequencyIndex>& list) {
    std::string s;
    for (const auto& f : list) s += (s.empty() ? "" : ";") + std::to_string(f.u) + ":" + std::to_string(f.v);
    return s;
}

std::vector<FrequencyIndex> parse_frequency_list(const std::string& text) {
    std::vector<FrequencyIndex> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto end = text.find(';', pos);
        if (end == std::string::npos) end = text.size();
        const std::string item = text.substr(pos, end - pos);
        const auto colon = item.find(':');
        if (colon == std::string::npos) throw std::invalid_argument("frequency list: expected u:v, got '" + item + "'");
        out.push_back({std::stoll(item.substr(0, colon)), std::stoll(item.substr(colon + 1))});
        pos = end + 1;
    }
    return out;
}

}  // namespace

void write_model_config(io::KeyValueFile& kv, const ModelConfig& c, const std::string& p) {
    kv.set(p + "features", c.features);
    kv.set(p + "history", c.history);
    kv.set(p + "horizon", c.horizon);
    kv.set(p + "embed", c.embed);
    kv.set(p + "hidden_embed", c.hidden_embed);
    kv.set(p + "hidden_head", c.hidden_head);
    kv.set(p + "hidden_time", c.hidden_time);
    kv.set(p + "sca_channels", c.sca_channels);
    kv.set(p + "sca_layers", c.sca_layers);
    kv.set(p + "dct_height", c.dct_height);
    kv.set(p + "dct_width", c.dct_width);
    kv.set(p + "dct_groups", c.dct_groups);
    kv.set(p + "reduction", c.reduction);
    kv.set(p + "backbone_width", c.backbone_width);
    kv.set(p + "backbone_layers", c.backbone_layers);
    kv.set(p + "heads", c.heads);
    kv.set(p + "max_positions", c.max_positions);
    kv.set(p + "frequency_strategy", c.frequency_strategy == FrequencySelection::ZigzagLow ? "zigzag" : "explicit");
    if (!c.frequency_list.empty()) kv.set(p + "frequency_list", frequency_list_text(c.frequency_list));
}

ModelConfig read_model_config(const io::KeyValueFile& kv, const ModelConfig& d, const std::string& p) {
    ModelConfig c = d;
    c.features = kv.get_int_or(p + "features", d.features);
    c.history = kv.get_int_or(p + "history", d.history);
    c.horizon = kv.get_int_or(p + "horizon", d.horizon);
    c.embed = kv.get_int_or(p + "embed", d.embed);
    c.hidden_embed = kv.get_int_or(p + "hidden_embed", d.hidden_embed);
    c.hidden_head = kv.get_int_or(p + "hidden_head", d.hidden_head);
    c.hidden_time = kv.get_int_or(p + "hidden_time", d.hidden_time);
    c.sca_channels = kv.get_int_or(p + "sca_channels", d.sca_channels);
    c.sca_layers = kv.get_int_or(p + "sca_layers", d.sca_layers);
    c.dct_height = kv.get_int_or(p + "dct_height", d.dct_height);
    c.dct_width = kv.get_int_or(p + "dct_width", d.dct_width);
    c.dct_groups = kv.get_int_or(p + "dct_groups", d.dct_groups);
    c.reduction = kv.get_int_or(p + "reduction", d.reduction);
    c.backbone_width = kv.get_int_or(p + "backbone_width", d.backbone_width);
    c.backbone_layers = kv.get_int_or(p + "backbone_layers", d.backbone_layers);
    c.heads = kv.get_int_or(p + "heads", d.heads);
    c.max_positions = kv.get_int_or(p + "max_positions", d.max_positions);
    const std::string strategy = kv.get_or(p + "frequency_strategy", "zigzag");
    if (strategy == "zigzag")
        c.frequency_strategy = FrequencySelection::ZigzagLow;
    else if (strategy == "explicit")
        c.frequency_strategy = FrequencySelection::ExplicitList;
    else
        throw std::invalid_argument("unknown frequency_strategy '" + strategy + "'");
    if (kv.contains(p + "frequency_list")) c.frequency_list = parse_frequency_list(kv.get(p + "frequency_list"));
    c.validate();
    return c;
}

io::NamedTensors export_parameters(const ParameterSet<float>& params) {
    io::NamedTensors out;
    for (const auto& e : params.entries()) out.emplace_back(e.name, e.var.value());
    return out;
}

void save_checkpoint(const std::filesystem::path& dir, const Predictor<float>& model, const CheckpointInfo& info) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw io::IoError("cannot create " + dir.string() + ": " + ec.message());
    io::save_named_tensors(dir / "weights", export_parameters(model.parameters()));

    io::KeyValueFile meta;
    meta.set("kind", to_string(model.kind()));
    meta.set("scenario", info.scenario);
    meta.set("step", info.step);
    meta.set("val_nmse_db", info.val_nmse_db);
    write_system(meta, info.system, "system.");
    write_model_config(meta, model.config());
    for (const auto& e : model.parameters().entries()) meta.set("trainable." + e.name, e.trainable ? "1" : "0");
    meta.save(dir / "meta");
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir) {
    const auto meta = io::KeyValueFile::load(dir / "meta");
    const VariantKind kind = parse_variant_kind(meta.get("kind"));
    CheckpointInfo info;
    info.system = read_system(meta, "system.");
    info.scenario = meta.get_or("scenario", "");
    info.step = meta.get_int_or("step", 0);
    info.val_nmse_db = meta.get_double_or("val_nmse_db", info.val_nmse_db);
    const ModelConfig cfg = read_model_config(meta, ModelConfig::desk(info.system));

    Predictor<float> model(kind, cfg, 0);
    const auto tensors = io::load_named_tensors(dir / "weights");
    std::map<std::string, const RealTensor*> by_name;
    for (const auto& [name, t] : tensors) by_name[name] = &t;
    auto& params = model.parameters();
    for (auto& e : params.entries()) {
        auto it = by_name.find(e.name);
        if (it == by_name.end()) throw io::IoError("checkpoint " + dir.string() + " lacks tensor '" + e.name + "'");
        if (it->second->shape() != e.var.shape())
            throw io::IoError("checkpoint tensor '" + e.name + "' has shape " + to_string(it->second->shape()) +
                              ", expected " + to_string(e.var.shape()));
        e.var.mutable_value() = *it->second;
        params.set_trainable(e, meta.get_or("trainable." + e.name, e.trainable ? "1" : "0") == "1");
    }
    if (by_name.size() != params.entries().size())
        throw io::IoError("checkpoint " + dir.string() + " holds tensors the " + to_string(kind) +
                          " variant does not define");
    return {std::move(model), info};
}

}  // namespace csipred
