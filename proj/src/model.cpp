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

#include "csipred/model.hpp"

#include "csipred/io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <stdexcept>

namespace csipred {

// ---- configuration -------------------------------------------------------

ModelConfig ModelConfig::paper(const SystemConfig& sys) {
    ModelConfig c;
    c.features = sys.features();
    c.history = sys.history;
    c.horizon = sys.horizon;
    return c;
}

ModelConfig ModelConfig::desk(const SystemConfig& sys) {
    ModelConfig c;
    c.features = sys.features();
    c.history = sys.history;
    c.horizon = sys.horizon;
    c.embed = 16;
    c.hidden_embed = c.hidden_head = c.hidden_time = 32;
    c.sca_channels = 16;
    c.sca_layers = 2;
    c.dct_height = c.dct_width = 4;
    c.dct_groups = 4;
    c.reduction = 16;
    c.backbone_width = 64;
    c.backbone_layers = 2;
    c.heads = 4;
    return c;
}

ModelConfig ModelConfig::for_profile(const std::string& profile, const SystemConfig& sys) {
    if (profile == "paper") return paper(sys);
    if (profile == "desk") return desk(sys);
    throw std::invalid_argument("unknown profile '" + profile + "' (expected paper or desk)");
}

void ModelConfig::validate() const {
    auto positive = [](Index v, const char* name) {
        if (v < 1) throw std::invalid_argument(std::string("ModelConfig: ") + name + " must be positive");
    };
    positive(features, "features");
    positive(history, "history");
    positive(horizon, "horizon");
    positive(embed, "embed");
    positive(hidden_embed, "hidden_embed");
    positive(hidden_head, "hidden_head");
    positive(hidden_time, "hidden_time");
    positive(sca_channels, "sca_channels");
    positive(dct_height, "dct_height");
    positive(dct_width, "dct_width");
    positive(dct_groups, "dct_groups");
    positive(backbone_width, "backbone_width");
    positive(heads, "heads");
    if (sca_layers < 0 || backbone_layers < 0) throw std::invalid_argument("ModelConfig: negative layer count");
    validate_msca_shape(sca_channels, dct_groups, reduction);
    if (backbone_width % heads != 0)
        throw std::invalid_argument("ModelConfig: E_g = " + std::to_string(backbone_width) +
                                    " not divisible by heads = " + std::to_string(heads));
    if (positions() < history)
        throw std::invalid_argument("ModelConfig: positional table shorter than the history length");
}

std::string to_string(VariantKind kind) {
    switch (kind) {
        case VariantKind::Full: return "full";
        case VariantKind::NoBackbone: return "no_backbone";
        case VariantKind::BackboneOnlyFft: return "backbone_only_fft";
        case VariantKind::GapAdapter: return "gap_adapter";
        case VariantKind::Rnn: return "rnn";
        case VariantKind::Lstm: return "lstm";
        case VariantKind::Gru: return "gru";
        case VariantKind::Transformer: return "transformer";
    }
    return "?";
}

VariantKind parse_variant_kind(const std::string& name) {
    for (VariantKind k : all_variant_kinds())
        if (to_string(k) == name) return k;
    throw std::invalid_argument("unknown variant kind '" + name + "'");
}

std::vector<VariantKind> all_variant_kinds() {
    return {VariantKind::Full, VariantKind::NoBackbone, VariantKind::BackboneOnlyFft, VariantKind::GapAdapter,
            VariantKind::Rnn,  VariantKind::Lstm,       VariantKind::Gru,             VariantKind::Transformer};
}

bool is_frozen_backbone_tensor(const std::string& name) {
    return name.rfind("backbone.h.", 0) == 0 &&
           (name.find(".attn.") != std::string::npos || name.find(".mlp.") != std::string::npos);
}

namespace {

constexpr double kBackboneInitStd = 0.02;

/// Linear layer with GPT-2 style N(0, 0.02) weights and zero bias.
template <typename Scalar>
Linear<Scalar> normal_linear(ParameterSet<Scalar>& params, const std::string& name, const std::string& group,
                             Index in, Index out, bool trainable, Rng& rng) {
    Linear<Scalar> l;
    l.weight = params.add(name + ".weight", group, init::normal<Scalar>({out, in}, kBackboneInitStd, rng), trainable);
    l.bias = params.add(name + ".bias", group, Tensor<Scalar>::zeros({out}), trainable);
    return l;
}

template <typename Scalar>
ad::Var<Scalar> split_heads(const ad::Var<Scalar>& x, Index heads) {
    const Index b = x.dim(0), l = x.dim(1), e = x.dim(2);
    const auto y = ad::permute(ad::reshape(x, {b, l, heads, e / heads}), {0, 2, 1, 3});
    return ad::reshape(y, {b * heads, l, e / heads});
}

template <typename Scalar>
ad::Var<Scalar> merge_heads(const ad::Var<Scalar>& x, Index batch, Index heads) {
    const Index l = x.dim(1), d = x.dim(2);
    const auto y = ad::permute(ad::reshape(x, {batch, heads, l, d}), {0, 2, 1, 3});
    return ad::reshape(y, {batch, l, heads * d});
}

/// Slices [B, L, 3E] into q, k, v.
template <typename Scalar>
std::array<ad::Var<Scalar>, 3> split_qkv(const ad::Var<Scalar>& qkv) {
    const Index e = qkv.dim(2) / 3;
    return {ad::slice(qkv, 2, 0, e), ad::slice(qkv, 2, e, e), ad::slice(qkv, 2, 2 * e, e)};
}

template <typename Scalar>
ad::Var<Scalar> last_axis_slice(const ad::Var<Scalar>& x, Index index, Index width) {
    return ad::slice(x, x.rank() - 1, index * width, width);
}

}  // namespace

template <typename Scalar>
ad::Var<Scalar> multi_head_attention(const ad::Var<Scalar>& q, const ad::Var<Scalar>& k, const ad::Var<Scalar>& v,
                                     Index heads, bool causal) {
    if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3) throw std::invalid_argument("attention: expects [B, L, E]");
    const Index e = q.dim(2);
    if (heads < 1 || e % heads != 0)
        throw std::invalid_argument("attention: width " + std::to_string(e) + " not divisible by " +
                                    std::to_string(heads) + " heads");
    const Index batch = q.dim(0);
    const auto qh = split_heads(q, heads), kh = split_heads(k, heads), vh = split_heads(v, heads);
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(e / heads));
    const auto scores = ad::scale(ad::bmm(qh, kh, true), scale);
    const auto probs = ad::softmax(scores, causal);
    return merge_heads(ad::bmm(probs, vh), batch, heads);
}

// ---- CSI embedding -------------------------------------------------------

template <typename Scalar>
CsiEmbedding<Scalar>::CsiEmbedding(ParameterSet<Scalar>& params, const ModelConfig& cfg, Rng& rng)
    : first(params, "csi_embed.linear_1", "csi_embed", cfg.features, cfg.hidden_embed, rng),
      second(params, "csi_embed.linear_2", "csi_embed", cfg.hidden_embed, cfg.features * cfg.embed, rng),
      features(cfg.features),
      embed(cfg.embed) {}

template <typename Scalar>
ad::Var<Scalar> CsiEmbedding<Scalar>::operator()(const ad::Var<Scalar>& x) const {
    if (x.rank() != 3 || x.dim(2) != features)
        throw std::invalid_argument("csi_embed: expected [B, L, " + std::to_string(features) + "], got " +
                                    to_string(x.shape()));
    const auto y = second(first(x));
    return ad::reshape(y, {x.dim(0), x.dim(1), features, embed});
}

// ---- SCA module ----------------------------------------------------------

template <typename Scalar>
ScaModule<Scalar>::ScaModule(ParameterSet<Scalar>& params, const ModelConfig& cfg, bool gap, Rng& rng)
    : in_proj_(params, "sca.in_proj", "sca", cfg.history, cfg.sca_channels, 3, rng),
      out_proj_(),
      gap_(gap),
      pool_h_(cfg.dct_height),
      pool_w_(cfg.dct_width) {
    for (Index i = 0; i < cfg.sca_layers; ++i)
        layers_.push_back(msca_init<Scalar>(cfg.sca_channels, cfg.dct_groups, cfg.reduction, rng, &params,
                                            "sca.msca." + std::to_string(i), "sca"));
    out_proj_ = Conv2d<Scalar>(params, "sca.out_proj", "sca", cfg.sca_channels, cfg.history, 3, rng);
    basis_.emplace(cfg.dct_height, cfg.dct_width,
                   select_frequencies(cfg.dct_groups, cfg.dct_height, cfg.dct_width, cfg.frequency_strategy,
                                      cfg.frequency_list));
}

template <typename Scalar>
void ScaModule<Scalar>::set_basis(DctBasisSet<Scalar> basis) {
    if (basis.height() != pool_h_ || basis.width() != pool_w_)
        throw std::invalid_argument("ScaModule: basis grid does not match the configured pooling size");
    if (!layers_.empty() && basis.groups() != layers_.front().groups)
        throw std::invalid_argument("ScaModule: basis group count does not match the attention layers");
    basis_.emplace(std::move(basis));
}

template <typename Scalar>
ad::Var<Scalar> ScaModule<Scalar>::attention_stack(const ad::Var<Scalar>& x) const {
    if (x.rank() != 4) throw std::invalid_argument("sca_module: expects [B, L, N, E_c]");
    ad::Var<Scalar> h = in_proj_(x);
    for (const auto& layer : layers_)
        h = gap_ ? gap_attention_forward(h, layer, pool_h_, pool_w_) : msca_forward(h, layer, *basis_);
    return h;
}

template <typename Scalar>
ad::Var<Scalar> ScaModule<Scalar>::operator()(const ad::Var<Scalar>& x) const {
    return out_proj_(attention_stack(x));
}

// ---- LLM embedding -------------------------------------------------------

template <typename Scalar>
LlmEmbedding<Scalar>::LlmEmbedding(ParameterSet<Scalar>& params, const ModelConfig& cfg, Index in_features,
                                   const std::string& name, const std::string& group, Rng& rng)
    : proj(params, name, group, in_features, cfg.backbone_width, rng) {
    positions = params.add("backbone.wpe", "positional",
                           init::normal<Scalar>({cfg.positions(), cfg.backbone_width}, kBackboneInitStd, rng));
}

template <typename Scalar>
ad::Var<Scalar> LlmEmbedding<Scalar>::operator()(const ad::Var<Scalar>& x) const {
    ad::Var<Scalar> flat = x;
    if (x.rank() == 4) flat = ad::reshape(x, {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)});
    if (flat.rank() != 3 || flat.dim(2) != proj.in_features())
        throw std::invalid_argument("llm_embed: input " + to_string(x.shape()) + " does not flatten to width " +
                                    std::to_string(proj.in_features()));
    const Index length = flat.dim(1);
    if (length > positions.dim(0))
        throw std::invalid_argument("llm_embed: sequence length " + std::to_string(length) +
                                    " exceeds positional table length " + std::to_string(positions.dim(0)));
    return ad::add_trailing(proj(flat), ad::slice(positions, 0, 0, length));
}

// ---- backbone ------------------------------------------------------------

template <typename Scalar>
DecoderBlock<Scalar>::DecoderBlock(ParameterSet<Scalar>& params, const std::string& prefix, Index width,
                                   Index num_heads, bool freeze_core, Rng& rng)
    : heads(num_heads) {
    if (width % num_heads != 0)
        throw std::invalid_argument("decoder block: width " + std::to_string(width) + " not divisible by " +
                                    std::to_string(num_heads) + " heads");
    const bool core = !freeze_core;
    ln_1 = LayerNorm<Scalar>(params, prefix + ".ln_1", "backbone_ln", width);
    c_attn = normal_linear(params, prefix + ".attn.c_attn", "backbone_attn", width, 3 * width, core, rng);
    attn_proj = normal_linear(params, prefix + ".attn.c_proj", "backbone_attn", width, width, core, rng);
    ln_2 = LayerNorm<Scalar>(params, prefix + ".ln_2", "backbone_ln", width);
    c_fc = normal_linear(params, prefix + ".mlp.c_fc", "backbone_ffn", width, 4 * width, core, rng);
    mlp_proj = normal_linear(params, prefix + ".mlp.c_proj", "backbone_ffn", 4 * width, width, core, rng);
}

template <typename Scalar>
ad::Var<Scalar> DecoderBlock<Scalar>::operator()(const ad::Var<Scalar>& x, bool causal) const {
    const auto [q, k, v] = split_qkv(c_attn(ln_1(x)));
    const auto h = ad::add(x, attn_proj(multi_head_attention(q, k, v, heads, causal)));
    return ad::add(h, mlp_proj(ad::gelu(c_fc(ln_2(h)))));
}

template <typename Scalar>
Backbone<Scalar>::Backbone(ParameterSet<Scalar>& params, const ModelConfig& cfg, bool freeze_core, Rng& rng) {
    for (Index i = 0; i < cfg.backbone_layers; ++i)
        blocks.emplace_back(params, "backbone.h." + std::to_string(i), cfg.backbone_width, cfg.heads, freeze_core,
                            rng);
    ln_f = LayerNorm<Scalar>(params, "backbone.ln_f", "backbone_ln", cfg.backbone_width);
}

template <typename Scalar>
ad::Var<Scalar> Backbone<Scalar>::operator()(const ad::Var<Scalar>& x) const {
    if (x.rank() != 3) throw std::invalid_argument("backbone: expects [B, L, E_g]");
    ad::Var<Scalar> h = x;
    for (const auto& block : blocks) h = block(h, true);
    return ln_f(h);
}

// ---- output head ---------------------------------------------------------

template <typename Scalar>
OutputHead<Scalar>::OutputHead(ParameterSet<Scalar>& params, const ModelConfig& cfg, Index in_width, Rng& rng)
    : feat_1(params, "output_head.linear_3", "output_head", in_width, cfg.hidden_head, rng),
      feat_2(params, "output_head.linear_4", "output_head", cfg.hidden_head, cfg.features, rng),
      time_1(params, "output_head.linear_5", "output_head", cfg.history, cfg.hidden_time, rng),
      time_2(params, "output_head.linear_6", "output_head", cfg.hidden_time, cfg.horizon, rng) {}

template <typename Scalar>
ad::Var<Scalar> OutputHead<Scalar>::operator()(const ad::Var<Scalar>& x) const {
    if (x.rank() != 3 || x.dim(2) != feat_1.in_features() || x.dim(1) != time_1.in_features())
        throw std::invalid_argument("output_head: unexpected input shape " + to_string(x.shape()));
    const auto per_step = feat_2(feat_1(x));                // [B, L, N]
    const auto per_feature = ad::permute(per_step, {0, 2, 1});  // [B, N, L]
    return ad::permute(time_2(time_1(per_feature)), {0, 2, 1});
}

// ---- recurrent baselines -------------------------------------------------

namespace {
Index gate_count(VariantKind cell) {
    switch (cell) {
        case VariantKind::Rnn: return 1;
        case VariantKind::Lstm: return 4;
        case VariantKind::Gru: return 3;
        default: throw std::invalid_argument("recurrent forecaster: not a recurrent kind");
    }
}
}  // namespace

template <typename Scalar>
RecurrentForecaster<Scalar>::RecurrentForecaster(ParameterSet<Scalar>& params, const ModelConfig& cfg,
                                                 VariantKind cell_kind, Rng& rng)
    : cell(cell_kind), hidden_size(cfg.hidden_embed), features(cfg.features), horizon(cfg.horizon) {
    const Index gates = gate_count(cell_kind) * hidden_size;
    input = Linear<Scalar>(params, "recurrent.input", "recurrent", features, gates, rng);
    hidden = Linear<Scalar>(params, "recurrent.hidden", "recurrent", hidden_size, gates, rng);
    head = Linear<Scalar>(params, "recurrent.head", "output_head", hidden_size, horizon * features, rng);
}

template <typename Scalar>
ad::Var<Scalar> RecurrentForecaster<Scalar>::operator()(const ad::Var<Scalar>& x) const {
    if (x.rank() != 3 || x.dim(2) != features)
        throw std::invalid_argument("recurrent forecaster: expected [B, L, " + std::to_string(features) + "]");
    const Index batch = x.dim(0), length = x.dim(1), hs = hidden_size;
    const Index gates = gate_count(cell) * hs;
    const auto projected = input(x);  // [B, L, gates]
    ad::Var<Scalar> h = ad::constant(Tensor<Scalar>::zeros({batch, hs}));
    ad::Var<Scalar> c = h;
    for (Index t = 0; t < length; ++t) {
        const auto xt = ad::reshape(ad::slice(projected, 1, t, 1), {batch, gates});
        const auto ht = hidden(h);
        switch (cell) {
            case VariantKind::Rnn: h = ad::tanh(ad::add(xt, ht)); break;
            case VariantKind::Lstm: {
                const auto z = ad::add(xt, ht);
                const auto i = ad::sigmoid(last_axis_slice(z, 0, hs));
                const auto f = ad::sigmoid(last_axis_slice(z, 1, hs));
                const auto g = ad::tanh(last_axis_slice(z, 2, hs));
                const auto o = ad::sigmoid(last_axis_slice(z, 3, hs));
                c = ad::add(ad::mul(f, c), ad::mul(i, g));
                h = ad::mul(o, ad::tanh(c));
                break;
            }
            case VariantKind::Gru: {
                const auto r = ad::sigmoid(ad::add(last_axis_slice(xt, 0, hs), last_axis_slice(ht, 0, hs)));
                const auto u = ad::sigmoid(ad::add(last_axis_slice(xt, 1, hs), last_axis_slice(ht, 1, hs)));
                const auto n = ad::tanh(ad::add(last_axis_slice(xt, 2, hs), ad::mul(r, last_axis_slice(ht, 2, hs))));
                h = ad::add(n, ad::mul(u, ad::sub(h, n)));
                break;
            }
            default: break;
        }
    }
    return ad::reshape(head(h), {batch, horizon, features});
}

// ---- transformer baseline ------------------------------------------------

template <typename Scalar>
Seq2SeqTransformer<Scalar>::Seq2SeqTransformer(ParameterSet<Scalar>& params, const ModelConfig& cfg, Rng& rng)
    : heads(cfg.heads) {
    const Index e = cfg.backbone_width;
    const std::string g = "transformer";
    enc_in = Linear<Scalar>(params, "transformer.enc_in", g, cfg.features, e, rng);
    dec_in = Linear<Scalar>(params, "transformer.dec_in", g, cfg.features, e, rng);
    enc_positions = params.add("transformer.enc_positions", g,
                               init::normal<Scalar>({cfg.history, e}, kBackboneInitStd, rng));
    dec_queries = params.add("transformer.dec_queries", g,
                             init::normal<Scalar>({cfg.horizon, e}, kBackboneInitStd, rng));
    const Index layers = std::max<Index>(cfg.backbone_layers, 1);
    for (Index i = 0; i < layers; ++i)
        encoder.emplace_back(params, "transformer.encoder." + std::to_string(i), e, cfg.heads, false, rng);
    enc_ln = LayerNorm<Scalar>(params, "transformer.enc_ln", g, e);
    for (Index i = 0; i < layers; ++i) {
        const std::string p = "transformer.decoder." + std::to_string(i);
        CrossBlock b;
        b.ln_1 = LayerNorm<Scalar>(params, p + ".ln_1", g, e);
        b.self_qkv = normal_linear(params, p + ".self_attn.qkv", g, e, 3 * e, true, rng);
        b.self_proj = normal_linear(params, p + ".self_attn.proj", g, e, e, true, rng);
        b.ln_2 = LayerNorm<Scalar>(params, p + ".ln_2", g, e);
        b.cross_q = normal_linear(params, p + ".cross_attn.q", g, e, e, true, rng);
        b.cross_kv = normal_linear(params, p + ".cross_attn.kv", g, e, 2 * e, true, rng);
        b.cross_proj = normal_linear(params, p + ".cross_attn.proj", g, e, e, true, rng);
        b.ln_3 = LayerNorm<Scalar>(params, p + ".ln_3", g, e);
        b.fc = normal_linear(params, p + ".mlp.fc", g, e, 4 * e, true, rng);
        b.fc_proj = normal_linear(params, p + ".mlp.proj", g, 4 * e, e, true, rng);
        decoder.push_back(std::move(b));
    }
    dec_ln = LayerNorm<Scalar>(params, "transformer.dec_ln", g, e);
    out = Linear<Scalar>(params, "transformer.out", "output_head", e, cfg.features, rng);
}

template <typename Scalar>
ad::Var<Scalar> Seq2SeqTransformer<Scalar>::operator()(const ad::Var<Scalar>& x) const {
    if (x.rank() != 3 || x.dim(2) != enc_in.in_features() || x.dim(1) != enc_positions.dim(0))
        throw std::invalid_argument("transformer: unexpected input shape " + to_string(x.shape()));
    const Index length = x.dim(1), horizon = dec_queries.dim(0);
    const Index e = enc_in.out_features();

    ad::Var<Scalar> memory = ad::add_trailing(enc_in(x), enc_positions);
    for (const auto& block : encoder) memory = block(memory, false);
    memory = enc_ln(memory);

    const auto last = dec_in(ad::slice(x, 1, length - 1, 1));  // [B, 1, E]
    ad::Var<Scalar> h = ad::add_trailing(ad::concat(std::vector<ad::Var<Scalar>>(static_cast<std::size_t>(horizon), last), 1),
                                         dec_queries);
    for (const auto& b : decoder) {
        const auto [q, k, v] = split_qkv(b.self_qkv(b.ln_1(h)));
        h = ad::add(h, b.self_proj(multi_head_attention(q, k, v, heads, true)));
        const auto kv = b.cross_kv(memory);
        const auto cross = multi_head_attention(b.cross_q(b.ln_2(h)), ad::slice(kv, 2, 0, e), ad::slice(kv, 2, e, e),
                                                heads, false);
        h = ad::add(h, b.cross_proj(cross));
        h = ad::add(h, b.fc_proj(ad::gelu(b.fc(b.ln_3(h)))));
    }
    return out(dec_ln(h));
}

// ---- predictor -----------------------------------------------------------

template <typename Scalar>
Predictor<Scalar>::Predictor(VariantKind kind, const ModelConfig& cfg, std::uint64_t seed)
    : kind_(kind), config_(cfg) {
    config_.validate();
    Rng rng(seed);
    switch (kind) {
        case VariantKind::Full:
        case VariantKind::GapAdapter:
            csi_embed_ = CsiEmbedding<Scalar>(params_, config_, rng);
            sca_ = ScaModule<Scalar>(params_, config_, kind == VariantKind::GapAdapter, rng);
            llm_embed_ = LlmEmbedding<Scalar>(params_, config_, config_.features * config_.embed, "llm_embed.proj",
                                              "llm_embed", rng);
            backbone_ = Backbone<Scalar>(params_, config_, true, rng);
            head_ = OutputHead<Scalar>(params_, config_, config_.backbone_width, rng);
            break;
        case VariantKind::NoBackbone:
            csi_embed_ = CsiEmbedding<Scalar>(params_, config_, rng);
            sca_ = ScaModule<Scalar>(params_, config_, false, rng);
            bridge_ = Linear<Scalar>(params_, "bridge", "bridge", config_.features * config_.embed,
                                     config_.backbone_width, rng);
            head_ = OutputHead<Scalar>(params_, config_, config_.backbone_width, rng);
            break;
        case VariantKind::BackboneOnlyFft:
            llm_embed_ = LlmEmbedding<Scalar>(params_, config_, config_.features, "input_proj", "input_proj", rng);
            backbone_ = Backbone<Scalar>(params_, config_, false, rng);
            head_ = OutputHead<Scalar>(params_, config_, config_.backbone_width, rng);
            break;
        case VariantKind::Rnn:
        case VariantKind::Lstm:
        case VariantKind::Gru: recurrent_ = RecurrentForecaster<Scalar>(params_, config_, kind, rng); break;
        case VariantKind::Transformer: transformer_ = Seq2SeqTransformer<Scalar>(params_, config_, rng); break;
    }
}

template <typename Scalar>
ad::Var<Scalar> Predictor<Scalar>::trunk(const ad::Var<Scalar>& x) const {
    if (x.rank() != 3 || x.dim(1) != config_.history || x.dim(2) != config_.features)
        throw std::invalid_argument("model_forward: expected [B, " + std::to_string(config_.history) + ", " +
                                    std::to_string(config_.features) + "], got " + to_string(x.shape()));
    switch (kind_) {
        case VariantKind::Full:
        case VariantKind::GapAdapter: return head_(backbone_(llm_embed_(sca_(csi_embed_(x)))));
        case VariantKind::NoBackbone: {
            const auto h = sca_(csi_embed_(x));
            return head_(bridge_(ad::reshape(h, {h.dim(0), h.dim(1), h.dim(2) * h.dim(3)})));
        }
        case VariantKind::BackboneOnlyFft: return head_(backbone_(llm_embed_(x)));
        case VariantKind::Rnn:
        case VariantKind::Lstm:
        case VariantKind::Gru: return recurrent_(x);
        case VariantKind::Transformer: return transformer_(x);
    }
    throw std::invalid_argument("model_forward: unknown variant kind");
}

template <typename Scalar>
ad::Var<Scalar> Predictor<Scalar>::forward(const Tensor<Scalar>& history) const {
    const auto [normalized, stats] = normalize(history);
    const auto y = trunk(ad::constant(normalized));
    return ad::add_scalar(ad::scale(y, static_cast<Scalar>(stats.std)), static_cast<Scalar>(stats.mean));
}

template <typename Scalar>
void Predictor<Scalar>::copy_values_from(const ParameterSet<Scalar>& other) {
    for (const auto& src : other.entries()) {
        auto* dst = params_.find(src.name);
        if (!dst) continue;
        if (dst->var.shape() != src.var.shape())
            throw std::invalid_argument("copy_values_from: shape mismatch for '" + src.name + "'");
        dst->var.mutable_value() = src.var.value();
    }
}

template <typename Scalar>
void load_backbone_archive(Predictor<Scalar>& model, const std::filesystem::path& archive) {
    const auto tensors = io::load_named_tensors(archive);
    std::map<std::string, const RealTensor*> by_name;
    for (const auto& [name, t] : tensors) by_name[name] = &t;

    std::string problems;
    for (auto& e : model.parameters().entries()) {
        if (e.name.rfind("backbone.", 0) != 0) continue;
        auto it = by_name.find(e.name);
        if (it == by_name.end()) {
            problems += "\n  " + e.name + ": missing from archive";
            continue;
        }
        if (it->second->shape() != e.var.shape()) {
            problems += "\n  " + e.name + ": archive " + to_string(it->second->shape()) + ", model " +
                        to_string(e.var.shape());
            continue;
        }
        e.var.mutable_value() = it->second->template cast<Scalar>();
    }
    if (!problems.empty()) throw std::invalid_argument("weight archive " + archive.string() + " mismatch:" + problems);
}

template <typename Scalar>
Predictor<Scalar> build_variant(VariantKind kind, const ModelConfig& cfg, std::uint64_t seed,
                                const std::optional<std::filesystem::path>& weight_archive) {
    Predictor<Scalar> model(kind, cfg, seed);
    if (weight_archive) load_backbone_archive(model, *weight_archive);
    return model;
}

#define CSIPRED_INSTANTIATE_MODEL(T)                                                                              \
    template ad::Var<T> multi_head_attention<T>(const ad::Var<T>&, const ad::Var<T>&, const ad::Var<T>&, Index,  \
                                                bool);                                                           \
    template struct CsiEmbedding<T>;                                                                              \
    template class ScaModule<T>;                                                                                  \
    template struct LlmEmbedding<T>;                                                                              \
    template struct DecoderBlock<T>;                                                                              \
    template struct Backbone<T>;                                                                                  \
    template struct OutputHead<T>;                                                                                \
    template struct RecurrentForecaster<T>;                                                                       \
    template struct Seq2SeqTransformer<T>;                                                                        \
    template class Predictor<T>;                                                                                  \
    template void load_backbone_archive<T>(Predictor<T>&, const std::filesystem::path&);                        \
    template Predictor<T> build_variant<T>(VariantKind, const ModelConfig&, std::uint64_t,                       \
                                           const std::optional<std::filesystem::path>&);

CSIPRED_INSTANTIATE_MODEL(float)
CSIPRED_INSTANTIATE_MODEL(double)

}  // namespace csipred
