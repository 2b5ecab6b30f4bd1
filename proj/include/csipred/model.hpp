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

#ifndef CSIPRED_MODEL_HPP
#define CSIPRED_MODEL_HPP

#include "csipred/autograd.hpp"
#include "csipred/channel.hpp"
#include "csipred/parameters.hpp"
#include "csipred/spectral_attention.hpp"
#include "csipred/tensor_prep.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace csipred {

struct ModelConfig {
    Index features = 32;         // N = 2 N_BS N_UE
    Index history = 24;          // L
    Index horizon = 6;           // P
    Index embed = 64;            // E_c
    Index hidden_embed = 128;    // N_hs
    Index hidden_head = 128;     // N'_hs
    Index hidden_time = 128;     // N''_hs
    Index sca_channels = 128;    // L_c
    Index sca_layers = 4;        // N_ca
    Index dct_height = 7;
    Index dct_width = 7;
    Index dct_groups = 32;       // n
    Index reduction = 16;        // R
    Index backbone_width = 768;  // E_g
    Index backbone_layers = 6;   // N_LLM
    Index heads = 12;
    Index max_positions = 0;     // positional table rows; 0 means `history`
    FrequencySelection frequency_strategy = FrequencySelection::ZigzagLow;
    std::vector<FrequencyIndex> frequency_list;

    static ModelConfig paper(const SystemConfig& sys = SystemConfig::paper());
    static ModelConfig desk(const SystemConfig& sys = SystemConfig::desk());
    static ModelConfig for_profile(const std::string& profile, const SystemConfig& sys);

    Index positions() const { return max_positions > 0 ? max_positions : history; }
    void validate() const;
};

enum class VariantKind { Full, NoBackbone, BackboneOnlyFft, GapAdapter, Rnn, Lstm, Gru, Transformer };

std::string to_string(VariantKind kind);
VariantKind parse_variant_kind(const std::string& name);
std::vector<VariantKind> all_variant_kinds();

/// Causal or bidirectional multi-head attention over [B, L, E] operands.
template <typename Scalar>
ad::Var<Scalar> multi_head_attention(const ad::Var<Scalar>& q, const ad::Var<Scalar>& k, const ad::Var<Scalar>& v,
                                     Index heads, bool causal);

/// Two point-wise projections N -> N_hs -> N * E_c, reshaped to [B, L, N, E_c].
template <typename Scalar>
struct CsiEmbedding {
    Linear<Scalar> first, second;
    Index features = 0, embed = 0;

    CsiEmbedding() = default;
    CsiEmbedding(ParameterSet<Scalar>& params, const ModelConfig& cfg, Rng& rng);
    ad::Var<Scalar> operator()(const ad::Var<Scalar>& x) const;
};

/// 3x3 conv L -> L_c, N_ca spectral (or GAP) attention layers, 3x3 conv L_c -> L.
template <typename Scalar>
class ScaModule {
public:
    ScaModule() = default;
    ScaModule(ParameterSet<Scalar>& params, const ModelConfig& cfg, bool gap, Rng& rng);

    ad::Var<Scalar> operator()(const ad::Var<Scalar>& x) const;
    /// Output of the input projection + attention stack, [B, L_c, N, E_c].
    ad::Var<Scalar> attention_stack(const ad::Var<Scalar>& x) const;

    bool uses_gap() const { return gap_; }
    const DctBasisSet<Scalar>& basis() const { return *basis_; }
    void set_basis(DctBasisSet<Scalar> basis);

private:
    Conv2d<Scalar> in_proj_, out_proj_;
    std::vector<MscaParams<Scalar>> layers_;
    std::optional<DctBasisSet<Scalar>> basis_;
    bool gap_ = false;
    Index pool_h_ = 0, pool_w_ = 0;
};

/// Flatten (N, E_c), project to E_g, add the positional table.
template <typename Scalar>
struct LlmEmbedding {
    Linear<Scalar> proj;
    ad::Var<Scalar> positions;  // [max_positions, E_g]

    LlmEmbedding() = default;
    LlmEmbedding(ParameterSet<Scalar>& params, const ModelConfig& cfg, Index in_features, const std::string& name,
                 const std::string& group, Rng& rng);
    ad::Var<Scalar> operator()(const ad::Var<Scalar>& x) const;
};

/// Pre-norm GPT-2 block.
template <typename Scalar>
struct DecoderBlock {
    LayerNorm<Scalar> ln_1, ln_2;
    Linear<Scalar> c_attn, attn_proj, c_fc, mlp_proj;
    Index heads = 1;

    DecoderBlock() = default;
    DecoderBlock(ParameterSet<Scalar>& params, const std::string& prefix, Index width, Index heads, bool freeze_core,
                 Rng& rng);
    ad::Var<Scalar> operator()(const ad::Var<Scalar>& x, bool causal = true) const;
};

template <typename Scalar>
struct Backbone {
    std::vector<DecoderBlock<Scalar>> blocks;
    LayerNorm<Scalar> ln_f;

    Backbone() = default;
    Backbone(ParameterSet<Scalar>& params, const ModelConfig& cfg, bool freeze_core, Rng& rng);
    ad::Var<Scalar> operator()(const ad::Var<Scalar>& x) const;
};

/// E_g -> N'_hs -> N per step, then L -> N''_hs -> P per feature.
template <typename Scalar>
struct OutputHead {
    Linear<Scalar> feat_1, feat_2, time_1, time_2;

    OutputHead() = default;
    OutputHead(ParameterSet<Scalar>& params, const ModelConfig& cfg, Index in_width, Rng& rng);
    ad::Var<Scalar> operator()(const ad::Var<Scalar>& x) const;
};

/// Single-layer RNN / LSTM / GRU over [B, L, N] followed by a linear map of
/// the last hidden state to [B, P, N].
template <typename Scalar>
struct RecurrentForecaster {
    VariantKind cell = VariantKind::Rnn;
    Linear<Scalar> input, hidden, head;
    Index hidden_size = 0, features = 0, horizon = 0;

    RecurrentForecaster() = default;
    RecurrentForecaster(ParameterSet<Scalar>& params, const ModelConfig& cfg, VariantKind cell, Rng& rng);
    ad::Var<Scalar> operator()(const ad::Var<Scalar>& x) const;
};

/// Encoder-decoder transformer baseline. The decoder is fed P learned query
/// embeddings offset by a projection of the last observed step.
template <typename Scalar>
struct Seq2SeqTransformer {
    struct CrossBlock {
        LayerNorm<Scalar> ln_1, ln_2, ln_3;
        Linear<Scalar> self_qkv, self_proj, cross_q, cross_kv, cross_proj, fc, fc_proj;
    };
    Linear<Scalar> enc_in, dec_in, out;
    ad::Var<Scalar> enc_positions, dec_queries;
    std::vector<DecoderBlock<Scalar>> encoder;
    std::vector<CrossBlock> decoder;
    LayerNorm<Scalar> enc_ln, dec_ln;
    Index heads = 1;

    Seq2SeqTransformer() = default;
    Seq2SeqTransformer(ParameterSet<Scalar>& params, const ModelConfig& cfg, Rng& rng);
    ad::Var<Scalar> operator()(const ad::Var<Scalar>& x) const;
};

/// An assembled predictor: normalisation, variant-specific trunk,
/// de-normalisation. Parameters carry per-tensor trainable flags.
template <typename Scalar>
class Predictor {
public:
    Predictor(VariantKind kind, const ModelConfig& cfg, std::uint64_t seed);

    Predictor(const Predictor&) = delete;
    Predictor& operator=(const Predictor&) = delete;
    Predictor(Predictor&&) noexcept = default;
    Predictor& operator=(Predictor&&) noexcept = default;

    VariantKind kind() const { return kind_; }
    const ModelConfig& config() const { return config_; }
    ParameterSet<Scalar>& parameters() { return params_; }
    const ParameterSet<Scalar>& parameters() const { return params_; }

    /// Raw history [B, L, N] -> raw prediction [B, P, N]; statistics of the
    /// whole input batch drive the (de-)normalisation.
    ad::Var<Scalar> forward(const Tensor<Scalar>& history) const;
    /// Normalised history -> normalised prediction.
    ad::Var<Scalar> trunk(const ad::Var<Scalar>& normalized) const;

    ad::Var<Scalar> csi_embed(const ad::Var<Scalar>& x) const { return csi_embed_(x); }
    ad::Var<Scalar> sca_module(const ad::Var<Scalar>& x) const { return sca_(x); }
    ad::Var<Scalar> llm_embed(const ad::Var<Scalar>& x) const { return llm_embed_(x); }
    ad::Var<Scalar> backbone(const ad::Var<Scalar>& x) const { return backbone_(x); }
    ad::Var<Scalar> output_head(const ad::Var<Scalar>& x) const { return head_(x); }

    ScaModule<Scalar>& sca() { return sca_; }

    /// Copies values (not flags) of same-named tensors; throws on shape mismatch.
    void copy_values_from(const ParameterSet<Scalar>& other);

private:
    VariantKind kind_;
    ModelConfig config_;
    ParameterSet<Scalar> params_;

    CsiEmbedding<Scalar> csi_embed_;
    ScaModule<Scalar> sca_;
    LlmEmbedding<Scalar> llm_embed_;
    Linear<Scalar> bridge_;
    Backbone<Scalar> backbone_;
    OutputHead<Scalar> head_;
    RecurrentForecaster<Scalar> recurrent_;
    Seq2SeqTransformer<Scalar> transformer_;
};

/// True for backbone tensors that stay frozen in the adapter variants
/// (attention and feed-forward weights and biases).
bool is_frozen_backbone_tensor(const std::string& name);

/// Loads backbone tensors (attention, FFN, layer norms, positional table) by
/// name; every mismatching tensor is listed in the thrown message.
template <typename Scalar>
void load_backbone_archive(Predictor<Scalar>& model, const std::filesystem::path& archive);

template <typename Scalar>
Predictor<Scalar> build_variant(VariantKind kind, const ModelConfig& cfg, std::uint64_t seed,
                                const std::optional<std::filesystem::path>& weight_archive = std::nullopt);

}  // namespace csipred

#endif  // CSIPRED_MODEL_HPP
