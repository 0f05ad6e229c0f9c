#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "elastron/autodiff.hpp"
#include "elastron/rng.hpp"

namespace elastron {

// Decoder-only transformer dimensions plus the per-layer candidate menus.
// Menu entries are ascending and the last entry always names the full width,
// so candidate j uses a prefix of the stored weights.
struct ModelConfig {
    int vocab_size = 256;
    int embed_dim = 64;
    int num_layers = 4;
    int num_heads = 4;
    int head_dim = 16;
    int mlp_hidden = 256;
    int context_len = 64;
    std::vector<int> mlp_widths{64, 128, 192, 256};
    std::vector<int> head_counts{1, 2, 3, 4};

    int candidates() const { return static_cast<int>(mlp_widths.size()); }
    void validate() const;
    std::int64_t dense_nonembedding_params() const;

    static ModelConfig toy_default() { return ModelConfig{}; }
};

// Stored sizes and candidate menus of one layer. Uniform across layers for a
// supernet; extracted sub-networks carry a single-entry menu per layer.
struct LayerShape {
    int heads = 0;
    int mlp_hidden = 0;
    std::vector<int> head_menu;
    std::vector<int> mlp_menu;
};

// Per-layer one-hot candidate choices (1-based indices into the menus).
struct Selection {
    std::vector<int> mha;
    std::vector<int> mlp;

    bool operator==(const Selection&) const = default;
    std::string describe() const;
};

struct LayerWeights {
    Value w_q, w_k, w_v;    // [heads*head_dim x C], stored as head blocks
    Value w_o;              // [heads*head_dim x C]
    Value w_mlp1, w_mlp2;   // [mlp_hidden x C]
    Value ln1_gain, ln1_bias, ln2_gain, ln2_bias;  // [1 x C]
};

class ElasticModel {
public:
    ModelConfig config;
    std::vector<LayerShape> layer_shapes;
    Value tok_embed;  // [V x C]; also the tied output head
    Value pos_embed;  // [context_len x C]
    std::vector<LayerWeights> layers;
    Value final_gain, final_bias;

    static ElasticModel init(const ModelConfig& config, Rng rng);

    std::vector<Value> parameters() const;
    std::vector<std::pair<std::string, Value>> named_parameters() const;
    ElasticModel clone() const;
    void set_trainable(bool enabled) const;
    void zero_grads() const;

    Selection full_selection() const;
    Selection uniform_selection(int candidate) const;
    void validate_selection(const Selection& sel) const;

    int mha_heads_for(int layer, int candidate) const;
    int mlp_width_for(int layer, int candidate) const;
};

struct TokenBatch {
    int batch = 0;
    int seq = 0;
    std::vector<int> tokens;  // row-major [batch][seq]

    int at(int b, int s) const { return tokens[static_cast<std::size_t>(b) * seq + s]; }
};

// Observation taps used by importance scoring; called per layer during the
// forward pass with value tensors (no gradient participation).
struct ForwardHooks {
    std::function<void(int layer, const Tensor& heads_concat)> on_mha_heads;   // [n x d*H] pre-W_O
    std::function<void(int layer, const Tensor& pre_activation)> on_mlp_pre;   // [n x width]
};

Value elastic_mlp_forward(const ElasticModel& model, int layer, const Value& x, int candidate,
                          const ForwardHooks* hooks = nullptr);
Value elastic_mha_forward(const ElasticModel& model, int layer, const Value& x, int candidate, int batch,
                          int seq, const ForwardHooks* hooks = nullptr);

// Residual stream after the final layer norm, [batch*seq x C].
Value forward_hidden(const ElasticModel& model, const TokenBatch& batch, const Selection& sel,
                     const ForwardHooks* hooks = nullptr);
Value forward_logits(const ElasticModel& model, const TokenBatch& batch, const Selection& sel,
                     const ForwardHooks* hooks = nullptr);
Value lm_loss(const ElasticModel& model, const TokenBatch& batch, const Selection& sel);

// Next-token loss without building gradient state (frozen-model evaluation).
double lm_loss_eval(const ElasticModel& model, const TokenBatch& batch, const Selection& sel);

std::int64_t count_params(const ElasticModel& model, const Selection& sel);

constexpr double kLayerNormEps = 1e-5;

}  // namespace elastron
