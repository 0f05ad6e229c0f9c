#include "elastron/model.hpp"

#include <cmath>
#include <sstream>
#include <string>

namespace elastron {

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw TensorError(msg);
}

Tensor random_normal(std::vector<int> shape, double stddev, Rng& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data) v = stddev * rng.normal();
    return t;
}

void check_menu(const std::vector<int>& menu, int stored, const char* what) {
    require(!menu.empty(), std::string(what) + " menu empty");
    for (std::size_t i = 0; i < menu.size(); ++i) {
        require(menu[i] > 0, std::string(what) + " menu entry must be positive");
        if (i) require(menu[i] > menu[i - 1], std::string(what) + " menu must be strictly ascending");
    }
    require(menu.back() == stored, std::string(what) + " menu must end at the stored width");
}

}  // namespace

void ModelConfig::validate() const {
    require(vocab_size > 0 && embed_dim > 0 && num_layers > 0 && num_heads > 0 && head_dim > 0 &&
                mlp_hidden > 0 && context_len > 0,
            "model config: all extents must be positive");
    require(embed_dim == num_heads * head_dim, "model config: embed_dim must equal num_heads*head_dim");
    require(mlp_widths.size() == head_counts.size(), "model config: candidate lists must have equal length");
    check_menu(mlp_widths, mlp_hidden, "mlp width");
    check_menu(head_counts, num_heads, "head count");
}

std::int64_t ModelConfig::dense_nonembedding_params() const {
    const std::int64_t c = embed_dim;
    const std::int64_t per_layer = 4 * static_cast<std::int64_t>(num_heads) * head_dim * c +
                                   2 * static_cast<std::int64_t>(mlp_hidden) * c + 4 * c;
    return num_layers * per_layer + 2 * c;
}

std::string Selection::describe() const {
    std::ostringstream out;
    for (std::size_t i = 0; i < mha.size(); ++i) {
        if (i) out << ";";
        out << mha[i] << "/" << mlp[i];
    }
    return out.str();
}

ElasticModel ElasticModel::init(const ModelConfig& config, Rng rng) {
    config.validate();
    ElasticModel model;
    model.config = config;
    const int c = config.embed_dim;
    const double stddev = 0.5 / std::sqrt(static_cast<double>(c));

    Rng init_rng = rng.stream("model-init");
    model.tok_embed = parameter(random_normal({config.vocab_size, c}, stddev, init_rng));
    model.pos_embed = parameter(random_normal({config.context_len, c}, stddev, init_rng));
    for (int i = 0; i < config.num_layers; ++i) {
        LayerShape shape;
        shape.heads = config.num_heads;
        shape.mlp_hidden = config.mlp_hidden;
        shape.head_menu = config.head_counts;
        shape.mlp_menu = config.mlp_widths;
        model.layer_shapes.push_back(shape);

        const int hc = config.num_heads * config.head_dim;
        LayerWeights w;
        w.w_q = parameter(random_normal({hc, c}, stddev, init_rng));
        w.w_k = parameter(random_normal({hc, c}, stddev, init_rng));
        w.w_v = parameter(random_normal({hc, c}, stddev, init_rng));
        w.w_o = parameter(random_normal({hc, c}, stddev, init_rng));
        w.w_mlp1 = parameter(random_normal({config.mlp_hidden, c}, stddev, init_rng));
        w.w_mlp2 = parameter(random_normal({config.mlp_hidden, c}, stddev, init_rng));
        w.ln1_gain = parameter(Tensor::full({1, c}, 1.0));
        w.ln1_bias = parameter(Tensor::zeros({1, c}));
        w.ln2_gain = parameter(Tensor::full({1, c}, 1.0));
        w.ln2_bias = parameter(Tensor::zeros({1, c}));
        model.layers.push_back(std::move(w));
    }
    model.final_gain = parameter(Tensor::full({1, c}, 1.0));
    model.final_bias = parameter(Tensor::zeros({1, c}));
    return model;
}

std::vector<std::pair<std::string, Value>> ElasticModel::named_parameters() const {
    std::vector<std::pair<std::string, Value>> named;
    named.emplace_back("tok_embed", tok_embed);
    named.emplace_back("pos_embed", pos_embed);
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const std::string p = "layer" + std::to_string(i) + ".";
        const LayerWeights& w = layers[i];
        named.emplace_back(p + "w_q", w.w_q);
        named.emplace_back(p + "w_k", w.w_k);
        named.emplace_back(p + "w_v", w.w_v);
        named.emplace_back(p + "w_o", w.w_o);
        named.emplace_back(p + "w_mlp1", w.w_mlp1);
        named.emplace_back(p + "w_mlp2", w.w_mlp2);
        named.emplace_back(p + "ln1_gain", w.ln1_gain);
        named.emplace_back(p + "ln1_bias", w.ln1_bias);
        named.emplace_back(p + "ln2_gain", w.ln2_gain);
        named.emplace_back(p + "ln2_bias", w.ln2_bias);
    }
    named.emplace_back("final_gain", final_gain);
    named.emplace_back("final_bias", final_bias);
    return named;
}

std::vector<Value> ElasticModel::parameters() const {
    std::vector<Value> params;
    for (auto& [name, value] : named_parameters()) params.push_back(value);
    return params;
}

ElasticModel ElasticModel::clone() const {
    ElasticModel copy;
    copy.config = config;
    copy.layer_shapes = layer_shapes;
    copy.tok_embed = parameter(tok_embed->value);
    copy.pos_embed = parameter(pos_embed->value);
    for (const LayerWeights& w : layers) {
        LayerWeights cw;
        cw.w_q = parameter(w.w_q->value);
        cw.w_k = parameter(w.w_k->value);
        cw.w_v = parameter(w.w_v->value);
        cw.w_o = parameter(w.w_o->value);
        cw.w_mlp1 = parameter(w.w_mlp1->value);
        cw.w_mlp2 = parameter(w.w_mlp2->value);
        cw.ln1_gain = parameter(w.ln1_gain->value);
        cw.ln1_bias = parameter(w.ln1_bias->value);
        cw.ln2_gain = parameter(w.ln2_gain->value);
        cw.ln2_bias = parameter(w.ln2_bias->value);
        copy.layers.push_back(std::move(cw));
    }
    copy.final_gain = parameter(final_gain->value);
    copy.final_bias = parameter(final_bias->value);
    return copy;
}

void ElasticModel::set_trainable(bool enabled) const {
    for (const Value& p : parameters()) set_requires_grad(p, enabled);
}

void ElasticModel::zero_grads() const {
    for (const Value& p : parameters()) p->zero_grad();
}

Selection ElasticModel::full_selection() const {
    Selection sel;
    for (const LayerShape& s : layer_shapes) {
        sel.mha.push_back(static_cast<int>(s.head_menu.size()));
        sel.mlp.push_back(static_cast<int>(s.mlp_menu.size()));
    }
    return sel;
}

Selection ElasticModel::uniform_selection(int candidate) const {
    Selection sel;
    for (std::size_t i = 0; i < layer_shapes.size(); ++i) {
        sel.mha.push_back(candidate);
        sel.mlp.push_back(candidate);
    }
    validate_selection(sel);
    return sel;
}

void ElasticModel::validate_selection(const Selection& sel) const {
    require(sel.mha.size() == layer_shapes.size() && sel.mlp.size() == layer_shapes.size(),
            "selection: length must equal layer count");
    for (std::size_t i = 0; i < layer_shapes.size(); ++i) {
        const int km = static_cast<int>(layer_shapes[i].head_menu.size());
        const int kf = static_cast<int>(layer_shapes[i].mlp_menu.size());
        require(sel.mha[i] >= 1 && sel.mha[i] <= km,
                "selection: MHA candidate " + std::to_string(sel.mha[i]) + " out of range at layer " +
                    std::to_string(i));
        require(sel.mlp[i] >= 1 && sel.mlp[i] <= kf,
                "selection: MLP candidate " + std::to_string(sel.mlp[i]) + " out of range at layer " +
                    std::to_string(i));
    }
}

int ElasticModel::mha_heads_for(int layer, int candidate) const {
    const auto& menu = layer_shapes[static_cast<std::size_t>(layer)].head_menu;
    require(candidate >= 1 && candidate <= static_cast<int>(menu.size()),
            "mha: candidate " + std::to_string(candidate) + " out of range at layer " + std::to_string(layer));
    return menu[static_cast<std::size_t>(candidate - 1)];
}

int ElasticModel::mlp_width_for(int layer, int candidate) const {
    const auto& menu = layer_shapes[static_cast<std::size_t>(layer)].mlp_menu;
    require(candidate >= 1 && candidate <= static_cast<int>(menu.size()),
            "mlp: candidate " + std::to_string(candidate) + " out of range at layer " + std::to_string(layer));
    return menu[static_cast<std::size_t>(candidate - 1)];
}

Value elastic_mlp_forward(const ElasticModel& model, int layer, const Value& x, int candidate,
                          const ForwardHooks* hooks) {
    const int width = model.mlp_width_for(layer, candidate);
    const LayerWeights& w = model.layers[static_cast<std::size_t>(layer)];
    Value pre = linear(x, slice_rows(w.w_mlp1, width));
    if (hooks && hooks->on_mlp_pre) hooks->on_mlp_pre(layer, pre->value);
    return matmul(gelu(pre), slice_rows(w.w_mlp2, width));
}

Value elastic_mha_forward(const ElasticModel& model, int layer, const Value& x, int candidate, int batch,
                          int seq, const ForwardHooks* hooks) {
    const int heads = model.mha_heads_for(layer, candidate);
    const int width = heads * model.config.head_dim;
    const LayerWeights& w = model.layers[static_cast<std::size_t>(layer)];
    Value q = linear(x, slice_rows(w.w_q, width));
    Value k = linear(x, slice_rows(w.w_k, width));
    Value v = linear(x, slice_rows(w.w_v, width));
    Value att = causal_attention(q, k, v, batch, seq, model.config.head_dim);
    if (hooks && hooks->on_mha_heads) hooks->on_mha_heads(layer, att->value);
    return matmul(att, slice_rows(w.w_o, width));
}

namespace {

Value embed_tokens(const ElasticModel& model, const TokenBatch& batch) {
    const ModelConfig& cfg = model.config;
    require(batch.batch >= 1 && batch.seq >= 1, "forward: batch and seq must be positive");
    require(batch.seq <= cfg.context_len, "forward: sequence length " + std::to_string(batch.seq) +
                                              " exceeds context length " + std::to_string(cfg.context_len));
    require(static_cast<int>(batch.tokens.size()) == batch.batch * batch.seq,
            "forward: token buffer does not match batch*seq");
    std::vector<int> pos_ids(batch.tokens.size());
    for (int b = 0; b < batch.batch; ++b) {
        for (int s = 0; s < batch.seq; ++s) {
            const int t = batch.at(b, s);
            require(t >= 0 && t < cfg.vocab_size,
                    "forward: token " + std::to_string(t) + " out of vocabulary range");
            pos_ids[static_cast<std::size_t>(b) * batch.seq + s] = s;
        }
    }
    return add(gather_rows(model.tok_embed, batch.tokens), gather_rows(model.pos_embed, pos_ids));
}

}  // namespace

Value forward_hidden(const ElasticModel& model, const TokenBatch& batch, const Selection& sel,
                     const ForwardHooks* hooks) {
    model.validate_selection(sel);
    Value x = embed_tokens(model, batch);
    for (int i = 0; i < model.config.num_layers; ++i) {
        const LayerWeights& w = model.layers[static_cast<std::size_t>(i)];
        Value h1 = layer_norm(x, w.ln1_gain, w.ln1_bias, kLayerNormEps);
        x = add(x, elastic_mha_forward(model, i, h1, sel.mha[static_cast<std::size_t>(i)], batch.batch,
                                       batch.seq, hooks));
        Value h2 = layer_norm(x, w.ln2_gain, w.ln2_bias, kLayerNormEps);
        x = add(x, elastic_mlp_forward(model, i, h2, sel.mlp[static_cast<std::size_t>(i)], hooks));
    }
    return layer_norm(x, model.final_gain, model.final_bias, kLayerNormEps);
}

Value forward_logits(const ElasticModel& model, const TokenBatch& batch, const Selection& sel,
                     const ForwardHooks* hooks) {
    return linear(forward_hidden(model, batch, sel, hooks), model.tok_embed);
}

Value lm_loss(const ElasticModel& model, const TokenBatch& batch, const Selection& sel) {
    require(batch.seq >= 2, "lm_loss: needs at least two tokens per sequence");
    Value hidden = forward_hidden(model, batch, sel);
    std::vector<int> keep;
    std::vector<int> targets;
    keep.reserve(static_cast<std::size_t>(batch.batch) * (batch.seq - 1));
    targets.reserve(keep.capacity());
    for (int b = 0; b < batch.batch; ++b) {
        for (int s = 0; s + 1 < batch.seq; ++s) {
            keep.push_back(b * batch.seq + s);
            targets.push_back(batch.at(b, s + 1));
        }
    }
    Value logits = linear(gather_rows(hidden, keep), model.tok_embed);
    return cross_entropy(logits, targets);
}

double lm_loss_eval(const ElasticModel& model, const TokenBatch& batch, const Selection& sel) {
    NoGradGuard guard;
    return lm_loss(model, batch, sel)->value.item();
}

std::int64_t count_params(const ElasticModel& model, const Selection& sel) {
    model.validate_selection(sel);
    const std::int64_t c = model.config.embed_dim;
    const std::int64_t h = model.config.head_dim;
    std::int64_t total = 2 * c;  // final layer norm
    for (int i = 0; i < model.config.num_layers; ++i) {
        const std::int64_t heads = model.mha_heads_for(i, sel.mha[static_cast<std::size_t>(i)]);
        const std::int64_t width = model.mlp_width_for(i, sel.mlp[static_cast<std::size_t>(i)]);
        total += 4 * heads * h * c;  // Q, K, V head blocks + matching W_O rows
        total += 2 * width * c;      // both MLP matrices
        total += 4 * c;              // the two layer norms stay dense
    }
    return total;
}

}  // namespace elastron
