#include "elastron/importance.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace elastron {

namespace {

struct LayerPartial {
    std::vector<double> heads;
    std::vector<double> neurons;
};

using Partial = std::vector<LayerPartial>;

Partial score_one_batch(const ElasticModel& model, const TokenBatch& batch) {
    Partial partial(static_cast<std::size_t>(model.config.num_layers));
    for (int i = 0; i < model.config.num_layers; ++i) {
        partial[static_cast<std::size_t>(i)].heads.assign(
            static_cast<std::size_t>(model.layer_shapes[static_cast<std::size_t>(i)].heads), 0.0);
        partial[static_cast<std::size_t>(i)].neurons.assign(
            static_cast<std::size_t>(model.layer_shapes[static_cast<std::size_t>(i)].mlp_hidden), 0.0);
    }
    const int head_dim = model.config.head_dim;
    ForwardHooks hooks;
    hooks.on_mha_heads = [&](int layer, const Tensor& heads_concat) {
        auto& acc = partial[static_cast<std::size_t>(layer)].heads;
        const int n = heads_concat.rows(), w = heads_concat.cols();
        for (int r = 0; r < n; ++r) {
            const double* row = heads_concat.data.data() + static_cast<std::size_t>(r) * w;
            for (int c = 0; c < w; ++c) acc[static_cast<std::size_t>(c / head_dim)] += std::fabs(row[c]);
        }
    };
    hooks.on_mlp_pre = [&](int layer, const Tensor& pre) {
        auto& acc = partial[static_cast<std::size_t>(layer)].neurons;
        const int n = pre.rows(), w = pre.cols();
        for (int r = 0; r < n; ++r) {
            const double* row = pre.data.data() + static_cast<std::size_t>(r) * w;
            for (int c = 0; c < w; ++c) acc[static_cast<std::size_t>(c)] += std::fabs(row[c]);
        }
    };
    NoGradGuard guard;
    forward_hidden(model, batch, model.full_selection(), &hooks);
    return partial;
}

void add_into(Partial& into, const Partial& from) {
    for (std::size_t i = 0; i < into.size(); ++i) {
        for (std::size_t j = 0; j < into[i].heads.size(); ++j) into[i].heads[j] += from[i].heads[j];
        for (std::size_t j = 0; j < into[i].neurons.size(); ++j) into[i].neurons[j] += from[i].neurons[j];
    }
}

// Balanced binary reduction: partial sums combine pairwise, so duplicating
// the calibration list exactly doubles every score.
Partial reduce_range(std::vector<Partial>& partials, std::size_t lo, std::size_t hi) {
    if (hi - lo == 1) return std::move(partials[lo]);
    const std::size_t mid = lo + (hi - lo) / 2;
    Partial left = reduce_range(partials, lo, mid);
    Partial right = reduce_range(partials, mid, hi);
    add_into(left, right);
    return left;
}

}  // namespace

ImportanceScores score_importance(const ElasticModel& model, const std::vector<TokenBatch>& calibration) {
    if (calibration.empty()) throw TensorError("score_importance: empty calibration set");
    std::vector<Partial> partials;
    partials.reserve(calibration.size());
    std::int64_t samples = 0;
    for (const TokenBatch& batch : calibration) {
        partials.push_back(score_one_batch(model, batch));
        samples += batch.batch;
    }
    Partial total = reduce_range(partials, 0, partials.size());

    ImportanceScores scores;
    scores.sample_count = samples;
    for (auto& layer : total) {
        scores.head_scores.push_back(std::move(layer.heads));
        scores.neuron_scores.push_back(std::move(layer.neurons));
    }
    return scores;
}

namespace {

std::vector<int> order_by_score(const std::vector<double>& scores) {
    std::vector<int> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
        return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
    });
    return idx;
}

void check_permutation(const std::vector<int>& perm, std::size_t n, const char* what) {
    if (perm.size() != n) throw TensorError(std::string(what) + ": permutation length mismatch");
    std::vector<char> seen(n, 0);
    for (int p : perm) {
        if (p < 0 || static_cast<std::size_t>(p) >= n || seen[static_cast<std::size_t>(p)]) {
            throw TensorError(std::string(what) + ": not a bijection");
        }
        seen[static_cast<std::size_t>(p)] = 1;
    }
}

// Reorders row blocks: new block k = old block perm[k].
Tensor permute_row_blocks(const Tensor& t, const std::vector<int>& perm, int block_rows) {
    const int cols = t.cols();
    Tensor out = Tensor::zeros(t.shape);
    for (std::size_t k = 0; k < perm.size(); ++k) {
        const std::size_t dst = k * static_cast<std::size_t>(block_rows) * cols;
        const std::size_t src = static_cast<std::size_t>(perm[k]) * block_rows * cols;
        std::copy(t.data.begin() + src, t.data.begin() + src + static_cast<std::size_t>(block_rows) * cols,
                  out.data.begin() + dst);
    }
    return out;
}

}  // namespace

PermutationPlan build_plan(const ImportanceScores& scores) {
    PermutationPlan plan;
    for (const auto& s : scores.head_scores) plan.head_perm.push_back(order_by_score(s));
    for (const auto& s : scores.neuron_scores) plan.neuron_perm.push_back(order_by_score(s));
    return plan;
}

PermutationPlan identity_plan(const ElasticModel& model) {
    PermutationPlan plan;
    for (const LayerShape& s : model.layer_shapes) {
        std::vector<int> h(static_cast<std::size_t>(s.heads));
        std::iota(h.begin(), h.end(), 0);
        std::vector<int> n(static_cast<std::size_t>(s.mlp_hidden));
        std::iota(n.begin(), n.end(), 0);
        plan.head_perm.push_back(std::move(h));
        plan.neuron_perm.push_back(std::move(n));
    }
    return plan;
}

PermutationPlan inverse_plan(const PermutationPlan& plan) {
    PermutationPlan inv;
    auto invert = [](const std::vector<int>& p) {
        std::vector<int> out(p.size(), 0);
        for (std::size_t k = 0; k < p.size(); ++k) out[static_cast<std::size_t>(p[k])] = static_cast<int>(k);
        return out;
    };
    for (const auto& p : plan.head_perm) inv.head_perm.push_back(invert(p));
    for (const auto& p : plan.neuron_perm) inv.neuron_perm.push_back(invert(p));
    return inv;
}

void apply_plan(ElasticModel& model, const PermutationPlan& plan) {
    const std::size_t n_layers = model.layers.size();
    if (plan.head_perm.size() != n_layers || plan.neuron_perm.size() != n_layers) {
        throw TensorError("apply_plan: plan layer count does not match model");
    }
    const int head_dim = model.config.head_dim;
    for (std::size_t i = 0; i < n_layers; ++i) {
        const LayerShape& shape = model.layer_shapes[i];
        const auto& hp = plan.head_perm[i];
        const auto& np = plan.neuron_perm[i];
        check_permutation(hp, static_cast<std::size_t>(shape.heads), "apply_plan heads");
        check_permutation(np, static_cast<std::size_t>(shape.mlp_hidden), "apply_plan neurons");

        LayerWeights& w = model.layers[i];
        // Heads move as H-row blocks in Q/K/V and, identically, in the W_O
        // rows they feed; that pairing preserves the full-selection function.
        w.w_q->value = permute_row_blocks(w.w_q->value, hp, head_dim);
        w.w_k->value = permute_row_blocks(w.w_k->value, hp, head_dim);
        w.w_v->value = permute_row_blocks(w.w_v->value, hp, head_dim);
        w.w_o->value = permute_row_blocks(w.w_o->value, hp, head_dim);
        w.w_mlp1->value = permute_row_blocks(w.w_mlp1->value, np, 1);
        w.w_mlp2->value = permute_row_blocks(w.w_mlp2->value, np, 1);
    }
}

nlohmann::ordered_json importance_to_json(const ImportanceScores& scores) {
    nlohmann::ordered_json out;
    out["sample_count"] = scores.sample_count;
    out["head_scores"] = scores.head_scores;
    out["neuron_scores"] = scores.neuron_scores;
    return out;
}

nlohmann::ordered_json plan_to_json(const PermutationPlan& plan) {
    nlohmann::ordered_json out;
    out["head_perm"] = plan.head_perm;
    out["neuron_perm"] = plan.neuron_perm;
    return out;
}

}  // namespace elastron
