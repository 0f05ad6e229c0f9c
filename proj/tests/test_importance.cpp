#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "elastron/importance.hpp"
#include "elastron/model.hpp"
#include "test_helpers.hpp"

using namespace elastron;
using namespace elastron::testing;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.vocab_size = 19;
    cfg.embed_dim = 8;
    cfg.num_layers = 2;
    cfg.num_heads = 2;
    cfg.head_dim = 4;
    cfg.mlp_hidden = 12;
    cfg.context_len = 8;
    cfg.mlp_widths = {4, 8, 12};
    cfg.head_counts = {1, 1, 2};
    return cfg;
}

TokenBatch random_batch(const ModelConfig& cfg, int batch, int seq, Rng& rng) {
    TokenBatch tb;
    tb.batch = batch;
    tb.seq = seq;
    for (int i = 0; i < batch * seq; ++i) tb.tokens.push_back(rng.uniform_int(cfg.vocab_size));
    return tb;
}

std::vector<TokenBatch> calibration_set(const ModelConfig& cfg, int batches, Rng& rng) {
    std::vector<TokenBatch> out;
    for (int i = 0; i < batches; ++i) out.push_back(random_batch(cfg, 2, 6, rng));
    return out;
}

PermutationPlan random_plan(const ElasticModel& m, Rng rng) {
    PermutationPlan plan = identity_plan(m);
    for (auto& p : plan.head_perm) rng.shuffle(p);
    for (auto& p : plan.neuron_perm) rng.shuffle(p);
    return plan;
}

}  // namespace

TEST_CASE("head-count menus may repeat across layers but not within") {
    // tiny_config deliberately uses a non-strict head menu to catch it.
    ModelConfig cfg = tiny_config();
    CHECK_THROWS_AS(cfg.validate(), TensorError);
}

TEST_CASE("pre-activation magnitude is the row inner product") {
    // The neuron score accumulates |x . w_row|: [[1,2]] against [3,4] gives 11.
    Value x = constant(Tensor::row({1, 2}));
    Value w = constant(Tensor::matrix(1, 2, {3, 4}));
    CHECK(linear(x, w)->value.item() == doctest::Approx(11.0).epsilon(1e-15));
}

TEST_CASE("zero first MLP matrix produces zero neuron scores") {
    ModelConfig cfg = tiny_config();
    cfg.head_counts = {1, 2};
    cfg.mlp_widths = {6, 12};
    ElasticModel m = ElasticModel::init(cfg, Rng(50));
    for (auto& layer : m.layers) {
        std::fill(layer.w_mlp1->value.data.begin(), layer.w_mlp1->value.data.end(), 0.0);
    }
    Rng rng(51);
    ImportanceScores scores = score_importance(m, calibration_set(cfg, 3, rng));
    for (const auto& layer : scores.neuron_scores) {
        for (double s : layer) CHECK(s == 0.0);
    }
    CHECK(scores.sample_count == 6);
}

TEST_CASE("neuron scores match an independently accumulated Eq-style sum") {
    ModelConfig cfg = tiny_config();
    cfg.head_counts = {1, 2};
    cfg.mlp_widths = {6, 12};
    ElasticModel m = ElasticModel::init(cfg, Rng(52));
    Rng rng(53);
    auto calib = calibration_set(cfg, 2, rng);
    ImportanceScores scores = score_importance(m, calib);

    // Recompute layer-0 neuron sums through the public hook on its own.
    std::vector<double> expect(static_cast<std::size_t>(cfg.mlp_hidden), 0.0);
    for (const TokenBatch& tb : calib) {
        ForwardHooks hooks;
        hooks.on_mlp_pre = [&](int layer, const Tensor& pre) {
            if (layer != 0) return;
            for (int r = 0; r < pre.rows(); ++r) {
                for (int c = 0; c < pre.cols(); ++c) {
                    expect[static_cast<std::size_t>(c)] += std::fabs(pre.at(r, c));
                }
            }
        };
        NoGradGuard guard;
        forward_hidden(m, tb, m.full_selection(), &hooks);
    }
    for (int c = 0; c < cfg.mlp_hidden; ++c) {
        CHECK(scores.neuron_scores[0][static_cast<std::size_t>(c)] ==
              doctest::Approx(expect[static_cast<std::size_t>(c)]).epsilon(1e-12));
    }
}

TEST_CASE("duplicating the calibration set exactly doubles every score") {
    ModelConfig cfg = tiny_config();
    cfg.head_counts = {1, 2};
    cfg.mlp_widths = {6, 12};
    ElasticModel m = ElasticModel::init(cfg, Rng(54));
    Rng rng(55);
    auto calib = calibration_set(cfg, 3, rng);
    ImportanceScores once = score_importance(m, calib);
    auto doubled = calib;
    doubled.insert(doubled.end(), calib.begin(), calib.end());
    ImportanceScores twice = score_importance(m, doubled);
    for (std::size_t l = 0; l < once.head_scores.size(); ++l) {
        for (std::size_t i = 0; i < once.head_scores[l].size(); ++i) {
            CHECK(twice.head_scores[l][i] == 2.0 * once.head_scores[l][i]);
        }
        for (std::size_t i = 0; i < once.neuron_scores[l].size(); ++i) {
            CHECK(twice.neuron_scores[l][i] == 2.0 * once.neuron_scores[l][i]);
        }
    }
    CHECK(twice.sample_count == 2 * once.sample_count);
}

TEST_CASE("empty calibration raises") {
    ModelConfig cfg = tiny_config();
    cfg.head_counts = {1, 2};
    cfg.mlp_widths = {6, 12};
    ElasticModel m = ElasticModel::init(cfg, Rng(56));
    CHECK_THROWS_AS(score_importance(m, {}), TensorError);
}

TEST_CASE("build_plan sorts descending with ties to the lower index") {
    ImportanceScores scores;
    scores.sample_count = 1;
    scores.head_scores = {{3, 1, 2}};
    scores.neuron_scores = {{5, 5, 5, 5}};
    PermutationPlan plan = build_plan(scores);
    CHECK(plan.head_perm[0] == std::vector<int>{0, 2, 1});
    CHECK(plan.neuron_perm[0] == std::vector<int>{0, 1, 2, 3});
}

TEST_CASE("build_plan yields a non-increasing score sequence") {
    Rng rng(57);
    ImportanceScores scores;
    scores.sample_count = 1;
    std::vector<double> raw;
    for (int i = 0; i < 40; ++i) raw.push_back(std::fabs(rng.normal()));
    scores.neuron_scores = {raw};
    scores.head_scores = {{1.0}};
    PermutationPlan plan = build_plan(scores);
    for (std::size_t k = 1; k < plan.neuron_perm[0].size(); ++k) {
        CHECK(raw[static_cast<std::size_t>(plan.neuron_perm[0][k - 1])] >=
              raw[static_cast<std::size_t>(plan.neuron_perm[0][k])]);
    }
}

TEST_CASE("identity plan leaves the model bitwise unchanged") {
    ModelConfig cfg = tiny_config();
    cfg.head_counts = {1, 2};
    cfg.mlp_widths = {6, 12};
    ElasticModel m = ElasticModel::init(cfg, Rng(58));
    ElasticModel copy = m.clone();
    apply_plan(m, identity_plan(m));
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
        CHECK(m.layers[i].w_q->value.data == copy.layers[i].w_q->value.data);
        CHECK(m.layers[i].w_o->value.data == copy.layers[i].w_o->value.data);
        CHECK(m.layers[i].w_mlp1->value.data == copy.layers[i].w_mlp1->value.data);
    }
}

TEST_CASE("random permutations preserve the full-selection function") {
    ModelConfig cfg = tiny_config();
    cfg.head_counts = {1, 2};
    cfg.mlp_widths = {6, 12};
    ElasticModel m = ElasticModel::init(cfg, Rng(59));
    Rng rng(60);
    TokenBatch tb = random_batch(cfg, 2, 6, rng);
    Tensor before = forward_logits(m, tb, m.full_selection())->value;
    for (int rep = 0; rep < 3; ++rep) {
        apply_plan(m, random_plan(m, rng.stream("plan", static_cast<std::uint64_t>(rep))));
        Tensor after = forward_logits(m, tb, m.full_selection())->value;
        CHECK(max_abs_diff(before, after) < 1e-10);
    }
}

TEST_CASE("a plan followed by its inverse restores weights bitwise") {
    ModelConfig cfg = tiny_config();
    cfg.head_counts = {1, 2};
    cfg.mlp_widths = {6, 12};
    ElasticModel m = ElasticModel::init(cfg, Rng(61));
    ElasticModel copy = m.clone();
    PermutationPlan plan = random_plan(m, Rng(62));
    apply_plan(m, plan);
    apply_plan(m, inverse_plan(plan));
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
        CHECK(m.layers[i].w_q->value.data == copy.layers[i].w_q->value.data);
        CHECK(m.layers[i].w_k->value.data == copy.layers[i].w_k->value.data);
        CHECK(m.layers[i].w_v->value.data == copy.layers[i].w_v->value.data);
        CHECK(m.layers[i].w_o->value.data == copy.layers[i].w_o->value.data);
        CHECK(m.layers[i].w_mlp1->value.data == copy.layers[i].w_mlp1->value.data);
        CHECK(m.layers[i].w_mlp2->value.data == copy.layers[i].w_mlp2->value.data);
    }
}

TEST_CASE("after sorting, re-scored importance is non-increasing per layer") {
    ModelConfig cfg = tiny_config();
    cfg.head_counts = {1, 2};
    cfg.mlp_widths = {6, 12};
    ElasticModel m = ElasticModel::init(cfg, Rng(63));
    Rng rng(64);
    auto calib = calibration_set(cfg, 4, rng);
    apply_plan(m, build_plan(score_importance(m, calib)));
    ImportanceScores rescored = score_importance(m, calib);
    for (const auto& layer : rescored.head_scores) {
        for (std::size_t i = 1; i < layer.size(); ++i) CHECK(layer[i - 1] >= layer[i] - 1e-9);
    }
    for (const auto& layer : rescored.neuron_scores) {
        for (std::size_t i = 1; i < layer.size(); ++i) CHECK(layer[i - 1] >= layer[i] - 1e-9);
    }
}

TEST_CASE("plan dimension mismatch raises") {
    ModelConfig cfg = tiny_config();
    cfg.head_counts = {1, 2};
    cfg.mlp_widths = {6, 12};
    ElasticModel m = ElasticModel::init(cfg, Rng(65));
    PermutationPlan plan = identity_plan(m);
    plan.head_perm.pop_back();
    CHECK_THROWS_AS(apply_plan(m, plan), TensorError);

    PermutationPlan bad = identity_plan(m);
    bad.neuron_perm[0][0] = bad.neuron_perm[0][1];
    CHECK_THROWS_AS(apply_plan(m, bad), TensorError);
}
