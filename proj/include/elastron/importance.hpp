#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "elastron/model.hpp"

namespace elastron {

// Accumulated L1 activation magnitudes from full-selection forward passes.
struct ImportanceScores {
    std::vector<std::vector<double>> head_scores;    // per layer, length = stored heads
    std::vector<std::vector<double>> neuron_scores;  // per layer, length = stored mlp width
    std::int64_t sample_count = 0;
};

// Per-layer unit orderings; perm[k] names the original index moved to slot k.
struct PermutationPlan {
    std::vector<std::vector<int>> head_perm;
    std::vector<std::vector<int>> neuron_perm;
};

ImportanceScores score_importance(const ElasticModel& model, const std::vector<TokenBatch>& calibration);
PermutationPlan build_plan(const ImportanceScores& scores);
PermutationPlan identity_plan(const ElasticModel& model);
PermutationPlan inverse_plan(const PermutationPlan& plan);
void apply_plan(ElasticModel& model, const PermutationPlan& plan);

nlohmann::ordered_json importance_to_json(const ImportanceScores& scores);
nlohmann::ordered_json plan_to_json(const PermutationPlan& plan);

}  // namespace elastron
