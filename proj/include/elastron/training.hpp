#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "elastron/corpus.hpp"
#include "elastron/model.hpp"
#include "elastron/optim.hpp"
#include "elastron/rng.hpp"

namespace elastron {

struct TrainConfig {
    int steps = 2000;
    int batch_size = 4;
    int num_sampled_submodels = 3;  // sampled per step, on top of the full model
    bool always_include_full = true;
    double learning_rate = 3e-4;
    int warmup_steps = 100;
    int validation_interval = 100;
    int validation_batches = 4;
    std::uint64_t seed = 1;
};

struct TrajectoryPoint {
    int step = 0;
    std::string probe;
    double loss = 0.0;
};

struct TrajectoryLog {
    std::vector<TrajectoryPoint> points;

    void to_csv(const std::string& path) const;
};

// Uniform independent per-layer draws over both candidate slots.
Selection sample_selection(Rng& rng, const ElasticModel& model);

// Gradients of the summed loss over the given sub-networks, accumulated into
// the shared weights. No optimizer interaction.
std::vector<double> accumulate_joint_gradients(ElasticModel& model, const TokenBatch& batch,
                                               const std::vector<Selection>& selections);

struct JointStepReport {
    std::vector<Selection> selections;
    std::vector<double> losses;
};

JointStepReport joint_step(ElasticModel& model, const TokenBatch& batch, int num_sampled, Rng& rng,
                           Adam& optimizer, bool include_full = true);

double warmup_lr(double base, int warmup_steps, int step_index);

struct ElasticCtResult {
    TrajectoryLog log;
};

ElasticCtResult run_elastic_ct(ElasticModel& model, const Corpus& corpus, const TrainConfig& config);

}  // namespace elastron
