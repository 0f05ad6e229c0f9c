#include "elastron/training.hpp"

#include <algorithm>
#include <cmath>

#include "elastron/csv.hpp"

namespace elastron {

void TrajectoryLog::to_csv(const std::string& path) const {
    CsvWriter csv(path);
    csv.field("step").field("probe").field("loss");
    csv.end_row();
    for (const TrajectoryPoint& p : points) {
        csv.field(p.step).field(p.probe).field(p.loss);
        csv.end_row();
    }
}

Selection sample_selection(Rng& rng, const ElasticModel& model) {
    Selection sel;
    for (const LayerShape& shape : model.layer_shapes) {
        sel.mha.push_back(1 + rng.uniform_int(static_cast<int>(shape.head_menu.size())));
        sel.mlp.push_back(1 + rng.uniform_int(static_cast<int>(shape.mlp_menu.size())));
    }
    return sel;
}

std::vector<double> accumulate_joint_gradients(ElasticModel& model, const TokenBatch& batch,
                                               const std::vector<Selection>& selections) {
    std::vector<double> losses;
    losses.reserve(selections.size());
    for (const Selection& sel : selections) {
        Value loss = lm_loss(model, batch, sel);
        backward(loss);
        losses.push_back(loss->value.item());
    }
    return losses;
}

JointStepReport joint_step(ElasticModel& model, const TokenBatch& batch, int num_sampled, Rng& rng,
                           Adam& optimizer, bool include_full) {
    JointStepReport report;
    if (include_full) report.selections.push_back(model.full_selection());
    for (int i = 0; i < num_sampled; ++i) report.selections.push_back(sample_selection(rng, model));
    if (report.selections.empty()) throw TensorError("joint_step: no sub-networks selected");

    model.zero_grads();
    report.losses = accumulate_joint_gradients(model, batch, report.selections);
    optimizer.step(model.parameters());
    return report;
}

double warmup_lr(double base, int warmup_steps, int step_index) {
    if (warmup_steps <= 0) return base;
    const double ramp = static_cast<double>(step_index + 1) / warmup_steps;
    return base * std::min(1.0, ramp);
}

namespace {

double mean_eval_loss(const ElasticModel& model, const std::vector<TokenBatch>& batches,
                      const Selection& sel) {
    double total = 0.0;
    for (const TokenBatch& b : batches) total += lm_loss_eval(model, b, sel);
    return total / static_cast<double>(batches.size());
}

std::string percent_label(const ElasticModel& model, int candidate) {
    const double frac = static_cast<double>(model.config.mlp_widths[static_cast<std::size_t>(candidate - 1)]) /
                        model.config.mlp_hidden;
    return "uniform-" + std::to_string(static_cast<int>(std::lround(frac * 100)));
}

}  // namespace

ElasticCtResult run_elastic_ct(ElasticModel& model, const Corpus& corpus, const TrainConfig& config) {
    if (config.steps < 1) throw TensorError("elastic ct: steps must be >= 1");
    if (corpus.train_refs().empty()) throw TensorError("elastic ct: empty corpus");

    Rng root(config.seed);
    BatchSampler sampler(corpus, config.batch_size, root.stream("batches"));
    Rng selection_rng = root.stream("selections");
    Rng probe_rng = root.stream("probe-selections");
    std::vector<TokenBatch> val = validation_batches(corpus, config.batch_size, config.validation_batches);

    Adam optimizer({.learning_rate = config.learning_rate});
    ElasticCtResult result;
    const int k = config.num_sampled_submodels;

    for (int step = 0; step < config.steps; ++step) {
        optimizer.set_learning_rate(warmup_lr(config.learning_rate, config.warmup_steps, step));
        TokenBatch batch = sampler.next();
        joint_step(model, batch, k, selection_rng, optimizer, config.always_include_full);

        const bool last = step + 1 == config.steps;
        if (last || (config.validation_interval > 0 && (step + 1) % config.validation_interval == 0)) {
            auto& points = result.log.points;
            points.push_back({step + 1, "full", mean_eval_loss(model, val, model.full_selection())});
            for (int cand = 1; cand <= model.config.candidates(); ++cand) {
                points.push_back({step + 1, percent_label(model, cand),
                                  mean_eval_loss(model, val, model.uniform_selection(cand))});
            }
            for (int r = 0; r < 2; ++r) {
                Selection sel = sample_selection(probe_rng, model);
                points.push_back({step + 1, "random-" + std::to_string(r), mean_eval_loss(model, val, sel)});
            }
        }
    }
    return result;
}

}  // namespace elastron
