#pragma once

#include <cstdint>
#include <vector>

#include "elastron/autodiff.hpp"

namespace elastron {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// Bias-corrected Adam over an ordered parameter list. Moment buffers are
// keyed by list position and must keep matching shapes across steps.
class Adam {
public:
    explicit Adam(AdamConfig config) : config_(config) {}

    void set_learning_rate(double lr) { config_.learning_rate = lr; }
    double learning_rate() const { return config_.learning_rate; }
    std::int64_t step_count() const { return step_count_; }

    void step(const std::vector<Value>& params);

private:
    AdamConfig config_;
    std::int64_t step_count_ = 0;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
};

}  // namespace elastron
