#include "elastron/optim.hpp"

#include <cmath>
#include <string>

namespace elastron {

void Adam::step(const std::vector<Value>& params) {
    if (m_.empty()) {
        m_.reserve(params.size());
        v_.reserve(params.size());
        for (const auto& p : params) {
            m_.push_back(Tensor::zeros(p->value.shape));
            v_.push_back(Tensor::zeros(p->value.shape));
        }
    }
    if (params.size() != m_.size()) {
        throw TensorError("adam: parameter list size changed from " + std::to_string(m_.size()) + " to " +
                          std::to_string(params.size()));
    }
    ++step_count_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_count_));
    for (std::size_t idx = 0; idx < params.size(); ++idx) {
        Node* p = params[idx].get();
        if (!p->value.same_shape(m_[idx])) {
            throw TensorError("adam: parameter " + std::to_string(idx) + " shape changed to " +
                              p->value.shape_str());
        }
        if (!p->has_grad()) continue;  // zero gradient: moments and value untouched
        double* pm = m_[idx].data.data();
        double* pv = v_[idx].data.data();
        double* pd = p->value.data.data();
        const double* pg = p->grad.data.data();
        const std::size_t n = p->value.data.size();
        for (std::size_t i = 0; i < n; ++i) {
            pm[i] = config_.beta1 * pm[i] + (1.0 - config_.beta1) * pg[i];
            pv[i] = config_.beta2 * pv[i] + (1.0 - config_.beta2) * pg[i] * pg[i];
            const double mhat = pm[i] / bc1;
            const double vhat = pv[i] / bc2;
            pd[i] -= config_.learning_rate * mhat / (std::sqrt(vhat) + config_.epsilon);
        }
        check_finite(p->value, "adam");
    }
}

}  // namespace elastron
