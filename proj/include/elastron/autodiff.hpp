#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "elastron/tensor.hpp"

namespace elastron {

class Node;
using Value = std::shared_ptr<Node>;

// One tape entry. The graph is rebuilt per forward pass; parameters are
// long-lived leaves whose grad accumulates across backward calls until
// zero_grad().
class Node {
public:
    Tensor value;
    Tensor grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::vector<Value> parents;
    std::function<void()> backward_fn;

    double* grad_data();  // zero-filled on first use
    bool has_grad() const { return !grad.data.empty(); }
    void zero_grad();
};

Value constant(Tensor t);
Value parameter(Tensor t);

// Toggle gradient tracking on an existing leaf (freeze/unfreeze).
void set_requires_grad(const Value& v, bool enabled);

// While alive, newly built nodes never track gradients (evaluation mode).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

// Core ops. All 2D unless noted; backward accumulates into parents.
Value matmul(const Value& a, const Value& b);    // [m x k]·[k x n]
Value linear(const Value& x, const Value& w);    // x·wᵀ: [n x c], [d x c] -> [n x d]
Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value scale(const Value& a, double s);
Value add_rows_broadcast(const Value& x, const Value& bias);  // bias [1 x d]
Value gelu(const Value& x);
Value relu(const Value& x);
Value softmax_rows(const Value& x);
Value layer_norm(const Value& x, const Value& gain, const Value& bias, double eps);
Value cross_entropy(const Value& logits, const std::vector<int>& targets);  // mean over rows
Value causal_attention(const Value& q, const Value& k, const Value& v, int batch, int seq, int head_dim);
Value slice_rows(const Value& x, int count);
Value gather_rows(const Value& table, const std::vector<int>& indices);
Value concat_cols(const std::vector<Value>& pieces);  // [1 x k_i] -> [1 x sum k_i]
Value sum_all(const Value& x);
Value mean_all(const Value& x);
Value group_mean_rows(const Value& x, int group);  // [g*m x c] -> [m x c]
Value select_element(const Value& x, int flat_index);
Value mul_scalar_value(const Value& x, const Value& s);  // s single-element
Value stop_grad(const Value& x);

// Reverse pass from a single-element root; seeds d(root)=1.
void backward(const Value& root);

}  // namespace elastron
