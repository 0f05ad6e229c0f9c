#include "elastron/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>
#include <unordered_set>
#include <utility>

namespace elastron {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

thread_local bool g_grad_enabled = true;

// Builds the tape node for an op. The backward closure is created only when
// some parent participates in gradients; otherwise parents are released so
// intermediates free eagerly during no-grad evaluation.
template <typename F>
Value finish(Tensor value, std::vector<Value> parents, const char* op_name, F&& make_backward) {
    check_finite(value, op_name);
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    bool needs = false;
    if (g_grad_enabled) {
        for (const auto& p : parents) {
            if (p->requires_grad) {
                needs = true;
                break;
            }
        }
    }
    node->requires_grad = needs;
    if (needs) {
        node->parents = std::move(parents);
        node->backward_fn = make_backward(node.get());
    }
    return node;
}

void require(bool cond, const std::string& msg) {
    if (!cond) throw TensorError(msg);
}

}  // namespace

double* Node::grad_data() {
    if (grad.data.empty()) {
        grad.shape = value.shape;
        grad.data.assign(value.data.size(), 0.0);
    }
    return grad.data.data();
}

void Node::zero_grad() {
    if (!grad.data.empty()) std::fill(grad.data.begin(), grad.data.end(), 0.0);
}

Value constant(Tensor t) {
    auto node = std::make_shared<Node>();
    node->value = std::move(t);
    node->requires_grad = false;
    return node;
}

Value parameter(Tensor t) {
    auto node = std::make_shared<Node>();
    node->value = std::move(t);
    node->requires_grad = true;
    return node;
}

void set_requires_grad(const Value& v, bool enabled) { v->requires_grad = enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

Value matmul(const Value& a, const Value& b) {
    require(a->value.shape.size() == 2 && b->value.shape.size() == 2, "matmul: operands must be 2-D");
    const int m = a->value.shape[0], k = a->value.shape[1];
    const int k2 = b->value.shape[0], n = b->value.shape[1];
    require(k == k2, "matmul: inner dimensions disagree " + a->value.shape_str() + " vs " + b->value.shape_str());

    Tensor out = Tensor::zeros({m, n});
    const double* ad = a->value.data.data();
    const double* bd = b->value.data.data();
    double* od = out.data.data();
    for (int i = 0; i < m; ++i) {
        const double* ai = ad + static_cast<std::size_t>(i) * k;
        double* oi = od + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = ai[p];
            if (av == 0.0) continue;
            const double* bp = bd + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) oi[j] += av * bp[j];
        }
    }
    return finish(std::move(out), {a, b}, "matmul", [m, k, n](Node* self) {
        return std::function<void()>([self, m, k, n]() {
            Node* pa = self->parents[0].get();
            Node* pb = self->parents[1].get();
            const double* g = self->grad.data.data();
            if (pa->requires_grad) {
                double* da = pa->grad_data();
                const double* bd = pb->value.data.data();
                for (int i = 0; i < m; ++i) {
                    const double* gi = g + static_cast<std::size_t>(i) * n;
                    double* dai = da + static_cast<std::size_t>(i) * k;
                    for (int p = 0; p < k; ++p) {
                        const double* bp = bd + static_cast<std::size_t>(p) * n;
                        double acc = 0.0;
                        for (int j = 0; j < n; ++j) acc += gi[j] * bp[j];
                        dai[p] += acc;
                    }
                }
            }
            if (pb->requires_grad) {
                double* db = pb->grad_data();
                const double* ad = pa->value.data.data();
                for (int i = 0; i < m; ++i) {
                    const double* gi = g + static_cast<std::size_t>(i) * n;
                    const double* ai = ad + static_cast<std::size_t>(i) * k;
                    for (int p = 0; p < k; ++p) {
                        const double av = ai[p];
                        if (av == 0.0) continue;
                        double* dbp = db + static_cast<std::size_t>(p) * n;
                        for (int j = 0; j < n; ++j) dbp[j] += av * gi[j];
                    }
                }
            }
        });
    });
}

Value linear(const Value& x, const Value& w) {
    require(x->value.shape.size() == 2 && w->value.shape.size() == 2, "linear: operands must be 2-D");
    const int n = x->value.shape[0], c = x->value.shape[1];
    const int d = w->value.shape[0];
    require(w->value.shape[1] == c, "linear: feature dims disagree " + x->value.shape_str() + " vs " + w->value.shape_str());

    Tensor out = Tensor::zeros({n, d});
    const double* xd = x->value.data.data();
    const double* wd = w->value.data.data();
    double* od = out.data.data();
    for (int i = 0; i < n; ++i) {
        const double* xi = xd + static_cast<std::size_t>(i) * c;
        double* oi = od + static_cast<std::size_t>(i) * d;
        for (int j = 0; j < d; ++j) {
            const double* wj = wd + static_cast<std::size_t>(j) * c;
            double acc = 0.0;
            for (int p = 0; p < c; ++p) acc += xi[p] * wj[p];
            oi[j] = acc;
        }
    }
    return finish(std::move(out), {x, w}, "linear", [n, c, d](Node* self) {
        return std::function<void()>([self, n, c, d]() {
            Node* px = self->parents[0].get();
            Node* pw = self->parents[1].get();
            const double* g = self->grad.data.data();
            if (px->requires_grad) {
                double* dx = px->grad_data();
                const double* wd = pw->value.data.data();
                for (int i = 0; i < n; ++i) {
                    const double* gi = g + static_cast<std::size_t>(i) * d;
                    double* dxi = dx + static_cast<std::size_t>(i) * c;
                    for (int j = 0; j < d; ++j) {
                        const double gv = gi[j];
                        if (gv == 0.0) continue;
                        const double* wj = wd + static_cast<std::size_t>(j) * c;
                        for (int p = 0; p < c; ++p) dxi[p] += gv * wj[p];
                    }
                }
            }
            if (pw->requires_grad) {
                double* dw = pw->grad_data();
                const double* xd = px->value.data.data();
                for (int i = 0; i < n; ++i) {
                    const double* gi = g + static_cast<std::size_t>(i) * d;
                    const double* xi = xd + static_cast<std::size_t>(i) * c;
                    for (int j = 0; j < d; ++j) {
                        const double gv = gi[j];
                        if (gv == 0.0) continue;
                        double* dwj = dw + static_cast<std::size_t>(j) * c;
                        for (int p = 0; p < c; ++p) dwj[p] += gv * xi[p];
                    }
                }
            }
        });
    });
}

namespace {

template <typename FwdFn, typename BwdFn>
Value elementwise_binary(const Value& a, const Value& b, const char* name, FwdFn fwd, BwdFn bwd) {
    require(a->value.same_shape(b->value),
            std::string(name) + ": shape mismatch " + a->value.shape_str() + " vs " + b->value.shape_str());
    Tensor out = Tensor::zeros(a->value.shape);
    const std::size_t n = out.data.size();
    for (std::size_t i = 0; i < n; ++i) out.data[i] = fwd(a->value.data[i], b->value.data[i]);
    return finish(std::move(out), {a, b}, name, [n, bwd](Node* self) {
        return std::function<void()>([self, n, bwd]() {
            Node* pa = self->parents[0].get();
            Node* pb = self->parents[1].get();
            const double* g = self->grad.data.data();
            double* da = pa->requires_grad ? pa->grad_data() : nullptr;
            double* db = pb->requires_grad ? pb->grad_data() : nullptr;
            for (std::size_t i = 0; i < n; ++i) {
                bwd(g[i], pa->value.data[i], pb->value.data[i], da ? da + i : nullptr, db ? db + i : nullptr);
            }
        });
    });
}

}  // namespace

Value add(const Value& a, const Value& b) {
    return elementwise_binary(
        a, b, "add", [](double x, double y) { return x + y; },
        [](double g, double, double, double* da, double* db) {
            if (da) *da += g;
            if (db) *db += g;
        });
}

Value sub(const Value& a, const Value& b) {
    return elementwise_binary(
        a, b, "sub", [](double x, double y) { return x - y; },
        [](double g, double, double, double* da, double* db) {
            if (da) *da += g;
            if (db) *db -= g;
        });
}

Value mul(const Value& a, const Value& b) {
    return elementwise_binary(
        a, b, "mul", [](double x, double y) { return x * y; },
        [](double g, double x, double y, double* da, double* db) {
            if (da) *da += g * y;
            if (db) *db += g * x;
        });
}

Value scale(const Value& a, double s) {
    Tensor out = a->value;
    for (double& v : out.data) v *= s;
    return finish(std::move(out), {a}, "scale", [s](Node* self) {
        return std::function<void()>([self, s]() {
            Node* pa = self->parents[0].get();
            if (!pa->requires_grad) return;
            double* da = pa->grad_data();
            const double* g = self->grad.data.data();
            const std::size_t n = self->value.data.size();
            for (std::size_t i = 0; i < n; ++i) da[i] += g[i] * s;
        });
    });
}

Value add_rows_broadcast(const Value& x, const Value& bias) {
    const int n = x->value.rows(), d = x->value.cols();
    require(static_cast<std::int64_t>(d) == bias->value.numel(),
            "add_rows_broadcast: bias length " + std::to_string(bias->value.numel()) + " vs row width " +
                std::to_string(d));
    Tensor out = x->value;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) out.data[static_cast<std::size_t>(i) * d + j] += bias->value.data[j];
    }
    return finish(std::move(out), {x, bias}, "add_rows_broadcast", [n, d](Node* self) {
        return std::function<void()>([self, n, d]() {
            Node* px = self->parents[0].get();
            Node* pb = self->parents[1].get();
            const double* g = self->grad.data.data();
            if (px->requires_grad) {
                double* dx = px->grad_data();
                const std::size_t total = static_cast<std::size_t>(n) * d;
                for (std::size_t i = 0; i < total; ++i) dx[i] += g[i];
            }
            if (pb->requires_grad) {
                double* db = pb->grad_data();
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < d; ++j) db[j] += g[static_cast<std::size_t>(i) * d + j];
            }
        });
    });
}

Value gelu(const Value& x) {
    Tensor out = Tensor::zeros(x->value.shape);
    const std::size_t n = out.data.size();
    for (std::size_t i = 0; i < n; ++i) {
        const double v = x->value.data[i];
        out.data[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
    }
    return finish(std::move(out), {x}, "gelu", [n](Node* self) {
        return std::function<void()>([self, n]() {
            Node* px = self->parents[0].get();
            if (!px->requires_grad) return;
            double* dx = px->grad_data();
            const double* g = self->grad.data.data();
            for (std::size_t i = 0; i < n; ++i) {
                const double v = px->value.data[i];
                const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
                const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                dx[i] += g[i] * (cdf + v * pdf);
            }
        });
    });
}

Value relu(const Value& x) {
    Tensor out = Tensor::zeros(x->value.shape);
    const std::size_t n = out.data.size();
    for (std::size_t i = 0; i < n; ++i) out.data[i] = x->value.data[i] > 0.0 ? x->value.data[i] : 0.0;
    return finish(std::move(out), {x}, "relu", [n](Node* self) {
        return std::function<void()>([self, n]() {
            Node* px = self->parents[0].get();
            if (!px->requires_grad) return;
            double* dx = px->grad_data();
            const double* g = self->grad.data.data();
            for (std::size_t i = 0; i < n; ++i) {
                if (px->value.data[i] > 0.0) dx[i] += g[i];
            }
        });
    });
}

Value softmax_rows(const Value& x) {
    const int n = x->value.rows(), d = x->value.cols();
    Tensor out = Tensor::zeros(x->value.shape);
    for (int i = 0; i < n; ++i) {
        const double* xi = x->value.data.data() + static_cast<std::size_t>(i) * d;
        double* oi = out.data.data() + static_cast<std::size_t>(i) * d;
        double mx = xi[0];
        for (int j = 1; j < d; ++j) mx = std::max(mx, xi[j]);
        double sum = 0.0;
        for (int j = 0; j < d; ++j) {
            oi[j] = std::exp(xi[j] - mx);
            sum += oi[j];
        }
        const double inv = 1.0 / sum;
        for (int j = 0; j < d; ++j) oi[j] *= inv;
    }
    return finish(std::move(out), {x}, "softmax", [n, d](Node* self) {
        return std::function<void()>([self, n, d]() {
            Node* px = self->parents[0].get();
            if (!px->requires_grad) return;
            double* dx = px->grad_data();
            const double* g = self->grad.data.data();
            const double* y = self->value.data.data();
            for (int i = 0; i < n; ++i) {
                const std::size_t off = static_cast<std::size_t>(i) * d;
                double dot = 0.0;
                for (int j = 0; j < d; ++j) dot += g[off + j] * y[off + j];
                for (int j = 0; j < d; ++j) dx[off + j] += y[off + j] * (g[off + j] - dot);
            }
        });
    });
}

Value layer_norm(const Value& x, const Value& gain, const Value& bias, double eps) {
    require(eps > 0.0, "layer_norm: eps must be positive");
    const int n = x->value.rows(), c = x->value.cols();
    require(gain->value.numel() == c && bias->value.numel() == c,
            "layer_norm: gain/bias length must match last extent " + std::to_string(c));

    Tensor out = Tensor::zeros(x->value.shape);
    auto normalized = std::make_shared<Tensor>(Tensor::zeros(x->value.shape));
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
        const double* xi = x->value.data.data() + static_cast<std::size_t>(i) * c;
        double mean = 0.0;
        for (int j = 0; j < c; ++j) mean += xi[j];
        mean /= c;
        double var = 0.0;
        for (int j = 0; j < c; ++j) {
            const double dvj = xi[j] - mean;
            var += dvj * dvj;
        }
        var /= c;
        const double inv = 1.0 / std::sqrt(var + eps);
        (*inv_std)[static_cast<std::size_t>(i)] = inv;
        double* ni = normalized->data.data() + static_cast<std::size_t>(i) * c;
        double* oi = out.data.data() + static_cast<std::size_t>(i) * c;
        for (int j = 0; j < c; ++j) {
            ni[j] = (xi[j] - mean) * inv;
            oi[j] = ni[j] * gain->value.data[j] + bias->value.data[j];
        }
    }
    return finish(std::move(out), {x, gain, bias}, "layer_norm", [n, c, normalized, inv_std](Node* self) {
        return std::function<void()>([self, n, c, normalized, inv_std]() {
            Node* px = self->parents[0].get();
            Node* pg = self->parents[1].get();
            Node* pb = self->parents[2].get();
            const double* g = self->grad.data.data();
            const double* nm = normalized->data.data();
            if (pg->requires_grad || pb->requires_grad) {
                double* dg = pg->requires_grad ? pg->grad_data() : nullptr;
                double* db = pb->requires_grad ? pb->grad_data() : nullptr;
                for (int i = 0; i < n; ++i) {
                    const std::size_t off = static_cast<std::size_t>(i) * c;
                    for (int j = 0; j < c; ++j) {
                        if (dg) dg[j] += g[off + j] * nm[off + j];
                        if (db) db[j] += g[off + j];
                    }
                }
            }
            if (px->requires_grad) {
                double* dx = px->grad_data();
                const double* gainv = pg->value.data.data();
                for (int i = 0; i < n; ++i) {
                    const std::size_t off = static_cast<std::size_t>(i) * c;
                    double mean_dn = 0.0, mean_dn_n = 0.0;
                    for (int j = 0; j < c; ++j) {
                        const double dn = g[off + j] * gainv[j];
                        mean_dn += dn;
                        mean_dn_n += dn * nm[off + j];
                    }
                    mean_dn /= c;
                    mean_dn_n /= c;
                    const double inv = (*inv_std)[static_cast<std::size_t>(i)];
                    for (int j = 0; j < c; ++j) {
                        const double dn = g[off + j] * gainv[j];
                        dx[off + j] += inv * (dn - mean_dn - nm[off + j] * mean_dn_n);
                    }
                }
            }
        });
    });
}

Value cross_entropy(const Value& logits, const std::vector<int>& targets) {
    const int b = logits->value.rows(), v = logits->value.cols();
    require(static_cast<int>(targets.size()) == b,
            "cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(b) + " rows");
    for (int t : targets) {
        require(t >= 0 && t < v, "cross_entropy: target index " + std::to_string(t) + " out of range [0," +
                                     std::to_string(v) + ")");
    }
    auto probs = std::make_shared<Tensor>(Tensor::zeros(logits->value.shape));
    double loss = 0.0;
    for (int i = 0; i < b; ++i) {
        const double* li = logits->value.data.data() + static_cast<std::size_t>(i) * v;
        double* pi = probs->data.data() + static_cast<std::size_t>(i) * v;
        double mx = li[0];
        for (int j = 1; j < v; ++j) mx = std::max(mx, li[j]);
        double sum = 0.0;
        for (int j = 0; j < v; ++j) {
            pi[j] = std::exp(li[j] - mx);
            sum += pi[j];
        }
        const double inv = 1.0 / sum;
        for (int j = 0; j < v; ++j) pi[j] *= inv;
        loss -= li[targets[static_cast<std::size_t>(i)]] - mx - std::log(sum);
    }
    loss /= b;
    auto tgt = std::make_shared<std::vector<int>>(targets);
    return finish(Tensor::scalar(loss), {logits}, "cross_entropy", [b, v, probs, tgt](Node* self) {
        return std::function<void()>([self, b, v, probs, tgt]() {
            Node* pl = self->parents[0].get();
            if (!pl->requires_grad) return;
            double* dl = pl->grad_data();
            const double g = self->grad.data[0] / b;
            const double* p = probs->data.data();
            for (int i = 0; i < b; ++i) {
                const std::size_t off = static_cast<std::size_t>(i) * v;
                for (int j = 0; j < v; ++j) dl[off + j] += g * p[off + j];
                dl[off + (*tgt)[static_cast<std::size_t>(i)]] -= g;
            }
        });
    });
}

Value causal_attention(const Value& q, const Value& k, const Value& v, int batch, int seq, int head_dim) {
    require(q->value.same_shape(k->value) && q->value.same_shape(v->value),
            "attention: q/k/v shapes must agree");
    const int rows = q->value.rows(), width = q->value.cols();
    require(rows == batch * seq, "attention: rows must equal batch*seq");
    require(width % head_dim == 0, "attention: width not a multiple of head_dim");
    const int heads = width / head_dim;
    const double alpha = 1.0 / std::sqrt(static_cast<double>(head_dim));

    Tensor out = Tensor::zeros(q->value.shape);
    auto probs = std::make_shared<std::vector<double>>(
        static_cast<std::size_t>(batch) * heads * seq * seq, 0.0);
    const double* qd = q->value.data.data();
    const double* kd = k->value.data.data();
    const double* vd = v->value.data.data();
    double* od = out.data.data();
    for (int bi = 0; bi < batch; ++bi) {
        for (int h = 0; h < heads; ++h) {
            const std::size_t base = static_cast<std::size_t>(bi) * seq * width + static_cast<std::size_t>(h) * head_dim;
            double* pr = probs->data() + (static_cast<std::size_t>(bi) * heads + h) * seq * seq;
            for (int i = 0; i < seq; ++i) {
                const double* qi = qd + base + static_cast<std::size_t>(i) * width;
                double* pi = pr + static_cast<std::size_t>(i) * seq;
                double mx = -1e300;
                for (int j = 0; j <= i; ++j) {
                    const double* kj = kd + base + static_cast<std::size_t>(j) * width;
                    double s = 0.0;
                    for (int p = 0; p < head_dim; ++p) s += qi[p] * kj[p];
                    pi[j] = s * alpha;
                    mx = std::max(mx, pi[j]);
                }
                double sum = 0.0;
                for (int j = 0; j <= i; ++j) {
                    pi[j] = std::exp(pi[j] - mx);
                    sum += pi[j];
                }
                const double inv = 1.0 / sum;
                double* oi = od + base + static_cast<std::size_t>(i) * width;
                for (int j = 0; j <= i; ++j) {
                    pi[j] *= inv;
                    const double* vj = vd + base + static_cast<std::size_t>(j) * width;
                    const double w = pi[j];
                    for (int p = 0; p < head_dim; ++p) oi[p] += w * vj[p];
                }
            }
        }
    }
    return finish(std::move(out), {q, k, v}, "attention",
                  [batch, seq, head_dim, heads, alpha, probs](Node* self) {
        const int width = heads * head_dim;
        return std::function<void()>([self, batch, seq, head_dim, heads, alpha, width, probs]() {
            Node* pq = self->parents[0].get();
            Node* pk = self->parents[1].get();
            Node* pv = self->parents[2].get();
            const double* g = self->grad.data.data();
            double* dq = pq->requires_grad ? pq->grad_data() : nullptr;
            double* dk = pk->requires_grad ? pk->grad_data() : nullptr;
            double* dv = pv->requires_grad ? pv->grad_data() : nullptr;
            const double* qd = pq->value.data.data();
            const double* kd = pk->value.data.data();
            const double* vd = pv->value.data.data();
            std::vector<double> dscore(static_cast<std::size_t>(seq), 0.0);
            for (int bi = 0; bi < batch; ++bi) {
                for (int h = 0; h < heads; ++h) {
                    const std::size_t base =
                        static_cast<std::size_t>(bi) * seq * width + static_cast<std::size_t>(h) * head_dim;
                    const double* pr = probs->data() + (static_cast<std::size_t>(bi) * heads + h) * seq * seq;
                    for (int i = 0; i < seq; ++i) {
                        const double* gi = g + base + static_cast<std::size_t>(i) * width;
                        const double* pi = pr + static_cast<std::size_t>(i) * seq;
                        // dP and the softmax Jacobian, row i over keys j<=i.
                        double dot = 0.0;
                        for (int j = 0; j <= i; ++j) {
                            const double* vj = vd + base + static_cast<std::size_t>(j) * width;
                            double dp = 0.0;
                            for (int p = 0; p < head_dim; ++p) dp += gi[p] * vj[p];
                            dscore[static_cast<std::size_t>(j)] = dp;
                            dot += dp * pi[j];
                        }
                        for (int j = 0; j <= i; ++j) {
                            const double ds = pi[j] * (dscore[static_cast<std::size_t>(j)] - dot) * alpha;
                            dscore[static_cast<std::size_t>(j)] = ds;
                        }
                        const double* qi = qd + base + static_cast<std::size_t>(i) * width;
                        for (int j = 0; j <= i; ++j) {
                            const double* kj = kd + base + static_cast<std::size_t>(j) * width;
                            const double* vj = vd + base + static_cast<std::size_t>(j) * width;
                            const double ds = dscore[static_cast<std::size_t>(j)];
                            const double pij = pi[j];
                            if (dq) {
                                double* dqi = dq + base + static_cast<std::size_t>(i) * width;
                                for (int p = 0; p < head_dim; ++p) dqi[p] += ds * kj[p];
                            }
                            if (dk) {
                                double* dkj = dk + base + static_cast<std::size_t>(j) * width;
                                for (int p = 0; p < head_dim; ++p) dkj[p] += ds * qi[p];
                            }
                            if (dv) {
                                double* dvj = dv + base + static_cast<std::size_t>(j) * width;
                                for (int p = 0; p < head_dim; ++p) dvj[p] += pij * gi[p];
                            }
                        }
                    }
                }
            }
        });
    });
}

Value slice_rows(const Value& x, int count) {
    const int n = x->value.rows(), c = x->value.cols();
    require(count >= 1 && count <= n,
            "slice_rows: count " + std::to_string(count) + " out of range for " + x->value.shape_str());
    Tensor out({count, c}, std::vector<double>(x->value.data.begin(),
                                               x->value.data.begin() + static_cast<std::size_t>(count) * c));
    return finish(std::move(out), {x}, "slice_rows", [count, c](Node* self) {
        return std::function<void()>([self, count, c]() {
            Node* px = self->parents[0].get();
            if (!px->requires_grad) return;
            double* dx = px->grad_data();
            const double* g = self->grad.data.data();
            const std::size_t total = static_cast<std::size_t>(count) * c;
            for (std::size_t i = 0; i < total; ++i) dx[i] += g[i];
        });
    });
}

Value gather_rows(const Value& table, const std::vector<int>& indices) {
    const int rows = table->value.rows(), c = table->value.cols();
    const int n = static_cast<int>(indices.size());
    Tensor out = Tensor::zeros({n, c});
    for (int i = 0; i < n; ++i) {
        const int idx = indices[static_cast<std::size_t>(i)];
        require(idx >= 0 && idx < rows,
                "gather_rows: index " + std::to_string(idx) + " out of range [0," + std::to_string(rows) + ")");
        std::memcpy(out.data.data() + static_cast<std::size_t>(i) * c,
                    table->value.data.data() + static_cast<std::size_t>(idx) * c, sizeof(double) * c);
    }
    auto idxs = std::make_shared<std::vector<int>>(indices);
    return finish(std::move(out), {table}, "gather_rows", [n, c, idxs](Node* self) {
        return std::function<void()>([self, n, c, idxs]() {
            Node* pt = self->parents[0].get();
            if (!pt->requires_grad) return;
            double* dt = pt->grad_data();
            const double* g = self->grad.data.data();
            for (int i = 0; i < n; ++i) {
                double* row = dt + static_cast<std::size_t>((*idxs)[static_cast<std::size_t>(i)]) * c;
                const double* gi = g + static_cast<std::size_t>(i) * c;
                for (int j = 0; j < c; ++j) row[j] += gi[j];
            }
        });
    });
}

Value concat_cols(const std::vector<Value>& pieces) {
    require(!pieces.empty(), "concat_cols: no inputs");
    int total = 0;
    for (const auto& p : pieces) {
        require(p->value.rows() == 1, "concat_cols: expects row vectors");
        total += p->value.cols();
    }
    Tensor out = Tensor::zeros({1, total});
    int off = 0;
    std::vector<int> offsets;
    offsets.reserve(pieces.size());
    for (const auto& p : pieces) {
        offsets.push_back(off);
        std::memcpy(out.data.data() + off, p->value.data.data(), sizeof(double) * p->value.data.size());
        off += p->value.cols();
    }
    auto offs = std::make_shared<std::vector<int>>(std::move(offsets));
    return finish(std::move(out), pieces, "concat_cols", [offs](Node* self) {
        return std::function<void()>([self, offs]() {
            const double* g = self->grad.data.data();
            for (std::size_t i = 0; i < self->parents.size(); ++i) {
                Node* p = self->parents[i].get();
                if (!p->requires_grad) continue;
                double* dp = p->grad_data();
                const int w = p->value.cols();
                const int off = (*offs)[i];
                for (int j = 0; j < w; ++j) dp[j] += g[off + j];
            }
        });
    });
}

Value sum_all(const Value& x) {
    double s = 0.0;
    for (double v : x->value.data) s += v;
    return finish(Tensor::scalar(s), {x}, "sum_all", [](Node* self) {
        return std::function<void()>([self]() {
            Node* px = self->parents[0].get();
            if (!px->requires_grad) return;
            double* dx = px->grad_data();
            const double g = self->grad.data[0];
            const std::size_t n = px->value.data.size();
            for (std::size_t i = 0; i < n; ++i) dx[i] += g;
        });
    });
}

Value mean_all(const Value& x) { return scale(sum_all(x), 1.0 / static_cast<double>(x->value.numel())); }

Value group_mean_rows(const Value& x, int group) {
    const int n = x->value.rows(), c = x->value.cols();
    require(group >= 1 && n % group == 0, "group_mean_rows: rows not divisible by group");
    const int m = n / group;
    Tensor out = Tensor::zeros({m, c});
    const double inv = 1.0 / group;
    for (int r = 0; r < m; ++r) {
        double* orow = out.data.data() + static_cast<std::size_t>(r) * c;
        for (int k = 0; k < group; ++k) {
            const double* xi = x->value.data.data() + (static_cast<std::size_t>(r) * group + k) * c;
            for (int j = 0; j < c; ++j) orow[j] += xi[j] * inv;
        }
    }
    return finish(std::move(out), {x}, "group_mean_rows", [m, c, group, inv](Node* self) {
        return std::function<void()>([self, m, c, group, inv]() {
            Node* px = self->parents[0].get();
            if (!px->requires_grad) return;
            double* dx = px->grad_data();
            const double* g = self->grad.data.data();
            for (int r = 0; r < m; ++r) {
                const double* grow = g + static_cast<std::size_t>(r) * c;
                for (int k = 0; k < group; ++k) {
                    double* xrow = dx + (static_cast<std::size_t>(r) * group + k) * c;
                    for (int j = 0; j < c; ++j) xrow[j] += grow[j] * inv;
                }
            }
        });
    });
}

Value select_element(const Value& x, int flat_index) {
    require(flat_index >= 0 && flat_index < x->value.numel(),
            "select_element: index " + std::to_string(flat_index) + " out of range");
    return finish(Tensor::scalar(x->value.data[static_cast<std::size_t>(flat_index)]), {x}, "select_element",
                  [flat_index](Node* self) {
                      return std::function<void()>([self, flat_index]() {
                          Node* px = self->parents[0].get();
                          if (!px->requires_grad) return;
                          px->grad_data()[flat_index] += self->grad.data[0];
                      });
                  });
}

Value mul_scalar_value(const Value& x, const Value& s) {
    require(s->value.numel() == 1, "mul_scalar_value: scale must be single-element");
    const double sv = s->value.data[0];
    Tensor out = x->value;
    for (double& v : out.data) v *= sv;
    return finish(std::move(out), {x, s}, "mul_scalar_value", [sv](Node* self) {
        return std::function<void()>([self, sv]() {
            Node* px = self->parents[0].get();
            Node* ps = self->parents[1].get();
            const double* g = self->grad.data.data();
            const std::size_t n = px->value.data.size();
            if (px->requires_grad) {
                double* dx = px->grad_data();
                for (std::size_t i = 0; i < n; ++i) dx[i] += g[i] * sv;
            }
            if (ps->requires_grad) {
                double acc = 0.0;
                for (std::size_t i = 0; i < n; ++i) acc += g[i] * px->value.data[i];
                ps->grad_data()[0] += acc;
            }
        });
    });
}

Value stop_grad(const Value& x) { return constant(x->value); }

void backward(const Value& root) {
    require(root->value.numel() == 1, "backward: root must be single-element, got " + root->value.shape_str());
    if (!root->requires_grad) return;

    // Reverse post-order DFS gives consumers-before-producers.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next].get();
            ++next;
            if (parent->requires_grad && !visited.count(parent)) {
                visited.insert(parent);
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->grad_data()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn();
    }
}

}  // namespace elastron
