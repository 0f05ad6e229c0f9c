#include "elastron/tensor.hpp"

#include <cmath>
#include <sstream>
#include <utility>

namespace elastron {

namespace {
bool g_finite_checks = false;
}

Tensor::Tensor(std::vector<int> shape_, std::vector<double> data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
        throw TensorError("tensor: shape " + shape_to_string(shape) + " does not match buffer of " +
                          std::to_string(data.size()) + " values");
    }
}

Tensor Tensor::zeros(std::vector<int> shape) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), 0.0));
}

Tensor Tensor::full(std::vector<int> shape, double value) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::row(std::vector<double> values) {
    const int n = static_cast<int>(values.size());
    return Tensor({1, n}, std::move(values));
}

Tensor Tensor::matrix(int rows, int cols, std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
}

std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(data.size()); }

int Tensor::rows() const { return shape.empty() ? 1 : shape.front(); }

int Tensor::cols() const { return shape.empty() ? 1 : shape.back(); }

bool Tensor::same_shape(const Tensor& other) const { return shape == other.shape; }

double& Tensor::at(int i, int j) { return data[static_cast<std::size_t>(i) * cols() + j]; }

double Tensor::at(int i, int j) const { return data[static_cast<std::size_t>(i) * cols() + j]; }

double Tensor::item() const {
    if (data.size() != 1) {
        throw TensorError("tensor: item() on non-scalar of shape " + shape_str());
    }
    return data[0];
}

std::string Tensor::shape_str() const { return shape_to_string(shape); }

std::int64_t shape_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int e : shape) {
        if (e <= 0) {
            throw TensorError("tensor: non-positive extent in shape " + shape_to_string(shape));
        }
        n *= e;
    }
    return n;
}

std::string shape_to_string(const std::vector<int>& shape) {
    std::ostringstream out;
    out << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << "x";
        out << shape[i];
    }
    out << "]";
    return out.str();
}

void set_finite_checks(bool enabled) { g_finite_checks = enabled; }

bool finite_checks_enabled() { return g_finite_checks; }

void check_finite(const Tensor& t, const char* op_name) {
    if (!g_finite_checks) return;
    for (double v : t.data) {
        if (!std::isfinite(v)) {
            throw TensorError(std::string(op_name) + ": non-finite value produced");
        }
    }
}

}  // namespace elastron
