#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace elastron {

// Dense row-major tensor of 64-bit floats. Value semantics; no implicit
// gradient participation (see autodiff.hpp for the tape layer).
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<int> shape_, std::vector<double> data_);

    static Tensor zeros(std::vector<int> shape);
    static Tensor full(std::vector<int> shape, double value);
    static Tensor scalar(double value);
    static Tensor row(std::vector<double> values);               // [1 x n]
    static Tensor matrix(int rows, int cols, std::vector<double> values);

    std::int64_t numel() const;
    int rows() const;  // first extent
    int cols() const;  // last extent
    bool same_shape(const Tensor& other) const;

    double& at(int i, int j);
    double at(int i, int j) const;
    double item() const;  // single-element tensors only

    std::string shape_str() const;
};

std::int64_t shape_numel(const std::vector<int>& shape);
std::string shape_to_string(const std::vector<int>& shape);

// Finite-value checks after published ops. Enabled in tests, off by default
// in the training profile.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();
void check_finite(const Tensor& t, const char* op_name);

// Raised on any published-op precondition violation.
struct TensorError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace elastron
