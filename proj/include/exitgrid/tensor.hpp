#pragma once

// Dense row-major double tensor. The single numeric carrier for frames,
// activations, parameters and gradients throughout the library.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace exitgrid {

// Configuration / shape errors (bad specs, mismatched dimensions).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// API misuse errors (e.g. backward before forward).
struct StateError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// File format / serialization errors.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Numeric failures (non-finite values where finiteness is required).
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(checked_numel(shape_), fill) {}

    static Tensor from_data(std::vector<int> shape, std::vector<double> data) {
        Tensor t;
        if (checked_numel(shape) != data.size()) {
            throw ConfigError("tensor data length " + std::to_string(data.size()) +
                              " does not match shape " + shape_string(shape));
        }
        t.shape_ = std::move(shape);
        t.data_ = std::move(data);
        return t;
    }

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
    size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }

    double& operator[](size_t i) { return data_[i]; }
    double operator[](size_t i) const { return data_[i]; }

    // [C,H,W] indexing
    double& at(int c, int h, int w) {
        return data_[(static_cast<size_t>(c) * shape_[1] + h) * shape_[2] + w];
    }
    double at(int c, int h, int w) const {
        return data_[(static_cast<size_t>(c) * shape_[1] + h) * shape_[2] + w];
    }
    // [O,I] indexing (linear layer weight)
    double& at(int o, int i) { return data_[static_cast<size_t>(o) * shape_[1] + i]; }
    double at(int o, int i) const { return data_[static_cast<size_t>(o) * shape_[1] + i]; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    bool operator==(const Tensor& other) const = default;

    static std::string shape_string(const std::vector<int>& shape) {
        std::ostringstream os;
        os << "[";
        for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
        os << "]";
        return os.str();
    }
    std::string shape_string() const { return shape_string(shape_); }

private:
    static size_t checked_numel(const std::vector<int>& shape) {
        size_t n = 1;
        for (int d : shape) {
            if (d <= 0) throw ConfigError("tensor dimension must be positive, got shape " + shape_string(shape));
            n *= static_cast<size_t>(d);
        }
        return shape.empty() ? 0 : n;
    }

    std::vector<int> shape_;
    std::vector<double> data_;
};

inline void require_finite(const Tensor& t, const char* what) {
    if (!t.all_finite()) throw NumericError(std::string("non-finite values in ") + what);
}

} // namespace exitgrid
