#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "reflexsplit/rng.hpp"

namespace reflexsplit {

// Dense row-major tensor of doubles. Feature maps use {H, W, C} layout,
// token blocks {B, N, C}, vectors {N}. Storage is shared on copy
// (copy-on-nothing: tensors are written only while being produced), which
// makes reshapes free. All arithmetic-heavy paths live in the autodiff
// ops; this type is storage plus a few scalar conveniences.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);            // zero-initialized
    Tensor(std::vector<int> shape, double fill);

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int> shape, double v) { return Tensor(std::move(shape), v); }
    // Uninitialized storage for outputs where every element gets written.
    static Tensor uninit(std::vector<int> shape);
    static Tensor uniform(std::vector<int> shape, double lo, double hi, Rng& rng);
    static Tensor normal(std::vector<int> shape, double mean, double stddev, Rng& rng);
    static Tensor from_values(std::vector<int> shape, std::vector<double> values);

    // Same buffer, new shape (element counts must agree).
    Tensor alias(std::vector<int> shape) const;
    // Deep copy with its own buffer.
    Tensor clone() const;

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    std::int64_t size() const { return size_; }
    bool empty() const { return size_ == 0; }

    double* data() { return data_.get(); }
    const double* data() const { return data_.get(); }

    double& operator[](std::int64_t i) { return data_.get()[i]; }
    double operator[](std::int64_t i) const { return data_.get()[i]; }

    double& at(int i) { return data_.get()[i]; }
    double& at(int i, int j) { return data_.get()[static_cast<std::int64_t>(i) * shape_[1] + j]; }
    double& at(int i, int j, int k) {
        return data_.get()[(static_cast<std::int64_t>(i) * shape_[1] + j) * shape_[2] + k];
    }
    double at(int i) const { return data_.get()[i]; }
    double at(int i, int j) const {
        return data_.get()[static_cast<std::int64_t>(i) * shape_[1] + j];
    }
    double at(int i, int j, int k) const {
        return data_.get()[(static_cast<std::int64_t>(i) * shape_[1] + j) * shape_[2] + k];
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    void fill(double v);
    double sum() const;
    double mean() const;
    double min() const;
    double max() const;
    double abs_max() const;
    bool all_finite() const;

    std::string shape_str() const;
    static std::string shape_str(const std::vector<int>& shape);
    static std::int64_t shape_size(const std::vector<int>& shape);

private:
    std::vector<int> shape_;
    std::shared_ptr<double[]> data_;
    std::int64_t size_ = 0;
};

// Throws ShapeError with a contextual message when shapes differ.
void require_same_shape(const Tensor& a, const Tensor& b, const char* where);

} // namespace reflexsplit
