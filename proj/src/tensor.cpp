#include "reflexsplit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include "reflexsplit/common.hpp"

namespace reflexsplit {

std::int64_t Tensor::shape_size(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

Tensor Tensor::uninit(std::vector<int> shape) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.size_ = shape_size(t.shape_);
    // 64-byte alignment keeps Eigen's packet/scalar split identical across
    // allocations, which bit-determinism of repeated forwards relies on.
    constexpr std::align_val_t kAlign{64};
    auto* raw = static_cast<double*>(::operator new[](
        static_cast<std::size_t>(std::max<std::int64_t>(t.size_, 1)) * sizeof(double), kAlign));
    t.data_ = std::shared_ptr<double[]>(
        raw, [](double* p) { ::operator delete[](p, kAlign); });
    return t;
}

Tensor::Tensor(std::vector<int> shape) {
    *this = uninit(std::move(shape));
    std::memset(data_.get(), 0, static_cast<std::size_t>(size_) * sizeof(double));
}

Tensor::Tensor(std::vector<int> shape, double fill_value) {
    *this = uninit(std::move(shape));
    fill(fill_value);
}

Tensor Tensor::uniform(std::vector<int> shape, double lo, double hi, Rng& rng) {
    Tensor t = uninit(std::move(shape));
    for (std::int64_t i = 0; i < t.size_; ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

Tensor Tensor::normal(std::vector<int> shape, double mean, double stddev, Rng& rng) {
    Tensor t = uninit(std::move(shape));
    for (std::int64_t i = 0; i < t.size_; ++i) t[i] = mean + stddev * rng.normal();
    return t;
}

Tensor Tensor::from_values(std::vector<int> shape, std::vector<double> values) {
    if (shape_size(shape) != static_cast<std::int64_t>(values.size())) {
        throw ShapeError("from_values: element count does not match shape " + shape_str(shape));
    }
    Tensor t = uninit(std::move(shape));
    std::memcpy(t.data_.get(), values.data(), values.size() * sizeof(double));
    return t;
}

Tensor Tensor::alias(std::vector<int> shape) const {
    if (shape_size(shape) != size_) {
        throw ShapeError("alias: size mismatch " + shape_str() + " -> " + shape_str(shape));
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.size_ = size_;
    t.data_ = data_;
    return t;
}

Tensor Tensor::clone() const {
    Tensor t = uninit(shape_);
    std::memcpy(t.data_.get(), data_.get(), static_cast<std::size_t>(size_) * sizeof(double));
    return t;
}

void Tensor::fill(double v) { std::fill_n(data_.get(), size_, v); }

double Tensor::sum() const {
    double acc = 0.0;
    for (std::int64_t i = 0; i < size_; ++i) acc += data_.get()[i];
    return acc;
}

double Tensor::mean() const { return size_ == 0 ? 0.0 : sum() / static_cast<double>(size_); }

double Tensor::min() const {
    double m = std::numeric_limits<double>::infinity();
    for (std::int64_t i = 0; i < size_; ++i) m = std::min(m, data_.get()[i]);
    return size_ ? m : 0.0;
}

double Tensor::max() const {
    double m = -std::numeric_limits<double>::infinity();
    for (std::int64_t i = 0; i < size_; ++i) m = std::max(m, data_.get()[i]);
    return size_ ? m : 0.0;
}

double Tensor::abs_max() const {
    double m = 0.0;
    for (std::int64_t i = 0; i < size_; ++i) m = std::max(m, std::abs(data_.get()[i]));
    return m;
}

bool Tensor::all_finite() const {
    for (std::int64_t i = 0; i < size_; ++i) {
        if (!std::isfinite(data_.get()[i])) return false;
    }
    return true;
}

std::string Tensor::shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '{';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << '}';
    return os.str();
}

std::string Tensor::shape_str() const { return shape_str(shape_); }

void require_same_shape(const Tensor& a, const Tensor& b, const char* where) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(where) + ": shape mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
    }
}

} // namespace reflexsplit
