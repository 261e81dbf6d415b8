#include "ldreg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ldreg/errors.hpp"

namespace ldreg {

int64_t shape_numel(const std::vector<int64_t> &shape) {
    int64_t n = 1;
    for (const int64_t d : shape) {
        if (d <= 0)
            throw ValidationError("tensor dimension must be positive, got " + shape_to_string(shape));
        n *= d;
    }
    return n;
}

std::string shape_to_string(const std::vector<int64_t> &shape) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape.size(); ++i)
        os << (i ? "," : "") << shape[i];
    os << ")";
    return os.str();
}

Tensor::Tensor(std::vector<int64_t> shape)
    : shape_(std::move(shape)), v_(static_cast<size_t>(shape_numel(shape_)), 0.0f) {}

Tensor::Tensor(std::vector<int64_t> shape, float fill)
    : shape_(std::move(shape)), v_(static_cast<size_t>(shape_numel(shape_)), fill) {}

void Tensor::fill(float v) { std::fill(v_.begin(), v_.end(), v); }

bool Tensor::all_finite() const {
    for (const float x : v_)
        if (!std::isfinite(x))
            return false;
    return true;
}

float Tensor::min() const {
    float m = v_.empty() ? 0.0f : v_[0];
    for (const float x : v_)
        m = std::min(m, x);
    return m;
}

float Tensor::max() const {
    float m = v_.empty() ? 0.0f : v_[0];
    for (const float x : v_)
        m = std::max(m, x);
    return m;
}

double Tensor::mean_abs() const {
    if (v_.empty())
        return 0.0;
    double s = 0.0;
    for (const float x : v_)
        s += std::abs(static_cast<double>(x));
    return s / static_cast<double>(v_.size());
}

std::string Tensor::shape_str() const { return shape_to_string(shape_); }

} // namespace ldreg
