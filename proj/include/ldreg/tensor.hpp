#ifndef LDREG_TENSOR_HPP
#define LDREG_TENSOR_HPP

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace ldreg {

// Dense float32 array with value semantics. Rank is 1..4 depending on use:
// volumes are (D,H,W), fields and feature maps are (C,D,H,W), flattened
// vectors are (N). W is the fastest-varying index.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::vector<int64_t> shape);
    Tensor(std::vector<int64_t> shape, float fill);

    static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int64_t> shape, float v) { return Tensor(std::move(shape), v); }

    const std::vector<int64_t> &shape() const { return shape_; }
    int64_t dim(size_t i) const { return shape_.at(i); }
    size_t rank() const { return shape_.size(); }
    int64_t numel() const { return static_cast<int64_t>(v_.size()); }
    bool empty() const { return v_.empty(); }

    float *data() { return v_.data(); }
    const float *data() const { return v_.data(); }
    float &operator[](int64_t i) { return v_[static_cast<size_t>(i)]; }
    float operator[](int64_t i) const { return v_[static_cast<size_t>(i)]; }

    // (z,y,x) access for rank-3 tensors.
    float &at(int64_t z, int64_t y, int64_t x) {
        return v_[static_cast<size_t>((z * shape_[1] + y) * shape_[2] + x)];
    }
    const float &at(int64_t z, int64_t y, int64_t x) const {
        return v_[static_cast<size_t>((z * shape_[1] + y) * shape_[2] + x)];
    }
    // (c,z,y,x) access for rank-4 tensors.
    float &at(int64_t c, int64_t z, int64_t y, int64_t x) {
        return v_[static_cast<size_t>(((c * shape_[1] + z) * shape_[2] + y) * shape_[3] + x)];
    }
    const float &at(int64_t c, int64_t z, int64_t y, int64_t x) const {
        return v_[static_cast<size_t>(((c * shape_[1] + z) * shape_[2] + y) * shape_[3] + x)];
    }

    void fill(float v);
    bool same_shape(const Tensor &o) const { return shape_ == o.shape_; }
    bool all_finite() const;
    float min() const;
    float max() const;
    double mean_abs() const;

    std::string shape_str() const;

  private:
    std::vector<int64_t> shape_;
    std::vector<float> v_;
};

int64_t shape_numel(const std::vector<int64_t> &shape);
std::string shape_to_string(const std::vector<int64_t> &shape);

} // namespace ldreg

#endif
