#ifndef LDREG_VOLUME_HPP
#define LDREG_VOLUME_HPP

#include <array>
#include <cstdint>
#include <vector>

#include "ldreg/tensor.hpp"

namespace ldreg {

// 3D scalar grid with physical metadata. Axis order is (D,H,W) = (z,y,x).
struct Volume {
    Tensor data;                               // rank 3: (D,H,W)
    std::array<double, 3> spacing{1.0, 1.0, 1.0}; // mm per voxel, (z,y,x)
    std::array<double, 3> origin{0.0, 0.0, 0.0};  // mm, (z,y,x)

    int64_t dim(size_t i) const { return data.dim(i); }
    bool same_grid(const Volume &o) const { return data.same_shape(o.data); }
};

// Integer-labeled companion of a Volume.
// Labels: 0=background, 1=heart, 2=aorta, 3=trachea, 4=esophagus.
struct LabelMask {
    std::vector<int32_t> data;                 // (D,H,W), row-major like Tensor
    std::vector<int64_t> shape;
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    std::array<double, 3> origin{0.0, 0.0, 0.0};

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int32_t at(int64_t z, int64_t y, int64_t x) const {
        return data[static_cast<size_t>((z * shape[1] + y) * shape[2] + x)];
    }
    int32_t &at(int64_t z, int64_t y, int64_t x) {
        return data[static_cast<size_t>((z * shape[1] + y) * shape[2] + x)];
    }
};

inline constexpr int kNumOrganLabels = 4;
inline constexpr int32_t kLabelBackground = 0;
inline constexpr int32_t kLabelHeart = 1;
inline constexpr int32_t kLabelAorta = 2;
inline constexpr int32_t kLabelTrachea = 3;
inline constexpr int32_t kLabelEsophagus = 4;

const char *organ_name(int32_t label);

} // namespace ldreg

#endif
