#ifndef LDREG_WARP_HPP
#define LDREG_WARP_HPP

#include <array>
#include <cstdint>

#include "ldreg/tensor.hpp"

namespace ldreg {

// Deformation fields are (3,D,H,W) tensors of per-voxel displacement in
// normalized coordinates: each axis spans [-1,1] across the volume extent,
// channel 0 displaces along x (W), 1 along y (H), 2 along z (D). Sampling
// location for output voxel p is identity_grid(p) + phi(p).

enum class SampleMode { Linear, Nearest };
enum class PadMode { Border };

// Rotation/linear matrix and translation predicted by the rigid block.
// R is row-major in the (x,y,z) displacement basis; t is normalized units.
struct RigidTransform {
    std::array<float, 9> R{1, 0, 0, 0, 1, 0, 0, 0, 1};
    std::array<float, 3> t{0, 0, 0};

    static RigidTransform identity() { return RigidTransform{}; }
    bool is_identity(float tol = 0.0f) const;
};

// Normalized coordinates of every voxel; corner voxels map exactly to +-1.
Tensor identity_grid(int64_t d, int64_t h, int64_t w);

// Map a normalized coordinate to a (clamped) voxel coordinate and back.
inline float unnormalize_coord(float g, int64_t n) {
    return (g + 1.0f) * 0.5f * static_cast<float>(n - 1);
}
inline float normalize_displacement(float voxels, int64_t n) {
    return voxels * 2.0f / static_cast<float>(n - 1);
}
inline float displacement_in_voxels(float normalized, int64_t n) {
    return normalized * static_cast<float>(n - 1) * 0.5f;
}

// STN-style sampling of `vol` at identity_grid + phi. Out-of-range locations
// clamp to the border. Linear mode is differentiable in vol and phi (the
// autodiff layer wraps the same kernel).
Tensor grid_sample(const Tensor &vol, const Tensor &phi,
                   SampleMode mode = SampleMode::Linear, PadMode pad = PadMode::Border);

// Trilinear upsampling of each channel to target_shape (per-axis >= source).
// Displacement values carry over unchanged; normalized coordinates are
// resolution independent.
Tensor upsample_field(const Tensor &phi, const std::array<int64_t, 3> &target_shape);

// phi'(p) = R*(g(p)+phi(p)) + t - g(p): rigidly transforms the sampling
// coordinates while keeping the field in displacement form.
Tensor apply_rigid_to_field(const Tensor &phi, const RigidTransform &T);

// Forward finite differences of each channel along each axis, zero at the
// final slice. Output is (9,D,H,W); component c*3+a holds d phi_c / d p_a
// with axis a: 0=x, 1=y, 2=z, in per-voxel-step units.
Tensor spatial_gradient(const Tensor &phi);

// Per-voxel determinant of I + d(phi_vox)/dp, displacements converted to
// voxel units, derivatives by central differences (one-sided at borders).
// Values <= 0 mark folding.
Tensor jacobian_determinant(const Tensor &phi);

// Shared validation helpers; throw ValidationError on violation.
void check_is_field(const Tensor &phi);
void check_same_spatial(const Tensor &vol, const Tensor &phi);

} // namespace ldreg

#endif
