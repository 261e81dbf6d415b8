#ifndef LDREG_DATA_HPP
#define LDREG_DATA_HPP

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "ldreg/tensor.hpp"
#include "ldreg/volume.hpp"

namespace ldreg {

// Parameters of the synthetic phantom/deformation generator that stands in
// for clinical data at desk scale.
struct SynthConfig {
    std::array<int64_t, 3> shape{64, 64, 64};
    double max_displacement = 10.0; // voxels, bound on the non-rigid part
    double smoothness_sigma = 8.0;  // voxels, Gaussian blur of the noise field
    double rigid_angle_range = 0.0; // degrees, composed on top of the smooth part
    double rigid_shift_range = 0.0; // voxels
    double noise_sigma = 0.0;       // additive intensity noise on deformed copies
    uint64_t seed = 0;

    void validate() const;
};

// Window to [low,high] HU, map affinely to [-1,1], then trilinear-resize.
Volume preprocess(const Volume &v, double window_low, double window_high,
                  const std::array<int64_t, 3> &target_shape);

// Nearest-neighbour companion resize for label masks.
LabelMask resize_mask(const LabelMask &m, const std::array<int64_t, 3> &target_shape);

// Deterministic derangement-style pairing: indices are shuffled with
// Fisher-Yates driven by Rng(seed), then pair i is
// (fixed=perm[i], moving=perm[(i+1) % n]).
std::vector<std::pair<size_t, size_t>> make_pairs(size_t count, uint64_t seed);

// Organ-bearing phantom: soft-edged body with four disjoint analytic
// structures (ellipsoid heart, three tubes), intensities in [-1,1], plus a
// smooth texture that gives the similarity loss something to lock onto.
std::pair<Volume, LabelMask> generate_phantom(const SynthConfig &cfg);

// Label of the analytic phantom geometry at a continuous voxel coordinate
// (fractional and out-of-bounds coordinates allowed); agrees with
// generate_phantom's mask at integer coordinates. This gives exact
// ground-truth masks for analytically deformed phantoms, free of
// resampling error.
int32_t phantom_label_at(const SynthConfig &cfg, double z, double y, double x);

// Smooth random displacement: Gaussian-blurred white noise scaled so the
// non-rigid part peaks at max_displacement voxels, then composed with a
// random small rigid motion. Returned in normalized coordinates, (3,D,H,W).
Tensor synth_deformation(const SynthConfig &cfg);

// General align-corners trilinear resize of a (D,H,W) tensor (both up and
// down); used by preprocess.
Tensor resize_trilinear(const Tensor &v, const std::array<int64_t, 3> &target_shape);

// Separable Gaussian blur of each channel of a (C,D,H,W) tensor; kernel
// truncated at 3 sigma, border taps renormalized.
Tensor gaussian_blur(const Tensor &x, double sigma);

} // namespace ldreg

#endif
