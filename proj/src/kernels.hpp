#ifndef LDREG_KERNELS_HPP
#define LDREG_KERNELS_HPP

// Internal compute kernels behind the autodiff ops. All kernels are
// single-threaded with fixed accumulation order (bit-reproducible). Shapes
// follow the (C,D,H,W) channel-major convention; W is contiguous.

#include <array>
#include <cstdint>
#include <vector>

#include "ldreg/tensor.hpp"

namespace ldreg::kern {

// kernel size k in {1,3}, padding (k-1)/2, stride in {1,2}
Tensor conv3d_fwd(const Tensor &x, const Tensor &w, const Tensor &b, int stride);
void conv3d_bwd(const Tensor &x, const Tensor &w, const Tensor &dy, int stride, Tensor *dx,
                Tensor &dw, Tensor &db);

Tensor lrelu_fwd(const Tensor &x, float slope);
void lrelu_bwd(const Tensor &x, const Tensor &dy, float slope, Tensor &dx);

// Per-channel statistics over the spatial extent. Saves mean and 1/std for
// the backward pass.
Tensor norm_fwd(const Tensor &x, const Tensor &gamma, const Tensor &beta, float eps,
                std::vector<double> &mean, std::vector<double> &inv_std);
void norm_bwd(const Tensor &x, const Tensor &gamma, const Tensor &dy,
              const std::vector<double> &mean, const std::vector<double> &inv_std, Tensor *dx,
              Tensor &dgamma, Tensor &dbeta);

Tensor avg_pool2_fwd(const Tensor &x);
void avg_pool2_bwd(const Tensor &dy, Tensor &dx);

Tensor upsample3_fwd(const Tensor &x, const std::array<int64_t, 3> &target);
void upsample3_bwd(const Tensor &dy, Tensor &dx);

Tensor fc_fwd(const Tensor &x, const Tensor &w, const Tensor &b);
void fc_bwd(const Tensor &x, const Tensor &w, const Tensor &dy, Tensor *dx, Tensor &dw,
            Tensor &db);

Tensor channel_max_fwd(const Tensor &x, std::vector<int32_t> &argmax);
void channel_max_bwd(const Tensor &dy, const std::vector<int32_t> &argmax, Tensor &dx);

Tensor grid_sample_fwd(const Tensor &vol, const Tensor &phi);
void grid_sample_bwd(const Tensor &vol, const Tensor &phi, const Tensor &dy, Tensor *dvol,
                     Tensor *dphi);

Tensor apply_rigid_fwd(const Tensor &phi, const Tensor &r9, const Tensor &t3);
void apply_rigid_bwd(const Tensor &phi, const Tensor &r9, const Tensor &dy, Tensor *dphi,
                     Tensor *dr9, Tensor *dt3);

Tensor spatial_grad_fwd(const Tensor &phi);
void spatial_grad_bwd(const Tensor &dy, Tensor &dphi);

double mean_sq_diff(const Tensor &a, const Tensor &b);
double mean_abs(const Tensor &x);
double mean_sq(const Tensor &x);

// Deterministic 8-lane dot product (vectorizable without reassociation).
float lane_dot(const float *a, const float *b, int64_t n);

} // namespace ldreg::kern

#endif
