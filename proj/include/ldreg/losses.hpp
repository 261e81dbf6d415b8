#ifndef LDREG_LOSSES_HPP
#define LDREG_LOSSES_HPP

#include <string>
#include <vector>

#include "ldreg/autodiff.hpp"
#include "ldreg/tensor.hpp"

namespace ldreg {

enum class SmoothKind { L1, L2 };

// Weights of the composite objective
//   total = sum_stages( sim + lambda * (alpha * range + beta * smooth) ).
// alpha/beta keep their published ratio; lambda rescales the pair to the
// [-1,1]-normalized intensity regime, where MSE is ~1e5 smaller than on raw
// CT values. Larger lambda*alpha pins the field to zero (any displacement
// then costs more than the similarity it can recover); see README.
struct LossWeights {
    double lambda = 0.01;
    double alpha = 10.0;
    double beta = 100.0;

    void validate() const; // all weights must be >= 0
};

struct StageLoss {
    double sim = 0.0;
    double range = 0.0;
    double smooth = 0.0;
};

// Per-stage decomposition plus the weighted total, all double precision.
struct LossReport {
    std::vector<StageLoss> stages;
    double total = 0.0;

    // Recomputed weighted total; must match `total` to 1e-9 relative.
    double recompute_total(const LossWeights &w) const;
    // One-line machine-parseable record: "total=... s0.sim=... s0.range=..."
    std::string record() const;
};

// Plain scalar evaluations (double accumulation, deterministic order).
double similarity_mse(const Tensor &fixed, const Tensor &warped_moving);
double range_loss(const Tensor &phi);
double smooth_loss(const Tensor &phi, SmoothKind kind = SmoothKind::L1);

// One stage's inputs inside a graph: the pooled fixed image at the stage
// resolution, the stage-warped pooled moving image, and the stage field.
// Inactive stages contribute nothing (stage-wise training).
struct LossStageInput {
    Var fixed;
    Var warped;
    Var field;
    bool active = true;
};

// Builds the weighted multi-stage objective in the graph and fills `report`
// with the per-stage decomposition. Returns the scalar total Var.
Var total_loss(Graph &g, const std::vector<LossStageInput> &stages, const LossWeights &w,
               SmoothKind kind, LossReport &report);

} // namespace ldreg

#endif
