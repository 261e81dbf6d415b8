#ifndef LDREG_EVALUATION_HPP
#define LDREG_EVALUATION_HPP

#include <array>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "ldreg/network.hpp"
#include "ldreg/training.hpp"
#include "ldreg/volume.hpp"

namespace ldreg {

// Scores for one registered pair. Dice entries follow the organ label order
// heart, aorta, trachea, esophagus.
struct MetricsReport {
    std::array<double, kNumOrganLabels> dice_organ{};
    double dice_mean = 0.0;
    // mean endpoint error in voxels; NaN unless the pair carries the
    // generating field
    double epe_voxels = std::numeric_limits<double>::quiet_NaN();
    double time_sec = 0.0;      // forward pass + mask warp only
    double fold_fraction = 0.0; // voxels with Jacobian determinant <= 0
};

// 2|A∩B| / (|A|+|B|) over the voxels carrying `label`; 1.0 when both sides
// are empty (perfect agreement on absence). Symmetric in a and b.
double dice(const LabelMask &a, const LabelMask &b, int32_t label);

// Nearest-neighbour resampling of the labels along phi; no label blending,
// so the output label set is a subset of the input's.
LabelMask warp_mask(const LabelMask &mask, const Tensor &phi);

// Mean Euclidean norm of the per-voxel displacement difference, reported in
// voxel units (channel c spans dim 2-c of the grid).
double endpoint_error(const Tensor &phi_pred, const Tensor &phi_true);

// One evaluation case: a preprocessed pair with masks and, for synthetic
// data, the generating field (numel() == 0 when unknown).
struct EvalPair {
    Volume fixed, moving;
    LabelMask mask_fixed, mask_moving;
    Tensor true_field;
};

// Full protocol for one pair: forward pass, warp of the moving mask by the
// full-resolution field, per-organ Dice against the fixed mask, endpoint
// error when ground truth is present, folding fraction. The timer wraps the
// forward pass and mask warp only (no graph setup, scoring, or I/O).
MetricsReport evaluate_pair(const NetworkConfig &net, const ParamStore &params,
                            const EvalPair &pair);

struct MetricsRow {
    std::string fixed_id, moving_id;
    MetricsReport metrics;
};

// One row per pair: fixed_id,moving_id,dice_heart,dice_aorta,dice_trachea,
// dice_esophagus,dice_mean,epe_voxels,time_sec,fold_fraction.
void write_metrics_csv(const std::string &path, const std::vector<MetricsRow> &rows);

// One cell of the regularization-weight surface; dice_mean is averaged over
// the evaluation pairs and NaN when training diverged.
struct GridCell {
    double alpha = 0.0;
    double beta = 0.0;
    double dice_mean = std::numeric_limits<double>::quiet_NaN();
};

// Published sweep: alpha in {1,10,100}, beta in {10,100,1000}.
std::vector<double> default_alpha_grid();
std::vector<double> default_beta_grid();

// Trains a fresh model per (alpha, beta) cell — `base` with the weights
// substituted fixes the rest of the budget (schedule, rate, seed) — then
// scores it on eval_pairs. Divergence of a cell is recorded, not thrown.
std::vector<GridCell> grid_search(const std::vector<double> &alphas,
                                  const std::vector<double> &betas, const TrainConfig &base,
                                  const std::vector<TrainPair> &train_pairs,
                                  const std::vector<EvalPair> &eval_pairs);

// CSV with columns alpha,beta,dice_mean in row-major (alpha outer) order.
void write_grid_csv(const std::string &path, const std::vector<GridCell> &cells);

// 2D quality-control image: mean of the fixed and warped-moving slices in
// gray, organ-colored translucent fill of mask_warped, full-strength contour
// of mask_fixed (heart green, aorta yellow, trachea blue, esophagus red).
// axis selects the slice plane: 0 fixes z, 1 fixes y, 2 fixes x.
void export_overlay(const Volume &fixed, const Volume &warped_moving,
                    const LabelMask &mask_fixed, const LabelMask &mask_warped, int axis,
                    int64_t slice_index, const std::string &path);

} // namespace ldreg

#endif
