#ifndef LDREG_NETWORK_HPP
#define LDREG_NETWORK_HPP

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ldreg/autodiff.hpp"
#include "ldreg/tensor.hpp"
#include "ldreg/warp.hpp"

namespace ldreg {

// Registration model: a strided feature path over concat(F,M), an
// average-pooling image pyramid per input, a coarse field head plus rigid
// head at 1/16 resolution, four residual refine blocks walking back up to
// 1/2 resolution, and a full-resolution fusion CNN over all stages.
struct NetworkConfig {
    std::array<int64_t, 4> channels{8, 16, 32, 64}; // feature widths, fine->coarse
    std::array<int64_t, 3> in_shape{64, 64, 64};    // (D,H,W), divisible by 16
    float leaky_slope = 0.01f;
    float norm_epsilon = 1e-5f;
    bool use_refine_core = true; // concat(Feature,D,F,M(phi),phi~) vs Feature alone
    bool use_rigid = true;       // rigid head applied to the coarse field
    bool final_fusion = true;    // full-resolution fusion CNN
    int64_t refine_width = 16;      // refine-block conv width
    int64_t coarse_head_width = 32; // hidden width of the coarse field head
    int fusion_kernel = 1;          // fusion CNN kernel size, 1 or 3
    std::array<int64_t, 2> fc_widths{256, 64}; // rigid FC hidden widths

    void validate() const;
    // length of the rigid-block flatten vector: prod(in_shape) / 16^3
    int64_t flatten_len() const;
    // channels entering the fusion CNN: 4 stages x (3 field + refine_width)
    int64_t fusion_in_channels() const { return 4 * (3 + refine_width); }
};

// Learnable parameters keyed by "<group>.<layer>.<tensor>"; the sorted map
// ordering doubles as the canonical serialization/optimizer order.
using ParamStore = std::map<std::string, Tensor>;

// He-initialized parameters; all field heads start at exactly zero and the
// rigid output layers start at (R,t) = (I,0).
ParamStore init_params(const NetworkConfig &cfg, uint64_t seed);

// Prefixes of the trainable groups present under this config (diagnostics:
// per-group gradient norms, ablation parameter counting).
std::vector<std::string> param_groups(const NetworkConfig &cfg);

struct BoundParams {
    std::map<std::string, Var> vars;
    Var at(const std::string &key) const;
};

BoundParams bind_params(Graph &g, const ParamStore &store);

struct StageOutputs {
    Var fixed_full, moving_full;    // the graph leaves holding the raw inputs
    std::vector<Var> features;      // Feature_0..Feature_3 at 1/2..1/16, fine->coarse
    std::vector<Var> pooled_fixed;  // F_i pyramid at 1/2..1/16, rank-3 volumes
    std::vector<Var> pooled_moving; // M_i pyramid, same layout
    Var coarse_field;               // field emitted at 1/16 before the rigid head
    Var rigid_r, rigid_t;           // (9) and (3) vectors; invalid when !use_rigid
    RigidTransform rigid;           // float copy of the predicted transform
    // Loss stages coarse->fine: refine outputs at 1/16, 1/8, 1/4, 1/2, then
    // the full-resolution field.
    std::vector<Var> fields;
    std::vector<Var> refine_features; // post-refine features per refine stage
    std::vector<Var> warped_inputs;   // M_i warped by the upsampled previous field
    std::vector<Var> warped_stage;    // M_i warped by that stage's OUTPUT field; last
                                      // entry is the full-resolution warped moving

    Var phi0() const { return fields.back(); }
    Var warped_full() const { return warped_stage.back(); }
};

// Builds the whole model in `g`. In Infer mode, bulky intermediates are
// released as soon as their consumers have run.
StageOutputs forward(Graph &g, const NetworkConfig &cfg, const BoundParams &params,
                     const Tensor &fixed, const Tensor &moving);

} // namespace ldreg

#endif
