#ifndef LDREG_TRAINING_HPP
#define LDREG_TRAINING_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "ldreg/losses.hpp"
#include "ldreg/network.hpp"
#include "ldreg/tensor.hpp"

namespace ldreg {

// One block of the stage-wise curriculum: how many of the coarse-to-fine loss
// stages are active, and for how many optimization steps.
struct StageBlock {
    int64_t active_stages = 1;
    int64_t steps = 1;
};

// Progressive schedule: the coarsest stage alone for one block, then one finer
// stage added per block. All parameters stay trainable throughout.
std::vector<StageBlock> stage_schedule_default(int64_t num_stages,
                                               int64_t steps_per_stage = 100);
int64_t schedule_total_steps(const std::vector<StageBlock> &schedule);
// Stages active at a global step index; steps past the end keep the final
// block's activation.
int64_t active_stages_at(const std::vector<StageBlock> &schedule, int64_t step);

struct TrainConfig {
    NetworkConfig network;
    double learning_rate = 1e-4;
    LossWeights weights;
    SmoothKind smooth = SmoothKind::L1;
    std::vector<StageBlock> stage_schedule = stage_schedule_default(5);
    int64_t batch_size = 1; // gradient accumulation across this many pairs
    uint64_t seed = 0;
    // Adam moment decays and epsilon at their canonical published defaults.
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;

    void validate() const;
    // Content hash over every field; checkpoints store it so a resume against
    // a different configuration is rejected.
    uint64_t hash() const;
};

struct TrainPair {
    Tensor fixed;
    Tensor moving;
};

struct Checkpoint {
    uint64_t step = 0;
    uint64_t config_hash = 0;
    ParamStore params;
    ParamStore adam_m;
    ParamStore adam_v;
};

struct TrainResult {
    Checkpoint checkpoint; // state after the last completed step
    std::vector<LossReport> history; // one row per completed step of this run
    // A non-finite loss aborts the run; `checkpoint` then holds the state
    // before the bad step so callers can persist the last good model.
    bool diverged = false;
    uint64_t diverged_at = 0;
};

// The five loss stages of a forward pass (four pyramid stages coarse to fine,
// then full resolution), with the first `active_stages` marked active.
std::vector<LossStageInput> stage_inputs(const StageOutputs &out, int64_t active_stages);

// `step_limit` >= 0 stops the run after that many optimization steps in this
// call (the checkpoint then sits mid-schedule and can be resumed); -1 runs to
// the end of the schedule.
TrainResult train(const TrainConfig &cfg, const std::vector<TrainPair> &pairs,
                  int64_t step_limit = -1);
// Resume from a checkpoint produced under an identical config; step counts,
// Adam state and the pair-order stream continue exactly as if uninterrupted.
TrainResult train(const TrainConfig &cfg, const std::vector<TrainPair> &pairs,
                  const Checkpoint &resume, int64_t step_limit = -1);

// Binary checkpoint files; save -> load -> save reproduces identical bytes.
void save_checkpoint(const Checkpoint &ckpt, const std::string &path);
Checkpoint load_checkpoint(const std::string &path);

// CSV with one row per step: step,total, then sim/range/smooth per stage.
void write_history_csv(const std::string &path, const std::vector<LossReport> &history,
                       uint64_t first_step = 0);

} // namespace ldreg

#endif
