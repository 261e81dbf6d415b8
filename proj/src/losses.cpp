#include "ldreg/losses.hpp"

#include <cmath>
#include <cstdio>

#include "ldreg/errors.hpp"
#include "ldreg/warp.hpp"

namespace ldreg {

void LossWeights::validate() const {
    if (lambda < 0.0 || alpha < 0.0 || beta < 0.0)
        throw ValidationError("loss weights must be non-negative");
}

double LossReport::recompute_total(const LossWeights &w) const {
    double sum = 0.0;
    for (const StageLoss &s : stages)
        sum += s.sim + w.lambda * (w.alpha * s.range + w.beta * s.smooth);
    return sum;
}

std::string LossReport::record() const {
    std::string out;
    char buf[64];
    std::snprintf(buf, sizeof buf, "total=%.12g", total);
    out += buf;
    for (size_t s = 0; s < stages.size(); ++s) {
        std::snprintf(buf, sizeof buf, " s%zu.sim=%.12g", s, stages[s].sim);
        out += buf;
        std::snprintf(buf, sizeof buf, " s%zu.range=%.12g", s, stages[s].range);
        out += buf;
        std::snprintf(buf, sizeof buf, " s%zu.smooth=%.12g", s, stages[s].smooth);
        out += buf;
    }
    return out;
}

double similarity_mse(const Tensor &fixed, const Tensor &warped_moving) {
    if (!fixed.same_shape(warped_moving))
        throw ValidationError("similarity_mse shape mismatch: " + fixed.shape_str() + " vs " +
                              warped_moving.shape_str());
    double acc = 0.0;
    for (int64_t i = 0; i < fixed.numel(); ++i) {
        const double d = static_cast<double>(warped_moving[i]) - static_cast<double>(fixed[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(fixed.numel());
}

double range_loss(const Tensor &phi) {
    check_is_field(phi);
    double acc = 0.0;
    for (int64_t i = 0; i < phi.numel(); ++i)
        acc += std::abs(static_cast<double>(phi[i]));
    return acc / static_cast<double>(phi.numel());
}

double smooth_loss(const Tensor &phi, SmoothKind kind) {
    const Tensor g = spatial_gradient(phi);
    double acc = 0.0;
    for (int64_t i = 0; i < g.numel(); ++i) {
        const double v = static_cast<double>(g[i]);
        acc += kind == SmoothKind::L1 ? std::abs(v) : v * v;
    }
    return acc / static_cast<double>(g.numel());
}

Var total_loss(Graph &g, const std::vector<LossStageInput> &stages, const LossWeights &w,
               SmoothKind kind, LossReport &report) {
    w.validate();
    if (stages.empty())
        throw ValidationError("total_loss needs at least one stage");
    report.stages.assign(stages.size(), StageLoss{});
    report.total = 0.0;

    std::vector<std::pair<double, Var>> terms;
    for (size_t s = 0; s < stages.size(); ++s) {
        const LossStageInput &in = stages[s];
        if (!in.active)
            continue;
        if (!in.fixed.valid() || !in.warped.valid() || !in.field.valid())
            throw ValidationError("total_loss stage " + std::to_string(s) +
                                  " has an unset input");
        const Var sim = g.mean_sq_diff(in.fixed, in.warped);
        const Var range = g.mean_abs(in.field);
        const Var grad = g.spatial_grad(in.field);
        const Var smooth = kind == SmoothKind::L1 ? g.mean_abs(grad) : g.mean_sq(grad);
        report.stages[s].sim = g.scalar_val(sim);
        report.stages[s].range = g.scalar_val(range);
        report.stages[s].smooth = g.scalar_val(smooth);
        terms.emplace_back(1.0, sim);
        terms.emplace_back(w.lambda * w.alpha, range);
        terms.emplace_back(w.lambda * w.beta, smooth);
    }
    const Var total = g.affine_sum(terms);
    report.total = g.scalar_val(total);
    return total;
}

} // namespace ldreg
