#include "ldreg/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <fstream>

#include "ldreg/autodiff.hpp"
#include "ldreg/errors.hpp"
#include "ldreg/io.hpp"
#include "ldreg/warp.hpp"

namespace ldreg {

namespace {

void check_mask_shape(const LabelMask &m, const char *what) {
    if (m.shape.size() != 3)
        throw ValidationError(std::string(what) + " mask must be rank 3");
    if (m.numel() != m.shape[0] * m.shape[1] * m.shape[2])
        throw ValidationError(std::string(what) + " mask data does not match its shape");
}

void append(std::string &out, const char *fmt, ...) {
    char buf[256];
    va_list ap;
    va_start(ap, fmt);
    std::vsnprintf(buf, sizeof buf, fmt, ap);
    va_end(ap);
    out += buf;
}

void write_text(const std::string &path, const std::string &text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f.good())
        throw DataError("cannot open " + path + " for writing");
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!f.good())
        throw DataError("short write to " + path);
}

} // namespace

double dice(const LabelMask &a, const LabelMask &b, int32_t label) {
    check_mask_shape(a, "dice");
    check_mask_shape(b, "dice");
    if (a.shape != b.shape)
        throw ValidationError("dice shape mismatch");
    int64_t na = 0, nb = 0, ni = 0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const bool in_a = a.data[i] == label;
        const bool in_b = b.data[i] == label;
        na += in_a;
        nb += in_b;
        ni += in_a && in_b;
    }
    if (na + nb == 0)
        return 1.0;
    return 2.0 * static_cast<double>(ni) / static_cast<double>(na + nb);
}

LabelMask warp_mask(const LabelMask &mask, const Tensor &phi) {
    check_mask_shape(mask, "warp_mask");
    check_is_field(phi);
    if (mask.shape[0] != phi.dim(1) || mask.shape[1] != phi.dim(2) ||
        mask.shape[2] != phi.dim(3))
        throw ValidationError("warp_mask: mask and field shapes differ");

    Tensor m({mask.shape[0], mask.shape[1], mask.shape[2]});
    for (int64_t i = 0; i < m.numel(); ++i)
        m[i] = static_cast<float>(mask.data[static_cast<size_t>(i)]);
    const Tensor warped = grid_sample(m, phi, SampleMode::Nearest);

    LabelMask out = mask;
    for (int64_t i = 0; i < warped.numel(); ++i)
        out.data[static_cast<size_t>(i)] = static_cast<int32_t>(std::lround(warped[i]));
    return out;
}

double endpoint_error(const Tensor &phi_pred, const Tensor &phi_true) {
    check_is_field(phi_pred);
    check_is_field(phi_true);
    if (!phi_pred.same_shape(phi_true))
        throw ValidationError("endpoint_error shape mismatch: " + phi_pred.shape_str() + " vs " +
                              phi_true.shape_str());
    const int64_t d = phi_pred.dim(1), h = phi_pred.dim(2), w = phi_pred.dim(3);
    const int64_t n = d * h * w;
    const double scale[3] = {static_cast<double>(w - 1) * 0.5, static_cast<double>(h - 1) * 0.5,
                             static_cast<double>(d - 1) * 0.5};
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        double sq = 0.0;
        for (int c = 0; c < 3; ++c) {
            const double dv = (static_cast<double>(phi_pred[c * n + i]) -
                               static_cast<double>(phi_true[c * n + i])) *
                              scale[c];
            sq += dv * dv;
        }
        acc += std::sqrt(sq);
    }
    return acc / static_cast<double>(n);
}

MetricsReport evaluate_pair(const NetworkConfig &net, const ParamStore &params,
                            const EvalPair &pair) {
    net.validate();
    if (!pair.fixed.same_grid(pair.moving))
        throw ValidationError("evaluate_pair: fixed and moving grids differ");
    check_mask_shape(pair.mask_fixed, "fixed");
    check_mask_shape(pair.mask_moving, "moving");
    for (int i = 0; i < 3; ++i)
        if (pair.mask_fixed.shape[static_cast<size_t>(i)] != pair.fixed.dim(static_cast<size_t>(i)) ||
            pair.mask_moving.shape[static_cast<size_t>(i)] != pair.fixed.dim(static_cast<size_t>(i)))
            throw ValidationError("evaluate_pair: mask shapes do not match the volumes");

    Graph g(Graph::Mode::Infer);
    const BoundParams bp = bind_params(g, params);

    const auto t0 = std::chrono::steady_clock::now();
    const StageOutputs out = forward(g, net, bp, pair.fixed.data, pair.moving.data);
    const Tensor phi = g.val(out.phi0());
    const LabelMask warped = warp_mask(pair.mask_moving, phi);
    const auto t1 = std::chrono::steady_clock::now();

    MetricsReport rep;
    rep.time_sec = std::chrono::duration<double>(t1 - t0).count();
    double mean = 0.0;
    for (int s = 0; s < kNumOrganLabels; ++s) {
        rep.dice_organ[static_cast<size_t>(s)] = dice(pair.mask_fixed, warped, s + 1);
        mean += rep.dice_organ[static_cast<size_t>(s)];
    }
    rep.dice_mean = mean / kNumOrganLabels;

    if (pair.true_field.numel() > 0)
        rep.epe_voxels = endpoint_error(phi, pair.true_field);

    const Tensor det = jacobian_determinant(phi);
    int64_t folded = 0;
    for (int64_t i = 0; i < det.numel(); ++i)
        folded += det[i] <= 0.0f;
    rep.fold_fraction = static_cast<double>(folded) / static_cast<double>(det.numel());
    return rep;
}

void write_metrics_csv(const std::string &path, const std::vector<MetricsRow> &rows) {
    std::string text = "fixed_id,moving_id,dice_heart,dice_aorta,dice_trachea,dice_esophagus,"
                       "dice_mean,epe_voxels,time_sec,fold_fraction\n";
    for (const MetricsRow &r : rows) {
        text += r.fixed_id + "," + r.moving_id;
        for (int s = 0; s < kNumOrganLabels; ++s)
            append(text, ",%.17g", r.metrics.dice_organ[static_cast<size_t>(s)]);
        append(text, ",%.17g,%.17g,%.17g,%.17g\n", r.metrics.dice_mean, r.metrics.epe_voxels,
               r.metrics.time_sec, r.metrics.fold_fraction);
    }
    write_text(path, text);
}

std::vector<double> default_alpha_grid() { return {1.0, 10.0, 100.0}; }
std::vector<double> default_beta_grid() { return {10.0, 100.0, 1000.0}; }

std::vector<GridCell> grid_search(const std::vector<double> &alphas,
                                  const std::vector<double> &betas, const TrainConfig &base,
                                  const std::vector<TrainPair> &train_pairs,
                                  const std::vector<EvalPair> &eval_pairs) {
    if (alphas.empty() || betas.empty())
        throw ValidationError("grid_search needs non-empty weight grids");
    if (eval_pairs.empty())
        throw ValidationError("grid_search needs at least one evaluation pair");

    std::vector<GridCell> cells;
    cells.reserve(alphas.size() * betas.size());
    for (const double a : alphas)
        for (const double b : betas) {
            GridCell cell;
            cell.alpha = a;
            cell.beta = b;
            TrainConfig cfg = base;
            cfg.weights.alpha = a;
            cfg.weights.beta = b;
            const TrainResult res = train(cfg, train_pairs);
            if (!res.diverged) {
                double mean = 0.0;
                for (const EvalPair &p : eval_pairs)
                    mean += evaluate_pair(cfg.network, res.checkpoint.params, p).dice_mean;
                cell.dice_mean = mean / static_cast<double>(eval_pairs.size());
            }
            cells.push_back(cell);
        }
    return cells;
}

void write_grid_csv(const std::string &path, const std::vector<GridCell> &cells) {
    std::string text = "alpha,beta,dice_mean\n";
    for (const GridCell &c : cells)
        append(text, "%.17g,%.17g,%.17g\n", c.alpha, c.beta, c.dice_mean);
    write_text(path, text);
}

namespace {

const uint8_t kOrganColor[kNumOrganLabels][3] = {
    {0, 200, 0},    // heart: green
    {255, 220, 0},  // aorta: yellow
    {40, 90, 255},  // trachea: blue
    {230, 30, 30},  // esophagus: red
};

uint8_t gray_of(float v) {
    const double g = (static_cast<double>(v) + 1.0) * 0.5 * 255.0;
    return static_cast<uint8_t>(std::lround(std::min(std::max(g, 0.0), 255.0)));
}

} // namespace

void export_overlay(const Volume &fixed, const Volume &warped_moving,
                    const LabelMask &mask_fixed, const LabelMask &mask_warped, int axis,
                    int64_t slice_index, const std::string &path) {
    if (!fixed.same_grid(warped_moving))
        throw ValidationError("export_overlay: volume grids differ");
    check_mask_shape(mask_fixed, "fixed");
    check_mask_shape(mask_warped, "warped");
    for (size_t i = 0; i < 3; ++i)
        if (mask_fixed.shape[i] != fixed.dim(i) || mask_warped.shape[i] != fixed.dim(i))
            throw ValidationError("export_overlay: mask shapes do not match the volumes");
    if (axis < 0 || axis > 2)
        throw ValidationError("export_overlay: axis must be 0, 1 or 2");
    if (slice_index < 0 || slice_index >= fixed.dim(static_cast<size_t>(axis)))
        throw ValidationError("export_overlay: slice index out of range");

    // remaining axes in (row, col) order: z->(y,x), y->(z,x), x->(z,y)
    const int row_axis = axis == 0 ? 1 : 0;
    const int col_axis = axis == 2 ? 1 : 2;
    const int64_t rows = fixed.dim(static_cast<size_t>(row_axis));
    const int64_t cols = fixed.dim(static_cast<size_t>(col_axis));

    auto voxel = [&](int64_t r, int64_t c, int64_t idx[3]) {
        idx[axis] = slice_index;
        idx[row_axis] = r;
        idx[col_axis] = c;
    };
    auto label_at = [&](const LabelMask &m, int64_t r, int64_t c) {
        int64_t idx[3];
        voxel(r, c, idx);
        return m.at(idx[0], idx[1], idx[2]);
    };

    std::vector<uint8_t> rgb(static_cast<size_t>(3 * rows * cols));
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c) {
            int64_t idx[3];
            voxel(r, c, idx);
            const float f = fixed.data.at(idx[0], idx[1], idx[2]);
            const float m = warped_moving.data.at(idx[0], idx[1], idx[2]);
            const uint8_t gray = gray_of(0.5f * (f + m));
            double channel[3] = {static_cast<double>(gray), static_cast<double>(gray),
                                 static_cast<double>(gray)};

            // registered mask as a translucent fill
            const int32_t wl = label_at(mask_warped, r, c);
            if (wl >= 1 && wl <= kNumOrganLabels)
                for (int k = 0; k < 3; ++k)
                    channel[k] = 0.65 * channel[k] + 0.35 * kOrganColor[wl - 1][k];

            // reference mask as a full-strength contour
            const int32_t fl = label_at(mask_fixed, r, c);
            if (fl >= 1 && fl <= kNumOrganLabels) {
                bool boundary = false;
                for (int n = 0; n < 4 && !boundary; ++n) {
                    const int64_t nr = r + (n == 0) - (n == 1);
                    const int64_t nc = c + (n == 2) - (n == 3);
                    boundary = nr < 0 || nr >= rows || nc < 0 || nc >= cols ||
                               label_at(mask_fixed, nr, nc) != fl;
                }
                if (boundary)
                    for (int k = 0; k < 3; ++k)
                        channel[k] = kOrganColor[fl - 1][k];
            }

            const size_t px = static_cast<size_t>(3 * (r * cols + c));
            for (int k = 0; k < 3; ++k)
                rgb[px + static_cast<size_t>(k)] = static_cast<uint8_t>(std::lround(channel[k]));
        }
    save_png_rgb(path, cols, rows, rgb);
}

} // namespace ldreg
