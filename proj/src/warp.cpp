#include "ldreg/warp.hpp"

#include <algorithm>
#include <cmath>

#include "ldreg/errors.hpp"

namespace ldreg {

namespace {

inline double axis_coord(int64_t i, int64_t n) {
    return (2.0 * static_cast<double>(i) - static_cast<double>(n - 1)) / static_cast<double>(n - 1);
}

// NaN-safe: a non-finite v collapses to lo instead of propagating into
// index arithmetic
inline double clampd(double v, double lo, double hi) {
    return v >= lo ? (v <= hi ? v : hi) : lo;
}

// Resolve a normalized coordinate into bracketing indices and a blend factor.
struct AxisSample {
    int64_t i0, i1;
    double t;
};

inline AxisSample resolve_axis(double g, int64_t n) {
    const double raw = (g + 1.0) * 0.5 * static_cast<double>(n - 1);
    // NaN coordinates (diverged fields) keep indices safe but poison the
    // sampled value, so downstream losses stay detectably non-finite
    if (std::isnan(raw))
        return {0, 0, raw};
    const double f = clampd(raw, 0.0, static_cast<double>(n - 1));
    const int64_t i0 = std::min(static_cast<int64_t>(std::floor(f)), n - 1);
    return {i0, std::min(i0 + 1, n - 1), f - static_cast<double>(i0)};
}

inline int64_t resolve_nearest(double g, int64_t n) {
    const double f = clampd((g + 1.0) * 0.5 * static_cast<double>(n - 1), 0.0,
                            static_cast<double>(n - 1));
    return std::min(static_cast<int64_t>(std::floor(f + 0.5)), n - 1);
}

} // namespace

bool RigidTransform::is_identity(float tol) const {
    const RigidTransform id;
    for (int i = 0; i < 9; ++i)
        if (std::abs(R[i] - id.R[i]) > tol)
            return false;
    for (int i = 0; i < 3; ++i)
        if (std::abs(t[i]) > tol)
            return false;
    return true;
}

void check_is_field(const Tensor &phi) {
    if (phi.rank() != 4 || phi.dim(0) != 3)
        throw ValidationError("expected a (3,D,H,W) displacement field, got " + phi.shape_str());
    for (size_t i = 1; i < 4; ++i)
        if (phi.dim(i) < 2)
            throw ValidationError("field spatial dims must be >= 2, got " + phi.shape_str());
}

void check_same_spatial(const Tensor &vol, const Tensor &phi) {
    if (vol.rank() != 3)
        throw ValidationError("expected a (D,H,W) volume, got " + vol.shape_str());
    for (size_t i = 0; i < 3; ++i)
        if (vol.dim(i) != phi.dim(i + 1))
            throw ValidationError("volume " + vol.shape_str() + " does not match field " +
                                  phi.shape_str());
}

Tensor identity_grid(int64_t d, int64_t h, int64_t w) {
    if (d < 2 || h < 2 || w < 2)
        throw ValidationError("identity_grid needs every dim >= 2, got " +
                              shape_to_string({d, h, w}));
    Tensor g({3, d, h, w});
    for (int64_t z = 0; z < d; ++z)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                g.at(0, z, y, x) = static_cast<float>(axis_coord(x, w));
                g.at(1, z, y, x) = static_cast<float>(axis_coord(y, h));
                g.at(2, z, y, x) = static_cast<float>(axis_coord(z, d));
            }
    return g;
}

Tensor grid_sample(const Tensor &vol, const Tensor &phi, SampleMode mode, PadMode) {
    check_is_field(phi);
    check_same_spatial(vol, phi);
    const int64_t d = vol.dim(0), h = vol.dim(1), w = vol.dim(2);
    const int64_t n = d * h * w;
    Tensor out({d, h, w});
    const float *px = phi.data();
    const float *py = px + n;
    const float *pz = py + n;
    int64_t i = 0;
    for (int64_t z = 0; z < d; ++z)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x, ++i) {
                const double gx = axis_coord(x, w) + static_cast<double>(px[i]);
                const double gy = axis_coord(y, h) + static_cast<double>(py[i]);
                const double gz = axis_coord(z, d) + static_cast<double>(pz[i]);
                if (mode == SampleMode::Nearest) {
                    out[i] = vol.at(resolve_nearest(gz, d), resolve_nearest(gy, h),
                                    resolve_nearest(gx, w));
                    continue;
                }
                const AxisSample ax = resolve_axis(gx, w);
                const AxisSample ay = resolve_axis(gy, h);
                const AxisSample az = resolve_axis(gz, d);
                double acc = 0.0;
                for (int cz = 0; cz < 2; ++cz)
                    for (int cy = 0; cy < 2; ++cy)
                        for (int cx = 0; cx < 2; ++cx) {
                            const double wgt = (cx ? ax.t : 1.0 - ax.t) * (cy ? ay.t : 1.0 - ay.t) *
                                               (cz ? az.t : 1.0 - az.t);
                            acc += wgt * static_cast<double>(vol.at(cz ? az.i1 : az.i0,
                                                                    cy ? ay.i1 : ay.i0,
                                                                    cx ? ax.i1 : ax.i0));
                        }
                out[i] = static_cast<float>(acc);
            }
    return out;
}

Tensor upsample_field(const Tensor &phi, const std::array<int64_t, 3> &target_shape) {
    check_is_field(phi);
    const int64_t sd = phi.dim(1), sh = phi.dim(2), sw = phi.dim(3);
    const int64_t td = target_shape[0], th = target_shape[1], tw = target_shape[2];
    if (td < sd || th < sh || tw < sw)
        throw ValidationError("upsample_field target " + shape_to_string({td, th, tw}) +
                              " must be >= source " + shape_to_string({sd, sh, sw}) +
                              " on every axis");
    Tensor out({3, td, th, tw});
    // align-corners mapping: target index i lands at i*(sn-1)/(tn-1) in source
    const double rz = td > 1 ? static_cast<double>(sd - 1) / static_cast<double>(td - 1) : 0.0;
    const double ry = th > 1 ? static_cast<double>(sh - 1) / static_cast<double>(th - 1) : 0.0;
    const double rx = tw > 1 ? static_cast<double>(sw - 1) / static_cast<double>(tw - 1) : 0.0;
    for (int64_t z = 0; z < td; ++z) {
        const double fz = clampd(static_cast<double>(z) * rz, 0.0, static_cast<double>(sd - 1));
        const int64_t z0 = std::min(static_cast<int64_t>(std::floor(fz)), sd - 1);
        const int64_t z1 = std::min(z0 + 1, sd - 1);
        const double tz = fz - static_cast<double>(z0);
        for (int64_t y = 0; y < th; ++y) {
            const double fy = clampd(static_cast<double>(y) * ry, 0.0, static_cast<double>(sh - 1));
            const int64_t y0 = std::min(static_cast<int64_t>(std::floor(fy)), sh - 1);
            const int64_t y1 = std::min(y0 + 1, sh - 1);
            const double ty = fy - static_cast<double>(y0);
            for (int64_t x = 0; x < tw; ++x) {
                const double fx = clampd(static_cast<double>(x) * rx, 0.0,
                                         static_cast<double>(sw - 1));
                const int64_t x0 = std::min(static_cast<int64_t>(std::floor(fx)), sw - 1);
                const int64_t x1 = std::min(x0 + 1, sw - 1);
                const double tx = fx - static_cast<double>(x0);
                for (int64_t c = 0; c < 3; ++c) {
                    double acc = 0.0;
                    for (int cz = 0; cz < 2; ++cz)
                        for (int cy = 0; cy < 2; ++cy)
                            for (int cx = 0; cx < 2; ++cx) {
                                const double wgt = (cx ? tx : 1.0 - tx) * (cy ? ty : 1.0 - ty) *
                                                   (cz ? tz : 1.0 - tz);
                                acc += wgt * static_cast<double>(phi.at(c, cz ? z1 : z0,
                                                                        cy ? y1 : y0,
                                                                        cx ? x1 : x0));
                            }
                    out.at(c, z, y, x) = static_cast<float>(acc);
                }
            }
        }
    }
    return out;
}

Tensor apply_rigid_to_field(const Tensor &phi, const RigidTransform &T) {
    check_is_field(phi);
    const int64_t d = phi.dim(1), h = phi.dim(2), w = phi.dim(3);
    const int64_t n = d * h * w;
    Tensor out({3, d, h, w});
    const float *px = phi.data();
    const float *py = px + n;
    const float *pz = py + n;
    int64_t i = 0;
    for (int64_t z = 0; z < d; ++z)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x, ++i) {
                const double gx = axis_coord(x, w), gy = axis_coord(y, h), gz = axis_coord(z, d);
                const double sx = gx + px[i], sy = gy + py[i], sz = gz + pz[i];
                out[i] = static_cast<float>(T.R[0] * sx + T.R[1] * sy + T.R[2] * sz + T.t[0] - gx);
                out[n + i] =
                    static_cast<float>(T.R[3] * sx + T.R[4] * sy + T.R[5] * sz + T.t[1] - gy);
                out[2 * n + i] =
                    static_cast<float>(T.R[6] * sx + T.R[7] * sy + T.R[8] * sz + T.t[2] - gz);
            }
    return out;
}

Tensor spatial_gradient(const Tensor &phi) {
    check_is_field(phi);
    const int64_t d = phi.dim(1), h = phi.dim(2), w = phi.dim(3);
    Tensor g({9, d, h, w});
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t z = 0; z < d; ++z)
            for (int64_t y = 0; y < h; ++y)
                for (int64_t x = 0; x < w; ++x) {
                    const float v = phi.at(c, z, y, x);
                    g.at(c * 3 + 0, z, y, x) = (x + 1 < w) ? phi.at(c, z, y, x + 1) - v : 0.0f;
                    g.at(c * 3 + 1, z, y, x) = (y + 1 < h) ? phi.at(c, z, y + 1, x) - v : 0.0f;
                    g.at(c * 3 + 2, z, y, x) = (z + 1 < d) ? phi.at(c, z + 1, y, x) - v : 0.0f;
                }
    return g;
}

Tensor jacobian_determinant(const Tensor &phi) {
    check_is_field(phi);
    const int64_t d = phi.dim(1), h = phi.dim(2), w = phi.dim(3);
    // displacement in voxel units per channel; channel c moves along axis c
    const double scale[3] = {(w - 1) * 0.5, (h - 1) * 0.5, (d - 1) * 0.5};
    Tensor out({d, h, w});
    // central difference of u_c along a spatial axis, one-sided at the borders
    const auto diff = [&](int64_t c, int64_t z, int64_t y, int64_t x, int axis) {
        int64_t lo[3] = {z, y, x}, hi[3] = {z, y, x};
        const int64_t n = axis == 0 ? w : (axis == 1 ? h : d);
        const int idx = axis == 0 ? 2 : (axis == 1 ? 1 : 0); // (z,y,x) slot for this axis
        hi[idx] = std::min(hi[idx] + 1, n - 1);
        lo[idx] = std::max(lo[idx] - 1, int64_t{0});
        const double dv = static_cast<double>(phi.at(c, hi[0], hi[1], hi[2])) -
                          static_cast<double>(phi.at(c, lo[0], lo[1], lo[2]));
        return dv * scale[static_cast<size_t>(c)] / static_cast<double>(hi[idx] - lo[idx]);
    };
    for (int64_t z = 0; z < d; ++z)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                double J[3][3];
                for (int64_t c = 0; c < 3; ++c)
                    for (int a = 0; a < 3; ++a)
                        J[c][a] = (c == a ? 1.0 : 0.0) + diff(c, z, y, x, a);
                const double det = J[0][0] * (J[1][1] * J[2][2] - J[1][2] * J[2][1]) -
                                   J[0][1] * (J[1][0] * J[2][2] - J[1][2] * J[2][0]) +
                                   J[0][2] * (J[1][0] * J[2][1] - J[1][1] * J[2][0]);
                out.at(z, y, x) = static_cast<float>(det);
            }
    return out;
}

} // namespace ldreg
