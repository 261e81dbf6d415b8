#include "kernels.hpp"

#include <algorithm>
#include <cmath>

#include "ldreg/errors.hpp"
#include "ldreg/warp.hpp"

namespace ldreg::kern {

namespace {

inline double axis_coord(int64_t i, int64_t n) {
    return (2.0 * static_cast<double>(i) - static_cast<double>(n - 1)) / static_cast<double>(n - 1);
}

// NaN-safe: a non-finite v collapses to lo instead of propagating into
// index arithmetic
inline double clampd(double v, double lo, double hi) {
    return v >= lo ? (v <= hi ? v : hi) : lo;
}

struct AxisSample {
    int64_t i0, i1;
    double t;
    bool clamped;
};

inline AxisSample resolve_axis(double g, int64_t n) {
    const double raw = (g + 1.0) * 0.5 * static_cast<double>(n - 1);
    // NaN coordinates (diverged fields) keep indices safe but poison the
    // sampled value, so the loss stays detectably non-finite
    if (std::isnan(raw))
        return {0, 0, raw, true};
    const double f = clampd(raw, 0.0, static_cast<double>(n - 1));
    const int64_t i0 = std::min(static_cast<int64_t>(std::floor(f)), n - 1);
    return {i0, std::min(i0 + 1, n - 1), f - static_cast<double>(i0),
            raw < 0.0 || raw > static_cast<double>(n - 1)};
}

inline int64_t out_dim(int64_t n, int stride) { return (n - 1) / stride + 1; }

// y[i] += s * x[i]
inline void axpy(float *y, const float *x, float s, int64_t n) {
    for (int64_t i = 0; i < n; ++i)
        y[i] += s * x[i];
}

} // namespace

float lane_dot(const float *a, const float *b, int64_t n) {
    float s[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        for (int j = 0; j < 8; ++j)
            s[j] += a[i + j] * b[i + j];
    float tail = 0.0f;
    for (; i < n; ++i)
        tail += a[i] * b[i];
    return (((s[0] + s[1]) + (s[2] + s[3])) + ((s[4] + s[5]) + (s[6] + s[7]))) + tail;
}

Tensor conv3d_fwd(const Tensor &x, const Tensor &w, const Tensor &b, int stride) {
    const int64_t ci = x.dim(0), d = x.dim(1), h = x.dim(2), ww = x.dim(3);
    const int64_t co = w.dim(0), k = w.dim(2);
    if (w.rank() != 5 || w.dim(1) != ci || (k != 1 && k != 3) || w.dim(3) != k || w.dim(4) != k)
        throw ValidationError("conv3d weight shape " + w.shape_str() + " incompatible with input " +
                              x.shape_str());
    if (b.numel() != co)
        throw ValidationError("conv3d bias length mismatch");
    if (stride != 1 && stride != 2)
        throw ValidationError("conv3d stride must be 1 or 2");
    const int64_t od = out_dim(d, stride), oh = out_dim(h, stride), ow = out_dim(ww, stride);
    Tensor y({co, od, oh, ow});

    if (k == 1) {
        if (stride == 1) {
            const int64_t n = d * h * ww;
            for (int64_t o = 0; o < co; ++o) {
                float *dst = y.data() + o * n;
                std::fill(dst, dst + n, b[o]);
                for (int64_t c = 0; c < ci; ++c)
                    axpy(dst, x.data() + c * n, w[o * ci + c], n);
            }
        } else {
            for (int64_t o = 0; o < co; ++o)
                for (int64_t z = 0; z < od; ++z)
                    for (int64_t yy = 0; yy < oh; ++yy)
                        for (int64_t xx = 0; xx < ow; ++xx) {
                            float acc = b[o];
                            for (int64_t c = 0; c < ci; ++c)
                                acc += w[o * ci + c] * x.at(c, z * 2, yy * 2, xx * 2);
                            y.at(o, z, yy, xx) = acc;
                        }
        }
        return y;
    }

    if (stride == 1) {
        for (int64_t o = 0; o < co; ++o) {
            for (int64_t z = 0; z < od; ++z)
                for (int64_t yy = 0; yy < oh; ++yy) {
                    float *acc = &y.at(o, z, yy, 0);
                    std::fill(acc, acc + ow, b[o]);
                    for (int64_t c = 0; c < ci; ++c)
                        for (int64_t kz = 0; kz < 3; ++kz) {
                            const int64_t iz = z + kz - 1;
                            if (iz < 0 || iz >= d)
                                continue;
                            for (int64_t ky = 0; ky < 3; ++ky) {
                                const int64_t iy = yy + ky - 1;
                                if (iy < 0 || iy >= h)
                                    continue;
                                const float *row = &x.at(c, iz, iy, 0);
                                for (int64_t kx = 0; kx < 3; ++kx) {
                                    const float wv =
                                        w[(((o * ci + c) * 3 + kz) * 3 + ky) * 3 + kx];
                                    const int64_t off = kx - 1; // input = output + off
                                    const int64_t lo = std::max(int64_t{0}, -off);
                                    const int64_t len = ww - std::abs(off);
                                    axpy(acc + lo, row + lo + off, wv, len);
                                }
                            }
                        }
                }
        }
    } else {
        for (int64_t o = 0; o < co; ++o)
            for (int64_t z = 0; z < od; ++z)
                for (int64_t yy = 0; yy < oh; ++yy)
                    for (int64_t xx = 0; xx < ow; ++xx) {
                        float acc = b[o];
                        for (int64_t c = 0; c < ci; ++c)
                            for (int64_t kz = 0; kz < 3; ++kz) {
                                const int64_t iz = z * 2 + kz - 1;
                                if (iz < 0 || iz >= d)
                                    continue;
                                for (int64_t ky = 0; ky < 3; ++ky) {
                                    const int64_t iy = yy * 2 + ky - 1;
                                    if (iy < 0 || iy >= h)
                                        continue;
                                    for (int64_t kx = 0; kx < 3; ++kx) {
                                        const int64_t ix = xx * 2 + kx - 1;
                                        if (ix < 0 || ix >= ww)
                                            continue;
                                        acc += w[(((o * ci + c) * 3 + kz) * 3 + ky) * 3 + kx] *
                                               x.at(c, iz, iy, ix);
                                    }
                                }
                            }
                        y.at(o, z, yy, xx) = acc;
                    }
    }
    return y;
}

void conv3d_bwd(const Tensor &x, const Tensor &w, const Tensor &dy, int stride, Tensor *dx,
                Tensor &dw, Tensor &db) {
    const int64_t ci = x.dim(0), d = x.dim(1), h = x.dim(2), ww = x.dim(3);
    const int64_t co = w.dim(0), k = w.dim(2);
    const int64_t od = dy.dim(1), oh = dy.dim(2), ow = dy.dim(3);
    const int64_t on = od * oh * ow;

    for (int64_t o = 0; o < co; ++o) {
        double s = 0.0;
        const float *p = dy.data() + o * on;
        for (int64_t i = 0; i < on; ++i)
            s += p[i];
        db[o] += static_cast<float>(s);
    }

    if (k == 1) {
        if (stride == 1) {
            for (int64_t o = 0; o < co; ++o)
                for (int64_t c = 0; c < ci; ++c)
                    dw[o * ci + c] += lane_dot(dy.data() + o * on, x.data() + c * on, on);
            if (dx)
                for (int64_t c = 0; c < ci; ++c)
                    for (int64_t o = 0; o < co; ++o)
                        axpy(dx->data() + c * on, dy.data() + o * on, w[o * ci + c], on);
        } else {
            for (int64_t o = 0; o < co; ++o)
                for (int64_t z = 0; z < od; ++z)
                    for (int64_t yy = 0; yy < oh; ++yy)
                        for (int64_t xx = 0; xx < ow; ++xx) {
                            const float g = dy.at(o, z, yy, xx);
                            for (int64_t c = 0; c < ci; ++c) {
                                dw[o * ci + c] += g * x.at(c, z * 2, yy * 2, xx * 2);
                                if (dx)
                                    dx->at(c, z * 2, yy * 2, xx * 2) += g * w[o * ci + c];
                            }
                        }
        }
        return;
    }

    if (stride == 1) {
        for (int64_t o = 0; o < co; ++o)
            for (int64_t c = 0; c < ci; ++c)
                for (int64_t kz = 0; kz < 3; ++kz)
                    for (int64_t ky = 0; ky < 3; ++ky)
                        for (int64_t kx = 0; kx < 3; ++kx) {
                            const int64_t off = kx - 1;
                            const int64_t lo = std::max(int64_t{0}, -off);
                            const int64_t len = ww - std::abs(off);
                            double acc = 0.0;
                            for (int64_t z = 0; z < od; ++z) {
                                const int64_t iz = z + kz - 1;
                                if (iz < 0 || iz >= d)
                                    continue;
                                for (int64_t yy = 0; yy < oh; ++yy) {
                                    const int64_t iy = yy + ky - 1;
                                    if (iy < 0 || iy >= h)
                                        continue;
                                    acc += lane_dot(&dy.at(o, z, yy, lo), &x.at(c, iz, iy, lo + off),
                                                    len);
                                }
                            }
                            dw[(((o * ci + c) * 3 + kz) * 3 + ky) * 3 + kx] +=
                                static_cast<float>(acc);
                        }
        if (dx) {
            for (int64_t c = 0; c < ci; ++c)
                for (int64_t o = 0; o < co; ++o)
                    for (int64_t kz = 0; kz < 3; ++kz)
                        for (int64_t ky = 0; ky < 3; ++ky)
                            for (int64_t kx = 0; kx < 3; ++kx) {
                                const float wv = w[(((o * ci + c) * 3 + kz) * 3 + ky) * 3 + kx];
                                const int64_t off = kx - 1;
                                const int64_t lo = std::max(int64_t{0}, -off);
                                const int64_t len = ww - std::abs(off);
                                for (int64_t z = 0; z < od; ++z) {
                                    const int64_t iz = z + kz - 1;
                                    if (iz < 0 || iz >= d)
                                        continue;
                                    for (int64_t yy = 0; yy < oh; ++yy) {
                                        const int64_t iy = yy + ky - 1;
                                        if (iy < 0 || iy >= h)
                                            continue;
                                        axpy(&dx->at(c, iz, iy, lo + off), &dy.at(o, z, yy, lo), wv,
                                             len);
                                    }
                                }
                            }
        }
    } else {
        for (int64_t o = 0; o < co; ++o)
            for (int64_t z = 0; z < od; ++z)
                for (int64_t yy = 0; yy < oh; ++yy)
                    for (int64_t xx = 0; xx < ow; ++xx) {
                        const float g = dy.at(o, z, yy, xx);
                        for (int64_t c = 0; c < ci; ++c)
                            for (int64_t kz = 0; kz < 3; ++kz) {
                                const int64_t iz = z * 2 + kz - 1;
                                if (iz < 0 || iz >= d)
                                    continue;
                                for (int64_t ky = 0; ky < 3; ++ky) {
                                    const int64_t iy = yy * 2 + ky - 1;
                                    if (iy < 0 || iy >= h)
                                        continue;
                                    for (int64_t kx = 0; kx < 3; ++kx) {
                                        const int64_t ix = xx * 2 + kx - 1;
                                        if (ix < 0 || ix >= ww)
                                            continue;
                                        const int64_t wi =
                                            (((o * ci + c) * 3 + kz) * 3 + ky) * 3 + kx;
                                        dw[wi] += g * x.at(c, iz, iy, ix);
                                        if (dx)
                                            dx->at(c, iz, iy, ix) += g * w[wi];
                                    }
                                }
                            }
                    }
    }
}

Tensor lrelu_fwd(const Tensor &x, float slope) {
    Tensor y(x.shape());
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i)
        y[i] = x[i] > 0.0f ? x[i] : slope * x[i];
    return y;
}

void lrelu_bwd(const Tensor &x, const Tensor &dy, float slope, Tensor &dx) {
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i)
        dx[i] += dy[i] * (x[i] > 0.0f ? 1.0f : slope);
}

Tensor norm_fwd(const Tensor &x, const Tensor &gamma, const Tensor &beta, float eps,
                std::vector<double> &mean, std::vector<double> &inv_std) {
    const int64_t c = x.dim(0), n = x.numel() / c;
    if (gamma.numel() != c || beta.numel() != c)
        throw ValidationError("norm affine parameters do not match channel count");
    mean.assign(static_cast<size_t>(c), 0.0);
    inv_std.assign(static_cast<size_t>(c), 0.0);
    Tensor y(x.shape());
    for (int64_t ch = 0; ch < c; ++ch) {
        const float *p = x.data() + ch * n;
        double s = 0.0;
        for (int64_t i = 0; i < n; ++i)
            s += p[i];
        const double mu = s / static_cast<double>(n);
        double v = 0.0;
        for (int64_t i = 0; i < n; ++i) {
            const double dd = p[i] - mu;
            v += dd * dd;
        }
        const double is = 1.0 / std::sqrt(v / static_cast<double>(n) + eps);
        mean[static_cast<size_t>(ch)] = mu;
        inv_std[static_cast<size_t>(ch)] = is;
        const float g = gamma[ch], b = beta[ch];
        float *q = y.data() + ch * n;
        const float muf = static_cast<float>(mu), isf = static_cast<float>(is);
        for (int64_t i = 0; i < n; ++i)
            q[i] = g * ((p[i] - muf) * isf) + b;
    }
    return y;
}

void norm_bwd(const Tensor &x, const Tensor &gamma, const Tensor &dy,
              const std::vector<double> &mean, const std::vector<double> &inv_std, Tensor *dx,
              Tensor &dgamma, Tensor &dbeta) {
    const int64_t c = x.dim(0), n = x.numel() / c;
    for (int64_t ch = 0; ch < c; ++ch) {
        const float *px = x.data() + ch * n;
        const float *pdy = dy.data() + ch * n;
        const double mu = mean[static_cast<size_t>(ch)], is = inv_std[static_cast<size_t>(ch)];
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int64_t i = 0; i < n; ++i) {
            const double xhat = (px[i] - mu) * is;
            sum_dy += pdy[i];
            sum_dy_xhat += pdy[i] * xhat;
        }
        dbeta[ch] += static_cast<float>(sum_dy);
        dgamma[ch] += static_cast<float>(sum_dy_xhat);
        if (dx) {
            const double g_is = gamma[ch] * is;
            const double m_dy = sum_dy / static_cast<double>(n);
            const double m_dyx = sum_dy_xhat / static_cast<double>(n);
            float *pdx = dx->data() + ch * n;
            for (int64_t i = 0; i < n; ++i) {
                const double xhat = (px[i] - mu) * is;
                pdx[i] += static_cast<float>(g_is * (pdy[i] - m_dy - xhat * m_dyx));
            }
        }
    }
}

Tensor avg_pool2_fwd(const Tensor &x) {
    const int64_t c = x.dim(0), d = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (d % 2 || h % 2 || w % 2)
        throw ValidationError("avg_pool2 needs even spatial dims, got " + x.shape_str());
    Tensor y({c, d / 2, h / 2, w / 2});
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t z = 0; z < d / 2; ++z)
            for (int64_t yy = 0; yy < h / 2; ++yy)
                for (int64_t xx = 0; xx < w / 2; ++xx) {
                    float s = 0.0f;
                    for (int a = 0; a < 2; ++a)
                        for (int b = 0; b < 2; ++b)
                            for (int e = 0; e < 2; ++e)
                                s += x.at(ch, 2 * z + a, 2 * yy + b, 2 * xx + e);
                    y.at(ch, z, yy, xx) = s * 0.125f;
                }
    return y;
}

void avg_pool2_bwd(const Tensor &dy, Tensor &dx) {
    const int64_t c = dy.dim(0), d = dy.dim(1), h = dy.dim(2), w = dy.dim(3);
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t z = 0; z < d; ++z)
            for (int64_t yy = 0; yy < h; ++yy)
                for (int64_t xx = 0; xx < w; ++xx) {
                    const float g = dy.at(ch, z, yy, xx) * 0.125f;
                    for (int a = 0; a < 2; ++a)
                        for (int b = 0; b < 2; ++b)
                            for (int e = 0; e < 2; ++e)
                                dx.at(ch, 2 * z + a, 2 * yy + b, 2 * xx + e) += g;
                }
}

namespace {

struct LerpAxis {
    int64_t i0, i1;
    double t;
};

inline LerpAxis lerp_axis(int64_t i, int64_t tn, int64_t sn) {
    const double r = tn > 1 ? static_cast<double>(sn - 1) / static_cast<double>(tn - 1) : 0.0;
    const double f = clampd(static_cast<double>(i) * r, 0.0, static_cast<double>(sn - 1));
    const int64_t i0 = std::min(static_cast<int64_t>(std::floor(f)), sn - 1);
    return {i0, std::min(i0 + 1, sn - 1), f - static_cast<double>(i0)};
}

} // namespace

Tensor upsample3_fwd(const Tensor &x, const std::array<int64_t, 3> &target) {
    const int64_t c = x.dim(0), sd = x.dim(1), sh = x.dim(2), sw = x.dim(3);
    const int64_t td = target[0], th = target[1], tw = target[2];
    if (td < sd || th < sh || tw < sw)
        throw ValidationError("upsample3 target must be >= source per axis");
    Tensor y({c, td, th, tw});
    for (int64_t z = 0; z < td; ++z) {
        const LerpAxis az = lerp_axis(z, td, sd);
        for (int64_t yy = 0; yy < th; ++yy) {
            const LerpAxis ay = lerp_axis(yy, th, sh);
            for (int64_t xx = 0; xx < tw; ++xx) {
                const LerpAxis ax = lerp_axis(xx, tw, sw);
                for (int64_t ch = 0; ch < c; ++ch) {
                    double acc = 0.0;
                    for (int cz = 0; cz < 2; ++cz)
                        for (int cy = 0; cy < 2; ++cy)
                            for (int cx = 0; cx < 2; ++cx) {
                                const double wgt = (cx ? ax.t : 1.0 - ax.t) *
                                                   (cy ? ay.t : 1.0 - ay.t) *
                                                   (cz ? az.t : 1.0 - az.t);
                                acc += wgt * static_cast<double>(x.at(ch, cz ? az.i1 : az.i0,
                                                                      cy ? ay.i1 : ay.i0,
                                                                      cx ? ax.i1 : ax.i0));
                            }
                    y.at(ch, z, yy, xx) = static_cast<float>(acc);
                }
            }
        }
    }
    return y;
}

void upsample3_bwd(const Tensor &dy, Tensor &dx) {
    const int64_t c = dx.dim(0), sd = dx.dim(1), sh = dx.dim(2), sw = dx.dim(3);
    const int64_t td = dy.dim(1), th = dy.dim(2), tw = dy.dim(3);
    for (int64_t z = 0; z < td; ++z) {
        const LerpAxis az = lerp_axis(z, td, sd);
        for (int64_t yy = 0; yy < th; ++yy) {
            const LerpAxis ay = lerp_axis(yy, th, sh);
            for (int64_t xx = 0; xx < tw; ++xx) {
                const LerpAxis ax = lerp_axis(xx, tw, sw);
                for (int64_t ch = 0; ch < c; ++ch) {
                    const float g = dy.at(ch, z, yy, xx);
                    for (int cz = 0; cz < 2; ++cz)
                        for (int cy = 0; cy < 2; ++cy)
                            for (int cx = 0; cx < 2; ++cx) {
                                const double wgt = (cx ? ax.t : 1.0 - ax.t) *
                                                   (cy ? ay.t : 1.0 - ay.t) *
                                                   (cz ? az.t : 1.0 - az.t);
                                dx.at(ch, cz ? az.i1 : az.i0, cy ? ay.i1 : ay.i0,
                                      cx ? ax.i1 : ax.i0) += static_cast<float>(wgt * g);
                            }
                }
            }
        }
    }
}

Tensor fc_fwd(const Tensor &x, const Tensor &w, const Tensor &b) {
    const int64_t n = x.numel(), m = w.dim(0);
    if (w.rank() != 2 || w.dim(1) != n || b.numel() != m)
        throw ValidationError("fc shape mismatch: x " + x.shape_str() + ", w " + w.shape_str());
    Tensor y({m});
    for (int64_t i = 0; i < m; ++i)
        y[i] = b[i] + lane_dot(w.data() + i * n, x.data(), n);
    return y;
}

void fc_bwd(const Tensor &x, const Tensor &w, const Tensor &dy, Tensor *dx, Tensor &dw,
            Tensor &db) {
    const int64_t n = x.numel(), m = w.dim(0);
    for (int64_t i = 0; i < m; ++i) {
        const float g = dy[i];
        db[i] += g;
        axpy(dw.data() + i * n, x.data(), g, n);
        if (dx)
            axpy(dx->data(), w.data() + i * n, g, n);
    }
}

Tensor channel_max_fwd(const Tensor &x, std::vector<int32_t> &argmax) {
    const int64_t c = x.dim(0), n = x.numel() / c;
    argmax.assign(static_cast<size_t>(n), 0);
    Tensor y({1, x.dim(1), x.dim(2), x.dim(3)});
    for (int64_t i = 0; i < n; ++i) {
        float best = x[i];
        int32_t arg = 0;
        for (int64_t ch = 1; ch < c; ++ch) {
            const float v = x[ch * n + i];
            if (v > best) {
                best = v;
                arg = static_cast<int32_t>(ch);
            }
        }
        y[i] = best;
        argmax[static_cast<size_t>(i)] = arg;
    }
    return y;
}

void channel_max_bwd(const Tensor &dy, const std::vector<int32_t> &argmax, Tensor &dx) {
    const int64_t n = dy.numel();
    const int64_t cn = dx.numel() / dx.dim(0);
    for (int64_t i = 0; i < n; ++i)
        dx[argmax[static_cast<size_t>(i)] * cn + i] += dy[i];
}

Tensor grid_sample_fwd(const Tensor &vol, const Tensor &phi) {
    return ldreg::grid_sample(vol, phi, SampleMode::Linear);
}

void grid_sample_bwd(const Tensor &vol, const Tensor &phi, const Tensor &dy, Tensor *dvol,
                     Tensor *dphi) {
    const int64_t d = vol.dim(0), h = vol.dim(1), w = vol.dim(2);
    const int64_t n = d * h * w;
    const float *px = phi.data();
    const float *py = px + n;
    const float *pz = py + n;
    int64_t i = 0;
    for (int64_t z = 0; z < d; ++z)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x, ++i) {
                const float g = dy[i];
                if (g == 0.0f)
                    continue;
                const AxisSample ax = resolve_axis(axis_coord(x, w) + px[i], w);
                const AxisSample ay = resolve_axis(axis_coord(y, h) + py[i], h);
                const AxisSample az = resolve_axis(axis_coord(z, d) + pz[i], d);
                const double wx[2] = {1.0 - ax.t, ax.t};
                const double wy[2] = {1.0 - ay.t, ay.t};
                const double wz[2] = {1.0 - az.t, az.t};
                if (dvol) {
                    for (int cz = 0; cz < 2; ++cz)
                        for (int cy = 0; cy < 2; ++cy)
                            for (int cx = 0; cx < 2; ++cx)
                                dvol->at(cz ? az.i1 : az.i0, cy ? ay.i1 : ay.i0,
                                         cx ? ax.i1 : ax.i0) +=
                                    static_cast<float>(g * wx[cx] * wy[cy] * wz[cz]);
                }
                if (dphi) {
                    double dfx = 0.0, dfy = 0.0, dfz = 0.0;
                    for (int cz = 0; cz < 2; ++cz)
                        for (int cy = 0; cy < 2; ++cy) {
                            const double wyz = wy[cy] * wz[cz];
                            const double vx0 = vol.at(cz ? az.i1 : az.i0, cy ? ay.i1 : ay.i0, ax.i0);
                            const double vx1 = vol.at(cz ? az.i1 : az.i0, cy ? ay.i1 : ay.i0, ax.i1);
                            dfx += wyz * (vx1 - vx0);
                        }
                    for (int cz = 0; cz < 2; ++cz)
                        for (int cx = 0; cx < 2; ++cx) {
                            const double wxz = wx[cx] * wz[cz];
                            const double vy0 = vol.at(cz ? az.i1 : az.i0, ay.i0, cx ? ax.i1 : ax.i0);
                            const double vy1 = vol.at(cz ? az.i1 : az.i0, ay.i1, cx ? ax.i1 : ax.i0);
                            dfy += wxz * (vy1 - vy0);
                        }
                    for (int cy = 0; cy < 2; ++cy)
                        for (int cx = 0; cx < 2; ++cx) {
                            const double wxy = wx[cx] * wy[cy];
                            const double vz0 = vol.at(az.i0, cy ? ay.i1 : ay.i0, cx ? ax.i1 : ax.i0);
                            const double vz1 = vol.at(az.i1, cy ? ay.i1 : ay.i0, cx ? ax.i1 : ax.i0);
                            dfz += wxy * (vz1 - vz0);
                        }
                    // d f / d phi is (n-1)/2 unless the location clamped
                    if (!ax.clamped)
                        (*dphi)[i] += static_cast<float>(g * dfx * 0.5 * static_cast<double>(w - 1));
                    if (!ay.clamped)
                        (*dphi)[n + i] +=
                            static_cast<float>(g * dfy * 0.5 * static_cast<double>(h - 1));
                    if (!az.clamped)
                        (*dphi)[2 * n + i] +=
                            static_cast<float>(g * dfz * 0.5 * static_cast<double>(d - 1));
                }
            }
}

Tensor apply_rigid_fwd(const Tensor &phi, const Tensor &r9, const Tensor &t3) {
    RigidTransform t;
    for (int i = 0; i < 9; ++i)
        t.R[static_cast<size_t>(i)] = r9[i];
    for (int i = 0; i < 3; ++i)
        t.t[static_cast<size_t>(i)] = t3[i];
    return apply_rigid_to_field(phi, t);
}

void apply_rigid_bwd(const Tensor &phi, const Tensor &r9, const Tensor &dy, Tensor *dphi,
                     Tensor *dr9, Tensor *dt3) {
    const int64_t d = phi.dim(1), h = phi.dim(2), w = phi.dim(3);
    const int64_t n = d * h * w;
    double dr[9] = {0, 0, 0, 0, 0, 0, 0, 0, 0};
    double dt[3] = {0, 0, 0};
    int64_t i = 0;
    for (int64_t z = 0; z < d; ++z)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x, ++i) {
                const double s[3] = {axis_coord(x, w) + phi[i], axis_coord(y, h) + phi[n + i],
                                     axis_coord(z, d) + phi[2 * n + i]};
                const double g[3] = {dy[i], dy[n + i], dy[2 * n + i]};
                for (int c = 0; c < 3; ++c) {
                    dt[c] += g[c];
                    for (int k = 0; k < 3; ++k)
                        dr[c * 3 + k] += g[c] * s[k];
                }
                if (dphi)
                    for (int k = 0; k < 3; ++k)
                        (*dphi)[k * n + i] += static_cast<float>(
                            g[0] * r9[k] + g[1] * r9[3 + k] + g[2] * r9[6 + k]);
            }
    if (dr9)
        for (int k = 0; k < 9; ++k)
            (*dr9)[k] += static_cast<float>(dr[k]);
    if (dt3)
        for (int k = 0; k < 3; ++k)
            (*dt3)[k] += static_cast<float>(dt[k]);
}

Tensor spatial_grad_fwd(const Tensor &phi) { return ldreg::spatial_gradient(phi); }

void spatial_grad_bwd(const Tensor &dy, Tensor &dphi) {
    const int64_t d = dphi.dim(1), h = dphi.dim(2), w = dphi.dim(3);
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t z = 0; z < d; ++z)
            for (int64_t y = 0; y < h; ++y)
                for (int64_t x = 0; x < w; ++x) {
                    if (x + 1 < w) {
                        const float g = dy.at(c * 3 + 0, z, y, x);
                        dphi.at(c, z, y, x + 1) += g;
                        dphi.at(c, z, y, x) -= g;
                    }
                    if (y + 1 < h) {
                        const float g = dy.at(c * 3 + 1, z, y, x);
                        dphi.at(c, z, y + 1, x) += g;
                        dphi.at(c, z, y, x) -= g;
                    }
                    if (z + 1 < d) {
                        const float g = dy.at(c * 3 + 2, z, y, x);
                        dphi.at(c, z + 1, y, x) += g;
                        dphi.at(c, z, y, x) -= g;
                    }
                }
}

double mean_sq_diff(const Tensor &a, const Tensor &b) {
    double s = 0.0;
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) {
        const double dd = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        s += dd * dd;
    }
    return s / static_cast<double>(n);
}

double mean_abs(const Tensor &x) {
    double s = 0.0;
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i)
        s += std::abs(static_cast<double>(x[i]));
    return s / static_cast<double>(n);
}

double mean_sq(const Tensor &x) {
    double s = 0.0;
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i)
        s += static_cast<double>(x[i]) * static_cast<double>(x[i]);
    return s / static_cast<double>(n);
}

} // namespace ldreg::kern
