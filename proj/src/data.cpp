#include "ldreg/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ldreg/errors.hpp"
#include "ldreg/rng.hpp"
#include "ldreg/warp.hpp"

namespace ldreg {

namespace {

constexpr uint64_t kSaltPhantomTexture = 0x7068616e746f6dull; // "phantom"
constexpr uint64_t kSaltDeformation = 0x6465666f726dull;      // "deform"

inline double clampd(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

inline double smoothstep01(double t) {
    t = clampd(t, 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

// analytic phantom geometry in relative coordinates (z,y,x order of shape)
struct Ellipsoid {
    double cz, cy, cx, rz, ry, rx;
    double rho(double z, double y, double x, int64_t d, int64_t h, int64_t w) const {
        const double dz = (z / static_cast<double>(d - 1) - cz) / rz;
        const double dy = (y / static_cast<double>(h - 1) - cy) / ry;
        const double dx = (x / static_cast<double>(w - 1) - cx) / rx;
        return std::sqrt(dz * dz + dy * dy + dx * dx);
    }
};
struct Tube { // axis along z
    double cy, cx, r, z0, z1;
};

constexpr Ellipsoid kBody{0.50, 0.52, 0.50, 0.40, 0.44, 0.42};
constexpr Ellipsoid kHeart{0.45, 0.58, 0.50, 0.13, 0.13, 0.15};
constexpr Tube kAorta{0.35, 0.32, 0.050, 0.25, 0.75};
constexpr Tube kTrachea{0.35, 0.68, 0.040, 0.25, 0.75};
constexpr Tube kEsophagus{0.30, 0.50, 0.028, 0.28, 0.72};

double tube_rho(const Tube &t, double z, double y, double x, int64_t d, int64_t h, int64_t w) {
    const double zr = z / static_cast<double>(d - 1);
    if (zr < t.z0 || zr > t.z1)
        return 1e9;
    const double dy = y / static_cast<double>(h - 1) - t.cy;
    const double dx = x / static_cast<double>(w - 1) - t.cx;
    return std::sqrt(dy * dy + dx * dx) / t.r;
}

// normalized distances to the four organ surfaces, in label order
void organ_rhos(double z, double y, double x, int64_t d, int64_t h, int64_t w, double rhos[4]) {
    rhos[0] = kHeart.rho(z, y, x, d, h, w);
    rhos[1] = tube_rho(kAorta, z, y, x, d, h, w);
    rhos[2] = tube_rho(kTrachea, z, y, x, d, h, w);
    rhos[3] = tube_rho(kEsophagus, z, y, x, d, h, w);
}

int32_t label_from_rhos(const double rhos[4]) {
    for (int s = 0; s < 4; ++s)
        if (rhos[s] <= 1.0)
            return s + 1;
    return 0;
}

struct LerpAxis {
    int64_t i0, i1;
    double t;
};

LerpAxis lerp_axis(int64_t i, int64_t tn, int64_t sn) {
    const double r = tn > 1 ? static_cast<double>(sn - 1) / static_cast<double>(tn - 1) : 0.0;
    const double f = clampd(static_cast<double>(i) * r, 0.0, static_cast<double>(sn - 1));
    const int64_t i0 = std::min(static_cast<int64_t>(std::floor(f)), sn - 1);
    return {i0, std::min(i0 + 1, sn - 1), f - static_cast<double>(i0)};
}

// one blur pass along `axis` (0=z over D, 1=y over H, 2=x over W)
void blur_axis(Tensor &x, int axis, const std::vector<double> &k) {
    const int64_t c = x.dim(0), d = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int64_t r = static_cast<int64_t>(k.size() / 2);
    const int64_t n = axis == 0 ? d : (axis == 1 ? h : w);
    std::vector<float> line(static_cast<size_t>(n));
    for (int64_t ch = 0; ch < c; ++ch) {
        const int64_t u_max = axis == 0 ? h : d;
        const int64_t v_max = axis == 2 ? h : w;
        for (int64_t u = 0; u < u_max; ++u)
            for (int64_t v = 0; v < v_max; ++v) {
                for (int64_t i = 0; i < n; ++i)
                    line[static_cast<size_t>(i)] =
                        axis == 0 ? x.at(ch, i, u, v)
                                  : (axis == 1 ? x.at(ch, u, i, v) : x.at(ch, u, v, i));
                for (int64_t i = 0; i < n; ++i) {
                    double acc = 0.0, wsum = 0.0;
                    for (int64_t j = -r; j <= r; ++j) {
                        const int64_t p = i + j;
                        if (p < 0 || p >= n)
                            continue;
                        const double kv = k[static_cast<size_t>(j + r)];
                        acc += kv * line[static_cast<size_t>(p)];
                        wsum += kv;
                    }
                    const float out = static_cast<float>(acc / wsum);
                    if (axis == 0)
                        x.at(ch, i, u, v) = out;
                    else if (axis == 1)
                        x.at(ch, u, i, v) = out;
                    else
                        x.at(ch, u, v, i) = out;
                }
            }
    }
}

} // namespace

void SynthConfig::validate() const {
    for (const int64_t d : shape)
        if (d < 8)
            throw ValidationError("synth shape dims must be >= 8, got " +
                                  shape_to_string({shape[0], shape[1], shape[2]}));
    const int64_t smin = *std::min_element(shape.begin(), shape.end());
    if (max_displacement < 0.0 || max_displacement >= static_cast<double>(smin) / 4.0)
        throw ValidationError("max_displacement must lie in [0, min(shape)/4)");
    if (smoothness_sigma < 0.0 || rigid_angle_range < 0.0 || rigid_shift_range < 0.0 ||
        noise_sigma < 0.0)
        throw ValidationError("synth config ranges must be non-negative");
}

Tensor resize_trilinear(const Tensor &v, const std::array<int64_t, 3> &target_shape) {
    if (v.rank() != 3)
        throw ValidationError("resize_trilinear expects a (D,H,W) tensor, got " + v.shape_str());
    const int64_t sd = v.dim(0), sh = v.dim(1), sw = v.dim(2);
    const int64_t td = target_shape[0], th = target_shape[1], tw = target_shape[2];
    if (td < 1 || th < 1 || tw < 1)
        throw ValidationError("resize target must be positive");
    if (td == sd && th == sh && tw == sw)
        return v;
    Tensor out({td, th, tw});
    for (int64_t z = 0; z < td; ++z) {
        const LerpAxis az = lerp_axis(z, td, sd);
        for (int64_t y = 0; y < th; ++y) {
            const LerpAxis ay = lerp_axis(y, th, sh);
            for (int64_t x = 0; x < tw; ++x) {
                const LerpAxis ax = lerp_axis(x, tw, sw);
                double acc = 0.0;
                for (int cz = 0; cz < 2; ++cz)
                    for (int cy = 0; cy < 2; ++cy)
                        for (int cx = 0; cx < 2; ++cx)
                            acc += (cx ? ax.t : 1.0 - ax.t) * (cy ? ay.t : 1.0 - ay.t) *
                                   (cz ? az.t : 1.0 - az.t) *
                                   static_cast<double>(v.at(cz ? az.i1 : az.i0, cy ? ay.i1 : ay.i0,
                                                            cx ? ax.i1 : ax.i0));
                out.at(z, y, x) = static_cast<float>(acc);
            }
        }
    }
    return out;
}

Volume preprocess(const Volume &v, double window_low, double window_high,
                  const std::array<int64_t, 3> &target_shape) {
    if (window_low >= window_high)
        throw ValidationError("degenerate intensity window: low must be < high");
    for (const int64_t d : target_shape)
        if (d % 16 != 0)
            throw ValidationError("preprocess target dims must be divisible by 16, got " +
                                  shape_to_string({target_shape[0], target_shape[1],
                                                   target_shape[2]}));
    Tensor clipped(v.data.shape());
    const double scale = 2.0 / (window_high - window_low);
    for (int64_t i = 0; i < v.data.numel(); ++i) {
        const double c = clampd(v.data[i], window_low, window_high);
        clipped[i] = static_cast<float>((c - window_low) * scale - 1.0);
    }
    Volume out;
    out.data = resize_trilinear(clipped, target_shape);
    for (size_t a = 0; a < 3; ++a) {
        const double ratio =
            static_cast<double>(v.data.dim(a)) / static_cast<double>(target_shape[a]);
        out.spacing[a] = v.spacing[a] * ratio;
        out.origin[a] = v.origin[a];
    }
    return out;
}

LabelMask resize_mask(const LabelMask &m, const std::array<int64_t, 3> &target_shape) {
    const int64_t sd = m.shape.at(0), sh = m.shape.at(1), sw = m.shape.at(2);
    const int64_t td = target_shape[0], th = target_shape[1], tw = target_shape[2];
    LabelMask out;
    out.shape = {td, th, tw};
    out.spacing = m.spacing;
    out.origin = m.origin;
    out.data.assign(static_cast<size_t>(td * th * tw), 0);
    for (int64_t z = 0; z < td; ++z) {
        const LerpAxis az = lerp_axis(z, td, sd);
        const int64_t iz = az.t < 0.5 ? az.i0 : az.i1;
        for (int64_t y = 0; y < th; ++y) {
            const LerpAxis ay = lerp_axis(y, th, sh);
            const int64_t iy = ay.t < 0.5 ? ay.i0 : ay.i1;
            for (int64_t x = 0; x < tw; ++x) {
                const LerpAxis ax = lerp_axis(x, tw, sw);
                out.at(z, y, x) = m.at(iz, iy, ax.t < 0.5 ? ax.i0 : ax.i1);
            }
        }
    }
    return out;
}

std::vector<std::pair<size_t, size_t>> make_pairs(size_t count, uint64_t seed) {
    if (count < 2)
        throw ValidationError("make_pairs needs at least 2 volumes");
    std::vector<size_t> perm(count);
    std::iota(perm.begin(), perm.end(), size_t{0});
    Rng rng(seed);
    rng.shuffle(perm);
    std::vector<std::pair<size_t, size_t>> pairs;
    pairs.reserve(count);
    for (size_t i = 0; i < count; ++i)
        pairs.emplace_back(perm[i], perm[(i + 1) % count]);
    return pairs;
}

Tensor gaussian_blur(const Tensor &x, double sigma) {
    if (x.rank() != 4)
        throw ValidationError("gaussian_blur expects (C,D,H,W), got " + x.shape_str());
    if (sigma <= 0.0)
        return x;
    const int64_t r = std::max<int64_t>(1, static_cast<int64_t>(std::ceil(3.0 * sigma)));
    std::vector<double> k(static_cast<size_t>(2 * r + 1));
    for (int64_t j = -r; j <= r; ++j)
        k[static_cast<size_t>(j + r)] =
            std::exp(-0.5 * static_cast<double>(j * j) / (sigma * sigma));
    Tensor out = x;
    blur_axis(out, 0, k);
    blur_axis(out, 1, k);
    blur_axis(out, 2, k);
    return out;
}

std::pair<Volume, LabelMask> generate_phantom(const SynthConfig &cfg) {
    cfg.validate();
    const int64_t d = cfg.shape[0], h = cfg.shape[1], w = cfg.shape[2];
    const int64_t smin = std::min({d, h, w});
    if (smin < 24)
        throw ValidationError("phantom shape too small to fit the organ structures (min dim 24)");

    // smooth texture inside the body so similarity has structure to match
    Tensor texture({1, d, h, w});
    {
        Rng rng(Rng::mix(cfg.seed, kSaltPhantomTexture));
        for (int64_t i = 0; i < texture.numel(); ++i)
            texture[i] = rng.uniform(-1.0f, 1.0f);
        texture = gaussian_blur(texture, 3.0);
        float m = 0.0f;
        for (int64_t i = 0; i < texture.numel(); ++i)
            m = std::max(m, std::abs(texture[i]));
        if (m > 0.0f)
            for (int64_t i = 0; i < texture.numel(); ++i)
                texture[i] = texture[i] / m * 0.12f;
    }

    const double organ_value[5] = {-0.20, 0.55, 0.35, -0.85, 0.10};

    Volume vol;
    vol.data = Tensor({d, h, w});
    LabelMask mask;
    mask.shape = {d, h, w};
    mask.data.assign(static_cast<size_t>(d * h * w), 0);

    const double rmin = static_cast<double>(std::min(h, w) - 1);
    const double radii[4] = {kHeart.ry * rmin, kAorta.r * rmin, kTrachea.r * rmin,
                             kEsophagus.r * rmin};

    int64_t i = 0;
    for (int64_t z = 0; z < d; ++z)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x, ++i) {
                const double body_rho = kBody.rho(z, y, x, d, h, w);
                // soft edges roughly 1.5 voxels wide, expressed in rho units
                const double body_edge = 1.5 / (kBody.ry * rmin);
                double v = -1.0;
                const double body_f = smoothstep01((1.0 - body_rho) / body_edge);
                v = v + body_f * (organ_value[0] + texture[i] - (-1.0));

                double rhos[4];
                organ_rhos(z, y, x, d, h, w, rhos);
                for (int s = 0; s < 4; ++s) {
                    const double edge = 1.2 / radii[s];
                    const double f = smoothstep01((1.0 - rhos[s]) / edge);
                    if (f > 0.0)
                        v = v + f * (organ_value[s + 1] - v);
                }
                mask.data[static_cast<size_t>(i)] = label_from_rhos(rhos);
                vol.data[i] = static_cast<float>(clampd(v, -1.0, 1.0));
            }
    return {std::move(vol), std::move(mask)};
}

int32_t phantom_label_at(const SynthConfig &cfg, double z, double y, double x) {
    double rhos[4];
    organ_rhos(z, y, x, cfg.shape[0], cfg.shape[1], cfg.shape[2], rhos);
    return label_from_rhos(rhos);
}

Tensor synth_deformation(const SynthConfig &cfg) {
    cfg.validate();
    const int64_t d = cfg.shape[0], h = cfg.shape[1], w = cfg.shape[2];
    Rng rng(Rng::mix(cfg.seed, kSaltDeformation));

    Tensor field({3, d, h, w});
    if (cfg.max_displacement > 0.0) {
        for (int64_t i = 0; i < field.numel(); ++i)
            field[i] = rng.uniform(-1.0f, 1.0f);
        if (cfg.smoothness_sigma > 0.0)
            field = gaussian_blur(field, cfg.smoothness_sigma);
        float peak = 0.0f;
        for (int64_t i = 0; i < field.numel(); ++i)
            peak = std::max(peak, std::abs(field[i]));
        const double scale = peak > 0.0f ? cfg.max_displacement / static_cast<double>(peak) : 0.0;
        // scale to voxels, then per-channel to normalized coordinates
        const int64_t n = d * h * w;
        const double to_norm[3] = {2.0 / static_cast<double>(w - 1),
                                   2.0 / static_cast<double>(h - 1),
                                   2.0 / static_cast<double>(d - 1)};
        for (int64_t c = 0; c < 3; ++c)
            for (int64_t i = 0; i < n; ++i)
                field[c * n + i] =
                    static_cast<float>(field[c * n + i] * scale * to_norm[static_cast<size_t>(c)]);
    }

    // rigid draw order is fixed even when the ranges are zero
    const double deg = 3.14159265358979323846 / 180.0;
    double ang[3], shift[3];
    for (int a = 0; a < 3; ++a)
        ang[a] = rng.uniform(static_cast<float>(-cfg.rigid_angle_range),
                             static_cast<float>(cfg.rigid_angle_range)) *
                 deg;
    for (int a = 0; a < 3; ++a)
        shift[a] = rng.uniform(static_cast<float>(-cfg.rigid_shift_range),
                               static_cast<float>(cfg.rigid_shift_range));
    if (cfg.rigid_angle_range == 0.0 && cfg.rigid_shift_range == 0.0)
        return field;

    const double cx = std::cos(ang[0]), sx = std::sin(ang[0]);
    const double cy = std::cos(ang[1]), sy = std::sin(ang[1]);
    const double cz = std::cos(ang[2]), sz = std::sin(ang[2]);
    // R = Rz * Ry * Rx in the (x,y,z) displacement basis
    const double rzm[9] = {cz, -sz, 0, sz, cz, 0, 0, 0, 1};
    const double rym[9] = {cy, 0, sy, 0, 1, 0, -sy, 0, cy};
    const double rxm[9] = {1, 0, 0, 0, cx, -sx, 0, sx, cx};
    auto matmul = [](const double *a, const double *b, double *out) {
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c)
                out[r * 3 + c] =
                    a[r * 3 + 0] * b[0 * 3 + c] + a[r * 3 + 1] * b[1 * 3 + c] +
                    a[r * 3 + 2] * b[2 * 3 + c];
    };
    double ryx[9], rfull[9];
    matmul(rym, rxm, ryx);
    matmul(rzm, ryx, rfull);

    RigidTransform t;
    for (int k = 0; k < 9; ++k)
        t.R[static_cast<size_t>(k)] = static_cast<float>(rfull[k]);
    t.t = {static_cast<float>(shift[0] * 2.0 / static_cast<double>(w - 1)),
           static_cast<float>(shift[1] * 2.0 / static_cast<double>(h - 1)),
           static_cast<float>(shift[2] * 2.0 / static_cast<double>(d - 1))};
    return apply_rigid_to_field(field, t);
}

const char *organ_name(int32_t label) {
    switch (label) {
    case kLabelHeart:
        return "heart";
    case kLabelAorta:
        return "aorta";
    case kLabelTrachea:
        return "trachea";
    case kLabelEsophagus:
        return "esophagus";
    default:
        return "background";
    }
}

} // namespace ldreg
