#include "ldreg/network.hpp"

#include <cmath>

#include "ldreg/errors.hpp"
#include "ldreg/rng.hpp"

namespace ldreg {

namespace {

constexpr uint64_t kSaltInit = 0x696e6974ull; // "init"

void he_fill(Tensor &t, int64_t fan_in, Rng &rng) {
    const float s = std::sqrt(2.0f / static_cast<float>(fan_in));
    for (int64_t i = 0; i < t.numel(); ++i)
        t[i] = rng.normal() * s;
}

void add_conv(ParamStore &p, Rng &rng, const std::string &key, int64_t co, int64_t ci,
              int64_t k, bool zero_init) {
    Tensor w({co, ci, k, k, k});
    if (!zero_init)
        he_fill(w, ci * k * k * k, rng);
    p[key + ".w"] = std::move(w);
    p[key + ".b"] = Tensor({co});
}

void add_norm(ParamStore &p, const std::string &key, int64_t c) {
    Tensor gamma({c});
    gamma.fill(1.0f);
    p[key + ".gamma"] = std::move(gamma);
    p[key + ".beta"] = Tensor({c});
}

void add_fc(ParamStore &p, Rng &rng, const std::string &key, int64_t out, int64_t in,
            bool zero_init) {
    Tensor w({out, in});
    if (!zero_init)
        he_fill(w, in, rng);
    p[key + ".w"] = std::move(w);
    p[key + ".b"] = Tensor({out});
}

struct StagePlan {
    std::array<int64_t, 3> res;  // stage spatial resolution
    int64_t feature_channels;    // width of the feature map used at this stage
    int64_t cat_channels;        // refine conv input channels
};

std::array<StagePlan, 4> plan_stages(const NetworkConfig &cfg) {
    std::array<StagePlan, 4> plan;
    for (int s = 0; s < 4; ++s) {
        const int64_t div = 16 >> s; // 16, 8, 4, 2
        plan[static_cast<size_t>(s)].res = {cfg.in_shape[0] / div, cfg.in_shape[1] / div,
                                            cfg.in_shape[2] / div};
        const int64_t c = cfg.channels[static_cast<size_t>(3 - s)];
        plan[static_cast<size_t>(s)].feature_channels = c;
        plan[static_cast<size_t>(s)].cat_channels = cfg.use_refine_core ? c + 6 : c;
    }
    return plan;
}

} // namespace

void NetworkConfig::validate() const {
    for (const int64_t c : channels)
        if (c < 1)
            throw ValidationError("feature channel widths must be positive");
    for (const int64_t d : in_shape) {
        // the coarsest stage is in_shape/16 and fields need >= 2 voxels per axis
        if (d < 32)
            throw ValidationError("in_shape dims must be at least 32");
        if (d % 16 != 0)
            throw ValidationError("in_shape dims must be divisible by 16, got " +
                                  shape_to_string({in_shape[0], in_shape[1], in_shape[2]}));
    }
    if (leaky_slope < 0.0f || norm_epsilon <= 0.0f)
        throw ValidationError("leaky_slope must be >= 0 and norm_epsilon > 0");
    if (refine_width < 1 || coarse_head_width < 1 || fc_widths[0] < 1 || fc_widths[1] < 1)
        throw ValidationError("layer widths must be positive");
    if (fusion_kernel != 1 && fusion_kernel != 3)
        throw ValidationError("fusion_kernel must be 1 or 3");
}

int64_t NetworkConfig::flatten_len() const {
    return in_shape[0] * in_shape[1] * in_shape[2] / (16 * 16 * 16);
}

ParamStore init_params(const NetworkConfig &cfg, uint64_t seed) {
    cfg.validate();
    Rng rng(Rng::mix(seed, kSaltInit));
    ParamStore p;

    int64_t in_c = 2; // concat(F, M)
    for (int l = 0; l < 4; ++l) {
        const std::string key = "feat" + std::to_string(l);
        const int64_t out_c = cfg.channels[static_cast<size_t>(l)];
        add_conv(p, rng, key + ".conv", out_c, in_c, 3, false);
        add_norm(p, key + ".norm", out_c);
        in_c = out_c;
    }

    add_conv(p, rng, "coarse.conv", cfg.coarse_head_width, cfg.channels[3], 3, false);
    add_norm(p, "coarse.norm", cfg.coarse_head_width);
    add_conv(p, rng, "coarse.head", 3, cfg.coarse_head_width, 3, true);

    if (cfg.use_rigid) {
        add_conv(p, rng, "rigid.conv0", cfg.channels[3], cfg.channels[3], 3, false);
        add_norm(p, "rigid.norm0", cfg.channels[3]);
        add_conv(p, rng, "rigid.conv1", 16, cfg.channels[3], 3, false);
        add_norm(p, "rigid.norm1", 16);
        const int64_t flat = cfg.flatten_len();
        for (const char *branch : {"r", "t"}) {
            const std::string base = std::string("rigid.") + branch;
            add_fc(p, rng, base + ".fc0", cfg.fc_widths[0], flat, false);
            add_fc(p, rng, base + ".fc1", cfg.fc_widths[1], cfg.fc_widths[0], false);
            add_fc(p, rng, base + ".fc2", branch[0] == 'r' ? 9 : 3, cfg.fc_widths[1], true);
        }
        // identity-bias: R = I, t = 0 at initialization
        Tensor &rb = p["rigid.r.fc2.b"];
        rb[0] = rb[4] = rb[8] = 1.0f;
    }

    const auto plan = plan_stages(cfg);
    for (int s = 0; s < 4; ++s) {
        const std::string key = "refine" + std::to_string(s);
        add_conv(p, rng, key + ".conv0", cfg.refine_width,
                 plan[static_cast<size_t>(s)].cat_channels, 3, false);
        add_norm(p, key + ".norm0", cfg.refine_width);
        add_conv(p, rng, key + ".conv1", cfg.refine_width, cfg.refine_width, 3, false);
        add_norm(p, key + ".norm1", cfg.refine_width);
        add_conv(p, rng, key + ".head", 3, cfg.refine_width, 3, true);
    }

    if (cfg.final_fusion) {
        const int64_t k = cfg.fusion_kernel;
        const int64_t widths[4] = {64, 32, 8, 3};
        int64_t c = cfg.fusion_in_channels();
        for (int l = 0; l < 4; ++l) {
            const std::string key = "fusion.conv" + std::to_string(l);
            add_conv(p, rng, key, widths[l], c, k, l == 3);
            if (l < 3)
                add_norm(p, "fusion.norm" + std::to_string(l), widths[l]);
            c = widths[l];
        }
    }
    return p;
}

std::vector<std::string> param_groups(const NetworkConfig &cfg) {
    std::vector<std::string> groups = {"feat", "coarse"};
    if (cfg.use_rigid)
        groups.push_back("rigid");
    for (int s = 0; s < 4; ++s)
        groups.push_back("refine" + std::to_string(s));
    if (cfg.final_fusion)
        groups.push_back("fusion");
    return groups;
}

Var BoundParams::at(const std::string &key) const {
    const auto it = vars.find(key);
    if (it == vars.end())
        throw ValidationError("missing parameter: " + key);
    return it->second;
}

BoundParams bind_params(Graph &g, const ParamStore &store) {
    BoundParams bp;
    for (const auto &[key, tensor] : store)
        bp.vars.emplace(key, g.param(tensor));
    return bp;
}

namespace {

// conv -> leaky_relu -> norm, the standard unit of this model. Only
// release_input when no later op (or caller) reads x.
Var conv_unit(Graph &g, const BoundParams &p, const NetworkConfig &cfg,
              const std::string &conv_key, const std::string &norm_key, Var x, int stride,
              bool release_input) {
    const Var pre = g.conv3d(x, p.at(conv_key + ".w"), p.at(conv_key + ".b"), stride);
    if (release_input)
        g.release(x);
    const Var act = g.leaky_relu(pre, cfg.leaky_slope);
    g.release(pre);
    const Var out =
        g.norm(act, p.at(norm_key + ".gamma"), p.at(norm_key + ".beta"), cfg.norm_epsilon);
    g.release(act);
    return out;
}

Var fc_branch(Graph &g, const BoundParams &p, const NetworkConfig &cfg, const std::string &base,
              Var flat) {
    const Var h0 = g.leaky_relu(g.fc(flat, p.at(base + ".fc0.w"), p.at(base + ".fc0.b")),
                                cfg.leaky_slope);
    const Var h1 = g.leaky_relu(g.fc(h0, p.at(base + ".fc1.w"), p.at(base + ".fc1.b")),
                                cfg.leaky_slope);
    return g.fc(h1, p.at(base + ".fc2.w"), p.at(base + ".fc2.b"));
}

} // namespace

StageOutputs forward(Graph &g, const NetworkConfig &cfg, const BoundParams &params,
                     const Tensor &fixed, const Tensor &moving) {
    cfg.validate();
    if (fixed.rank() != 3 || moving.rank() != 3)
        throw ValidationError("forward expects rank-3 (D,H,W) volumes");
    if (!fixed.same_shape(moving))
        throw ValidationError("fixed/moving shape mismatch: " + fixed.shape_str() + " vs " +
                              moving.shape_str());
    for (size_t a = 0; a < 3; ++a)
        if (fixed.dim(a) != cfg.in_shape[a])
            throw ValidationError("input shape " + fixed.shape_str() +
                                  " does not match the configured in_shape");

    const int64_t d = cfg.in_shape[0], h = cfg.in_shape[1], w = cfg.in_shape[2];
    StageOutputs out;

    const Var f_vol = g.input(fixed);
    const Var m_vol = g.input(moving);
    out.fixed_full = f_vol;
    out.moving_full = m_vol;
    const Var f_ch = g.reshape(f_vol, {1, d, h, w});
    const Var m_ch = g.reshape(m_vol, {1, d, h, w});

    // feature path over the 2-channel concatenation, one stride-2 unit per level;
    // every level's output is consumed again by the refine stages, so only the
    // initial concat is releasable
    Var feat = g.concat({f_ch, m_ch});
    for (int l = 0; l < 4; ++l) {
        const std::string key = "feat" + std::to_string(l);
        feat = conv_unit(g, params, cfg, key + ".conv", key + ".norm", feat, 2, l == 0);
        out.features.push_back(feat);
    }

    // average-pooling pyramids of each input (gradient-free image path)
    for (const auto &[vol_ch, list] :
         {std::pair<Var, std::vector<Var> *>{f_ch, &out.pooled_fixed},
          std::pair<Var, std::vector<Var> *>{m_ch, &out.pooled_moving}}) {
        Var p = vol_ch;
        for (int l = 0; l < 4; ++l) {
            p = g.avg_pool2(p);
            const Tensor &pv = g.val(p);
            list->push_back(g.reshape(p, {pv.dim(1), pv.dim(2), pv.dim(3)}));
        }
    }

    // coarse field head at 1/16
    const Var coarse_hidden = conv_unit(g, params, cfg, "coarse.conv", "coarse.norm",
                                              out.features[3], 1, false);
    out.coarse_field =
        g.conv3d(coarse_hidden, params.at("coarse.head.w"), params.at("coarse.head.b"), 1);
    g.release(coarse_hidden);

    // rigid head: conv 64->64 -> conv 64->16 -> channel max -> flatten -> two FC branches
    Var phi_prev = out.coarse_field;
    out.rigid = RigidTransform::identity();
    if (cfg.use_rigid) {
        const Var r0 = conv_unit(g, params, cfg, "rigid.conv0", "rigid.norm0",
                                       out.features[3], 1, false);
        const Var r1 =
            conv_unit(g, params, cfg, "rigid.conv1", "rigid.norm1", r0, 1, true);
        const Var cmax = g.channel_max(r1);
        g.release(r1);
        const Var flat = g.flatten(cmax);
        out.rigid_r = fc_branch(g, params, cfg, "rigid.r", flat);
        out.rigid_t = fc_branch(g, params, cfg, "rigid.t", flat);
        const Tensor &rv = g.val(out.rigid_r);
        const Tensor &tv = g.val(out.rigid_t);
        for (size_t i = 0; i < 9; ++i)
            out.rigid.R[i] = rv[static_cast<int64_t>(i)];
        for (size_t i = 0; i < 3; ++i)
            out.rigid.t[i] = tv[static_cast<int64_t>(i)];
        phi_prev = g.apply_rigid(out.coarse_field, out.rigid_r, out.rigid_t);
    }

    // refine blocks, coarse to fine
    const auto plan = plan_stages(cfg);
    for (int s = 0; s < 4; ++s) {
        const auto &st = plan[static_cast<size_t>(s)];
        const std::string key = "refine" + std::to_string(s);
        const Var feat_s = out.features[static_cast<size_t>(3 - s)];
        const Var f_pool = out.pooled_fixed[static_cast<size_t>(3 - s)];
        const Var m_pool = out.pooled_moving[static_cast<size_t>(3 - s)];

        const Var phi_up = g.upsample3(phi_prev, st.res);
        const Var warped_in = g.grid_sample(m_pool, phi_up);
        out.warped_inputs.push_back(warped_in);

        Var cat;
        if (cfg.use_refine_core) {
            const Var w1 = g.reshape(warped_in, {1, st.res[0], st.res[1], st.res[2]});
            const Var f1 = g.reshape(f_pool, {1, st.res[0], st.res[1], st.res[2]});
            const Var diff = g.sub(w1, f1);
            cat = g.concat({feat_s, diff, f1, w1, phi_up});
            g.release(diff);
        } else {
            cat = feat_s;
        }
        const Var h0 =
            conv_unit(g, params, cfg, key + ".conv0", key + ".norm0", cat, 1,
                            cfg.use_refine_core);
        const Var h1 = conv_unit(g, params, cfg, key + ".conv1", key + ".norm1", h0, 1,
                                       true);
        const Var delta = g.conv3d(h1, params.at(key + ".head.w"), params.at(key + ".head.b"), 1);
        const Var phi_s = g.add(phi_up, delta);
        g.release(delta);
        out.refine_features.push_back(h1);
        out.fields.push_back(phi_s);
        out.warped_stage.push_back(g.grid_sample(m_pool, phi_s));
        phi_prev = phi_s;
    }

    // full-resolution output: fusion CNN residual on the upsampled finest field
    const std::array<int64_t, 3> full{d, h, w};
    const Var base = g.upsample3(phi_prev, full);
    Var phi_full = base;
    if (cfg.final_fusion) {
        std::vector<Var> ups;
        ups.reserve(8);
        for (int s = 0; s < 4; ++s) {
            ups.push_back(g.upsample3(out.fields[static_cast<size_t>(s)], full));
            ups.push_back(g.upsample3(out.refine_features[static_cast<size_t>(s)], full));
        }
        const Var cat = g.concat(ups);
        for (const Var u : ups)
            g.release(u);
        const Var u0 = conv_unit(g, params, cfg, "fusion.conv0", "fusion.norm0", cat, 1,
                                       true);
        const Var u1 =
            conv_unit(g, params, cfg, "fusion.conv1", "fusion.norm1", u0, 1, true);
        const Var u2 =
            conv_unit(g, params, cfg, "fusion.conv2", "fusion.norm2", u1, 1, true);
        const Var resid =
            g.conv3d(u2, params.at("fusion.conv3.w"), params.at("fusion.conv3.b"), 1);
        g.release(u2);
        phi_full = g.add(base, resid);
        g.release(resid);
    }
    out.fields.push_back(phi_full);
    out.warped_stage.push_back(g.grid_sample(m_vol, phi_full));
    return out;
}

} // namespace ldreg
