#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "ldreg/autodiff.hpp"
#include "ldreg/data.hpp"
#include "ldreg/errors.hpp"
#include "ldreg/losses.hpp"
#include "ldreg/network.hpp"
#include "ldreg/rng.hpp"
#include "ldreg/tensor.hpp"

using ldreg::bind_params;
using ldreg::BoundParams;
using ldreg::Graph;
using ldreg::init_params;
using ldreg::NetworkConfig;
using ldreg::param_groups;
using ldreg::ParamStore;
using ldreg::Rng;
using ldreg::StageOutputs;
using ldreg::Tensor;
using ldreg::ValidationError;
using ldreg::Var;

namespace {

NetworkConfig make_cfg(int64_t d, int64_t h, int64_t w) {
    NetworkConfig cfg;
    cfg.in_shape = {d, h, w};
    return cfg;
}

Tensor smooth_volume(int64_t d, int64_t h, int64_t w, uint64_t seed) {
    Tensor t({1, d, h, w});
    Rng rng(seed);
    for (int64_t i = 0; i < t.numel(); ++i)
        t[i] = rng.uniform(-1.0f, 1.0f);
    const Tensor blurred = ldreg::gaussian_blur(t, 1.5);
    Tensor out({d, h, w});
    for (int64_t i = 0; i < out.numel(); ++i)
        out[i] = blurred[i];
    return out;
}

bool all_zero(const Tensor &t) {
    for (int64_t i = 0; i < t.numel(); ++i)
        if (t[i] != 0.0f)
            return false;
    return true;
}

bool bit_equal(const Tensor &a, const Tensor &b) {
    if (!a.same_shape(b))
        return false;
    for (int64_t i = 0; i < a.numel(); ++i)
        if (a[i] != b[i])
            return false;
    return true;
}

int64_t store_numel(const ParamStore &p) {
    int64_t n = 0;
    for (const auto &[key, t] : p)
        n += t.numel();
    return n;
}

// Gives the zero-initialized output layers small nonzero weights so that the
// model produces nonzero fields (determinism / gradient tests need a model
// that is not at its trivial fixed point).
ParamStore perturbed_params(const NetworkConfig &cfg, uint64_t seed) {
    ParamStore p = init_params(cfg, seed);
    Rng rng(Rng::mix(seed, 0xff));
    for (auto &[key, t] : p) {
        const bool head = key.find("head.w") != std::string::npos ||
                          key.find("fc2.w") != std::string::npos ||
                          key.find("fusion.conv3.w") != std::string::npos;
        if (head)
            for (int64_t i = 0; i < t.numel(); ++i)
                t[i] = rng.uniform(-0.05f, 0.05f);
    }
    return p;
}

// Builds the five-stage loss over a forward pass: four pyramid stages coarse
// to fine, then the full-resolution stage.
Var stage_losses(Graph &g, const StageOutputs &out, const ldreg::LossWeights &w,
                 ldreg::LossReport &report) {
    std::vector<ldreg::LossStageInput> stages;
    for (size_t s = 0; s < 4; ++s)
        stages.push_back({out.pooled_fixed[3 - s], out.warped_stage[s], out.fields[s], true});
    stages.push_back({out.fixed_full, out.warped_full(), out.phi0(), true});
    return ldreg::total_loss(g, stages, w, ldreg::SmoothKind::L1, report);
}

} // namespace

TEST_CASE("network config validation and arithmetic") {
    SUBCASE("defaults validate") {
        NetworkConfig cfg;
        CHECK_NOTHROW(cfg.validate());
        CHECK(cfg.channels == std::array<int64_t, 4>{8, 16, 32, 64});
        CHECK(cfg.fusion_in_channels() == 4 * (3 + 16));
    }
    SUBCASE("flatten length is prod(in_shape)/16^3") {
        CHECK(make_cfg(128, 128, 128).flatten_len() == 512);
        CHECK(make_cfg(64, 64, 64).flatten_len() == 64);
        CHECK(make_cfg(32, 32, 32).flatten_len() == 8);
        CHECK(make_cfg(48, 64, 80).flatten_len() == 60);
    }
    SUBCASE("rejects bad configs") {
        NetworkConfig cfg;
        cfg.in_shape = {8, 64, 64};
        CHECK_THROWS_AS(cfg.validate(), ValidationError);
        cfg = NetworkConfig{};
        cfg.in_shape = {16, 16, 16}; // coarsest stage would collapse to one voxel
        CHECK_THROWS_AS(cfg.validate(), ValidationError);
        cfg = NetworkConfig{};
        cfg.in_shape = {24, 64, 64}; // not divisible by 16
        CHECK_THROWS_AS(cfg.validate(), ValidationError);
        cfg = NetworkConfig{};
        cfg.channels = {8, 16, 0, 64};
        CHECK_THROWS_AS(cfg.validate(), ValidationError);
        cfg = NetworkConfig{};
        cfg.fusion_kernel = 2;
        CHECK_THROWS_AS(cfg.validate(), ValidationError);
        cfg = NetworkConfig{};
        cfg.norm_epsilon = 0.0f;
        CHECK_THROWS_AS(cfg.validate(), ValidationError);
    }
}

TEST_CASE("parameter store layout") {
    const NetworkConfig cfg = make_cfg(64, 64, 64);
    const ParamStore p = init_params(cfg, 7);

    SUBCASE("feature path widths 8/16/32/64 from a 2-channel input") {
        const int64_t widths[4] = {8, 16, 32, 64};
        int64_t in_c = 2;
        for (int l = 0; l < 4; ++l) {
            const std::string key = "feat" + std::to_string(l);
            const Tensor &w = p.at(key + ".conv.w");
            REQUIRE(w.shape() == std::vector<int64_t>{widths[l], in_c, 3, 3, 3});
            CHECK(p.at(key + ".conv.b").shape() == std::vector<int64_t>{widths[l]});
            CHECK(p.at(key + ".norm.gamma").shape() == std::vector<int64_t>{widths[l]});
            CHECK(p.at(key + ".norm.beta").shape() == std::vector<int64_t>{widths[l]});
            CHECK_FALSE(all_zero(w));
            CHECK(w.all_finite());
            in_c = widths[l];
        }
    }
    SUBCASE("coarse head: two convs 64 -> 32 -> 3, output layer zero") {
        CHECK(p.at("coarse.conv.w").shape() == std::vector<int64_t>{32, 64, 3, 3, 3});
        CHECK(p.at("coarse.head.w").shape() == std::vector<int64_t>{3, 32, 3, 3, 3});
        CHECK(all_zero(p.at("coarse.head.w")));
        CHECK(all_zero(p.at("coarse.head.b")));
    }
    SUBCASE("rigid block: convs 64 -> 64 -> 16, FC branches flatten -> 256 -> 64") {
        CHECK(p.at("rigid.conv0.w").shape() == std::vector<int64_t>{64, 64, 3, 3, 3});
        CHECK(p.at("rigid.conv1.w").shape() == std::vector<int64_t>{16, 64, 3, 3, 3});
        CHECK(p.at("rigid.r.fc0.w").shape() == std::vector<int64_t>{256, 64});
        CHECK(p.at("rigid.r.fc1.w").shape() == std::vector<int64_t>{64, 256});
        CHECK(p.at("rigid.r.fc2.w").shape() == std::vector<int64_t>{9, 64});
        CHECK(p.at("rigid.t.fc2.w").shape() == std::vector<int64_t>{3, 64});
        CHECK(all_zero(p.at("rigid.r.fc2.w")));
        CHECK(all_zero(p.at("rigid.t.fc2.w")));
        CHECK(all_zero(p.at("rigid.t.fc2.b")));
        const Tensor &rb = p.at("rigid.r.fc2.b");
        for (int64_t i = 0; i < 9; ++i)
            CHECK(rb[i] == (i % 4 == 0 ? 1.0f : 0.0f)); // flattened identity
    }
    SUBCASE("128-cube input gives a 512-length rigid flatten") {
        const ParamStore big = init_params(make_cfg(128, 128, 128), 7);
        CHECK(big.at("rigid.r.fc0.w").shape() == std::vector<int64_t>{256, 512});
        CHECK(big.at("rigid.t.fc0.w").shape() == std::vector<int64_t>{256, 512});
    }
    SUBCASE("refine blocks consume Feature_i plus 6 concat channels") {
        const int64_t feature_c[4] = {64, 32, 16, 8}; // coarse -> fine
        for (int s = 0; s < 4; ++s) {
            const std::string key = "refine" + std::to_string(s);
            CHECK(p.at(key + ".conv0.w").shape() ==
                  std::vector<int64_t>{16, feature_c[s] + 6, 3, 3, 3});
            CHECK(p.at(key + ".conv1.w").shape() == std::vector<int64_t>{16, 16, 3, 3, 3});
            CHECK(p.at(key + ".head.w").shape() == std::vector<int64_t>{3, 16, 3, 3, 3});
            CHECK(all_zero(p.at(key + ".head.w")));
        }
    }
    SUBCASE("without the refine core the blocks consume Feature_i alone") {
        NetworkConfig ab = cfg;
        ab.use_refine_core = false;
        const ParamStore q = init_params(ab, 7);
        CHECK(q.at("refine0.conv0.w").shape() == std::vector<int64_t>{16, 64, 3, 3, 3});
        CHECK(q.at("refine3.conv0.w").shape() == std::vector<int64_t>{16, 8, 3, 3, 3});
    }
    SUBCASE("fusion CNN widths 64/32/8/3, final layer zero") {
        CHECK(p.at("fusion.conv0.w").shape() == std::vector<int64_t>{64, 76, 1, 1, 1});
        CHECK(p.at("fusion.conv1.w").shape() == std::vector<int64_t>{32, 64, 1, 1, 1});
        CHECK(p.at("fusion.conv2.w").shape() == std::vector<int64_t>{8, 32, 1, 1, 1});
        CHECK(p.at("fusion.conv3.w").shape() == std::vector<int64_t>{3, 8, 1, 1, 1});
        CHECK(all_zero(p.at("fusion.conv3.w")));
        NetworkConfig k3 = cfg;
        k3.fusion_kernel = 3;
        CHECK(init_params(k3, 7).at("fusion.conv0.w").shape() ==
              std::vector<int64_t>{64, 76, 3, 3, 3});
    }
    SUBCASE("ablations drop their groups") {
        NetworkConfig ab = cfg;
        ab.use_rigid = false;
        const ParamStore no_rigid = init_params(ab, 7);
        CHECK(no_rigid.count("rigid.conv0.w") == 0);
        ab = cfg;
        ab.final_fusion = false;
        CHECK(init_params(ab, 7).count("fusion.conv0.w") == 0);

        CHECK(param_groups(cfg) ==
              std::vector<std::string>{"feat", "coarse", "rigid", "refine0", "refine1",
                                       "refine2", "refine3", "fusion"});
        CHECK(param_groups(ab) == std::vector<std::string>{"feat", "coarse", "rigid", "refine0",
                                                           "refine1", "refine2", "refine3"});
    }
    SUBCASE("initialization is a deterministic function of the seed") {
        const ParamStore a = init_params(cfg, 21);
        const ParamStore b = init_params(cfg, 21);
        REQUIRE(a.size() == b.size());
        for (const auto &[key, t] : a)
            CHECK(bit_equal(t, b.at(key)));
        const ParamStore c = init_params(cfg, 22);
        bool any_diff = false;
        for (const auto &[key, t] : a)
            if (!bit_equal(t, c.at(key)))
                any_diff = true;
        CHECK(any_diff);
    }
}

TEST_CASE("ablations strictly reduce the parameter count") {
    const NetworkConfig cfg = make_cfg(64, 64, 64);
    const int64_t full = store_numel(init_params(cfg, 3));

    NetworkConfig ab = cfg;
    ab.use_refine_core = false;
    CHECK(store_numel(init_params(ab, 3)) < full);
    ab = cfg;
    ab.use_rigid = false;
    CHECK(store_numel(init_params(ab, 3)) < full);
    ab = cfg;
    ab.final_fusion = false;
    CHECK(store_numel(init_params(ab, 3)) < full);
}

TEST_CASE("forward shape contract") {
    const struct {
        int64_t d, h, w;
    } shapes[] = {{32, 32, 32}, {48, 64, 80}};
    for (const auto &s : shapes) {
        CAPTURE(s.d);
        CAPTURE(s.h);
        CAPTURE(s.w);
        const NetworkConfig cfg = make_cfg(s.d, s.h, s.w);
        const ParamStore p = init_params(cfg, 11);
        Graph g;
        const BoundParams bp = bind_params(g, p);
        const Tensor fixed = smooth_volume(s.d, s.h, s.w, 100);
        const Tensor moving = smooth_volume(s.d, s.h, s.w, 101);
        const StageOutputs out = forward(g, cfg, bp, fixed, moving);

        REQUIRE(out.features.size() == 4);
        REQUIRE(out.pooled_fixed.size() == 4);
        REQUIRE(out.pooled_moving.size() == 4);
        for (int l = 0; l < 4; ++l) {
            const int64_t div = 2 << l;
            const std::vector<int64_t> want{cfg.channels[static_cast<size_t>(l)], s.d / div,
                                            s.h / div, s.w / div};
            CHECK(g.val(out.features[static_cast<size_t>(l)]).shape() == want);
            const std::vector<int64_t> pooled{s.d / div, s.h / div, s.w / div};
            CHECK(g.val(out.pooled_fixed[static_cast<size_t>(l)]).shape() == pooled);
            CHECK(g.val(out.pooled_moving[static_cast<size_t>(l)]).shape() == pooled);
        }
        CHECK(g.val(out.coarse_field).shape() ==
              std::vector<int64_t>{3, s.d / 16, s.h / 16, s.w / 16});
        CHECK(g.val(out.rigid_r).shape() == std::vector<int64_t>{9});
        CHECK(g.val(out.rigid_t).shape() == std::vector<int64_t>{3});

        REQUIRE(out.fields.size() == 5);
        REQUIRE(out.refine_features.size() == 4);
        REQUIRE(out.warped_inputs.size() == 4);
        REQUIRE(out.warped_stage.size() == 5);
        for (int st = 0; st < 4; ++st) {
            const int64_t div = 16 >> st;
            const std::vector<int64_t> field{3, s.d / div, s.h / div, s.w / div};
            const std::vector<int64_t> vol{s.d / div, s.h / div, s.w / div};
            CHECK(g.val(out.fields[static_cast<size_t>(st)]).shape() == field);
            CHECK(g.val(out.refine_features[static_cast<size_t>(st)]).shape() ==
                  std::vector<int64_t>{16, s.d / div, s.h / div, s.w / div});
            CHECK(g.val(out.warped_inputs[static_cast<size_t>(st)]).shape() == vol);
            CHECK(g.val(out.warped_stage[static_cast<size_t>(st)]).shape() == vol);
        }
        CHECK(g.val(out.phi0()).shape() == std::vector<int64_t>{3, s.d, s.h, s.w});
        CHECK(g.val(out.warped_full()).shape() == std::vector<int64_t>{s.d, s.h, s.w});
    }
}

TEST_CASE("freshly initialized model is the identity registration") {
    const NetworkConfig cfg = make_cfg(32, 32, 32);
    const ParamStore p = init_params(cfg, 5);
    Graph g;
    const BoundParams bp = bind_params(g, p);
    const Tensor fixed = smooth_volume(32, 32, 32, 200);
    const Tensor moving = smooth_volume(32, 32, 32, 201);
    const StageOutputs out = forward(g, cfg, bp, fixed, moving);

    CHECK(all_zero(g.val(out.coarse_field)));
    for (const Var f : out.fields)
        CHECK(all_zero(g.val(f)));
    CHECK(out.rigid.is_identity());
    const Tensor &rv = g.val(out.rigid_r);
    for (int64_t i = 0; i < 9; ++i)
        CHECK(rv[i] == (i % 4 == 0 ? 1.0f : 0.0f));
    CHECK(all_zero(g.val(out.rigid_t)));

    // zero fields sample exactly at the grid, so every warped image equals its
    // source bit for bit
    CHECK(bit_equal(g.val(out.warped_full()), moving));
    for (size_t st = 0; st < 4; ++st) {
        CHECK(bit_equal(g.val(out.warped_inputs[st]), g.val(out.pooled_moving[3 - st])));
        CHECK(bit_equal(g.val(out.warped_stage[st]), g.val(out.pooled_moving[3 - st])));
    }
}

TEST_CASE("pooling pyramids are repeated 2x2x2 block means of each input") {
    const NetworkConfig cfg = make_cfg(32, 32, 32);
    const ParamStore p = init_params(cfg, 9);
    Graph g;
    const BoundParams bp = bind_params(g, p);
    Tensor fixed({32, 32, 32});
    Tensor moving({32, 32, 32});
    Rng rng(77);
    for (int64_t i = 0; i < fixed.numel(); ++i)
        fixed[i] = rng.uniform(-1.0f, 1.0f);
    for (int64_t i = 0; i < moving.numel(); ++i)
        moving[i] = rng.uniform(-1.0f, 1.0f);
    const StageOutputs out = forward(g, cfg, bp, fixed, moving);

    const auto block_mean = [](const Tensor &src) {
        Tensor dst({src.dim(0) / 2, src.dim(1) / 2, src.dim(2) / 2});
        for (int64_t z = 0; z < dst.dim(0); ++z)
            for (int64_t y = 0; y < dst.dim(1); ++y)
                for (int64_t x = 0; x < dst.dim(2); ++x) {
                    double acc = 0.0;
                    for (int64_t dz = 0; dz < 2; ++dz)
                        for (int64_t dy = 0; dy < 2; ++dy)
                            for (int64_t dx = 0; dx < 2; ++dx)
                                acc += src.at(2 * z + dz, 2 * y + dy, 2 * x + dx);
                    dst.at(z, y, x) = static_cast<float>(acc / 8.0);
                }
        return dst;
    };

    Tensor want_f = fixed;
    Tensor want_m = moving;
    for (size_t l = 0; l < 4; ++l) {
        want_f = block_mean(want_f);
        want_m = block_mean(want_m);
        const Tensor &got_f = g.val(out.pooled_fixed[l]);
        const Tensor &got_m = g.val(out.pooled_moving[l]);
        REQUIRE(got_f.same_shape(want_f));
        for (int64_t i = 0; i < want_f.numel(); ++i) {
            CHECK(got_f[i] == doctest::Approx(want_f[i]).epsilon(1e-6));
            CHECK(got_m[i] == doctest::Approx(want_m[i]).epsilon(1e-6));
        }
    }
}

TEST_CASE("rigid head at initialization does not disturb the fields") {
    const Tensor fixed = smooth_volume(32, 32, 32, 300);
    const Tensor moving = smooth_volume(32, 32, 32, 301);

    NetworkConfig with = make_cfg(32, 32, 32);
    NetworkConfig without = with;
    without.use_rigid = false;

    Graph ga, gb;
    const StageOutputs oa = forward(ga, with, bind_params(ga, init_params(with, 4)), fixed, moving);
    const StageOutputs ob =
        forward(gb, without, bind_params(gb, init_params(without, 4)), fixed, moving);
    for (size_t s = 0; s < 5; ++s) {
        CHECK(all_zero(ga.val(oa.fields[s])));
        CHECK(all_zero(gb.val(ob.fields[s])));
    }
    CHECK(bit_equal(ga.val(oa.warped_full()), gb.val(ob.warped_full())));
    CHECK_FALSE(ob.rigid_r.valid());
    CHECK(ob.rigid.is_identity());
}

TEST_CASE("forward rejects malformed inputs") {
    const NetworkConfig cfg = make_cfg(32, 32, 32);
    const ParamStore p = init_params(cfg, 2);
    Graph g;
    const BoundParams bp = bind_params(g, p);
    const Tensor ok = smooth_volume(32, 32, 32, 1);

    CHECK_THROWS_AS(forward(g, cfg, bp, Tensor({16, 16}), ok), ValidationError);
    CHECK_THROWS_AS(forward(g, cfg, bp, ok, Tensor({32, 32, 16})), ValidationError);
    CHECK_THROWS_AS(forward(g, cfg, bp, Tensor({64, 64, 64}), Tensor({64, 64, 64})),
                    ValidationError);

    BoundParams missing = bp;
    missing.vars.erase("feat0.conv.w");
    CHECK_THROWS_AS(forward(g, cfg, missing, ok, ok), ValidationError);
}

TEST_CASE("forward is deterministic and matches between train and infer modes") {
    const NetworkConfig cfg = make_cfg(32, 32, 32);
    const ParamStore p = perturbed_params(cfg, 13);
    const Tensor fixed = smooth_volume(32, 32, 32, 400);
    const Tensor moving = smooth_volume(32, 32, 32, 401);

    Graph g1, g2;
    Graph gi(Graph::Mode::Infer);
    const StageOutputs o1 = forward(g1, cfg, bind_params(g1, p), fixed, moving);
    const StageOutputs o2 = forward(g2, cfg, bind_params(g2, p), fixed, moving);
    const StageOutputs oi = forward(gi, cfg, bind_params(gi, p), fixed, moving);

    // the perturbed heads must actually produce a nonzero field, otherwise
    // this test would pass vacuously
    CHECK_FALSE(all_zero(g1.val(o1.phi0())));

    CHECK(bit_equal(g1.val(o1.phi0()), g2.val(o2.phi0())));
    CHECK(bit_equal(g1.val(o1.warped_full()), g2.val(o2.warped_full())));
    CHECK(bit_equal(g1.val(o1.coarse_field), g2.val(o2.coarse_field)));
    CHECK(bit_equal(g1.val(o1.rigid_r), g2.val(o2.rigid_r)));

    CHECK(bit_equal(g1.val(o1.phi0()), gi.val(oi.phi0())));
    CHECK(bit_equal(g1.val(o1.warped_full()), gi.val(oi.warped_full())));
    for (size_t s = 0; s < 5; ++s)
        CHECK(bit_equal(g1.val(o1.fields[s]), gi.val(oi.fields[s])));
}

TEST_CASE("gradients reach every parameter group and descent reduces the loss") {
    const NetworkConfig cfg = make_cfg(32, 32, 32);
    ParamStore p = perturbed_params(cfg, 17);
    const Tensor fixed = smooth_volume(32, 32, 32, 500);
    const Tensor moving = smooth_volume(32, 32, 32, 501);
    const ldreg::LossWeights w;

    double first_loss = 0.0, last_loss = 0.0;
    for (int step = 0; step < 6; ++step) {
        Graph g;
        const BoundParams bp = bind_params(g, p);
        const StageOutputs out = forward(g, cfg, bp, fixed, moving);
        ldreg::LossReport report;
        const Var loss = stage_losses(g, out, w, report);
        if (step == 0)
            first_loss = report.total;
        last_loss = report.total;
        g.backward(loss);

        if (step == 0) {
            for (const std::string &group : param_groups(cfg)) {
                double norm = 0.0;
                for (const auto &[key, var] : bp.vars) {
                    if (key.rfind(group, 0) != 0)
                        continue;
                    const Tensor &grad = g.grad(var);
                    for (int64_t i = 0; i < grad.numel(); ++i)
                        norm += static_cast<double>(grad[i]) * grad[i];
                }
                CAPTURE(group);
                CHECK(norm > 0.0);
            }
        }
        // scale the step by the global gradient norm so a single descent step
        // stays inside the region where the linearization is trustworthy
        double sq = 0.0;
        for (const auto &[key, var] : bp.vars) {
            const Tensor &grad = g.grad(var);
            for (int64_t i = 0; i < grad.numel(); ++i)
                sq += static_cast<double>(grad[i]) * grad[i];
        }
        const float step_scale = static_cast<float>(0.05 / (1.0 + std::sqrt(sq)));
        for (auto &[key, t] : p) {
            const Tensor &grad = g.grad(bp.at(key));
            if (grad.empty())
                continue;
            for (int64_t i = 0; i < t.numel(); ++i)
                t[i] -= step_scale * grad[i];
        }
    }
    CHECK(last_loss < first_loss);
    CHECK(std::isfinite(last_loss));
}

TEST_CASE("refine-core ablation still runs and keeps the residual structure") {
    NetworkConfig cfg = make_cfg(32, 32, 32);
    cfg.use_refine_core = false;
    const ParamStore p = init_params(cfg, 8);
    Graph g;
    const StageOutputs out = forward(g, cfg, bind_params(g, p), smooth_volume(32, 32, 32, 600),
                                     smooth_volume(32, 32, 32, 601));
    REQUIRE(out.fields.size() == 5);
    for (const Var f : out.fields)
        CHECK(all_zero(g.val(f)));
}

TEST_CASE("fusion ablation falls back to upsampling the finest field") {
    NetworkConfig cfg = make_cfg(32, 32, 32);
    const Tensor fixed = smooth_volume(32, 32, 32, 700);
    const Tensor moving = smooth_volume(32, 32, 32, 701);

    // with perturbed refine heads the finest stage field is nonzero; without
    // fusion the full-resolution field must be exactly its trilinear upsample
    NetworkConfig nofuse = cfg;
    nofuse.final_fusion = false;
    ParamStore p = init_params(nofuse, 19);
    Rng rng(99);
    Tensor &head = p.at("refine3.head.w");
    for (int64_t i = 0; i < head.numel(); ++i)
        head[i] = rng.uniform(-0.05f, 0.05f);

    Graph g;
    const StageOutputs out = forward(g, nofuse, bind_params(g, p), fixed, moving);
    const Tensor want = ldreg::upsample_field(g.val(out.fields[3]), {32, 32, 32});
    CHECK_FALSE(all_zero(g.val(out.fields[3])));
    CHECK(bit_equal(g.val(out.phi0()), want));
}
