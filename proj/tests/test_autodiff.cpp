#include "doctest.h"

#include <cmath>
#include <functional>
#include <vector>

#include "grad_check.hpp"
#include "ldreg/autodiff.hpp"
#include "ldreg/errors.hpp"
#include "ldreg/tensor.hpp"
#include "ldreg/warp.hpp"
#include "oracles.hpp"

using ldreg::Graph;
using ldreg::Tensor;
using ldreg::Var;

namespace {

using gradcheck::away_from_zero;
using gradcheck::eval_scalar;
using gradcheck::max_grad_err;
using gradcheck::safe_field;
using BuildFn = gradcheck::BuildFn;

// Guarantees a unique channel argmax with margin, away from max() ties.
Tensor spread_channels(Tensor x, float gap = 0.15f) {
    const int64_t c = x.dim(0), n = x.numel() / c;
    for (int64_t i = 0; i < n; ++i) {
        int64_t arg = 0;
        float best = x[i];
        for (int64_t ch = 1; ch < c; ++ch)
            if (x[ch * n + i] > best) {
                best = x[ch * n + i];
                arg = ch;
            }
        float second = -1e30f;
        for (int64_t ch = 0; ch < c; ++ch)
            if (ch != arg)
                second = std::max(second, x[ch * n + i]);
        if (best - second < gap)
            x[arg * n + i] += gap;
    }
    return x;
}

// Independent naive convolution: double accumulation, bounds-checked loops.
Tensor conv3d_ref(const Tensor &x, const Tensor &w, const Tensor &b, int stride) {
    const int64_t ci = x.dim(0), d = x.dim(1), h = x.dim(2), ww = x.dim(3);
    const int64_t co = w.dim(0), k = w.dim(2), pad = (k - 1) / 2;
    const int64_t od = (d - 1) / stride + 1, oh = (h - 1) / stride + 1, ow = (ww - 1) / stride + 1;
    Tensor y({co, od, oh, ow});
    for (int64_t o = 0; o < co; ++o)
        for (int64_t z = 0; z < od; ++z)
            for (int64_t yy = 0; yy < oh; ++yy)
                for (int64_t xx = 0; xx < ow; ++xx) {
                    double acc = b[o];
                    for (int64_t c = 0; c < ci; ++c)
                        for (int64_t kz = 0; kz < k; ++kz)
                            for (int64_t ky = 0; ky < k; ++ky)
                                for (int64_t kx = 0; kx < k; ++kx) {
                                    const int64_t iz = z * stride + kz - pad;
                                    const int64_t iy = yy * stride + ky - pad;
                                    const int64_t ix = xx * stride + kx - pad;
                                    if (iz < 0 || iz >= d || iy < 0 || iy >= h || ix < 0 ||
                                        ix >= ww)
                                        continue;
                                    acc += static_cast<double>(
                                               w[(((o * ci + c) * k + kz) * k + ky) * k + kx]) *
                                           static_cast<double>(x.at(c, iz, iy, ix));
                                }
                    y.at(o, z, yy, xx) = static_cast<float>(acc);
                }
    return y;
}

} // namespace

TEST_CASE("conv3d forward matches the naive reference") {
    for (const int stride : {1, 2}) {
        const Tensor x = oracle::random_tensor({2, 4, 6, 4}, 11);
        const Tensor w = oracle::random_tensor({3, 2, 3, 3, 3}, 12, -0.4f, 0.4f);
        const Tensor b = oracle::random_tensor({3}, 13);
        Graph g(Graph::Mode::Infer);
        const Tensor y = g.val(g.conv3d(g.input(x), g.input(w), g.input(b), stride));
        const Tensor ref = conv3d_ref(x, w, b, stride);
        CHECK(y.same_shape(ref));
        CHECK(oracle::max_abs_diff(y, ref) <= 1e-5);
    }
    SUBCASE("1x1x1 kernels") {
        const Tensor x = oracle::random_tensor({3, 4, 4, 4}, 21);
        const Tensor w = oracle::random_tensor({2, 3, 1, 1, 1}, 22);
        const Tensor b = oracle::random_tensor({2}, 23);
        Graph g(Graph::Mode::Infer);
        const Tensor y = g.val(g.conv3d(g.input(x), g.input(w), g.input(b), 1));
        CHECK(oracle::max_abs_diff(y, conv3d_ref(x, w, b, 1)) <= 1e-5);
    }
    SUBCASE("identity kernel reproduces the input plus bias") {
        const Tensor x = oracle::random_tensor({1, 4, 4, 4}, 31);
        Tensor w({1, 1, 3, 3, 3});
        w[13] = 1.0f; // center tap
        Tensor b({1});
        b[0] = 0.25f;
        Graph g(Graph::Mode::Infer);
        const Tensor y = g.val(g.conv3d(g.input(x), g.input(w), g.input(b), 1));
        for (int64_t i = 0; i < x.numel(); ++i)
            CHECK(y[i] == doctest::Approx(x[i] + 0.25f).epsilon(1e-6));
    }
}

TEST_CASE("conv3d gradients match central differences") {
    const Tensor wsum = oracle::random_tensor({3, 2, 2, 2}, 40);
    for (const int stride : {2, 1}) {
        const Tensor x = oracle::random_tensor({2, 4, 4, 4}, 41, -0.8f, 0.8f);
        const Tensor w = oracle::random_tensor({3, 2, 3, 3, 3}, 42, -0.3f, 0.3f);
        const Tensor b = oracle::random_tensor({3}, 43, -0.2f, 0.2f);
        const Tensor wfull = oracle::random_tensor({3, 4, 4, 4}, 44);
        const BuildFn f = [&, stride](Graph &g, const std::vector<Var> &v) {
            return g.weighted_sum(g.conv3d(v[0], v[1], v[2], stride),
                                  stride == 1 ? wfull : wsum);
        };
        CHECK(max_grad_err({x, w, b}, f) <= 1e-3);
    }
    SUBCASE("1x1x1") {
        const Tensor x = oracle::random_tensor({3, 3, 3, 3}, 45);
        const Tensor w = oracle::random_tensor({2, 3, 1, 1, 1}, 46);
        const Tensor b = oracle::random_tensor({2}, 47);
        const Tensor ws = oracle::random_tensor({2, 3, 3, 3}, 48);
        const BuildFn f = [&](Graph &g, const std::vector<Var> &v) {
            return g.weighted_sum(g.conv3d(v[0], v[1], v[2], 1), ws);
        };
        CHECK(max_grad_err({x, w, b}, f) <= 1e-3);
    }
}

TEST_CASE("leaky_relu") {
    const Tensor x = away_from_zero(oracle::random_tensor({2, 3, 3, 3}, 50));
    SUBCASE("forward closed form") {
        Graph g(Graph::Mode::Infer);
        const Tensor y = g.val(g.leaky_relu(g.input(x), 0.01f));
        for (int64_t i = 0; i < x.numel(); ++i)
            CHECK(y[i] == (x[i] > 0.0f ? x[i] : 0.01f * x[i]));
    }
    SUBCASE("gradient") {
        const Tensor ws = oracle::random_tensor({2, 3, 3, 3}, 51);
        const BuildFn f = [&](Graph &g, const std::vector<Var> &v) {
            return g.weighted_sum(g.leaky_relu(v[0], 0.01f), ws);
        };
        CHECK(max_grad_err({x}, f) <= 1e-3);
    }
}

TEST_CASE("norm") {
    SUBCASE("zero input with unit affine yields beta") {
        // channel statistics of a zero tensor: mean 0, var 0 -> output beta
        Graph g(Graph::Mode::Infer);
        Tensor gamma({2}), beta({2});
        gamma.fill(1.0f);
        beta[0] = 0.25f;
        beta[1] = -0.5f;
        const Tensor y =
            g.val(g.norm(g.input(Tensor({2, 2, 2, 2})), g.input(gamma), g.input(beta), 1e-5f));
        for (int64_t i = 0; i < 8; ++i) {
            CHECK(y[i] == 0.25f);
            CHECK(y[8 + i] == -0.5f);
        }
    }
    SUBCASE("normalized statistics") {
        const Tensor x = oracle::random_tensor({2, 4, 4, 4}, 60);
        Tensor gamma({2}), beta({2});
        gamma.fill(1.0f);
        Graph g(Graph::Mode::Infer);
        const Tensor y = g.val(g.norm(g.input(x), g.input(gamma), g.input(beta), 1e-5f));
        for (int64_t c = 0; c < 2; ++c) {
            double s = 0.0, s2 = 0.0;
            for (int64_t i = 0; i < 64; ++i)
                s += y[c * 64 + i];
            const double mu = s / 64.0;
            for (int64_t i = 0; i < 64; ++i)
                s2 += (y[c * 64 + i] - mu) * (y[c * 64 + i] - mu);
            CHECK(std::abs(mu) <= 1e-6);
            CHECK(s2 / 64.0 == doctest::Approx(1.0).epsilon(1e-3));
        }
    }
    SUBCASE("gradients through statistics") {
        const Tensor x = oracle::random_tensor({2, 3, 3, 3}, 61);
        const Tensor gamma = oracle::random_tensor({2}, 62, 0.5f, 1.5f);
        const Tensor beta = oracle::random_tensor({2}, 63, -0.5f, 0.5f);
        const Tensor ws = oracle::random_tensor({2, 3, 3, 3}, 64);
        const BuildFn f = [&](Graph &g, const std::vector<Var> &v) {
            return g.weighted_sum(g.norm(v[0], v[1], v[2], 1e-5f), ws);
        };
        CHECK(max_grad_err({x, gamma, beta}, f, 1e-2) <= 2e-3);
    }
}

TEST_CASE("avg_pool2") {
    const Tensor x = oracle::random_tensor({2, 4, 4, 4}, 70);
    SUBCASE("forward equals block means") {
        Graph g(Graph::Mode::Infer);
        const Tensor y = g.val(g.avg_pool2(g.input(x)));
        for (int64_t c = 0; c < 2; ++c) {
            Tensor chan({4, 4, 4});
            std::copy(x.data() + c * 64, x.data() + (c + 1) * 64, chan.data());
            const Tensor ref = oracle::avg_pool2_ref(chan);
            for (int64_t i = 0; i < 8; ++i)
                CHECK(y[c * 8 + i] == doctest::Approx(ref[i]).epsilon(1e-6));
        }
    }
    SUBCASE("gradient") {
        const Tensor ws = oracle::random_tensor({2, 2, 2, 2}, 71);
        const BuildFn f = [&](Graph &g, const std::vector<Var> &v) {
            return g.weighted_sum(g.avg_pool2(v[0]), ws);
        };
        CHECK(max_grad_err({x}, f) <= 1e-3);
    }
    SUBCASE("odd dims rejected") {
        Graph g;
        CHECK_THROWS_AS(g.avg_pool2(g.input(Tensor({1, 3, 4, 4}))), ldreg::ValidationError);
    }
}

TEST_CASE("upsample3") {
    SUBCASE("matches the field upsampler on 3-channel input") {
        const Tensor x = oracle::random_tensor({3, 3, 4, 5}, 80);
        Graph g(Graph::Mode::Infer);
        const Tensor y = g.val(g.upsample3(g.input(x), {5, 7, 9}));
        const Tensor ref = ldreg::upsample_field(x, {5, 7, 9});
        CHECK(oracle::max_abs_diff(y, ref) <= 1e-6);
    }
    SUBCASE("gradient") {
        const Tensor x = oracle::random_tensor({2, 2, 3, 2}, 81);
        const Tensor ws = oracle::random_tensor({2, 4, 5, 3}, 82);
        const BuildFn f = [&](Graph &g, const std::vector<Var> &v) {
            return g.weighted_sum(g.upsample3(v[0], {4, 5, 3}), ws);
        };
        CHECK(max_grad_err({x}, f) <= 1e-3);
    }
}

TEST_CASE("fc") {
    const Tensor x = oracle::random_tensor({6}, 90);
    const Tensor w = oracle::random_tensor({4, 6}, 91, -0.5f, 0.5f);
    const Tensor b = oracle::random_tensor({4}, 92);
    SUBCASE("forward equals the naive product") {
        Graph g(Graph::Mode::Infer);
        const Tensor y = g.val(g.fc(g.input(x), g.input(w), g.input(b)));
        for (int64_t m = 0; m < 4; ++m) {
            double acc = b[m];
            for (int64_t n = 0; n < 6; ++n)
                acc += static_cast<double>(w[m * 6 + n]) * static_cast<double>(x[n]);
            CHECK(y[m] == doctest::Approx(acc).epsilon(1e-6));
        }
    }
    SUBCASE("gradient") {
        const Tensor ws = oracle::random_tensor({4}, 93);
        const BuildFn f = [&](Graph &g, const std::vector<Var> &v) {
            return g.weighted_sum(g.fc(v[0], v[1], v[2]), ws);
        };
        CHECK(max_grad_err({x, w, b}, f) <= 1e-3);
    }
}

TEST_CASE("channel_max routes gradients to the winning channel") {
    const Tensor x = spread_channels(oracle::random_tensor({3, 2, 2, 2}, 100));
    SUBCASE("forward picks the max") {
        Graph g(Graph::Mode::Infer);
        const Tensor y = g.val(g.channel_max(g.input(x)));
        for (int64_t i = 0; i < 8; ++i)
            CHECK(y[i] == std::max({x[i], x[8 + i], x[16 + i]}));
    }
    SUBCASE("gradient") {
        const Tensor ws = oracle::random_tensor({1, 2, 2, 2}, 101);
        const BuildFn f = [&](Graph &g, const std::vector<Var> &v) {
            return g.weighted_sum(g.channel_max(v[0]), ws);
        };
        CHECK(max_grad_err({x}, f) <= 1e-3);
    }
}

TEST_CASE("grid_sample gradients (volume and field)") {
    // keep every sample point comfortably inside an interpolation cell so
    // central differences stay on one linear piece
    const int64_t n = 4;
    const Tensor vol = oracle::random_tensor({n, n, n}, 110);
    const Tensor phi = safe_field(n, n, n, 111);
    const Tensor ws = oracle::random_tensor({n, n, n}, 112);
    const BuildFn f = [&](Graph &g, const std::vector<Var> &v) {
        return g.weighted_sum(g.grid_sample(v[0], v[1]), ws);
    };
    // h in normalized units stays within the cell: h*(n-1)/2 = 0.0075 voxels
    CHECK(max_grad_err({vol, phi}, f, 5e-3) <= 1e-3);

    SUBCASE("clamped samples have zero field gradient") {
        Tensor far({3, n, n, n});
        far.fill(2.5f); // every sample lands far outside on all axes
        Graph g;
        Var vphi = g.param(far);
        g.backward(g.weighted_sum(g.grid_sample(g.input(vol), vphi), ws));
        const Tensor &dphi = g.grad(vphi);
        REQUIRE(!dphi.empty());
        CHECK(dphi.max() == 0.0f);
        CHECK(dphi.min() == 0.0f);
    }
}

TEST_CASE("apply_rigid gradients") {
    const int64_t n = 3;
    const Tensor phi = oracle::random_tensor({3, n, n, n}, 120, -0.2f, 0.2f);
    Tensor r9({9});
    const Tensor rnoise = oracle::random_tensor({9}, 121, -0.1f, 0.1f);
    for (int i = 0; i < 9; ++i)
        r9[i] = (i % 4 == 0 ? 1.0f : 0.0f) + rnoise[i];
    const Tensor t3 = oracle::random_tensor({3}, 122, -0.2f, 0.2f);
    const Tensor ws = oracle::random_tensor({3, n, n, n}, 123);
    const BuildFn f = [&](Graph &g, const std::vector<Var> &v) {
        return g.weighted_sum(g.apply_rigid(v[0], v[1], v[2]), ws);
    };
    CHECK(max_grad_err({phi, r9, t3}, f) <= 1e-3);
}

TEST_CASE("spatial_grad gradient") {
    const Tensor phi = oracle::random_tensor({3, 3, 3, 3}, 130);
    const Tensor ws = oracle::random_tensor({9, 3, 3, 3}, 131);
    const BuildFn f = [&](Graph &g, const std::vector<Var> &v) {
        return g.weighted_sum(g.spatial_grad(v[0]), ws);
    };
    CHECK(max_grad_err({phi}, f) <= 1e-3);
}

TEST_CASE("reduction gradients") {
    const Tensor a = away_from_zero(oracle::random_tensor({3, 3, 3}, 140));
    const Tensor b = oracle::random_tensor({3, 3, 3}, 141);
    SUBCASE("mean_sq_diff") {
        const BuildFn f = [](Graph &g, const std::vector<Var> &v) {
            return g.mean_sq_diff(v[0], v[1]);
        };
        CHECK(max_grad_err({a, b}, f) <= 1e-3);
    }
    SUBCASE("mean_abs") {
        const BuildFn f = [](Graph &g, const std::vector<Var> &v) { return g.mean_abs(v[0]); };
        CHECK(max_grad_err({a}, f) <= 1e-3);
    }
    SUBCASE("mean_sq") {
        const BuildFn f = [](Graph &g, const std::vector<Var> &v) { return g.mean_sq(v[0]); };
        CHECK(max_grad_err({a}, f) <= 1e-3);
    }
}

TEST_CASE("concat, add, flatten, affine_sum compose") {
    const Tensor a = oracle::random_tensor({2, 2, 2, 2}, 150);
    const Tensor b = oracle::random_tensor({1, 2, 2, 2}, 151);
    const Tensor c = oracle::random_tensor({2, 2, 2, 2}, 152);
    const Tensor ws = oracle::random_tensor({5, 2, 2, 2}, 153);
    const BuildFn f = [&](Graph &g, const std::vector<Var> &v) {
        const Var sum = g.add(v[0], v[2]);
        const Var cat = g.concat({sum, v[1], v[0]});
        const Var s1 = g.weighted_sum(cat, ws);
        const Var s2 = g.mean_abs(g.flatten(v[1]));
        return g.affine_sum({{0.7, s1}, {1.3, s2}}, 0.1);
    };
    CHECK(max_grad_err({a, b, c}, f) <= 1e-3);

    SUBCASE("affine_sum value") {
        Graph g;
        const Var s1 = g.input(Tensor({1}, 2.0f));
        const Var s2 = g.input(Tensor({1}, -3.0f));
        CHECK(g.scalar_val(g.affine_sum({{0.5, s1}, {2.0, s2}}, 1.0)) ==
              doctest::Approx(0.5 * 2.0 + 2.0 * -3.0 + 1.0).epsilon(1e-12));
    }
}

TEST_CASE("sub and reshape") {
    SUBCASE("sub forward and gradients") {
        const Tensor a = oracle::random_tensor({2, 3, 3, 3}, 155);
        const Tensor b = oracle::random_tensor({2, 3, 3, 3}, 156);
        Graph g;
        const Var va = g.input(a), vb = g.input(b);
        const Tensor &y = g.val(g.sub(va, vb));
        for (int64_t i = 0; i < y.numel(); ++i)
            CHECK(y[i] == a[i] - b[i]);
        const Tensor ws = oracle::random_tensor({2, 3, 3, 3}, 157);
        const BuildFn f = [&](Graph &gg, const std::vector<Var> &v) {
            return gg.weighted_sum(gg.sub(v[0], v[1]), ws);
        };
        CHECK(max_grad_err({a, b}, f) <= 1e-3);
        CHECK_THROWS_AS(g.sub(va, g.input(Tensor({2, 3, 3, 4}))), ldreg::ValidationError);
    }
    SUBCASE("reshape preserves data and routes gradients") {
        const Tensor x = oracle::random_tensor({3, 2, 2, 2}, 158);
        Graph g;
        const Var vx = g.input(x);
        const Var r = g.reshape(vx, {24});
        CHECK(g.val(r).dim(0) == 24);
        for (int64_t i = 0; i < 24; ++i)
            CHECK(g.val(r)[i] == x[i]);
        const Tensor ws = oracle::random_tensor({24}, 159);
        const BuildFn f = [&](Graph &gg, const std::vector<Var> &v) {
            return gg.weighted_sum(gg.reshape(v[0], {24}), ws);
        };
        CHECK(max_grad_err({x}, f) <= 1e-3);
        CHECK_THROWS_AS(g.reshape(vx, {25}), ldreg::ValidationError);
    }
}

TEST_CASE("determinism: identical graphs produce identical grads") {
    const Tensor x = oracle::random_tensor({2, 4, 4, 4}, 160);
    const Tensor w = oracle::random_tensor({2, 2, 3, 3, 3}, 161, -0.3f, 0.3f);
    const Tensor b = oracle::random_tensor({2}, 162);
    auto run = [&]() {
        Graph g;
        const Var vx = g.param(x), vw = g.param(w), vb = g.param(b);
        const Var y = g.norm(g.leaky_relu(g.conv3d(vx, vw, vb, 1), 0.01f),
                             g.input(Tensor({2}, 1.0f)), g.input(Tensor({2})), 1e-5f);
        g.backward(g.mean_sq(y));
        return std::make_pair(g.grad(vw), g.grad(vb));
    };
    const auto [dw1, db1] = run();
    const auto [dw2, db2] = run();
    CHECK(oracle::max_abs_diff(dw1, dw2) == 0.0);
    CHECK(oracle::max_abs_diff(db1, db2) == 0.0);
}

TEST_CASE("infer-mode release frees values and backward is rejected") {
    Graph g(Graph::Mode::Infer);
    const Var x = g.input(oracle::random_tensor({1, 2, 2, 2}, 170));
    const Var y = g.leaky_relu(x, 0.01f);
    g.release(x);
    CHECK(g.val(x).empty());
    CHECK(!g.val(y).empty());
    CHECK_THROWS_AS(g.backward(g.mean_sq(y)), ldreg::ValidationError);
}
