#include "doctest.h"

#include <cmath>

#include "ldreg/errors.hpp"
#include "ldreg/tensor.hpp"
#include "ldreg/warp.hpp"
#include "oracles.hpp"

using ldreg::Tensor;

static Tensor zero_field(int64_t d, int64_t h, int64_t w) { return Tensor({3, d, h, w}); }

TEST_CASE("identity_grid corners and centers") {
    SUBCASE("2x2x2 corners are exactly +-1") {
        const Tensor g = ldreg::identity_grid(2, 2, 2);
        for (int64_t z = 0; z < 2; ++z)
            for (int64_t y = 0; y < 2; ++y)
                for (int64_t x = 0; x < 2; ++x) {
                    CHECK(g.at(0, z, y, x) == (x == 0 ? -1.0f : 1.0f));
                    CHECK(g.at(1, z, y, x) == (y == 0 ? -1.0f : 1.0f));
                    CHECK(g.at(2, z, y, x) == (z == 0 ? -1.0f : 1.0f));
                }
    }
    SUBCASE("3x3x3 center voxel is the origin") {
        const Tensor g = ldreg::identity_grid(3, 3, 3);
        CHECK(g.at(0, 1, 1, 1) == 0.0f);
        CHECK(g.at(1, 1, 1, 1) == 0.0f);
        CHECK(g.at(2, 1, 1, 1) == 0.0f);
    }
    SUBCASE("5x4x3 matches the per-axis linspace oracle") {
        const Tensor g = ldreg::identity_grid(5, 4, 3);
        for (int64_t z = 0; z < 5; ++z)
            for (int64_t y = 0; y < 4; ++y)
                for (int64_t x = 0; x < 3; ++x) {
                    CHECK(g.at(0, z, y, x) == doctest::Approx(oracle::axis_coord(x, 3)).epsilon(1e-7));
                    CHECK(g.at(1, z, y, x) == doctest::Approx(oracle::axis_coord(y, 4)).epsilon(1e-7));
                    CHECK(g.at(2, z, y, x) == doctest::Approx(oracle::axis_coord(z, 5)).epsilon(1e-7));
                }
    }
    SUBCASE("dims below 2 are rejected") {
        CHECK_THROWS_AS(ldreg::identity_grid(1, 4, 4), ldreg::ValidationError);
    }
}

TEST_CASE("grid_sample identity field") {
    const Tensor v = oracle::random_tensor({5, 6, 7}, 41);
    const Tensor phi = zero_field(5, 6, 7);
    SUBCASE("linear mode reproduces the lattice within 1e-6") {
        const Tensor out = ldreg::grid_sample(v, phi, ldreg::SampleMode::Linear);
        CHECK(oracle::max_abs_diff(out, v) <= 1e-6);
    }
    SUBCASE("nearest mode is exact") {
        const Tensor out = ldreg::grid_sample(v, phi, ldreg::SampleMode::Nearest);
        CHECK(oracle::max_abs_diff(out, v) == 0.0);
    }
}

TEST_CASE("grid_sample one-voxel shift matches the brute-force oracle") {
    const int64_t d = 4, h = 4, w = 5;
    const Tensor v = oracle::random_tensor({d, h, w}, 7);
    Tensor phi = zero_field(d, h, w);
    const float step = 2.0f / static_cast<float>(w - 1); // one voxel along x
    for (int64_t i = 0; i < d * h * w; ++i)
        phi[i] = step;
    const Tensor out = ldreg::grid_sample(v, phi);
    const Tensor ref = oracle::grid_sample_ref(v, phi);
    CHECK(oracle::max_abs_diff(out, ref) <= 1e-6);
    // interior voxels shift by one; the final column clamps to the border
    CHECK(out.at(1, 2, 0) == doctest::Approx(v.at(1, 2, 1)).epsilon(1e-6));
    CHECK(out.at(1, 2, w - 1) == doctest::Approx(v.at(1, 2, w - 1)).epsilon(1e-6));
}

TEST_CASE("grid_sample random fields match the brute-force oracle") {
    for (uint64_t trial = 0; trial < 25; ++trial) {
        const int64_t d = 2 + trial % 8, h = 2 + (trial * 3) % 8, w = 2 + (trial * 5) % 8;
        const Tensor v = oracle::random_tensor({d, h, w}, 100 + trial);
        const Tensor phi = oracle::random_tensor({3, d, h, w}, 200 + trial, -0.3f, 0.3f);
        const Tensor out = ldreg::grid_sample(v, phi);
        const Tensor ref = oracle::grid_sample_ref(v, phi);
        CHECK(oracle::max_abs_diff(out, ref) <= 1e-6);
        const Tensor outn = ldreg::grid_sample(v, phi, ldreg::SampleMode::Nearest);
        const Tensor refn = oracle::grid_sample_ref(v, phi, true);
        CHECK(oracle::max_abs_diff(outn, refn) == 0.0);
    }
}

TEST_CASE("grid_sample rejects shape mismatches") {
    const Tensor v = oracle::random_tensor({4, 4, 4}, 1);
    CHECK_THROWS_AS(ldreg::grid_sample(v, zero_field(4, 4, 5)), ldreg::ValidationError);
    CHECK_THROWS_AS(ldreg::grid_sample(v, Tensor({2, 4, 4, 4})), ldreg::ValidationError);
}

TEST_CASE("upsample_field") {
    SUBCASE("constant field stays constant at the target shape") {
        Tensor phi = zero_field(3, 3, 3);
        for (int64_t c = 0; c < 3; ++c)
            for (int64_t i = 0; i < 27; ++i)
                phi[c * 27 + i] = 0.25f * static_cast<float>(c + 1);
        const Tensor up = ldreg::upsample_field(phi, {7, 6, 5});
        for (int64_t c = 0; c < 3; ++c)
            for (int64_t i = 0; i < 7 * 6 * 5; ++i)
                CHECK(up[c * 7 * 6 * 5 + i] == doctest::Approx(0.25f * (c + 1)).epsilon(1e-7));
    }
    SUBCASE("zero field stays zero") {
        const Tensor up = ldreg::upsample_field(zero_field(2, 2, 2), {5, 5, 5});
        CHECK(up.max() == 0.0f);
        CHECK(up.min() == 0.0f);
    }
    SUBCASE("linear ramps are reproduced exactly") {
        // trilinear interpolation reproduces linear functions of the grid
        const int64_t d = 3, h = 4, w = 5;
        Tensor phi = zero_field(d, h, w);
        for (int64_t z = 0; z < d; ++z)
            for (int64_t y = 0; y < h; ++y)
                for (int64_t x = 0; x < w; ++x) {
                    phi.at(0, z, y, x) = static_cast<float>(oracle::axis_coord(x, w)) * 0.1f;
                    phi.at(1, z, y, x) = static_cast<float>(oracle::axis_coord(y, h)) * -0.2f;
                    phi.at(2, z, y, x) = static_cast<float>(oracle::axis_coord(z, d)) * 0.3f;
                }
        const Tensor up = ldreg::upsample_field(phi, {5, 7, 9});
        for (int64_t z = 0; z < 5; ++z)
            for (int64_t y = 0; y < 7; ++y)
                for (int64_t x = 0; x < 9; ++x) {
                    CHECK(up.at(0, z, y, x) ==
                          doctest::Approx(oracle::axis_coord(x, 9) * 0.1).epsilon(1e-6));
                    CHECK(up.at(1, z, y, x) ==
                          doctest::Approx(oracle::axis_coord(y, 7) * -0.2).epsilon(1e-6));
                    CHECK(up.at(2, z, y, x) ==
                          doctest::Approx(oracle::axis_coord(z, 5) * 0.3).epsilon(1e-6));
                }
    }
    SUBCASE("downsampling requests are rejected") {
        CHECK_THROWS_AS(ldreg::upsample_field(zero_field(4, 4, 4), {2, 4, 4}),
                        ldreg::ValidationError);
    }
}

TEST_CASE("apply_rigid_to_field") {
    const int64_t d = 4, h = 5, w = 6;
    SUBCASE("identity transform leaves the field unchanged") {
        const Tensor phi = oracle::random_tensor({3, d, h, w}, 9, -0.2f, 0.2f);
        const Tensor out = ldreg::apply_rigid_to_field(phi, ldreg::RigidTransform::identity());
        CHECK(oracle::max_abs_diff(out, phi) <= 1e-7);
    }
    SUBCASE("pure translation yields a constant field") {
        ldreg::RigidTransform t;
        t.t = {0.5f, 0.0f, 0.0f};
        const Tensor out = ldreg::apply_rigid_to_field(zero_field(d, h, w), t);
        for (int64_t i = 0; i < d * h * w; ++i) {
            CHECK(out[i] == doctest::Approx(0.5f).epsilon(1e-7));
            CHECK(out[d * h * w + i] == 0.0f);
            CHECK(out[2 * d * h * w + i] == 0.0f);
        }
    }
    SUBCASE("90 degree rotation about z matches the affine oracle") {
        ldreg::RigidTransform t;
        // x' = -y, y' = x in the (x,y,z) basis
        t.R = {0, -1, 0, 1, 0, 0, 0, 0, 1};
        const Tensor out = ldreg::apply_rigid_to_field(zero_field(d, h, w), t);
        for (int64_t z = 0; z < d; ++z)
            for (int64_t y = 0; y < h; ++y)
                for (int64_t x = 0; x < w; ++x) {
                    const double gx = oracle::axis_coord(x, w);
                    const double gy = oracle::axis_coord(y, h);
                    CHECK(out.at(0, z, y, x) == doctest::Approx(-gy - gx).epsilon(1e-6));
                    CHECK(out.at(1, z, y, x) == doctest::Approx(gx - gy).epsilon(1e-6));
                    CHECK(out.at(2, z, y, x) == doctest::Approx(0.0).epsilon(1e-6));
                }
    }
}

TEST_CASE("spatial_gradient") {
    SUBCASE("constant field has zero gradient") {
        Tensor phi = zero_field(4, 4, 4);
        phi.fill(0.7f);
        const Tensor g = ldreg::spatial_gradient(phi);
        CHECK(g.max() == 0.0f);
        CHECK(g.min() == 0.0f);
    }
    SUBCASE("x-ramp in channel x gives slope everywhere but the last slice") {
        const int64_t n = 4;
        const float s = 0.125f;
        Tensor phi = zero_field(n, n, n);
        for (int64_t z = 0; z < n; ++z)
            for (int64_t y = 0; y < n; ++y)
                for (int64_t x = 0; x < n; ++x)
                    phi.at(0, z, y, x) = s * static_cast<float>(x);
        const Tensor g = ldreg::spatial_gradient(phi);
        for (int64_t z = 0; z < n; ++z)
            for (int64_t y = 0; y < n; ++y)
                for (int64_t x = 0; x < n; ++x)
                    CHECK(g.at(0, z, y, x) == (x + 1 < n ? s : 0.0f));
        // every other component is identically zero
        for (int64_t comp = 1; comp < 9; ++comp)
            for (int64_t i = 0; i < n * n * n; ++i)
                CHECK(g[comp * n * n * n + i] == 0.0f);
    }
    SUBCASE("random 4^3 field matches the hand-rolled loop exactly") {
        const Tensor phi = oracle::random_tensor({3, 4, 4, 4}, 33);
        const Tensor g = ldreg::spatial_gradient(phi);
        const Tensor ref = oracle::spatial_gradient_ref(phi);
        CHECK(oracle::max_abs_diff(g, ref) == 0.0);
    }
}

TEST_CASE("jacobian_determinant") {
    const int64_t n = 8;
    SUBCASE("zero field maps to all ones") {
        const Tensor j = ldreg::jacobian_determinant(zero_field(n, n, n));
        for (int64_t i = 0; i < j.numel(); ++i)
            CHECK(j[i] == doctest::Approx(1.0f).epsilon(1e-6));
    }
    SUBCASE("uniform translation maps to all ones") {
        Tensor phi = zero_field(n, n, n);
        phi.fill(0.21f);
        const Tensor j = ldreg::jacobian_determinant(phi);
        for (int64_t i = 0; i < j.numel(); ++i)
            CHECK(j[i] == doctest::Approx(1.0f).epsilon(1e-6));
    }
    SUBCASE("uniform 1.1x scaling gives det 1.331 in the interior") {
        Tensor phi = zero_field(n, n, n);
        const double c = (n - 1) / 2.0;
        for (int64_t z = 0; z < n; ++z)
            for (int64_t y = 0; y < n; ++y)
                for (int64_t x = 0; x < n; ++x) {
                    // 0.1*(p - center) voxels along each axis, in normalized units
                    phi.at(0, z, y, x) = static_cast<float>(0.1 * (x - c) * 2.0 / (n - 1));
                    phi.at(1, z, y, x) = static_cast<float>(0.1 * (y - c) * 2.0 / (n - 1));
                    phi.at(2, z, y, x) = static_cast<float>(0.1 * (z - c) * 2.0 / (n - 1));
                }
        const Tensor j = ldreg::jacobian_determinant(phi);
        for (int64_t z = 1; z + 1 < n; ++z)
            for (int64_t y = 1; y + 1 < n; ++y)
                for (int64_t x = 1; x + 1 < n; ++x)
                    CHECK(j.at(z, y, x) == doctest::Approx(1.331).epsilon(1e-4));
    }
}
