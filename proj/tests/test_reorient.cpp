// test_reorient.cpp - part of dtreg. Pullback, finite-strain conjugation and
// the tensor ssd metric.

#include <cmath>
#include <numbers>

#include "doctest.h"
#include "dtreg/reorient.hpp"
#include "dtreg/rng.hpp"

using namespace dtreg;

namespace {

constexpr double kPi = std::numbers::pi;

GridSpec unit_cube(int n) {
    GridSpec g;
    g.nx = g.ny = g.nz = n;
    g.hx = g.hy = g.hz = 1.0 / (n - 1);
    g.tau = 1.0;
    g.nt = 2;
    return g;
}

Spd3 random_spd(Rng& rng) {
    Mat3 q;
    for (double& v : q.m) v = rng.symmetric(1.0);
    Mat3 p;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double acc = 0.0;
            for (int k = 0; k < 3; ++k) acc += q(k, i) * q(k, j);
            p(i, j) = acc + (i == j ? 0.3 : 0.0);
        }
    return spd_from_mat(p);
}

TensorImage random_image(const GridSpec& g, uint64_t seed) {
    Rng rng(seed);
    TensorImage img(g);
    for (Spd3& s : img.voxels) s = random_spd(rng);
    return img;
}

Mat3 rotation_xy(double angle) {
    Mat3 r = Mat3::identity();
    r(0, 0) = std::cos(angle);
    r(0, 1) = -std::sin(angle);
    r(1, 0) = std::sin(angle);
    r(1, 1) = std::cos(angle);
    return r;
}

// Smooth velocity field for corpus-level checks.
VelocityField smooth_field(const GridSpec& g, double amp) {
    return VelocityField::from_function(g, [&](const Vec3& p, double) -> Vec3 {
        const double sx = std::sin(kPi * p.x), sy = std::sin(kPi * p.y), sz = std::sin(kPi * p.z);
        return {amp * sx * sy * sz, -0.6 * amp * std::sin(2 * kPi * p.x) * sy * sz,
                0.4 * amp * sx * std::sin(2 * kPi * p.y) * sz};
    });
}

}  // namespace

TEST_CASE("pullback through the identity reproduces the image bitwise") {
    const GridSpec g = unit_cube(8);
    const TensorImage img = random_image(g, 40);
    const FlowResult id = FlowResult::identity(g);
    const TensorImage out = pullback(img, id);
    for (size_t idx = 0; idx < img.voxels.size(); ++idx) {
        CHECK(out.voxels[idx].xx == img.voxels[idx].xx);
        CHECK(out.voxels[idx].xy == img.voxels[idx].xy);
        CHECK(out.voxels[idx].zz == img.voxels[idx].zz);
    }
}

TEST_CASE("pullback of a one-voxel interior shift moves indices") {
    const GridSpec g = unit_cube(8);
    const TensorImage img = random_image(g, 41);
    FlowResult shift = FlowResult::identity(g);
    for (int k = 0; k < g.nz; ++k)
        for (int j = 0; j < g.ny; ++j)
            for (int i = 0; i < g.nx - 1; ++i)
                shift.endpoints[g.index(i, j, k)] = g.node(i + 1, j, k);
    const TensorImage out = pullback(img, shift);
    for (int k = 0; k < g.nz; ++k)
        for (int j = 0; j < g.ny; ++j)
            for (int i = 0; i < g.nx - 1; ++i) {
                CHECK(out.at(i, j, k).xx == img.at(i + 1, j, k).xx);
                CHECK(out.at(i, j, k).yz == img.at(i + 1, j, k).yz);
            }
}

TEST_CASE("pullback of a constant image is constant for any deformation") {
    const GridSpec g = unit_cube(8);
    TensorImage img(g);
    const Spd3 p{2.0, 0.3, -0.1, 1.5, 0.2, 1.0};
    for (Spd3& s : img.voxels) s = p;
    FlowResult warp = FlowResult::identity(g);
    Rng rng(42);
    for (Vec3& e : warp.endpoints)
        e = {rng.uniform(-0.2, 1.2), rng.uniform(-0.2, 1.2), rng.uniform(-0.2, 1.2)};
    const TensorImage out = pullback(img, warp);
    // Interpolation of a constant is the constant up to weight roundoff.
    for (const Spd3& s : out.voxels) {
        CHECK(std::abs(s.xx - p.xx) < 1e-14);
        CHECK(std::abs(s.xy - p.xy) < 1e-14);
        CHECK(std::abs(s.zz - p.zz) < 1e-14);
    }
}

TEST_CASE("grid mismatch is rejected") {
    const GridSpec g = unit_cube(8);
    GridSpec g2 = unit_cube(8);
    g2.hx *= 2.0;
    const TensorImage img = random_image(g, 43);
    TensorImage other(g2);
    const FlowResult id = FlowResult::identity(g2);
    CHECK_THROWS_AS(pullback(img, id), GridMismatch);
    CHECK_THROWS_AS(ssd(img, other), GridMismatch);
}

TEST_CASE("fs_transform with the identity flow is the identity on images") {
    const GridSpec g = unit_cube(8);
    const TensorImage img = random_image(g, 44);
    const FlowResult id = FlowResult::identity(g);
    const ReorientedImage out = fs_transform(img, id, id.jacobians);
    for (size_t idx = 0; idx < img.voxels.size(); ++idx) {
        CHECK(out.voxels[idx].xx == img.voxels[idx].xx);
        CHECK(out.voxels[idx].xy == img.voxels[idx].xy);
        CHECK(out.voxels[idx].xz == img.voxels[idx].xz);
        CHECK(out.voxels[idx].yy == img.voxels[idx].yy);
        CHECK(out.voxels[idx].yz == img.voxels[idx].yz);
        CHECK(out.voxels[idx].zz == img.voxels[idx].zz);
    }
}

TEST_CASE("pure interior translation leaves reorientation inactive") {
    const GridSpec g = unit_cube(8);
    const TensorImage img = random_image(g, 45);
    FlowResult shift = FlowResult::identity(g);
    for (int k = 0; k < g.nz; ++k)
        for (int j = 0; j < g.ny; ++j)
            for (int i = 0; i < g.nx - 1; ++i)
                shift.endpoints[g.index(i, j, k)] = g.node(i + 1, j, k);
    const ReorientedImage fs = fs_transform(img, shift, shift.jacobians);
    const TensorImage pb = pullback(img, shift);
    for (size_t idx = 0; idx < img.voxels.size(); ++idx) {
        CHECK(fs.voxels[idx].xx == pb.voxels[idx].xx);
        CHECK(fs.voxels[idx].yz == pb.voxels[idx].yz);
    }
}

TEST_CASE("global rotation of a constant image conjugates the tensor") {
    const GridSpec g = unit_cube(8);
    TensorImage img(g);
    const Spd3 p{2.0, 0.4, 0.1, 1.2, -0.2, 0.8};
    for (Spd3& s : img.voxels) s = p;

    const Mat3 q = rotation_xy(0.31);
    FlowResult rot;
    rot.grid = g;
    rot.t_from = g.tau;
    rot.t_to = 0.0;
    rot.endpoints.resize(g.voxel_count());
    rot.jacobians.assign(g.voxel_count(), q);
    rot.det_diag.assign(g.voxel_count(), {1.0, 1.0});
    for (int k = 0; k < g.nz; ++k)
        for (int j = 0; j < g.ny; ++j)
            for (int i = 0; i < g.nx; ++i)
                rot.endpoints[g.index(i, j, k)] = transpose(q) * g.node(i, j, k);

    const ReorientedImage out = fs_transform(img, rot, rot.jacobians);
    const Mat3 expected = transpose(q) * p.to_mat() * q;
    for (const Spd3& s : out.voxels) CHECK(mat_norm(s.to_mat() - expected) < 1e-12);
}

TEST_CASE("fs_transform preserves eigenvalues and the SPD cone on a real flow") {
    const GridSpec g = unit_cube(12);
    const TensorImage img = random_image(g, 46);
    const VelocityField v = smooth_field(g, 0.05);
    const FlowPair pair = build_h_and_inverse(v, 32);
    const ReorientedImage out = fs_transform(img, pair.h, pair.h_inv.jacobians);
    const TensorImage pulled = pullback(img, pair.h);

    for (size_t idx = 0; idx < out.voxels.size(); ++idx) {
        const EigenTriple a = sym_eig(out.voxels[idx].to_mat());
        const EigenTriple b = sym_eig(pulled.voxels[idx].to_mat());
        for (int q = 0; q < 3; ++q)
            CHECK(std::abs(a.lambda[static_cast<size_t>(q)] - b.lambda[static_cast<size_t>(q)]) <
                  1e-9 * std::max(1.0, b.lambda[0]));
        CHECK(a.lambda[2] > 0.0);
    }
}

TEST_CASE("fs_transform serial reference matches the parallel kernel bitwise") {
    const GridSpec g = unit_cube(10);
    const TensorImage img = random_image(g, 47);
    const VelocityField v = smooth_field(g, 0.04);
    const FlowPair pair = build_h_and_inverse(v, 16);
    const ReorientedImage a = fs_transform(img, pair.h, pair.h_inv.jacobians);
    const ReorientedImage b = fs_transform_serial(img, pair.h, pair.h_inv.jacobians);
    for (size_t idx = 0; idx < a.voxels.size(); ++idx) {
        CHECK(a.voxels[idx].xx == b.voxels[idx].xx);
        CHECK(a.voxels[idx].xy == b.voxels[idx].xy);
        CHECK(a.voxels[idx].xz == b.voxels[idx].xz);
        CHECK(a.voxels[idx].yy == b.voxels[idx].yy);
        CHECK(a.voxels[idx].yz == b.voxels[idx].yz);
        CHECK(a.voxels[idx].zz == b.voxels[idx].zz);
    }
}

TEST_CASE("ssd: zero, single voxel, symmetry, oracle") {
    const GridSpec g = unit_cube(6);
    const TensorImage a = random_image(g, 48);
    CHECK(ssd(a, a) == 0.0);

    TensorImage b = a;
    b.voxels[g.index(2, 3, 1)].xx += 1.0;
    CHECK(ssd(a, b) == doctest::Approx(g.cell_volume()).epsilon(1e-14));
    CHECK(ssd(a, b) == ssd(b, a));
    CHECK(ssd(a, b) >= 0.0);

    // Full 9-component oracle: expand both six-component tensors to 3x3 and
    // sum every squared entry.
    const TensorImage c = random_image(g, 49);
    double oracle = 0.0;
    for (size_t idx = 0; idx < a.voxels.size(); ++idx) {
        const Mat3 d = a.voxels[idx].to_mat() - c.voxels[idx].to_mat();
        for (double m : d.m) oracle += m * m;
    }
    oracle *= g.cell_volume();
    CHECK(ssd(a, c) == doctest::Approx(oracle).epsilon(1e-12));
}
