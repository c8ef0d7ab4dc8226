// verify.cpp - part of dtreg. Property suites: matrix-kernel guarantees and
// flow-integration identities, each reduced to a residual against a limit.

#include "dtreg/verify.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dtreg/flow.hpp"
#include "dtreg/rng.hpp"
#include "dtreg/spd3.hpp"

namespace dtreg {

namespace {

Mat3 random_matrix(Rng& rng, double scale) {
    Mat3 a;
    for (double& v : a.m) v = rng.symmetric(scale);
    return a;
}

Mat3 random_rotation(Rng& rng) {
    // Uniform unit quaternion.
    double q[4];
    double n = 0.0;
    do {
        n = 0.0;
        for (double& c : q) {
            c = rng.symmetric(1.0);
            n += c * c;
        }
    } while (n < 1e-8 || n > 1.0);
    n = std::sqrt(n);
    const double w = q[0] / n, x = q[1] / n, y = q[2] / n, z = q[3] / n;
    Mat3 r;
    r.m = {1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),
           2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
           2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y)};
    return r;
}

Mat3 compose_spd(const Mat3& q, const Vec3& eigs) {
    Mat3 d = Mat3::zero();
    d(0, 0) = eigs.x;
    d(1, 1) = eigs.y;
    d(2, 2) = eigs.z;
    Mat3 p = q * d * transpose(q);
    // Exact symmetry for downstream consumers.
    for (int i = 0; i < 3; ++i)
        for (int j = i + 1; j < 3; ++j) p(i, j) = p(j, i) = 0.5 * (p(i, j) + p(j, i));
    return p;
}

Spd3 random_spd(Rng& rng, double cond_max) {
    const Mat3 q = random_rotation(rng);
    const double l1 = 1.0;
    const double l3 = std::pow(10.0, -rng.uniform(0.0, std::log10(cond_max)));
    const double l2 = std::pow(10.0, -rng.uniform(0.0, std::log10(l1 / l3)));
    return spd_from_mat(compose_spd(q, {l1, l2, l3}));
}

Mat3 random_general(Rng& rng, double cond_max) {
    const Mat3 q1 = random_rotation(rng);
    const Mat3 q2 = random_rotation(rng);
    Mat3 s = Mat3::zero();
    s(0, 0) = 1.0;
    s(2, 2) = std::pow(10.0, -rng.uniform(0.0, std::log10(cond_max)));
    // Keep the middle singular value moderate so the determinant stays above
    // the library's relative singularity cutoff.
    s(1, 1) = std::pow(10.0, -rng.uniform(0.0, std::min(3.0, std::log10(1.0 / s(2, 2)))));
    return q1 * s * transpose(q2);
}

// Elimination oracle with partial pivoting in extended precision; independent
// of the cofactor-ratio path it cross-checks.
Vec3 gauss_solve(const Mat3& b, const Vec3& rhs) {
    long double a[3][4];
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) a[i][j] = b(i, j);
        a[i][3] = rhs[i];
    }
    for (int col = 0; col < 3; ++col) {
        int piv = col;
        for (int r = col + 1; r < 3; ++r)
            if (std::abs(static_cast<double>(a[r][col])) > std::abs(static_cast<double>(a[piv][col])))
                piv = r;
        if (piv != col)
            for (int c = col; c < 4; ++c) std::swap(a[piv][c], a[col][c]);
        for (int r = col + 1; r < 3; ++r) {
            const long double f = a[r][col] / a[col][col];
            for (int c = col; c < 4; ++c) a[r][c] -= f * a[col][c];
        }
    }
    Vec3 x;
    for (int i = 2; i >= 0; --i) {
        long double s = a[i][3];
        for (int j = i + 1; j < 3; ++j) s -= a[i][j] * static_cast<long double>(x[j]);
        x[i] = static_cast<double>(s / a[i][i]);
    }
    return x;
}

PropertyResult make_result(const std::string& name, double residual, double limit) {
    return {name, residual, limit, residual <= limit};
}

}  // namespace

std::vector<PropertyResult> verify_spd3(uint64_t seed) {
    std::vector<PropertyResult> out;
    Rng rng(seed);

    {  // Norm axioms on random matrices.
        double worst = 0.0;
        for (int n = 0; n < 10000; ++n) {
            const Mat3 a = random_matrix(rng, 2.0);
            const Mat3 b = random_matrix(rng, 2.0);
            const double c = rng.symmetric(4.0);
            worst = std::max(worst, std::abs(mat_norm(c * a) - std::abs(c) * mat_norm(a)) /
                                        std::max(1.0, std::abs(c) * mat_norm(a)));
            worst = std::max(worst, (mat_norm(a + b) - (mat_norm(a) + mat_norm(b))) /
                                        std::max(1.0, mat_norm(a) + mat_norm(b)));
        }
        worst = std::max(worst, mat_norm(Mat3::zero()));
        out.push_back(make_result("norm axioms (homogeneity, triangle, zero)", worst, 1e-14));
    }

    {  // Submultiplicative bound of the entrywise-sum norm.
        double worst = 0.0;
        for (int n = 0; n < 10000; ++n) {
            const Mat3 a = random_matrix(rng, 3.0);
            const Mat3 b = random_matrix(rng, 3.0);
            worst = std::max(worst, mat_norm(a * b) / (mat_norm(a) * mat_norm(b)) - 1.0);
        }
        out.push_back(make_result("submultiplicative bound |AB| <= |A||B|", worst, 1e-14));
    }

    {  // Cofactor bound |cof_ij(B)| <= 2 |B|^2.
        double worst = 0.0;
        for (int n = 0; n < 10000; ++n) {
            const Mat3 b = random_matrix(rng, 3.0);
            const double lim = 2.0 * mat_norm(b) * mat_norm(b);
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j)
                    worst = std::max(worst, std::abs(cofactor(b, i, j)) / lim - 1.0);
        }
        out.push_back(make_result("cofactor bound |cof| <= 2|B|^2", worst, 0.0));
    }

    {  // Eigenvalue continuity under symmetric perturbations.
        double worst_ratio = 0.0;
        for (int n = 0; n < 100; ++n) {
            const Spd3 p = random_spd(rng, 1e3);
            const EigenTriple ep = sym_eig(p.to_mat());
            for (double eps : {1e-4, 1e-6, 1e-8}) {
                Mat3 e = random_matrix(rng, 1.0);
                Mat3 es;
                for (int i = 0; i < 3; ++i)
                    for (int j = 0; j < 3; ++j) es(i, j) = 0.5 * (e(i, j) + e(j, i));
                es *= eps / mat_norm(es);
                const EigenTriple eq = sym_eig(p.to_mat() + es);
                double dev = 0.0;
                for (int i = 0; i < 3; ++i)
                    dev = std::max(dev, std::abs(eq.lambda[static_cast<size_t>(i)] -
                                                 ep.lambda[static_cast<size_t>(i)]));
                worst_ratio = std::max(worst_ratio, dev / eps);
            }
        }
        out.push_back(make_result("eigenvalue continuity: max deviation / eps", worst_ratio, 100.0));
    }

    {  // Matrix recovery bound via cofactor ratios.
        double worst = 0.0;
        for (int n = 0; n < 200; ++n) {
            const Mat3 b = random_general(rng, 1e2);
            const double db = std::abs(det3(b));
            const double nb = mat_norm(b);
            Mat3 binv;
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) binv(i, j) = cofactor(b, j, i) / det3(b);
            Mat3 e0 = random_matrix(rng, 1.0);
            for (int m = 0; m < 12; ++m) {
                const Mat3 cm = e0 * binv;  // so that cm * b ~ e0 -> 0
                const double bound = 6.0 * nb * nb * mat_norm(cm * b) / db;
                worst = std::max(worst, mat_norm(cm) / bound - 1.0);
                e0 *= 0.5;
            }
        }
        out.push_back(make_result("matrix limit bound |C| <= 6|B|^2 |CB| / det", worst, 1e-12));
    }

    {  // Polar factor continuity under entrywise perturbation. Well-separated
       // singular values keep the sensitivity constant modest.
        double worst = 0.0;
        for (int n = 0; n < 50; ++n) {
            const Mat3 theta = random_general(rng, 10.0);
            Mat3 safe = theta;
            if (det3(safe) < 0) safe = safe * -1.0;
            const Mat3 r = polar_rotation(safe);
            const Mat3 e = random_matrix(rng, 1.0);
            for (int k = 2; k <= 8; ++k) {
                const double t = std::pow(10.0, -k);
                const Mat3 rk = polar_rotation(safe + t * e);
                worst = std::max(worst, mat_norm(rk - r) / (50.0 * t) - 1.0);
            }
        }
        out.push_back(make_result("polar factor continuity |R_k - R| <= 50 * 1e-k", worst, 0.0));
    }

    {  // Inverse square root: residual and SPD closure.
        double worst_res = 0.0;
        double min_lambda = 1e300;
        for (int n = 0; n < 1000; ++n) {
            const Spd3 p = random_spd(rng, 1e6);
            const Spd3 b = inv_sqrt_sym(p);
            const Mat3 bm = b.to_mat();
            const Mat3 resid = bm * bm * p.to_mat() - Mat3::identity();
            worst_res = std::max(worst_res, mat_norm(resid) / mat_norm(p.to_mat()));
            min_lambda = std::min(min_lambda, sym_eig(bm).lambda[2]);
        }
        out.push_back(make_result("inverse square root residual |BBP - I| / |P|", worst_res, 1e-8));
        out.push_back(make_result("inverse square root SPD closure (min eigenvalue > 0)",
                                  min_lambda > 0.0 ? 0.0 : 1.0, 0.0));
    }

    {  // Polar factor orthogonality and the two algebraic routes.
        double worst_orth = 0.0, worst_det = 0.0, worst_agree = 0.0;
        for (int n = 0; n < 1000; ++n) {
            Mat3 j = random_general(rng, 1e4);
            if (det3(j) < 0) j = j * -1.0;
            const Mat3 r = polar_rotation(j);
            worst_orth = std::max(worst_orth, mat_norm(r * transpose(r) - Mat3::identity()));
            worst_det = std::max(worst_det, std::abs(det3(r) - 1.0));
            if (n % 10 == 0) {  // explicit route on gentler inputs
                Mat3 jw = random_general(rng, 30.0);
                if (det3(jw) < 0) jw = jw * -1.0;
                const Spd3 jjt = spd_from_mat(jw * transpose(jw));
                const Mat3 explicit_r = transpose(jw) * inv_sqrt_sym(jjt).to_mat();
                worst_agree = std::max(worst_agree, mat_norm(polar_rotation(jw) - explicit_r));
            }
        }
        out.push_back(make_result("polar factor orthogonality |RR^T - I|", worst_orth, 1e-9));
        out.push_back(make_result("polar factor determinant |det R - 1|", worst_det, 1e-9));
        out.push_back(
            make_result("polar routes agree: SVD vs J^T (JJ^T)^{-1/2}", worst_agree, 1e-9));
    }

    {  // Cramer solve: residual bound and the elimination oracle.
        double worst_res = 0.0, worst_agree = 0.0;
        for (int n = 0; n < 1000; ++n) {
            const Mat3 b = random_general(rng, 1e6);
            const Vec3 rhs{rng.symmetric(2.0), rng.symmetric(2.0), rng.symmetric(2.0)};
            const Vec3 x = cramer_solve(b, rhs);
            const Vec3 resid = b * x - rhs;
            worst_res = std::max(worst_res,
                                 norm2(resid) / (mat_norm(b) * norm2(x) + norm2(rhs)));
            const Vec3 y = gauss_solve(b, rhs);
            worst_agree = std::max(worst_agree, norm2(x - y) / std::max(norm2(y), 1e-30));
        }
        out.push_back(make_result("cramer residual |Bx - b| / (|B||x| + |b|)", worst_res, 1e-10));
        out.push_back(make_result("cramer vs elimination oracle", worst_agree, 1e-10));
    }

    {  // Eigensolver and SVD residuals.
        double worst_eig = 0.0, worst_svd = 0.0, worst_orth = 0.0;
        for (int n = 0; n < 1000; ++n) {
            const Spd3 p = random_spd(rng, 1e6);
            const Mat3 pm = p.to_mat();
            const EigenTriple e = sym_eig(pm);
            for (int i = 0; i < 3; ++i) {
                const Vec3 r = pm * e.vec[static_cast<size_t>(i)] -
                               e.lambda[static_cast<size_t>(i)] * e.vec[static_cast<size_t>(i)];
                worst_eig = std::max(worst_eig, norm1(r) / std::max(mat_norm(pm), 1e-30));
            }
            const Mat3 a = random_general(rng, 1e4);
            const Svd3 f = svd3(a);
            Mat3 s = Mat3::zero();
            for (int i = 0; i < 3; ++i) s(i, i) = f.sigma[static_cast<size_t>(i)];
            worst_svd = std::max(worst_svd,
                                 mat_norm(f.u * s * transpose(f.v) - a) / std::max(mat_norm(a), 1e-30));
            worst_orth = std::max(worst_orth, mat_norm(f.u * transpose(f.u) - Mat3::identity()));
            worst_orth = std::max(worst_orth, mat_norm(f.v * transpose(f.v) - Mat3::identity()));
        }
        out.push_back(make_result("eigen residual |Sv - lambda v| / |S|", worst_eig, 1e-9));
        out.push_back(make_result("svd reconstruction |USV^T - A| / |A|", worst_svd, 1e-9));
        out.push_back(make_result("svd factor orthogonality", worst_orth, 1e-10));
    }

    return out;
}

namespace {

// Band-limited interior field with a mildly decaying spectrum, sup-normalized.
VelocityField test_field(const GridSpec& g, int modes, double sup_target, uint64_t seed) {
    Rng rng(seed);
    const double pi = std::numbers::pi;
    struct ModeCoeff {
        int kx, ky, kz;
        Vec3 c;
    };
    std::vector<ModeCoeff> coeffs;
    for (int kx = 1; kx <= modes; ++kx)
        for (int ky = 1; ky <= modes; ++ky)
            for (int kz = 1; kz <= modes; ++kz) {
                const double w = 1.0 / static_cast<double>(kx * kx + ky * ky + kz * kz);
                coeffs.push_back({kx, ky, kz,
                                  {w * rng.symmetric(1.0), w * rng.symmetric(1.0),
                                   w * rng.symmetric(1.0)}});
            }
    const Vec3 len{(g.nx - 1) * g.hx, (g.ny - 1) * g.hy, (g.nz - 1) * g.hz};
    auto fn = [&](const Vec3& p, double t) -> Vec3 {
        const double fx = (p.x - g.origin.x) / len.x;
        const double fy = (p.y - g.origin.y) / len.y;
        const double fz = (p.z - g.origin.z) / len.z;
        Vec3 v{};
        for (const ModeCoeff& mc : coeffs)
            v += std::sin(mc.kx * pi * fx) * std::sin(mc.ky * pi * fy) * std::sin(mc.kz * pi * fz) *
                 mc.c;
        return (1.0 - 0.25 * t / g.tau) * v;
    };
    VelocityField v = VelocityField::from_function(g, fn);
    double sup = 0.0;
    for (size_t q = 0; q + 2 < v.data.size(); q += 3)
        sup = std::max(sup, norm2({v.data[q], v.data[q + 1], v.data[q + 2]}));
    if (sup > 0.0) {
        const double scale = sup_target / sup;
        for (double& d : v.data) d *= scale;
    }
    return v;
}

GridSpec unit_cube_grid(int n, int nt) {
    GridSpec g;
    g.nx = g.ny = g.nz = n;
    g.hx = g.hy = g.hz = 1.0 / (n - 1);
    g.tau = 1.0;
    g.nt = nt;
    return g;
}

}  // namespace

std::vector<PropertyResult> verify_flow(uint64_t seed) {
    std::vector<PropertyResult> out;
    Rng rng(seed);

    const GridSpec grid = unit_cube_grid(16, 3);
    const VelocityField v = test_field(grid, 3, 0.05, seed);

    {  // Zero velocity: flows are exactly the identity.
        const VelocityField zero(grid);
        const FlowResult fr = flow_map(zero, 0.0, grid.tau, 16);
        double worst = 0.0;
        for (int k = 0; k < grid.nz; ++k)
            for (int j = 0; j < grid.ny; ++j)
                for (int i = 0; i < grid.nx; ++i) {
                    const size_t idx = grid.index(i, j, k);
                    worst = std::max(worst, norm2(fr.endpoints[idx] - grid.node(i, j, k)));
                    worst = std::max(worst,
                                     mat_norm(fr.jacobians[idx] - Mat3::identity()));
                    worst = std::max(worst, std::abs(fr.det_diag[idx].det_jacobian - 1.0));
                    worst = std::max(worst, std::abs(fr.det_diag[idx].exp_div_integral - 1.0));
                }
        out.push_back(make_result("zero velocity flow is the exact identity", worst, 0.0));
    }

    {  // Initial condition is bitwise.
        double worst = 0.0;
        for (int n = 0; n < 32; ++n) {
            const Vec3 x{rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};
            const double t0 = rng.uniform(0.0, 1.0);
            const double t1 = rng.uniform(0.0, 1.0);
            const Trajectory tr = integrate_trajectory(v, t0, x, t1, 16);
            if (tr.samples.front().first != t0 || tr.samples.front().second.x != x.x ||
                tr.samples.front().second.y != x.y || tr.samples.front().second.z != x.z)
                worst = 1.0;
        }
        out.push_back(make_result("trajectory initial condition is bitwise", worst, 0.0));
    }

    {  // Semigroup property along sampled intermediate times.
        double worst = 0.0;
        for (int n = 0; n < 64; ++n) {
            const Vec3 x{rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85)};
            const double s1 = rng.uniform(0.3, 0.7);
            const Trajectory leg1 = integrate_trajectory(v, 0.0, x, s1, 64);
            const Trajectory leg2 = integrate_trajectory(v, s1, leg1.endpoint(), 1.0, 64);
            const Trajectory direct = integrate_trajectory(v, 0.0, x, 1.0, 128);
            worst = std::max(worst, norm2(leg2.endpoint() - direct.endpoint()));
        }
        out.push_back(make_result("semigroup property of the flow", worst, 1e-8));
    }

    {  // Picard fixed point agrees with RK4.
        double worst = 0.0;
        int max_iters = 0;
        for (int n = 0; n < 200; ++n) {
            const Vec3 x{rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)};
            const double t0 = rng.uniform(0.0, 1.0);
            const double t1 = rng.uniform(0.0, 1.0);
            const PicardResult pr = picard_trajectory(v, t0, x, t1, 1e-8, 50, 65);
            const Trajectory rk = integrate_trajectory(v, t0, x, t1, 64);
            max_iters = std::max(max_iters, pr.iterations);
            for (size_t q = 0; q < rk.samples.size(); ++q)
                worst = std::max(worst, norm2(pr.trajectory.samples[q].second - rk.samples[q].second));
        }
        out.push_back(make_result("picard/rk4 twin sup distance", worst, 1e-5));
        out.push_back(make_result("picard iteration count", static_cast<double>(max_iters), 20.0));
    }

    {  // Determinant identity and its fourth-order convergence.
        const FlowResult f64 = flow_map(v, 0.0, grid.tau, 64);
        const FlowResult f128 = flow_map(v, 0.0, grid.tau, 128);
        const DetIdentityReport r64 = det_identity_report(f64);
        const DetIdentityReport r128 = det_identity_report(f128);
        out.push_back(make_result("det identity max relative error at 64 steps", r64.max_rel_error,
                                  1e-3));
        const double ratio = r128.max_rel_error > 0.0 ? r64.max_rel_error / r128.max_rel_error
                                                      : 1e9;
        out.push_back(make_result("det identity error reduction (>= 8x per refinement)",
                                  ratio >= 8.0 ? 0.0 : 1.0, 0.0));
        out.push_back(make_result("jacobian determinant positivity (min det > 0)",
                                  r64.min_det > 0.0 ? 0.0 : 1.0, 0.0));
    }

    {  // Endpoint refinement converges at fourth order.
        const Vec3 x{0.4, 0.55, 0.45};
        const Trajectory ref = integrate_trajectory(v, 0.0, x, 1.0, 512);
        const Trajectory c8 = integrate_trajectory(v, 0.0, x, 1.0, 8);
        const Trajectory c16 = integrate_trajectory(v, 0.0, x, 1.0, 16);
        const double e8 = norm2(c8.endpoint() - ref.endpoint());
        const double e16 = norm2(c16.endpoint() - ref.endpoint());
        const double order = std::log2(e8 / std::max(e16, 1e-300));
        out.push_back(make_result("rk4 endpoint refinement order (>= 3.5)",
                                  order >= 3.5 ? 0.0 : order, 0.5));
    }

    {  // Inverse consistency of the assembled deformation pair.
        const FlowPair pair = build_h_and_inverse(v, 64);
        double worst = 0.0;
        const GridSpec& g = grid;
        for (int k = 1; k < g.nz - 1; ++k)
            for (int j = 1; j < g.ny - 1; ++j)
                for (int i = 1; i < g.nx - 1; ++i) {
                    const Vec3 y = pair.h_inv.endpoints[g.index(i, j, k)];
                    // Interpolate h at y through its displacement field.
                    const Vec3 composed = y + [&] {
                        Vec3 d{};
                        const double ux = (y.x - g.origin.x) / g.hx;
                        const double uy = (y.y - g.origin.y) / g.hy;
                        const double uz = (y.z - g.origin.z) / g.hz;
                        const int i0 = std::clamp(static_cast<int>(ux), 0, g.nx - 2);
                        const int j0 = std::clamp(static_cast<int>(uy), 0, g.ny - 2);
                        const int k0 = std::clamp(static_cast<int>(uz), 0, g.nz - 2);
                        const double fx = ux - i0, fy = uy - j0, fz = uz - k0;
                        for (int dz = 0; dz < 2; ++dz)
                            for (int dy = 0; dy < 2; ++dy)
                                for (int dx = 0; dx < 2; ++dx) {
                                    const double w = (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy) *
                                                     (dz ? fz : 1 - fz);
                                    const size_t idx = g.index(i0 + dx, j0 + dy, k0 + dz);
                                    d += w * (pair.h.endpoints[idx] -
                                              g.node(i0 + dx, j0 + dy, k0 + dz));
                                }
                        return d;
                    }();
                    worst = std::max(worst, norm2(composed - g.node(i, j, k)) / g.hx);
                }
        out.push_back(make_result("inverse consistency |h(h^-1(x)) - x| in voxels", worst, 5e-2));
    }

    return out;
}

}  // namespace dtreg
