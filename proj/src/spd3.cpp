// spd3.cpp - part of dtreg. Implementation of the 3x3 matrix kernels.

#include "dtreg/spd3.hpp"

#include <algorithm>
#include <cmath>

namespace dtreg {

double mat_norm(const Mat3& a) {
    double s = 0.0;
    for (double v : a.m) s += std::abs(v);
    return s;
}

double det3(const Mat3& a) {
    return a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1)) -
           a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0)) +
           a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0));
}

double cofactor(const Mat3& a, int i, int j) {
    const int r0 = (i + 1) % 3, r1 = (i + 2) % 3;
    const int c0 = (j + 1) % 3, c1 = (j + 2) % 3;
    // Cycled row/column order keeps the sign baked in.
    return a(r0, c0) * a(r1, c1) - a(r0, c1) * a(r1, c0);
}

namespace {

// One Jacobi rotation in the (p, q) plane, applied to a and accumulated into v.
void jacobi_rotate(Mat3& a, Mat3& v, int p, int q) {
    const double apq = a(p, q);
    if (apq == 0.0) return;
    const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
    const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                     (std::abs(theta) + std::sqrt(theta * theta + 1.0));
    const double c = 1.0 / std::sqrt(t * t + 1.0);
    const double s = t * c;
    const double tau = s / (1.0 + c);

    const double app = a(p, p), aqq = a(q, q);
    a(p, p) = app - t * apq;
    a(q, q) = aqq + t * apq;
    a(p, q) = a(q, p) = 0.0;
    for (int r = 0; r < 3; ++r) {
        if (r == p || r == q) continue;
        const double arp = a(r, p), arq = a(r, q);
        a(r, p) = a(p, r) = arp - s * (arq + tau * arp);
        a(r, q) = a(q, r) = arq + s * (arp - tau * arq);
    }
    for (int r = 0; r < 3; ++r) {
        const double vrp = v(r, p), vrq = v(r, q);
        v(r, p) = vrp - s * (vrq + tau * vrp);
        v(r, q) = vrq + s * (vrp - tau * vrq);
    }
}

double off_diag_fro(const Mat3& a) {
    return std::sqrt(2.0 * (a(0, 1) * a(0, 1) + a(0, 2) * a(0, 2) + a(1, 2) * a(1, 2)));
}

}  // namespace

EigenTriple sym_eig(const Mat3& s_in) {
    const double scale = std::max(1.0, mat_norm(s_in));
    double asym = 0.0;
    for (int i = 0; i < 3; ++i)
        for (int j = i + 1; j < 3; ++j)
            asym = std::max(asym, std::abs(s_in(i, j) - s_in(j, i)));
    if (asym > 1e-12 * scale)
        throw NonSymmetric("sym_eig: input asymmetry " + std::to_string(asym) +
                           " exceeds tolerance");

    Mat3 a;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) a(i, j) = 0.5 * (s_in(i, j) + s_in(j, i));
    Mat3 v = Mat3::identity();

    // Sweep to the roundoff floor: the quadratic tail stalls within a few
    // sweeps, and leftover off-diagonal mass would be amplified by 1/lambda_min
    // in downstream inverse square roots.
    double off = off_diag_fro(a);
    for (int sweep = 0; sweep < 30 && off > 0.0; ++sweep) {
        jacobi_rotate(a, v, 0, 1);
        jacobi_rotate(a, v, 0, 2);
        jacobi_rotate(a, v, 1, 2);
        const double off_new = off_diag_fro(a);
        if (off_new >= off) break;
        off = off_new;
    }

    EigenTriple out;
    int order[3] = {0, 1, 2};
    const double lam[3] = {a(0, 0), a(1, 1), a(2, 2)};
    std::sort(order, order + 3, [&](int i, int j) { return lam[i] > lam[j]; });
    for (int k = 0; k < 3; ++k) {
        const int i = order[k];
        out.lambda[static_cast<size_t>(k)] = lam[i];
        out.vec[static_cast<size_t>(k)] = {v(0, i), v(1, i), v(2, i)};
    }
    return out;
}

namespace {

// Unit vector orthogonal to the first i entries of u (which are orthonormal).
Vec3 orthonormal_completion(const std::array<Vec3, 3>& u, int i) {
    if (i == 0) return {1, 0, 0};
    if (i == 2) {
        const Vec3 c = cross(u[0], u[1]);
        return (1.0 / norm2(c)) * c;
    }
    // i == 1: start from the axis least aligned with u[0].
    const double ax = std::abs(u[0].x), ay = std::abs(u[0].y), az = std::abs(u[0].z);
    Vec3 e = (ax <= ay && ax <= az) ? Vec3{1, 0, 0} : (ay <= az ? Vec3{0, 1, 0} : Vec3{0, 0, 1});
    e -= dot(e, u[0]) * u[0];
    return (1.0 / norm2(e)) * e;
}

}  // namespace

Svd3 svd3(const Mat3& a) {
    // V and singular values from the symmetric eigenproblem of A^T A.
    Mat3 ata;
    for (int i = 0; i < 3; ++i)
        for (int j = i; j < 3; ++j) {
            double s = 0.0;
            for (int k = 0; k < 3; ++k) s += a(k, i) * a(k, j);
            ata(i, j) = ata(j, i) = s;
        }
    const EigenTriple eig = sym_eig(ata);

    Svd3 out;
    for (int i = 0; i < 3; ++i) {
        const double l = eig.lambda[static_cast<size_t>(i)];
        out.sigma[static_cast<size_t>(i)] = l > 0.0 ? std::sqrt(l) : 0.0;
        const Vec3 vi = eig.vec[static_cast<size_t>(i)];
        out.v(0, i) = vi.x;
        out.v(1, i) = vi.y;
        out.v(2, i) = vi.z;
    }

    // U columns: A v_i / sigma_i where that is well defined, orthonormal
    // completion elsewhere, then a modified Gram-Schmidt pass in descending
    // sigma order so U stays orthogonal even for badly graded spectra.
    const double cutoff = out.sigma[0] * 1e-13;
    std::array<Vec3, 3> u;
    for (int i = 0; i < 3; ++i) {
        const size_t si = static_cast<size_t>(i);
        Vec3 ui;
        if (out.sigma[si] > cutoff && out.sigma[si] > 0.0)
            ui = (1.0 / out.sigma[si]) * (a * eig.vec[si]);
        else
            ui = orthonormal_completion(u, i);
        for (int k = 0; k < i; ++k) ui -= dot(ui, u[static_cast<size_t>(k)]) * u[static_cast<size_t>(k)];
        const double n = norm2(ui);
        u[si] = (n > 1e-8) ? (1.0 / n) * ui : orthonormal_completion(u, i);
    }
    for (int i = 0; i < 3; ++i) {
        out.u(0, i) = u[static_cast<size_t>(i)].x;
        out.u(1, i) = u[static_cast<size_t>(i)].y;
        out.u(2, i) = u[static_cast<size_t>(i)].z;
    }
    return out;
}

Spd3 inv_sqrt_sym(const Spd3& p) {
    const Mat3 pm = p.to_mat();
    const EigenTriple eig = sym_eig(pm);
    const double floor = eps_spd_floor(p.trace());
    if (!(eig.lambda[2] >= floor) || eig.lambda[2] <= 0.0)
        throw NearSingular("inv_sqrt_sym: smallest eigenvalue " + std::to_string(eig.lambda[2]) +
                           " below SPD floor");

    Mat3 b = Mat3::zero();
    for (int k = 0; k < 3; ++k) {
        const double w = 1.0 / std::sqrt(eig.lambda[static_cast<size_t>(k)]);
        const Vec3 q = eig.vec[static_cast<size_t>(k)];
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) b(i, j) += w * q[i] * q[j];
    }
    return spd_from_mat(b);
}

Mat3 polar_rotation(const Mat3& j) {
    const double d = det3(j);
    if (std::abs(d) < eps_det(j) || d == 0.0)
        throw NearSingular("polar_rotation: determinant " + std::to_string(d) +
                           " below singularity cutoff");
    // With J = U S V^T, the factor J^T (J J^T)^{-1/2} collapses to V U^T.
    const Svd3 f = svd3(j);
    return f.v * transpose(f.u);
}

namespace {

// Extended-precision cofactor-expansion determinant.
long double det3_ld(const long double b[3][3]) {
    return b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1]) -
           b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0]) +
           b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
}

}  // namespace

Vec3 cramer_solve(const Mat3& b, const Vec3& rhs) {
    const double d = det3(b);
    if (std::abs(d) < eps_det(b) || d == 0.0)
        throw NearSingular("cramer_solve: determinant " + std::to_string(d) +
                           " below singularity cutoff");

    long double bl[3][3];
    for (int i = 0; i < 3; ++i)
        for (int jj = 0; jj < 3; ++jj) bl[i][jj] = b(i, jj);
    const long double dl = det3_ld(bl);

    Vec3 x;
    const long double r[3] = {rhs.x, rhs.y, rhs.z};
    for (int col = 0; col < 3; ++col) {
        long double bc[3][3];
        for (int i = 0; i < 3; ++i)
            for (int jj = 0; jj < 3; ++jj) bc[i][jj] = (jj == col) ? r[i] : bl[i][jj];
        x[col] = static_cast<double>(det3_ld(bc) / dl);
    }
    return x;
}

}  // namespace dtreg
