// spd3.hpp - part of dtreg. 3x3 matrix kernels: norms, determinants, symmetric
// eigendecomposition, SVD, inverse square root, polar factor, Cramer solves.
#pragma once

#include <array>

#include "dtreg/types.hpp"

namespace dtreg {

// Symmetric positive definite tensor stored as its six independent components
// (upper triangle, row order).
struct Spd3 {
    double xx = 1.0, xy = 0.0, xz = 0.0, yy = 1.0, yz = 0.0, zz = 1.0;

    Mat3 to_mat() const {
        Mat3 r;
        r.m = {xx, xy, xz, xy, yy, yz, xz, yz, zz};
        return r;
    }

    double trace() const { return xx + yy + zz; }

    // Component order (xx, xy, xz, yy, yz, zz).
    std::array<double, 6> components() const { return {xx, xy, xz, yy, yz, zz}; }
    static Spd3 from_components(const std::array<double, 6>& c) {
        return Spd3{c[0], c[1], c[2], c[3], c[4], c[5]};
    }
};

// Six-component view of a symmetric matrix; off-diagonals averaged.
inline Spd3 spd_from_mat(const Mat3& m) {
    Spd3 s;
    s.xx = m(0, 0);
    s.yy = m(1, 1);
    s.zz = m(2, 2);
    s.xy = 0.5 * (m(0, 1) + m(1, 0));
    s.xz = 0.5 * (m(0, 2) + m(2, 0));
    s.yz = 0.5 * (m(1, 2) + m(2, 1));
    return s;
}

struct EigenTriple {
    std::array<double, 3> lambda{};  // descending
    std::array<Vec3, 3> vec{};       // orthonormal, vec[i] pairs with lambda[i]
};

// Entrywise absolute sum, the matrix norm used throughout.
double mat_norm(const Mat3& a);

// Determinant by cofactor expansion.
double det3(const Mat3& a);

// Cofactor of entry (i, j): signed 2x2 minor.
double cofactor(const Mat3& a, int i, int j);

// Relative singularity cutoffs.
inline double eps_det(const Mat3& b) {
    double n = mat_norm(b);
    return 1e-12 * n * n * n;
}
inline double eps_spd_floor(double trace) { return 1e-12 * trace; }

// Symmetric eigendecomposition by cyclic Jacobi rotations. Throws NonSymmetric
// when the asymmetry exceeds 1e-12 * max(1, mat_norm(s)).
EigenTriple sym_eig(const Mat3& s);

struct Svd3 {
    Mat3 u;
    std::array<double, 3> sigma{};  // nonnegative, descending
    Mat3 v;
};

// A = U * diag(sigma) * V^T with V from the eigenvectors of A^T A and U
// completed/reorthonormalized column by column. Rank deficiency allowed.
Svd3 svd3(const Mat3& a);

// Inverse square root of an SPD matrix: B with B*B*P = I. Throws NearSingular
// when the smallest eigenvalue falls below 1e-12 * trace(P).
Spd3 inv_sqrt_sym(const Spd3& p);

// Orthogonal polar factor R = J^T (J J^T)^{-1/2}, evaluated through the SVD of
// J (identical algebraically, orthogonal to machine precision regardless of
// conditioning). det R = sign(det J). Throws NearSingular below eps_det.
Mat3 polar_rotation(const Mat3& j);

// Solve B x = b by cofactor ratios, accumulated in extended precision.
// Throws NearSingular below eps_det.
Vec3 cramer_solve(const Mat3& b, const Vec3& rhs);

}  // namespace dtreg
