// types.hpp - part of dtreg. Small fixed-size vector/matrix types and the error hierarchy.
#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

namespace dtreg {

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
    double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }

    Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
    Vec3& operator-=(const Vec3& o) { x -= o.x; y -= o.y; z -= o.z; return *this; }
    Vec3& operator*=(double c) { x *= c; y *= c; z *= c; return *this; }
};

inline Vec3 operator+(Vec3 a, const Vec3& b) { return a += b; }
inline Vec3 operator-(Vec3 a, const Vec3& b) { return a -= b; }
inline Vec3 operator*(double c, Vec3 a) { return a *= c; }
inline Vec3 operator*(Vec3 a, double c) { return a *= c; }

inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm2(const Vec3& a) { return std::sqrt(dot(a, a)); }
// Componentwise absolute sum; the vector norm used for all matrix-style bounds.
inline double norm1(const Vec3& a) { return std::abs(a.x) + std::abs(a.y) + std::abs(a.z); }

// Row-major 3x3 matrix.
struct Mat3 {
    std::array<double, 9> m{};

    static Mat3 identity() {
        Mat3 r;
        r.m = {1, 0, 0, 0, 1, 0, 0, 0, 1};
        return r;
    }
    static Mat3 zero() { return Mat3{}; }

    double& operator()(int r, int c) { return m[static_cast<size_t>(3 * r + c)]; }
    double operator()(int r, int c) const { return m[static_cast<size_t>(3 * r + c)]; }

    Mat3& operator+=(const Mat3& o) {
        for (int i = 0; i < 9; ++i) m[i] += o.m[i];
        return *this;
    }
    Mat3& operator-=(const Mat3& o) {
        for (int i = 0; i < 9; ++i) m[i] -= o.m[i];
        return *this;
    }
    Mat3& operator*=(double c) {
        for (double& v : m) v *= c;
        return *this;
    }
};

inline Mat3 operator+(Mat3 a, const Mat3& b) { return a += b; }
inline Mat3 operator-(Mat3 a, const Mat3& b) { return a -= b; }
inline Mat3 operator*(double c, Mat3 a) { return a *= c; }
inline Mat3 operator*(Mat3 a, double c) { return a *= c; }

inline Mat3 operator*(const Mat3& a, const Mat3& b) {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            r(i, j) = a(i, 0) * b(0, j) + a(i, 1) * b(1, j) + a(i, 2) * b(2, j);
    return r;
}

inline Vec3 operator*(const Mat3& a, const Vec3& v) {
    return {a(0, 0) * v.x + a(0, 1) * v.y + a(0, 2) * v.z,
            a(1, 0) * v.x + a(1, 1) * v.y + a(1, 2) * v.z,
            a(2, 0) * v.x + a(2, 1) * v.y + a(2, 2) * v.z};
}

inline Mat3 transpose(const Mat3& a) {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) r(i, j) = a(j, i);
    return r;
}

inline double trace(const Mat3& a) { return a(0, 0) + a(1, 1) + a(2, 2); }

inline bool all_finite(const Mat3& a) {
    for (double v : a.m)
        if (!std::isfinite(v)) return false;
    return true;
}

// Error hierarchy. Every named failure mode gets its own type so callers can
// distinguish them; messages stay human-readable.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NearSingular : Error {
    using Error::Error;
};
struct NonSymmetric : Error {
    using Error::Error;
};
struct TimeOutOfRange : Error {
    using Error::Error;
};
struct GridTooSmall : Error {
    using Error::Error;
};
struct LeftDomain : Error {
    using Error::Error;
};
struct NoConvergence : Error {
    using Error::Error;
};
struct NonPositiveJacobian : Error {
    using Error::Error;
};
struct GridMismatch : Error {
    using Error::Error;
};
struct BadParams : Error {
    using Error::Error;
};

}  // namespace dtreg
