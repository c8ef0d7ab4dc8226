// reorient.cpp - part of dtreg. Tensor pullback, finite-strain conjugation and
// the tensor sum-of-squared-differences metric.

#include "dtreg/reorient.hpp"

#include <cmath>
#include <exception>

namespace dtreg {

namespace {

struct AxisLocator {
    int i0;
    double f;
};

inline AxisLocator locate_clamped(double u, int n) {
    double fl = std::floor(u);
    int i = static_cast<int>(fl);
    double f = u - fl;
    if (f < 1e-9) {
        f = 0.0;
    } else if (f > 1.0 - 1e-9) {
        i += 1;
        f = 0.0;
    }
    if (i < 0) {
        i = 0;
        f = 0.0;
    }
    if (i >= n - 1) {
        i = n - 2;
        f = 1.0;
    }
    return {i, f};
}

void require_same_grid(const GridSpec& a, const GridSpec& b, const char* what) {
    if (!a.same_spatial(b)) throw GridMismatch(std::string(what) + ": image grids do not match");
}

}  // namespace

Spd3 interp_tensor(const TensorImage& img, const Vec3& p) {
    const GridSpec& g = img.grid;
    // Clamp reads to the boundary; sub-voxel numerical overshoot of the
    // deformation lands on the nearest face value.
    const AxisLocator ax = locate_clamped((p.x - g.origin.x) / g.hx, g.nx);
    const AxisLocator ay = locate_clamped((p.y - g.origin.y) / g.hy, g.ny);
    const AxisLocator az = locate_clamped((p.z - g.origin.z) / g.hz, g.nz);

    const double wx[2] = {1.0 - ax.f, ax.f};
    const double wy[2] = {1.0 - ay.f, ay.f};
    const double wz[2] = {1.0 - az.f, az.f};

    std::array<double, 6> acc{};
    for (int dz = 0; dz < 2; ++dz) {
        if (wz[dz] == 0.0) continue;
        for (int dy = 0; dy < 2; ++dy) {
            if (wy[dy] == 0.0) continue;
            for (int dx = 0; dx < 2; ++dx) {
                if (wx[dx] == 0.0) continue;
                const double w = wx[dx] * wy[dy] * wz[dz];
                const Spd3& s = img.at(ax.i0 + dx, ay.i0 + dy, az.i0 + dz);
                const auto c = s.components();
                for (int q = 0; q < 6; ++q) acc[static_cast<size_t>(q)] += w * c[static_cast<size_t>(q)];
            }
        }
    }
    Spd3 out = Spd3::from_components(acc);

    // Convex combinations of SPD tensors stay SPD; only rounding at the cone
    // edge can break it. Cheap principal-minor test, eigenvalue floor repair.
    const double m1 = out.xx;
    const double m2 = out.xx * out.yy - out.xy * out.xy;
    const double m3 = det3(out.to_mat());
    if (!(m1 > 0.0 && m2 > 0.0 && m3 > 0.0)) {
        const EigenTriple e = sym_eig(out.to_mat());
        const double floor = std::max(eps_spd_floor(std::abs(out.trace())), 1e-300);
        Mat3 rebuilt = Mat3::zero();
        for (int k = 0; k < 3; ++k) {
            const double lam = std::max(e.lambda[static_cast<size_t>(k)], floor);
            const Vec3 q = e.vec[static_cast<size_t>(k)];
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) rebuilt(i, j) += lam * q[i] * q[j];
        }
        out = spd_from_mat(rebuilt);
    }
    return out;
}

TensorImage pullback(const TensorImage& img, const FlowResult& h) {
    require_same_grid(img.grid, h.grid, "pullback");
    TensorImage out(img.grid);
    const GridSpec& g = img.grid;
    for (int k = 0; k < g.nz; ++k)
        for (int j = 0; j < g.ny; ++j)
            for (int i = 0; i < g.nx; ++i)
                out.at(i, j, k) = interp_tensor(img, h.endpoints[g.index(i, j, k)]);
    return out;
}

namespace {

inline Spd3 fs_voxel(const TensorImage& img, const FlowResult& h, const std::vector<Mat3>& jac,
                     size_t idx) {
    const Mat3 r = polar_rotation(jac[idx]);
    const Spd3 pulled = interp_tensor(img, h.endpoints[idx]);
    const Mat3 conj = r * pulled.to_mat() * transpose(r);
    return spd_from_mat(conj);
}

ReorientedImage fs_transform_impl(const TensorImage& img, const FlowResult& h,
                                  const std::vector<Mat3>& jac, bool parallel) {
    require_same_grid(img.grid, h.grid, "fs_transform");
    if (jac.size() != img.grid.voxel_count())
        throw GridMismatch("fs_transform: jacobian field size does not match the grid");

    ReorientedImage out;
    out.grid = img.grid;
    out.voxels.resize(img.grid.voxel_count());
    const GridSpec& g = img.grid;

    if (parallel) {
        std::exception_ptr err;
#pragma omp parallel for schedule(static) num_threads(threads())
        for (int k = 0; k < g.nz; ++k) {
            try {
                for (int j = 0; j < g.ny; ++j)
                    for (int i = 0; i < g.nx; ++i) {
                        const size_t idx = g.index(i, j, k);
                        out.voxels[idx] = fs_voxel(img, h, jac, idx);
                    }
            } catch (...) {
#pragma omp critical
                if (!err) err = std::current_exception();
            }
        }
        if (err) std::rethrow_exception(err);
    } else {
        for (int k = 0; k < g.nz; ++k)
            for (int j = 0; j < g.ny; ++j)
                for (int i = 0; i < g.nx; ++i) {
                    const size_t idx = g.index(i, j, k);
                    out.voxels[idx] = fs_voxel(img, h, jac, idx);
                }
    }
    return out;
}

double ssd_components(const GridSpec& grid, const std::vector<Spd3>& a,
                      const std::vector<Spd3>& b) {
    const double cell = grid.cell_volume();
    double total = 0.0;
    for (size_t idx = 0; idx < a.size(); ++idx) {
        const Spd3& p = a[idx];
        const Spd3& q = b[idx];
        const double dxx = p.xx - q.xx, dyy = p.yy - q.yy, dzz = p.zz - q.zz;
        const double dxy = p.xy - q.xy, dxz = p.xz - q.xz, dyz = p.yz - q.yz;
        total += dxx * dxx + dyy * dyy + dzz * dzz + 2.0 * (dxy * dxy + dxz * dxz + dyz * dyz);
    }
    return total * cell;
}

}  // namespace

ReorientedImage fs_transform(const TensorImage& img, const FlowResult& h,
                             const std::vector<Mat3>& jacobian_field) {
    return fs_transform_impl(img, h, jacobian_field, true);
}

ReorientedImage fs_transform_serial(const TensorImage& img, const FlowResult& h,
                                    const std::vector<Mat3>& jacobian_field) {
    return fs_transform_impl(img, h, jacobian_field, false);
}

double ssd(const ReorientedImage& a, const TensorImage& d) {
    require_same_grid(a.grid, d.grid, "ssd");
    return ssd_components(a.grid, a.voxels, d.voxels);
}

double ssd(const TensorImage& a, const TensorImage& d) {
    require_same_grid(a.grid, d.grid, "ssd");
    return ssd_components(a.grid, a.voxels, d.voxels);
}

}  // namespace dtreg
