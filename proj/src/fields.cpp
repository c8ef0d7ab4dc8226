// fields.cpp - part of dtreg. Grid/field types, interpolation, the third-order
// operator L and the F-norm quadrature.

#include "dtreg/fields.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>

#include "dtreg/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dtreg {

namespace {
std::atomic<int> g_threads{0};
}

void set_threads(int n) { g_threads.store(n < 0 ? 0 : n); }
int threads() {
    const int t = g_threads.load();
#ifdef _OPENMP
    return t == 0 ? omp_get_max_threads() : t;
#else
    return t == 0 ? 1 : t;
#endif
}

void GridSpec::validate() const {
    if (nx < 4 || ny < 4 || nz < 4)
        throw GridTooSmall("grid dims must be at least 4 per axis for the third-difference stencil");
    if (!(hx > 0.0) || !(hy > 0.0) || !(hz > 0.0))
        throw BadParams("grid spacing must be positive");
    if (!(tau > 0.0)) throw BadParams("tau must be positive");
    if (nt < 2) throw BadParams("nt must be at least 2");
}

void validate_spd(const TensorImage& img) {
    for (size_t idx = 0; idx < img.voxels.size(); ++idx) {
        const Spd3& s = img.voxels[idx];
        for (double c : s.components())
            if (!std::isfinite(c)) throw BadParams("tensor voxel " + std::to_string(idx) + " is not finite");
        const double tr = s.trace();
        if (!(tr > 0.0))
            throw BadParams("tensor voxel " + std::to_string(idx) + " has nonpositive trace");
        const EigenTriple e = sym_eig(s.to_mat());
        if (!(e.lambda[2] >= eps_spd_floor(tr)))
            throw BadParams("tensor voxel " + std::to_string(idx) + " is not positive definite");
    }
}

void VelocityField::zero_boundary() {
    for (int it = 0; it < grid.nt; ++it)
        for (int k = 0; k < grid.nz; ++k)
            for (int j = 0; j < grid.ny; ++j)
                for (int i = 0; i < grid.nx; ++i) {
                    if (!grid.boundary_node(i, j, k)) continue;
                    const size_t s = sample_index(it, i, j, k);
                    data[s] = data[s + 1] = data[s + 2] = 0.0;
                }
}

bool VelocityField::boundary_is_zero() const {
    for (int it = 0; it < grid.nt; ++it)
        for (int k = 0; k < grid.nz; ++k)
            for (int j = 0; j < grid.ny; ++j)
                for (int i = 0; i < grid.nx; ++i) {
                    if (!grid.boundary_node(i, j, k)) continue;
                    const size_t s = sample_index(it, i, j, k);
                    if (data[s] != 0.0 || data[s + 1] != 0.0 || data[s + 2] != 0.0) return false;
                }
    return true;
}

VelocityField VelocityField::from_function(const GridSpec& g,
                                           const std::function<Vec3(const Vec3&, double)>& fn) {
    VelocityField v(g);
    for (int it = 0; it < g.nt; ++it) {
        const double t = g.time_of(it);
        for (int k = 1; k < g.nz - 1; ++k)
            for (int j = 1; j < g.ny - 1; ++j)
                for (int i = 1; i < g.nx - 1; ++i) v.set(it, i, j, k, fn(g.node(i, j, k), t));
    }
    return v;
}

namespace detail {

VelocitySampler::VelocitySampler(const VelocityField& v) {
    const GridSpec& g = v.grid;
    data_ = v.data.data();
    const double h[3] = {g.hx, g.hy, g.hz};
    const Vec3 top = g.corner_max();
    const double hi[3] = {top.x, top.y, top.z};
    const double o[3] = {g.origin.x, g.origin.y, g.origin.z};
    n_[0] = g.nx;
    n_[1] = g.ny;
    n_[2] = g.nz;
    for (int a = 0; a < 3; ++a) {
        origin_[a] = o[a];
        inv_h_[a] = 1.0 / h[a];
        half_h_[a] = 0.5 * h[a];
        hi_[a] = hi[a];
    }
    stride_[0] = 3;
    stride_[1] = 3 * static_cast<size_t>(g.nx);
    stride_[2] = 3 * static_cast<size_t>(g.nx) * static_cast<size_t>(g.ny);
    slice_ = g.voxel_count() * 3;
    nt_ = g.nt;
    inv_dt_ = (g.nt - 1) / g.tau;
    tau_ = g.tau;
}

TimeLoc VelocitySampler::locate_time(double t) const {
    double u = t * inv_dt_;
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
    if (i >= nt_ - 1) {
        i = nt_ - 2;
        f = 1.0;
    }
    return {i, f};
}

inline VelocitySampler::AxisLoc VelocitySampler::locate(double coord, int axis) const {
    if (coord < origin_[axis] || coord > hi_[axis]) return {0, 0.0, true};
    double u = (coord - origin_[axis]) * inv_h_[axis];
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
    if (i >= n_[axis] - 1) {
        i = n_[axis] - 2;
        f = 1.0;
    }
    return {i, f, false};
}

inline Vec3 VelocitySampler::gather(const AxisLoc& ax, const AxisLoc& ay, const AxisLoc& az,
                                    const TimeLoc& tl) const {
    const double wx1 = ax.f, wx0 = 1.0 - ax.f;
    const double wy1 = ay.f, wy0 = 1.0 - ay.f;
    const double wz1 = az.f, wz0 = 1.0 - az.f;

    const double w00 = wy0 * wz0, w10 = wy1 * wz0, w01 = wy0 * wz1, w11 = wy1 * wz1;
    const double w000 = wx0 * w00, w100 = wx1 * w00;
    const double w010 = wx0 * w10, w110 = wx1 * w10;
    const double w001 = wx0 * w01, w101 = wx1 * w01;
    const double w011 = wx0 * w11, w111 = wx1 * w11;

    const size_t base = static_cast<size_t>(ax.i0) * stride_[0] +
                        static_cast<size_t>(ay.i0) * stride_[1] +
                        static_cast<size_t>(az.i0) * stride_[2];
    const double* p0 = data_ + static_cast<size_t>(tl.it0) * slice_ + base;

    Vec3 out{};
    const double wt0 = 1.0 - tl.w1;
    for (int half = 0; half < 2; ++half) {
        const double wt = half == 0 ? wt0 : tl.w1;
        const double* p = half == 0 ? p0 : p0 + slice_;
        const double* q000 = p;
        const double* q100 = p + stride_[0];
        const double* q010 = p + stride_[1];
        const double* q110 = p + stride_[1] + stride_[0];
        const double* q001 = p + stride_[2];
        const double* q101 = p + stride_[2] + stride_[0];
        const double* q011 = p + stride_[2] + stride_[1];
        const double* q111 = p + stride_[2] + stride_[1] + stride_[0];
        for (int c = 0; c < 3; ++c) {
            const double s = w000 * q000[c] + w100 * q100[c] + w010 * q010[c] + w110 * q110[c] +
                             w001 * q001[c] + w101 * q101[c] + w011 * q011[c] + w111 * q111[c];
            out[c] += wt * s;
        }
    }
    return out;
}

Vec3 VelocitySampler::value(const Vec3& x, const TimeLoc& tl) const {
    const AxisLoc ax = locate(x.x, 0);
    const AxisLoc ay = locate(x.y, 1);
    const AxisLoc az = locate(x.z, 2);
    if (ax.outside || ay.outside || az.outside) return {0.0, 0.0, 0.0};
    return gather(ax, ay, az, tl);
}

void VelocitySampler::value_and_gradient(const Vec3& x, const TimeLoc& tl, Vec3& val,
                                         Mat3& grad) const {
    const AxisLoc ax = locate(x.x, 0);
    const AxisLoc ay = locate(x.y, 1);
    const AxisLoc az = locate(x.z, 2);
    const bool base_inside = !(ax.outside || ay.outside || az.outside);
    val = base_inside ? gather(ax, ay, az, tl) : Vec3{};

    const AxisLoc locs[3] = {ax, ay, az};
    const double coords[3] = {x.x, x.y, x.z};
    for (int axis = 0; axis < 3; ++axis) {
        // Only the perturbed axis needs relocating; the probe is outside the
        // domain exactly when that coordinate is.
        const AxisLoc lp = locate(coords[axis] + half_h_[axis], axis);
        const AxisLoc lm = locate(coords[axis] - half_h_[axis], axis);
        const bool others_inside =
            !(locs[(axis + 1) % 3].outside || locs[(axis + 2) % 3].outside);
        Vec3 vp{}, vm{};
        if (others_inside && !lp.outside)
            vp = gather(axis == 0 ? lp : ax, axis == 1 ? lp : ay, axis == 2 ? lp : az, tl);
        if (others_inside && !lm.outside)
            vm = gather(axis == 0 ? lm : ax, axis == 1 ? lm : ay, axis == 2 ? lm : az, tl);
        const double inv = inv_h_[axis];  // probes sit at +-h/2, so 1/(2 * h/2)
        grad(0, axis) = (vp.x - vm.x) * inv;
        grad(1, axis) = (vp.y - vm.y) * inv;
        grad(2, axis) = (vp.z - vm.z) * inv;
    }
}

}  // namespace detail

namespace {

double checked_time(const GridSpec& g, double t, const char* what) {
    const double ttol = 1e-9 * std::max(g.tau, 1.0);
    if (t < -ttol || t > g.tau + ttol)
        throw TimeOutOfRange(std::string(what) + ": t = " + std::to_string(t) +
                             " outside [0, tau]");
    if (t < 0.0) return 0.0;
    if (t > g.tau) return g.tau;
    return t;
}

}  // namespace

Vec3 sample_velocity(const VelocityField& v, const Vec3& x, double t) {
    t = checked_time(v.grid, t, "sample_velocity");
    const detail::VelocitySampler sampler(v);
    return sampler.value(x, sampler.locate_time(t));
}

Mat3 sample_velocity_gradient(const VelocityField& v, const Vec3& x, double t) {
    t = checked_time(v.grid, t, "sample_velocity_gradient");
    const detail::VelocitySampler sampler(v);
    Vec3 val;
    Mat3 grad;
    sampler.value_and_gradient(x, sampler.locate_time(t), val, grad);
    return grad;
}

const std::array<std::array<int, 3>, ThirdJet::n_alpha>& ThirdJet::multi_indices() {
    static const std::array<std::array<int, 3>, n_alpha> a = {{{3, 0, 0},
                                                               {0, 3, 0},
                                                               {0, 0, 3},
                                                               {2, 1, 0},
                                                               {2, 0, 1},
                                                               {1, 2, 0},
                                                               {0, 2, 1},
                                                               {1, 0, 2},
                                                               {0, 1, 2},
                                                               {1, 1, 1}}};
    return a;
}

namespace {

// One-dimensional derivative pass along `axis`, central stencils in the
// interior and one-sided 4-point stencils (exact for cubics) near the ends.
void derivative_pass(const GridSpec& g, int axis, int order, const std::vector<double>& in,
                     std::vector<double>& out) {
    const int n[3] = {g.nx, g.ny, g.nz};
    const double h = axis == 0 ? g.hx : (axis == 1 ? g.hy : g.hz);
    const size_t stride =
        axis == 0 ? 1 : (axis == 1 ? static_cast<size_t>(g.nx)
                                   : static_cast<size_t>(g.nx) * static_cast<size_t>(g.ny));
    const int na = n[axis];

    auto line_value = [&](size_t base, int idx) { return in[base + stride * static_cast<size_t>(idx)]; };

    const double inv_h = 1.0 / h;
    const double inv_h2 = inv_h * inv_h;
    const double inv_h3 = inv_h2 * inv_h;

    for (int k = 0; k < g.nz; ++k)
        for (int j = 0; j < g.ny; ++j)
            for (int i = 0; i < g.nx; ++i) {
                const int ia = axis == 0 ? i : (axis == 1 ? j : k);
                const size_t idx = g.index(i, j, k);
                const size_t base = idx - stride * static_cast<size_t>(ia);
                double r = 0.0;
                if (order == 1) {
                    if (ia >= 1 && ia <= na - 2) {
                        r = 0.5 * inv_h * (line_value(base, ia + 1) - line_value(base, ia - 1));
                    } else if (ia == 0) {
                        r = inv_h * (-11.0 / 6.0 * line_value(base, 0) + 3.0 * line_value(base, 1) -
                                     1.5 * line_value(base, 2) + line_value(base, 3) / 3.0);
                    } else {
                        r = inv_h * (11.0 / 6.0 * line_value(base, na - 1) - 3.0 * line_value(base, na - 2) +
                                     1.5 * line_value(base, na - 3) - line_value(base, na - 4) / 3.0);
                    }
                } else if (order == 2) {
                    if (ia >= 1 && ia <= na - 2) {
                        r = inv_h2 * (line_value(base, ia + 1) - 2.0 * line_value(base, ia) +
                                      line_value(base, ia - 1));
                    } else if (ia == 0) {
                        r = inv_h2 * (2.0 * line_value(base, 0) - 5.0 * line_value(base, 1) +
                                      4.0 * line_value(base, 2) - line_value(base, 3));
                    } else {
                        r = inv_h2 * (2.0 * line_value(base, na - 1) - 5.0 * line_value(base, na - 2) +
                                      4.0 * line_value(base, na - 3) - line_value(base, na - 4));
                    }
                } else {
                    if (ia >= 2 && ia <= na - 3) {
                        r = 0.5 * inv_h3 *
                            (line_value(base, ia + 2) - 2.0 * line_value(base, ia + 1) +
                             2.0 * line_value(base, ia - 1) - line_value(base, ia - 2));
                    } else if (na >= 5 && ia == 0) {
                        r = inv_h3 * (-2.5 * line_value(base, 0) + 9.0 * line_value(base, 1) -
                                      12.0 * line_value(base, 2) + 7.0 * line_value(base, 3) -
                                      1.5 * line_value(base, 4));
                    } else if (na >= 5 && ia == 1) {
                        r = inv_h3 * (-1.5 * line_value(base, 0) + 5.0 * line_value(base, 1) -
                                      6.0 * line_value(base, 2) + 3.0 * line_value(base, 3) -
                                      0.5 * line_value(base, 4));
                    } else if (na >= 5 && ia == na - 1) {
                        r = inv_h3 * (2.5 * line_value(base, na - 1) - 9.0 * line_value(base, na - 2) +
                                      12.0 * line_value(base, na - 3) - 7.0 * line_value(base, na - 4) +
                                      1.5 * line_value(base, na - 5));
                    } else if (na >= 5) {
                        r = inv_h3 * (1.5 * line_value(base, na - 1) - 5.0 * line_value(base, na - 2) +
                                      6.0 * line_value(base, na - 3) - 3.0 * line_value(base, na - 4) +
                                      0.5 * line_value(base, na - 5));
                    } else if (ia <= 1) {  // 4-node axis: cubic-exact one-sided fallback
                        r = inv_h3 * (-line_value(base, ia) + 3.0 * line_value(base, ia + 1) -
                                      3.0 * line_value(base, ia + 2) + line_value(base, ia + 3));
                    } else {
                        r = inv_h3 * (line_value(base, ia) - 3.0 * line_value(base, ia - 1) +
                                      3.0 * line_value(base, ia - 2) - line_value(base, ia - 3));
                    }
                }
                out[idx] = r;
            }
}

void jet_slot(const VelocityField& v, int time_index, int comp, int alpha_idx,
              std::vector<double>& scratch_a, std::vector<double>& scratch_b, double* out) {
    const GridSpec& g = v.grid;
    const size_t nvox = g.voxel_count();
    const auto& alpha = ThirdJet::multi_indices()[static_cast<size_t>(alpha_idx)];

    for (size_t idx = 0; idx < nvox; ++idx)
        scratch_a[idx] = v.data[(static_cast<size_t>(time_index) * nvox + idx) * 3 +
                                static_cast<size_t>(comp)];

    // Highest order first; residual inexactness on cubic terms is annihilated
    // by the remaining lower-order passes.
    int axes[3] = {0, 1, 2};
    std::sort(axes, axes + 3, [&](int a, int b) { return alpha[static_cast<size_t>(a)] > alpha[static_cast<size_t>(b)]; });
    std::vector<double>* cur = &scratch_a;
    std::vector<double>* nxt = &scratch_b;
    for (int ax : axes) {
        const int order = alpha[static_cast<size_t>(ax)];
        if (order == 0) continue;
        derivative_pass(g, ax, order, *cur, *nxt);
        std::swap(cur, nxt);
    }
    std::memcpy(out, cur->data(), nvox * sizeof(double));
}

ThirdJet apply_L_impl(const VelocityField& v, int time_index, bool parallel) {
    const GridSpec& g = v.grid;
    g.validate();
    if (time_index < 0 || time_index >= g.nt)
        throw TimeOutOfRange("apply_L: time index out of range");

    ThirdJet jet;
    jet.grid = g;
    const size_t nvox = g.voxel_count();
    jet.data.assign(30 * nvox, 0.0);

    if (parallel) {
#pragma omp parallel num_threads(threads())
        {
            std::vector<double> sa(nvox), sb(nvox);
#pragma omp for schedule(static)
            for (int slot = 0; slot < 30; ++slot)
                jet_slot(v, time_index, slot / 10, slot % 10, sa, sb,
                         jet.data.data() + static_cast<size_t>(slot) * nvox);
        }
    } else {
        std::vector<double> sa(nvox), sb(nvox);
        for (int slot = 0; slot < 30; ++slot)
            jet_slot(v, time_index, slot / 10, slot % 10, sa, sb,
                     jet.data.data() + static_cast<size_t>(slot) * nvox);
    }
    return jet;
}

}  // namespace

ThirdJet apply_L(const VelocityField& v, int time_index) { return apply_L_impl(v, time_index, true); }
ThirdJet apply_L_serial(const VelocityField& v, int time_index) {
    return apply_L_impl(v, time_index, false);
}

double f_norm_sq(const VelocityField& v) {
    const GridSpec& g = v.grid;
    const size_t nvox = g.voxel_count();
    const double cell = g.cell_volume();
    const double dt = g.dt();

    // Trapezoid node weights per axis; a plain voxel sum would double-weight
    // the boundary ring where the third derivatives peak.
    std::vector<double> wq(nvox);
    for (int k = 0; k < g.nz; ++k)
        for (int j = 0; j < g.ny; ++j)
            for (int i = 0; i < g.nx; ++i) {
                const double wi = (i == 0 || i == g.nx - 1) ? 0.5 : 1.0;
                const double wj = (j == 0 || j == g.ny - 1) ? 0.5 : 1.0;
                const double wk = (k == 0 || k == g.nz - 1) ? 0.5 : 1.0;
                wq[g.index(i, j, k)] = wi * wj * wk;
            }

    double total = 0.0;
    for (int it = 0; it < g.nt; ++it) {
        const ThirdJet jet = apply_L(v, it);
        // Fixed slot-then-voxel order keeps the sum independent of threading.
        double slice = 0.0;
        for (int slot = 0; slot < 30; ++slot) {
            double s = 0.0;
            const double* p = jet.data.data() + static_cast<size_t>(slot) * nvox;
            for (size_t idx = 0; idx < nvox; ++idx) s += wq[idx] * p[idx] * p[idx];
            slice += s;
        }
        const double w = (it == 0 || it == g.nt - 1) ? 0.5 : 1.0;
        total += w * dt * slice * cell;
    }
    return total;
}

LipschitzProbe lipschitz_probe(const VelocityField& v, int time_index, int npairs, uint64_t seed) {
    if (npairs < 1) throw BadParams("lipschitz_probe: npairs must be at least 1");
    const GridSpec& g = v.grid;
    if (time_index < 0 || time_index >= g.nt)
        throw TimeOutOfRange("lipschitz_probe: time index out of range");
    const double t = g.time_of(time_index);
    const Vec3 lo = g.origin;
    const Vec3 hi = g.corner_max();

    Rng rng(seed);
    auto draw = [&]() -> Vec3 {
        return {rng.uniform(lo.x, hi.x), rng.uniform(lo.y, hi.y), rng.uniform(lo.z, hi.z)};
    };

    LipschitzProbe probe;
    for (int n = 0; n < npairs; ++n) {
        const Vec3 x = draw();
        const Vec3 y = draw();
        const double d = norm2(x - y);
        if (d < 1e-12) continue;
        const Vec3 dv = sample_velocity(v, x, t) - sample_velocity(v, y, t);
        probe.lipschitz = std::max(probe.lipschitz, norm1(dv) / d);
        const Mat3 dg = sample_velocity_gradient(v, x, t) - sample_velocity_gradient(v, y, t);
        probe.holder = std::max(probe.holder, mat_norm(dg) / std::sqrt(d));
    }
    return probe;
}

}  // namespace dtreg
