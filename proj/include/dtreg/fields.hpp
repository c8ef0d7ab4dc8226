// fields.hpp - part of dtreg. Discrete domain, tensor images, velocity fields,
// the third-order differential operator and its induced norm.
#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "dtreg/spd3.hpp"
#include "dtreg/types.hpp"

namespace dtreg {

// Regular axis-aligned grid over the box domain, plus the time axis for
// velocity fields. Node (i,j,k) sits at origin + (i*hx, j*hy, k*hz).
struct GridSpec {
    int nx = 4, ny = 4, nz = 4;
    double hx = 1.0, hy = 1.0, hz = 1.0;
    Vec3 origin{};
    double tau = 1.0;
    int nt = 2;

    void validate() const;

    size_t voxel_count() const {
        return static_cast<size_t>(nx) * static_cast<size_t>(ny) * static_cast<size_t>(nz);
    }
    size_t index(int i, int j, int k) const {
        return (static_cast<size_t>(k) * static_cast<size_t>(ny) + static_cast<size_t>(j)) *
                   static_cast<size_t>(nx) +
               static_cast<size_t>(i);
    }
    Vec3 node(int i, int j, int k) const {
        return {origin.x + i * hx, origin.y + j * hy, origin.z + k * hz};
    }
    double cell_volume() const { return hx * hy * hz; }
    Vec3 corner_max() const {
        return {origin.x + (nx - 1) * hx, origin.y + (ny - 1) * hy, origin.z + (nz - 1) * hz};
    }
    bool inside_closed(const Vec3& p) const {
        const Vec3 c = corner_max();
        return p.x >= origin.x && p.x <= c.x && p.y >= origin.y && p.y <= c.y && p.z >= origin.z &&
               p.z <= c.z;
    }
    bool boundary_node(int i, int j, int k) const {
        return i == 0 || j == 0 || k == 0 || i == nx - 1 || j == ny - 1 || k == nz - 1;
    }
    double dt() const { return tau / (nt - 1); }
    double time_of(int it) const { return it * dt(); }
    bool same_spatial(const GridSpec& o) const {
        return nx == o.nx && ny == o.ny && nz == o.nz && hx == o.hx && hy == o.hy && hz == o.hz &&
               origin.x == o.origin.x && origin.y == o.origin.y && origin.z == o.origin.z;
    }
};

struct TensorImage {
    GridSpec grid;
    std::vector<Spd3> voxels;

    TensorImage() = default;
    explicit TensorImage(const GridSpec& g) : grid(g), voxels(g.voxel_count()) { grid.validate(); }

    Spd3& at(int i, int j, int k) { return voxels[grid.index(i, j, k)]; }
    const Spd3& at(int i, int j, int k) const { return voxels[grid.index(i, j, k)]; }
};

// Throws NotSpd-style Error if any voxel fails the eigenvalue floor.
void validate_spd(const TensorImage& img);

// Time-indexed grid of 3-vectors, identically zero on the boundary layer.
struct VelocityField {
    GridSpec grid;
    std::vector<double> data;  // layout: ((t*nz + k)*ny + j)*nx + i, 3 components

    VelocityField() = default;
    explicit VelocityField(const GridSpec& g)
        : grid(g), data(static_cast<size_t>(g.nt) * g.voxel_count() * 3, 0.0) {
        grid.validate();
    }

    size_t sample_index(int it, int i, int j, int k) const {
        return (static_cast<size_t>(it) * grid.voxel_count() + grid.index(i, j, k)) * 3;
    }
    Vec3 at(int it, int i, int j, int k) const {
        const size_t s = sample_index(it, i, j, k);
        return {data[s], data[s + 1], data[s + 2]};
    }
    void set(int it, int i, int j, int k, const Vec3& v) {
        if (grid.boundary_node(i, j, k)) return;  // boundary stays pinned to zero
        const size_t s = sample_index(it, i, j, k);
        data[s] = v.x;
        data[s + 1] = v.y;
        data[s + 2] = v.z;
    }
    void zero_boundary();
    bool boundary_is_zero() const;

    // Sample fn(position, time) at every interior node.
    static VelocityField from_function(const GridSpec& g,
                                       const std::function<Vec3(const Vec3&, double)>& fn);
};

// Continuum evaluation: trilinear in space, linear in time, zero outside the
// domain box. Fractional offsets below 1e-9 of a voxel snap to the node so
// that node queries reproduce stored samples bitwise.
Vec3 sample_velocity(const VelocityField& v, const Vec3& x, double t);

// Spatial gradient by central differences of the interpolant, step h/2 per
// axis. g(i,j) = dv_i/dx_j.
Mat3 sample_velocity_gradient(const VelocityField& v, const Vec3& x, double t);

namespace detail {

// Resolved time position: slice pair and blend weight, reusable across the
// many spatial samples of one integrator stage.
struct TimeLoc {
    int it0;
    double w1;  // weight of slice it0 + 1
};

// Hot-loop sampler with precomputed strides and inverse spacings. Matches
// sample_velocity / sample_velocity_gradient semantics exactly.
class VelocitySampler {
  public:
    explicit VelocitySampler(const VelocityField& v);

    TimeLoc locate_time(double t) const;  // t must already be range-checked
    Vec3 value(const Vec3& x, const TimeLoc& tl) const;
    // Velocity and its central-difference gradient in one call.
    void value_and_gradient(const Vec3& x, const TimeLoc& tl, Vec3& val, Mat3& grad) const;

  private:
    struct AxisLoc {
        int i0;
        double f;
        bool outside;
    };
    AxisLoc locate(double coord, int axis) const;
    Vec3 gather(const AxisLoc& ax, const AxisLoc& ay, const AxisLoc& az, const TimeLoc& tl) const;

    const double* data_;
    double origin_[3];
    double inv_h_[3];
    double half_h_[3];
    double hi_[3];
    int n_[3];
    size_t stride_[3];
    size_t slice_;
    int nt_;
    double inv_dt_;
    double tau_;
};

}  // namespace detail

// All third-order partial derivatives of every component at one time index:
// 10 multi-indices x 3 components per voxel.
struct ThirdJet {
    GridSpec grid;
    std::vector<double> data;  // slot-major: slot = comp*10 + alpha, then voxel index

    static constexpr int n_alpha = 10;
    static const std::array<std::array<int, 3>, n_alpha>& multi_indices();

    double at(int slot, size_t voxel) const { return data[static_cast<size_t>(slot) * grid.voxel_count() + voxel]; }
};

ThirdJet apply_L(const VelocityField& v, int time_index);
ThirdJet apply_L_serial(const VelocityField& v, int time_index);

// Squared F-norm: trapezoid in time of the voxel-sum quadrature of the squared
// third jet, scaled by cell volume.
double f_norm_sq(const VelocityField& v);

struct LipschitzProbe {
    double lipschitz = 0.0;  // max |v(x)-v(y)|_1 / |x-y|_2
    double holder = 0.0;     // max |grad v(x)-grad v(y)|_1 / |x-y|_2^{1/2}
};

LipschitzProbe lipschitz_probe(const VelocityField& v, int time_index, int npairs,
                               uint64_t seed = 0x5EEDBA5Eull);

// Global OpenMP thread cap for the data-parallel kernels (0 = runtime default).
void set_threads(int n);
int threads();

}  // namespace dtreg
