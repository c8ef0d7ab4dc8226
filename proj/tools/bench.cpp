// bench.cpp - part of dtreg. Timings of the OpenMP voxel kernels against their
// serial reference implementations.

#include <chrono>
#include <cstdio>
#include <numbers>

#include "dtreg/flow.hpp"
#include "dtreg/reorient.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace {

using namespace dtreg;
using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

VelocityField smooth_field(const GridSpec& g, double amp) {
    const double pi = std::numbers::pi;
    const Vec3 len{(g.nx - 1) * g.hx, (g.ny - 1) * g.hy, (g.nz - 1) * g.hz};
    return VelocityField::from_function(g, [&](const Vec3& p, double t) -> Vec3 {
        const double fx = (p.x - g.origin.x) / len.x;
        const double fy = (p.y - g.origin.y) / len.y;
        const double fz = (p.z - g.origin.z) / len.z;
        const double s = std::sin(pi * fx) * std::sin(pi * fy) * std::sin(pi * fz);
        const double d = std::sin(2 * pi * fx) * std::sin(pi * fy) * std::sin(2 * pi * fz);
        return (1.0 - 0.3 * t) * Vec3{amp * s, 0.6 * amp * d, -0.4 * amp * s};
    });
}

}  // namespace

int main(int argc, char** argv) {
    int n = 32;
    int nsteps = 32;
    if (argc > 1) n = std::atoi(argv[1]);
    if (argc > 2) nsteps = std::atoi(argv[2]);

    GridSpec g;
    g.nx = g.ny = g.nz = n;
    g.hx = g.hy = g.hz = 1.0 / (n - 1);
    g.tau = 1.0;
    g.nt = 2;

    const VelocityField v = smooth_field(g, 0.04);

#ifdef _OPENMP
    const int hw = omp_get_max_threads();
#else
    const int hw = 1;
#endif
    std::printf("grid %d^3, %d RK4 steps, %d hardware threads\n", n, nsteps, hw);

    set_threads(1);
    auto t0 = Clock::now();
    const FlowResult flow_ref = flow_map_serial(v, 0.0, g.tau, nsteps);
    const double t_flow_serial = ms_since(t0);

    set_threads(0);
    t0 = Clock::now();
    const FlowResult flow_par = flow_map(v, 0.0, g.tau, nsteps);
    const double t_flow_par = ms_since(t0);

    double flow_diff = 0.0;
    for (size_t i = 0; i < flow_ref.endpoints.size(); ++i)
        flow_diff = std::max(flow_diff, norm2(flow_ref.endpoints[i] - flow_par.endpoints[i]));

    TensorImage img(g);
    for (int k = 0; k < g.nz; ++k)
        for (int j = 0; j < g.ny; ++j)
            for (int i = 0; i < g.nx; ++i)
                img.at(i, j, k) = Spd3{2.0 + 0.2 * std::sin(0.3 * i), 0.1, 0.0,
                                       1.0 + 0.1 * std::cos(0.2 * j), 0.05, 0.8};

    set_threads(1);
    t0 = Clock::now();
    const ReorientedImage fs_ref = fs_transform_serial(img, flow_ref, flow_ref.jacobians);
    const double t_fs_serial = ms_since(t0);

    set_threads(0);
    t0 = Clock::now();
    const ReorientedImage fs_par = fs_transform(img, flow_ref, flow_ref.jacobians);
    const double t_fs_par = ms_since(t0);

    double fs_diff = 0.0;
    for (size_t i = 0; i < fs_ref.voxels.size(); ++i)
        fs_diff = std::max(fs_diff, std::abs(fs_ref.voxels[i].xx - fs_par.voxels[i].xx));

    set_threads(1);
    t0 = Clock::now();
    const ThirdJet jet_ref = apply_L_serial(v, 0);
    const double t_jet_serial = ms_since(t0);

    set_threads(0);
    t0 = Clock::now();
    const ThirdJet jet_par = apply_L(v, 0);
    const double t_jet_par = ms_since(t0);

    double jet_diff = 0.0;
    for (size_t i = 0; i < jet_ref.data.size(); ++i)
        jet_diff = std::max(jet_diff, std::abs(jet_ref.data[i] - jet_par.data[i]));

    std::printf("%-14s %10s %10s %8s %12s\n", "kernel", "serial ms", "openmp ms", "speedup",
                "max |diff|");
    std::printf("%-14s %10.1f %10.1f %7.2fx %12.3e\n", "flow_map", t_flow_serial, t_flow_par,
                t_flow_serial / t_flow_par, flow_diff);
    std::printf("%-14s %10.1f %10.1f %7.2fx %12.3e\n", "fs_transform", t_fs_serial, t_fs_par,
                t_fs_serial / t_fs_par, fs_diff);
    std::printf("%-14s %10.1f %10.1f %7.2fx %12.3e\n", "apply_L", t_jet_serial, t_jet_par,
                t_jet_serial / t_jet_par, jet_diff);
    return 0;
}
