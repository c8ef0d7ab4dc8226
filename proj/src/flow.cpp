// flow.cpp - part of dtreg. RK4 transport, Picard verification twin, flow-map
// kernels (OpenMP and serial reference) and determinant diagnostics.

#include "dtreg/flow.hpp"

#include <cmath>
#include <exception>
#include <string>

namespace dtreg {

namespace {

using detail::TimeLoc;
using detail::VelocitySampler;

struct FlowState {
    Vec3 eta{};
    Mat3 theta = Mat3::identity();
    double div_integral = 0.0;
};

struct FlowDeriv {
    Vec3 deta{};
    Mat3 dtheta{};
    double ddiv = 0.0;
};

inline FlowDeriv flow_rhs(const VelocitySampler& sampler, const TimeLoc& tl, const FlowState& y) {
    FlowDeriv d;
    Mat3 g;
    sampler.value_and_gradient(y.eta, tl, d.deta, g);
    d.dtheta = g * y.theta;
    d.ddiv = trace(g);
    return d;
}

inline FlowState axpy(const FlowState& y, double a, const FlowDeriv& d) {
    FlowState r;
    r.eta = y.eta + a * d.deta;
    r.theta = y.theta + a * d.dtheta;
    r.div_integral = y.div_integral + a * d.ddiv;
    return r;
}

// Stage times resolved once per step; all voxels share them.
struct StageTimes {
    TimeLoc t0, t_mid, t1;
};

inline FlowState rk4_step(const VelocitySampler& sampler, const StageTimes& st,
                          const FlowState& y, double h) {
    const FlowDeriv k1 = flow_rhs(sampler, st.t0, y);
    const FlowDeriv k2 = flow_rhs(sampler, st.t_mid, axpy(y, 0.5 * h, k1));
    const FlowDeriv k3 = flow_rhs(sampler, st.t_mid, axpy(y, 0.5 * h, k2));
    const FlowDeriv k4 = flow_rhs(sampler, st.t1, axpy(y, h, k3));
    FlowState r;
    const double w = h / 6.0;
    r.eta = y.eta + w * (k1.deta + 2.0 * k2.deta + 2.0 * k3.deta + k4.deta);
    r.theta = y.theta + w * (k1.dtheta + 2.0 * k2.dtheta + 2.0 * k3.dtheta + k4.dtheta);
    r.div_integral = y.div_integral + w * (k1.ddiv + 2.0 * k2.ddiv + 2.0 * k3.ddiv + k4.ddiv);
    return r;
}

// Position-only RK4 step for plain trajectories.
inline Vec3 rk4_step_position(const VelocitySampler& sampler, const StageTimes& st, double h,
                              const Vec3& x) {
    const Vec3 k1 = sampler.value(x, st.t0);
    const Vec3 k2 = sampler.value(x + 0.5 * h * k1, st.t_mid);
    const Vec3 k3 = sampler.value(x + 0.5 * h * k2, st.t_mid);
    const Vec3 k4 = sampler.value(x + h * k3, st.t1);
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

std::vector<StageTimes> stage_times(const VelocitySampler& sampler, double t_from, double t_to,
                                    int nsteps) {
    std::vector<StageTimes> st(static_cast<size_t>(nsteps));
    const double h = (t_to - t_from) / nsteps;
    for (int n = 0; n < nsteps; ++n) {
        const double s = t_from + n * h;
        st[static_cast<size_t>(n)] = {sampler.locate_time(s), sampler.locate_time(s + 0.5 * h),
                                      sampler.locate_time(n + 1 == nsteps ? t_to : s + h)};
    }
    return st;
}

void check_time(const GridSpec& g, double t, const char* what) {
    const double tol = 1e-9 * std::max(g.tau, 1.0);
    if (t < -tol || t > g.tau + tol)
        throw TimeOutOfRange(std::string(what) + ": time " + std::to_string(t) +
                             " outside [0, tau]");
}

// Clamp to the closed box; positions further than one voxel spacing outside
// indicate an under-resolved integration and are a hard error.
Vec3 clamp_to_domain(const GridSpec& g, const Vec3& p, const char* what) {
    const Vec3 lo = g.origin;
    const Vec3 hi = g.corner_max();
    const double slack[3] = {g.hx, g.hy, g.hz};
    Vec3 q = p;
    for (int a = 0; a < 3; ++a) {
        const double lo_a = lo[a], hi_a = hi[a];
        if (q[a] < lo_a - slack[a] || q[a] > hi_a + slack[a])
            throw LeftDomain(std::string(what) + ": trajectory left the domain by more than one voxel");
        if (q[a] < lo_a) q[a] = lo_a;
        if (q[a] > hi_a) q[a] = hi_a;
    }
    return q;
}

}  // namespace

FlowResult FlowResult::identity(const GridSpec& g) {
    FlowResult fr;
    fr.grid = g;
    const size_t n = g.voxel_count();
    fr.endpoints.resize(n);
    fr.jacobians.assign(n, Mat3::identity());
    fr.det_diag.assign(n, DetDiagnostics{});
    for (int k = 0; k < g.nz; ++k)
        for (int j = 0; j < g.ny; ++j)
            for (int i = 0; i < g.nx; ++i) fr.endpoints[g.index(i, j, k)] = g.node(i, j, k);
    return fr;
}

Trajectory integrate_trajectory(const VelocityField& v, double t_from, const Vec3& x, double t_to,
                                int nsteps) {
    const GridSpec& g = v.grid;
    check_time(g, t_from, "integrate_trajectory");
    check_time(g, t_to, "integrate_trajectory");
    if (nsteps < 1) throw BadParams("integrate_trajectory: nsteps must be at least 1");
    if (!g.inside_closed(x)) throw BadParams("integrate_trajectory: start point outside the domain");

    Trajectory traj;
    traj.t_from = t_from;
    traj.t_to = t_to;
    traj.start = x;
    traj.samples.reserve(static_cast<size_t>(nsteps) + 1);
    traj.samples.emplace_back(t_from, x);

    const VelocitySampler sampler(v);
    const std::vector<StageTimes> st = stage_times(sampler, t_from, t_to, nsteps);
    const double h = (t_to - t_from) / nsteps;
    Vec3 p = x;
    for (int n = 0; n < nsteps; ++n) {
        const double s = t_from + n * h;
        p = rk4_step_position(sampler, st[static_cast<size_t>(n)], h, p);
        p = clamp_to_domain(g, p, "integrate_trajectory");
        traj.samples.emplace_back(n + 1 == nsteps ? t_to : s + h, p);
    }
    return traj;
}

PicardResult picard_trajectory(const VelocityField& v, double t_from, const Vec3& x, double t_to,
                               double tol, int max_iter, int nnodes) {
    const GridSpec& g = v.grid;
    check_time(g, t_from, "picard_trajectory");
    check_time(g, t_to, "picard_trajectory");
    if (!(tol > 0.0)) throw BadParams("picard_trajectory: tol must be positive");
    if (max_iter < 1) throw BadParams("picard_trajectory: max_iter must be at least 1");
    if (nnodes < 2) throw BadParams("picard_trajectory: need at least 2 nodes");
    if (!g.inside_closed(x)) throw BadParams("picard_trajectory: start point outside the domain");

    const int K = nnodes - 1;
    const double ds = (t_to - t_from) / K;
    std::vector<double> times(static_cast<size_t>(nnodes));
    for (int j = 0; j <= K; ++j) times[static_cast<size_t>(j)] = (j == K) ? t_to : t_from + j * ds;

    std::vector<Vec3> phi(static_cast<size_t>(nnodes), x);
    std::vector<Vec3> next(static_cast<size_t>(nnodes));
    std::vector<Vec3> integrand(static_cast<size_t>(nnodes));

    const VelocitySampler sampler(v);
    std::vector<TimeLoc> tls(static_cast<size_t>(nnodes));
    for (int j = 0; j <= K; ++j) tls[static_cast<size_t>(j)] = sampler.locate_time(times[static_cast<size_t>(j)]);

    int iterations = 0;
    double delta = 0.0;
    std::vector<double> deltas;
    for (int it = 0; it < max_iter; ++it) {
        for (int j = 0; j <= K; ++j)
            integrand[static_cast<size_t>(j)] = sampler.value(phi[static_cast<size_t>(j)], tls[static_cast<size_t>(j)]);
        next[0] = x;
        Vec3 acc{};
        for (int j = 1; j <= K; ++j) {
            acc += (0.5 * ds) * (integrand[static_cast<size_t>(j - 1)] + integrand[static_cast<size_t>(j)]);
            next[static_cast<size_t>(j)] = x + acc;
        }
        delta = 0.0;
        for (int j = 0; j <= K; ++j)
            delta = std::max(delta, norm2(next[static_cast<size_t>(j)] - phi[static_cast<size_t>(j)]));
        phi.swap(next);
        ++iterations;
        deltas.push_back(delta);
        if (delta <= tol) break;
    }
    if (delta > tol)
        throw NoConvergence("picard_trajectory: no contraction after " + std::to_string(max_iter) +
                            " iterations (residual " + std::to_string(delta) + ")");

    PicardResult res;
    res.iterations = iterations;
    res.deltas = std::move(deltas);
    res.trajectory.t_from = t_from;
    res.trajectory.t_to = t_to;
    res.trajectory.start = x;
    res.trajectory.samples.reserve(static_cast<size_t>(nnodes));
    res.trajectory.samples.emplace_back(t_from, x);
    for (int j = 1; j <= K; ++j)
        res.trajectory.samples.emplace_back(times[static_cast<size_t>(j)],
                                            clamp_to_domain(g, phi[static_cast<size_t>(j)], "picard_trajectory"));
    return res;
}

namespace {

void flow_voxel(const VelocitySampler& sampler, const std::vector<StageTimes>& st,
                const GridSpec& g, double t_from, double t_to, int nsteps, int i, int j, int k,
                FlowResult& out) {
    FlowState y;
    y.eta = g.node(i, j, k);
    const double h = (t_to - t_from) / nsteps;
    for (int n = 0; n < nsteps; ++n) {
        y = rk4_step(sampler, st[static_cast<size_t>(n)], y, h);
        y.eta = clamp_to_domain(g, y.eta, "flow_map");
    }
    const size_t idx = g.index(i, j, k);
    out.endpoints[idx] = y.eta;
    out.jacobians[idx] = y.theta;
    out.det_diag[idx] = {det3(y.theta), std::exp(y.div_integral)};
}

FlowResult flow_map_impl(const VelocityField& v, double t_from, double t_to, int nsteps,
                         bool parallel) {
    const GridSpec& g = v.grid;
    check_time(g, t_from, "flow_map");
    check_time(g, t_to, "flow_map");
    if (nsteps < 1) throw BadParams("flow_map: nsteps must be at least 1");

    FlowResult out;
    out.grid = g;
    out.t_from = t_from;
    out.t_to = t_to;
    const size_t n = g.voxel_count();
    out.endpoints.resize(n);
    out.jacobians.resize(n);
    out.det_diag.resize(n);

    const VelocitySampler sampler(v);
    const std::vector<StageTimes> st = stage_times(sampler, t_from, t_to, nsteps);

    if (parallel) {
        std::exception_ptr err;
#pragma omp parallel for schedule(static) num_threads(threads())
        for (int k = 0; k < g.nz; ++k) {
            try {
                for (int j = 0; j < g.ny; ++j)
                    for (int i = 0; i < g.nx; ++i)
                        flow_voxel(sampler, st, g, t_from, t_to, nsteps, i, j, k, out);
            } catch (...) {
#pragma omp critical
                if (!err) err = std::current_exception();
            }
        }
        if (err) std::rethrow_exception(err);
    } else {
        for (int k = 0; k < g.nz; ++k)
            for (int j = 0; j < g.ny; ++j)
                for (int i = 0; i < g.nx; ++i)
                    flow_voxel(sampler, st, g, t_from, t_to, nsteps, i, j, k, out);
    }
    return out;
}

}  // namespace

FlowResult flow_map(const VelocityField& v, double t_from, double t_to, int nsteps) {
    return flow_map_impl(v, t_from, t_to, nsteps, true);
}

FlowResult flow_map_serial(const VelocityField& v, double t_from, double t_to, int nsteps) {
    return flow_map_impl(v, t_from, t_to, nsteps, false);
}

std::vector<Vec3> flow_endpoints(const VelocityField& v, double t_from, double t_to, int nsteps) {
    const GridSpec& g = v.grid;
    check_time(g, t_from, "flow_endpoints");
    check_time(g, t_to, "flow_endpoints");
    if (nsteps < 1) throw BadParams("flow_endpoints: nsteps must be at least 1");

    std::vector<Vec3> out(g.voxel_count());
    const VelocitySampler sampler(v);
    const std::vector<StageTimes> st = stage_times(sampler, t_from, t_to, nsteps);
    const double h = (t_to - t_from) / nsteps;

    std::exception_ptr err;
#pragma omp parallel for schedule(static) num_threads(threads())
    for (int k = 0; k < g.nz; ++k) {
        try {
            for (int j = 0; j < g.ny; ++j)
                for (int i = 0; i < g.nx; ++i) {
                    Vec3 p = g.node(i, j, k);
                    for (int n = 0; n < nsteps; ++n) {
                        p = rk4_step_position(sampler, st[static_cast<size_t>(n)], h, p);
                        p = clamp_to_domain(g, p, "flow_endpoints");
                    }
                    out[g.index(i, j, k)] = p;
                }
        } catch (...) {
#pragma omp critical
            if (!err) err = std::current_exception();
        }
    }
    if (err) std::rethrow_exception(err);
    return out;
}

DetIdentityReport det_identity_report(const FlowResult& fr) {
    DetIdentityReport rep;
    if (fr.det_diag.empty()) return rep;
    rep.min_det = fr.det_diag.front().det_jacobian;
    double sum = 0.0;
    for (const DetDiagnostics& d : fr.det_diag) {
        const double denom = std::max(std::abs(d.exp_div_integral), 1e-300);
        const double rel = std::abs(d.det_jacobian - d.exp_div_integral) / denom;
        rep.max_rel_error = std::max(rep.max_rel_error, rel);
        rep.min_det = std::min(rep.min_det, d.det_jacobian);
        sum += rel;
    }
    rep.mean_rel_error = sum / static_cast<double>(fr.det_diag.size());
    return rep;
}

FlowPair build_h_and_inverse(const VelocityField& v, int nsteps) {
    const GridSpec& g = v.grid;
    FlowPair pair{flow_map(v, g.tau, 0.0, nsteps), flow_map(v, 0.0, g.tau, nsteps)};
    for (const FlowResult* fr : {&pair.h, &pair.h_inv}) {
        for (size_t idx = 0; idx < fr->det_diag.size(); ++idx) {
            if (!(fr->det_diag[idx].det_jacobian > 0.0))
                throw NonPositiveJacobian("build_h_and_inverse: det = " +
                                          std::to_string(fr->det_diag[idx].det_jacobian) +
                                          " at voxel " + std::to_string(idx));
        }
    }
    return pair;
}

}  // namespace dtreg
