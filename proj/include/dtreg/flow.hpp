// flow.hpp - part of dtreg. Trajectory integration for the transport ODE, the
// coupled Jacobian ODE, deformation field assembly and determinant checks.
#pragma once

#include <utility>
#include <vector>

#include "dtreg/fields.hpp"

namespace dtreg {

struct Trajectory {
    double t_from = 0.0, t_to = 0.0;
    Vec3 start{};
    std::vector<std::pair<double, Vec3>> samples;  // first entry is exactly (t_from, start)

    const Vec3& endpoint() const { return samples.back().second; }
};

struct PicardResult {
    Trajectory trajectory;
    int iterations = 0;
    std::vector<double> deltas;  // sup distance between successive iterates
};

struct DetDiagnostics {
    double det_jacobian = 1.0;     // det of the integrated Jacobian
    double exp_div_integral = 1.0; // exp of the divergence integral along the path
};

// Per-voxel endpoints and Jacobians of the flow from t_from to t_to.
struct FlowResult {
    GridSpec grid;
    double t_from = 0.0, t_to = 0.0;
    std::vector<Vec3> endpoints;
    std::vector<Mat3> jacobians;
    std::vector<DetDiagnostics> det_diag;

    static FlowResult identity(const GridSpec& g);
};

// Classical RK4 on eta' = v(eta, s). Backward runs (t_to < t_from) negate the
// step. Positions are clamped to the closed domain; an excursion beyond one
// voxel spacing raises LeftDomain.
Trajectory integrate_trajectory(const VelocityField& v, double t_from, const Vec3& x, double t_to,
                                int nsteps);

// Fixed-point iteration of the integral map phi -> x + int v(phi, r) dr on a
// uniform node grid (trapezoid prefix sums), stopping when successive
// iterates agree to tol in the sup norm over nodes.
PicardResult picard_trajectory(const VelocityField& v, double t_from, const Vec3& x, double t_to,
                               double tol, int max_iter, int nnodes = 65);

// Integrate every voxel trajectory together with the Jacobian ODE
// Theta' = grad v(eta, s) * Theta, Theta(t_from) = I, and the divergence
// integral (one extra scalar in the same RK4 state, so both determinant
// diagnostics converge at full fourth order).
FlowResult flow_map(const VelocityField& v, double t_from, double t_to, int nsteps);
FlowResult flow_map_serial(const VelocityField& v, double t_from, double t_to, int nsteps);

// Endpoint-only transport of every voxel (no Jacobian state); the cheap leg
// for inner loops that need h but not its derivative.
std::vector<Vec3> flow_endpoints(const VelocityField& v, double t_from, double t_to, int nsteps);

struct DetIdentityReport {
    double max_rel_error = 0.0;
    double mean_rel_error = 0.0;
    double min_det = 0.0;
};

DetIdentityReport det_identity_report(const FlowResult& fr);

struct FlowPair {
    FlowResult h;      // endpoints eta(0; tau, x): the deformation itself
    FlowResult h_inv;  // endpoints eta(tau; 0, x); its Jacobians are the J field
};

// Throws NonPositiveJacobian if any voxel determinant is nonpositive.
FlowPair build_h_and_inverse(const VelocityField& v, int nsteps);

}  // namespace dtreg
