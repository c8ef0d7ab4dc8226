// objective.hpp - part of dtreg. Assembly of the registration functional,
// Fourier-coefficient parameterization and the descent driver.
#pragma once

#include <vector>

#include "dtreg/reorient.hpp"

namespace dtreg {

struct ArmijoParams {
    double c1 = 1e-4;
    double backtrack = 0.5;
    double initial_step = 1.0;
};

struct ObjectiveConfig {
    int nsteps_flow = 6;
    int modes_per_axis = 3;
    int max_iter = 20;
    ArmijoParams armijo;
    double grad_eps = 1e-4;
    double stop_tol_rel = 1e-8;  // stop tolerance as a fraction of the initial total
    double data_weight = 1.0;

    void validate(const GridSpec& grid) const;
};

struct IterationRecord {
    int iter = 0;
    double total = 0.0;
    double step = 0.0;
    double grad_norm = 0.0;
    double min_det = 0.0;  // smallest flow determinant at this iterate
};

struct ObjectiveReport {
    double reg = 0.0;
    double data = 0.0;
    double total = 0.0;
    std::vector<IterationRecord> trace;
    LipschitzProbe displacement_probe;
    bool converged = true;
    int iterations = 0;
};

// Tensor-product sine basis on the interior of the grid: every mode vanishes
// on the boundary, so any coefficient vector yields an admissible field.
class FourierBasis {
  public:
    FourierBasis(const GridSpec& grid, int modes_per_axis);

    int n_modes() const { return static_cast<int>(modes_.size()); }
    // Coefficient layout: ((t * n_modes + mode) * 3 + component).
    int n_coeffs() const { return grid_.nt * n_modes() * 3; }

    VelocityField velocity_field(const std::vector<double>& coeffs) const;
    // In-place rank-one update: add delta * basis mode to one component of one
    // time slice of an already-built field.
    void add_mode(VelocityField& field, int time_index, int mode, int component,
                  double delta) const;

    const GridSpec& grid() const { return grid_; }

  private:
    GridSpec grid_;
    int modes_per_axis_;
    std::vector<std::array<int, 3>> modes_;
    std::vector<double> sin_x_, sin_y_, sin_z_;  // [mode_index][node]
};

// Full objective at a velocity field: reg = f_norm_sq, data = ssd of the
// finite-strain transform against the target. Uses build_h_and_inverse, so a
// degenerate flow raises NonPositiveJacobian.
ObjectiveReport objective(const VelocityField& v, const TensorImage& floating,
                          const TensorImage& target, const ObjectiveConfig& cfg);

struct MinimizeResult {
    VelocityField velocity;
    std::vector<double> coeffs;
    ObjectiveReport report;
};

// Finite-difference gradient descent with Armijo backtracking over the Fourier
// coefficients, started from zero. A budget exhaustion is reported through
// report.converged = false, never an exception.
MinimizeResult minimize(const TensorImage& floating, const TensorImage& target,
                        const ObjectiveConfig& cfg);

// Richardson check of the finite-difference coefficient gradient at `coeffs`:
// max component disagreement between grad_eps and grad_eps/2, relative to the
// largest gradient magnitude.
double grad_check(const std::vector<double>& coeffs, const TensorImage& floating,
                  const TensorImage& target, const ObjectiveConfig& cfg);

namespace detail {
// Data term without materializing intermediate images; used by the descent
// inner loop. Matches the fs_transform + ssd path to interpolation order.
double data_term(const VelocityField& v, const TensorImage& floating, const TensorImage& target,
                 int nsteps);
}  // namespace detail

}  // namespace dtreg
