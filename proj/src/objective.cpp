// objective.cpp - part of dtreg. Functional assembly, Fourier parameterization,
// finite-difference gradients and the Armijo descent loop.

#include "dtreg/objective.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <numbers>

namespace dtreg {

void ObjectiveConfig::validate(const GridSpec& grid) const {
    if (nsteps_flow < 1) throw BadParams("config: nsteps_flow must be at least 1");
    if (modes_per_axis < 1) throw BadParams("config: modes_per_axis must be at least 1");
    const int half = std::min({grid.nx, grid.ny, grid.nz}) / 2;
    if (modes_per_axis > half)
        throw BadParams("config: modes_per_axis exceeds half the smallest grid dimension");
    if (max_iter < 1) throw BadParams("config: max_iter must be at least 1");
    if (!(armijo.c1 > 0.0 && armijo.c1 < 1.0)) throw BadParams("config: armijo.c1 must be in (0,1)");
    if (!(armijo.backtrack > 0.0 && armijo.backtrack < 1.0))
        throw BadParams("config: armijo.backtrack must be in (0,1)");
    if (!(armijo.initial_step > 0.0)) throw BadParams("config: armijo.initial_step must be positive");
    if (!(grad_eps > 0.0)) throw BadParams("config: grad_eps must be positive");
    if (!(stop_tol_rel > 0.0)) throw BadParams("config: stop_tol_rel must be positive");
    if (!(data_weight > 0.0)) throw BadParams("config: data_weight must be positive");
}

FourierBasis::FourierBasis(const GridSpec& grid, int modes_per_axis)
    : grid_(grid), modes_per_axis_(modes_per_axis) {
    grid_.validate();
    if (modes_per_axis < 1) throw BadParams("FourierBasis: modes_per_axis must be at least 1");
    for (int kx = 1; kx <= modes_per_axis; ++kx)
        for (int ky = 1; ky <= modes_per_axis; ++ky)
            for (int kz = 1; kz <= modes_per_axis; ++kz) modes_.push_back({kx, ky, kz});

    const double pi = std::numbers::pi;
    auto fill = [&](std::vector<double>& table, int n) {
        table.assign(static_cast<size_t>(modes_per_axis) * static_cast<size_t>(n), 0.0);
        for (int m = 1; m <= modes_per_axis; ++m)
            for (int i = 0; i < n; ++i)
                table[static_cast<size_t>(m - 1) * static_cast<size_t>(n) + static_cast<size_t>(i)] =
                    std::sin(m * pi * static_cast<double>(i) / (n - 1));
    };
    fill(sin_x_, grid_.nx);
    fill(sin_y_, grid_.ny);
    fill(sin_z_, grid_.nz);
}

void FourierBasis::add_mode(VelocityField& field, int time_index, int mode, int component,
                            double delta) const {
    if (delta == 0.0) return;
    const auto& k = modes_[static_cast<size_t>(mode)];
    const GridSpec& g = grid_;
    const double* sx = sin_x_.data() + static_cast<size_t>(k[0] - 1) * static_cast<size_t>(g.nx);
    const double* sy = sin_y_.data() + static_cast<size_t>(k[1] - 1) * static_cast<size_t>(g.ny);
    const double* sz = sin_z_.data() + static_cast<size_t>(k[2] - 1) * static_cast<size_t>(g.nz);
    // Interior only: the boundary layer stays exactly zero.
    for (int kk = 1; kk < g.nz - 1; ++kk) {
        const double wz = delta * sz[kk];
        for (int jj = 1; jj < g.ny - 1; ++jj) {
            const double wyz = wz * sy[jj];
            const size_t row = (static_cast<size_t>(time_index) * g.voxel_count() +
                                g.index(0, jj, kk)) * 3 + static_cast<size_t>(component);
            for (int ii = 1; ii < g.nx - 1; ++ii)
                field.data[row + static_cast<size_t>(ii) * 3] += wyz * sx[ii];
        }
    }
}

VelocityField FourierBasis::velocity_field(const std::vector<double>& coeffs) const {
    if (static_cast<int>(coeffs.size()) != n_coeffs())
        throw BadParams("FourierBasis: coefficient vector has wrong length");
    VelocityField field(grid_);
    const int nm = n_modes();
    for (int it = 0; it < grid_.nt; ++it)
        for (int m = 0; m < nm; ++m)
            for (int c = 0; c < 3; ++c)
                add_mode(field, it, m, c,
                         coeffs[(static_cast<size_t>(it) * static_cast<size_t>(nm) +
                                 static_cast<size_t>(m)) * 3 + static_cast<size_t>(c)]);
    return field;
}

namespace detail {

double data_term(const VelocityField& v, const TensorImage& floating, const TensorImage& target,
                 int nsteps) {
    const GridSpec& g = floating.grid;
    if (!g.same_spatial(target.grid) || !g.same_spatial(v.grid))
        throw GridMismatch("data_term: grids do not match");

    // Forward flow carries the Jacobian (the J field); the backward flow only
    // needs endpoints (the deformation h). Fused per voxel, slab-deterministic
    // reduction.
    const FlowResult fwd = flow_map(v, 0.0, g.tau, nsteps);
    const std::vector<Vec3> h_endpoints = flow_endpoints(v, g.tau, 0.0, nsteps);

    std::vector<double> slab(static_cast<size_t>(g.nz), 0.0);
    std::exception_ptr err;
#pragma omp parallel for schedule(static) num_threads(threads())
    for (int k = 0; k < g.nz; ++k) {
        try {
            double acc = 0.0;
            for (int j = 0; j < g.ny; ++j)
                for (int i = 0; i < g.nx; ++i) {
                    const size_t idx = g.index(i, j, k);
                    const Mat3 r = polar_rotation(fwd.jacobians[idx]);
                    const Spd3 pulled = interp_tensor(floating, h_endpoints[idx]);
                    const Spd3 moved = spd_from_mat(r * pulled.to_mat() * transpose(r));
                    const Spd3& d = target.voxels[idx];
                    const double dxx = moved.xx - d.xx, dyy = moved.yy - d.yy, dzz = moved.zz - d.zz;
                    const double dxy = moved.xy - d.xy, dxz = moved.xz - d.xz, dyz = moved.yz - d.yz;
                    acc += dxx * dxx + dyy * dyy + dzz * dzz +
                           2.0 * (dxy * dxy + dxz * dxz + dyz * dyz);
                }
            slab[static_cast<size_t>(k)] = acc;
        } catch (...) {
#pragma omp critical
            if (!err) err = std::current_exception();
        }
    }
    if (err) std::rethrow_exception(err);

    double total = 0.0;
    for (double s : slab) total += s;
    return total * g.cell_volume();
}

}  // namespace detail

ObjectiveReport objective(const VelocityField& v, const TensorImage& floating,
                          const TensorImage& target, const ObjectiveConfig& cfg) {
    const GridSpec& g = floating.grid;
    if (!g.same_spatial(target.grid) || !g.same_spatial(v.grid))
        throw GridMismatch("objective: grids do not match");
    cfg.validate(v.grid);

    ObjectiveReport rep;
    rep.reg = f_norm_sq(v);
    const FlowPair flows = build_h_and_inverse(v, cfg.nsteps_flow);
    const ReorientedImage moved = fs_transform(floating, flows.h, flows.h_inv.jacobians);
    rep.data = cfg.data_weight * ssd(moved, target);
    rep.total = rep.reg + rep.data;
    return rep;
}

namespace {

struct Evaluator {
    const FourierBasis& basis;
    const TensorImage& floating;
    const TensorImage& target;
    const ObjectiveConfig& cfg;

    double reg(const VelocityField& v) const { return f_norm_sq(v); }

    double total(const VelocityField& v) const {
        return reg(v) + cfg.data_weight * detail::data_term(v, floating, target, cfg.nsteps_flow);
    }

    double total_at(const std::vector<double>& coeffs) const {
        return total(basis.velocity_field(coeffs));
    }

    // Objective with one coefficient perturbed, reusing the base field.
    double total_perturbed(const VelocityField& base, int coeff_index, double delta) const {
        const int nm = basis.n_modes();
        const int it = coeff_index / (nm * 3);
        const int m = (coeff_index / 3) % nm;
        const int c = coeff_index % 3;
        VelocityField field = base;
        basis.add_mode(field, it, m, c, delta);
        return total(field);
    }

    std::vector<double> gradient(const VelocityField& base, double eps) const {
        const int n = basis.n_coeffs();
        std::vector<double> g(static_cast<size_t>(n), 0.0);
        for (int q = 0; q < n; ++q) {
            const double fp = total_perturbed(base, q, eps);
            const double fm = total_perturbed(base, q, -eps);
            g[static_cast<size_t>(q)] = (fp - fm) / (2.0 * eps);
        }
        return g;
    }
};

double min_det_of(const FlowPair& flows) {
    double m = std::numeric_limits<double>::infinity();
    for (const FlowResult* fr : {&flows.h, &flows.h_inv})
        for (const DetDiagnostics& d : fr->det_diag) m = std::min(m, d.det_jacobian);
    return m;
}

LipschitzProbe displacement_probe(const FlowResult& h) {
    // The endpoint displacement field vanishes on the boundary (velocity is
    // zero there), so it is itself an admissible field for the probe.
    GridSpec pg = h.grid;
    pg.nt = 2;
    VelocityField disp(pg);
    for (int k = 1; k < pg.nz - 1; ++k)
        for (int j = 1; j < pg.ny - 1; ++j)
            for (int i = 1; i < pg.nx - 1; ++i) {
                const Vec3 d = h.endpoints[pg.index(i, j, k)] - pg.node(i, j, k);
                disp.set(0, i, j, k, d);
                disp.set(1, i, j, k, d);
            }
    return lipschitz_probe(disp, 0, 4096);
}

}  // namespace

MinimizeResult minimize(const TensorImage& floating, const TensorImage& target,
                        const ObjectiveConfig& cfg) {
    const GridSpec& g = floating.grid;
    if (!g.same_spatial(target.grid)) throw GridMismatch("minimize: image grids do not match");
    cfg.validate(g);

    const FourierBasis basis(g, cfg.modes_per_axis);
    const Evaluator eval{basis, floating, target, cfg};

    MinimizeResult res;
    res.coeffs.assign(static_cast<size_t>(basis.n_coeffs()), 0.0);
    VelocityField field = basis.velocity_field(res.coeffs);

    double current = eval.total(field);
    const double h0 = current;
    const double stop_tol = cfg.stop_tol_rel * h0;

    ObjectiveReport& rep = res.report;
    {
        const FlowPair flows = build_h_and_inverse(field, cfg.nsteps_flow);
        rep.trace.push_back({0, current, 0.0, 0.0, min_det_of(flows)});
    }

    bool converged = false;
    int iter = 0;
    if (h0 <= 0.0) converged = true;  // already at the global lower bound

    while (!converged && iter < cfg.max_iter) {
        ++iter;
        const std::vector<double> grad = eval.gradient(field, cfg.grad_eps);
        double gnorm_sq = 0.0;
        for (double gi : grad) gnorm_sq += gi * gi;
        const double gnorm = std::sqrt(gnorm_sq);
        if (gnorm == 0.0) {
            converged = true;
            break;
        }

        // Armijo backtracking along the negative gradient. A trial that blows
        // the flow apart counts as no decrease.
        double step = cfg.armijo.initial_step;
        const double floor_step = 1e-14 * cfg.armijo.initial_step;
        bool accepted = false;
        std::vector<double> trial(res.coeffs.size());
        double trial_total = 0.0;
        while (step > floor_step) {
            for (size_t q = 0; q < trial.size(); ++q)
                trial[q] = res.coeffs[q] - step * grad[q];
            bool feasible = true;
            try {
                trial_total = eval.total_at(trial);
            } catch (const Error&) {
                feasible = false;
            }
            if (feasible && trial_total <= current - cfg.armijo.c1 * step * gnorm_sq) {
                accepted = true;
                break;
            }
            step *= cfg.armijo.backtrack;
        }
        if (!accepted) {
            // No admissible descent step at this gradient resolution.
            converged = true;
            break;
        }

        res.coeffs = trial;
        field = basis.velocity_field(res.coeffs);
        const double decrease = current - trial_total;
        current = trial_total;

        const FlowPair flows = build_h_and_inverse(field, cfg.nsteps_flow);
        rep.trace.push_back({iter, current, step, gnorm, min_det_of(flows)});

        if (decrease < stop_tol) {
            converged = true;
            break;
        }
    }

    rep.converged = converged;
    rep.iterations = iter;

    rep.reg = f_norm_sq(field);
    rep.data = cfg.data_weight * detail::data_term(field, floating, target, cfg.nsteps_flow);
    rep.total = rep.reg + rep.data;

    const FlowPair flows = build_h_and_inverse(field, cfg.nsteps_flow);
    rep.displacement_probe = displacement_probe(flows.h);

    res.velocity = std::move(field);
    return res;
}

double grad_check(const std::vector<double>& coeffs, const TensorImage& floating,
                  const TensorImage& target, const ObjectiveConfig& cfg) {
    const GridSpec& g = floating.grid;
    cfg.validate(g);
    const FourierBasis basis(g, cfg.modes_per_axis);
    if (static_cast<int>(coeffs.size()) != basis.n_coeffs())
        throw BadParams("grad_check: coefficient vector has wrong length");
    const Evaluator eval{basis, floating, target, cfg};
    const VelocityField base = basis.velocity_field(coeffs);

    const std::vector<double> g1 = eval.gradient(base, cfg.grad_eps);
    const std::vector<double> g2 = eval.gradient(base, 0.5 * cfg.grad_eps);

    double gmax = 0.0;
    for (double v : g2) gmax = std::max(gmax, std::abs(v));
    if (gmax == 0.0) return 0.0;
    double dmax = 0.0;
    for (size_t q = 0; q < g1.size(); ++q) dmax = std::max(dmax, std::abs(g1[q] - g2[q]));
    return dmax / gmax;
}

}  // namespace dtreg
