// dtreg.cpp - part of dtreg. Command-line front end: phantom generation,
// registration, tensor transport, flow diagnostics and the property suites.

#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "dtreg/io.hpp"
#include "dtreg/verify.hpp"

namespace {

using namespace dtreg;

int cmd_phantom(const std::string& kind, const std::vector<int>& dims,
                const std::vector<double>& spacing, const std::vector<double>& base,
                const std::vector<double>& alt, int split_axis, double split_frac,
                const std::string& out) {
    GridSpec g;
    g.nx = dims[0];
    g.ny = dims[1];
    g.nz = dims[2];
    g.hx = spacing[0];
    g.hy = spacing[1];
    g.hz = spacing[2];
    PhantomParams params;
    params.base_eigs = {base[0], base[1], base[2]};
    params.alt_eigs = {alt[0], alt[1], alt[2]};
    params.split_axis = split_axis;
    params.split_frac = split_frac;
    const TensorImage img = make_phantom(phantom_kind_from_string(kind), g, params);
    write_tensor_image(img, out);
    std::printf("wrote %s (%dx%dx%d)\n", out.c_str(), g.nx, g.ny, g.nz);
    return 0;
}

int cmd_register(const std::string& floating_path, const std::string& target_path,
                 const std::string& config_path, const std::string& out_velocity,
                 const std::string& out_report) {
    const TensorImage floating = read_tensor_image(floating_path);
    const TensorImage target = read_tensor_image(target_path);
    RunConfig rc;
    if (!config_path.empty()) rc = load_run_config(config_path);
    if (rc.threads >= 0) set_threads(rc.threads);  // config overrides --threads

    GridSpec vgrid = floating.grid;
    vgrid.tau = rc.tau;
    vgrid.nt = rc.nt;

    TensorImage floating_v = floating;
    floating_v.grid = vgrid;
    TensorImage target_v = target;
    target_v.grid = vgrid;

    const MinimizeResult res = minimize(floating_v, target_v, rc.objective);
    write_velocity_field(res.velocity, out_velocity);
    if (!out_report.empty()) {
        const std::string j = report_to_json(res.report);
        FILE* f = std::fopen(out_report.c_str(), "wb");
        if (!f) throw IoError("cannot open " + out_report);
        std::fwrite(j.data(), 1, j.size(), f);
        std::fclose(f);
    }
    std::printf("total %.6g (reg %.6g, data %.6g) after %d iterations%s\n", res.report.total,
                res.report.reg, res.report.data, res.report.iterations,
                res.report.converged ? "" : " [budget exhausted]");
    return res.report.converged ? 0 : 2;
}

int cmd_apply(const std::string& image_path, const std::string& velocity_path, int nsteps,
              const std::string& out) {
    const TensorImage img = read_tensor_image(image_path);
    VelocityField v = read_velocity_field(velocity_path);
    if (!img.grid.same_spatial(v.grid))
        throw GridMismatch("apply: image and velocity grids do not match");
    const FlowPair pair = build_h_and_inverse(v, nsteps);
    const ReorientedImage moved = fs_transform(img, pair.h, pair.h_inv.jacobians);
    TensorImage out_img(img.grid);
    out_img.voxels = moved.voxels;
    write_tensor_image(out_img, out);
    std::printf("wrote %s\n", out.c_str());
    return 0;
}

int cmd_flow(const std::string& velocity_path, int nsteps, const std::string& report_path,
             const std::string& deff_path) {
    const VelocityField v = read_velocity_field(velocity_path);
    const FlowResult fr = flow_map(v, 0.0, v.grid.tau, nsteps);
    const DetIdentityReport rep = det_identity_report(fr);
    if (!report_path.empty()) {
        const std::string j = det_report_to_json(rep, nsteps);
        FILE* f = std::fopen(report_path.c_str(), "wb");
        if (!f) throw IoError("cannot open " + report_path);
        std::fwrite(j.data(), 1, j.size(), f);
        std::fclose(f);
    }
    if (!deff_path.empty()) write_deformation(fr, deff_path);
    std::printf("det identity: max rel error %.3e, mean %.3e, min det %.6f\n", rep.max_rel_error,
                rep.mean_rel_error, rep.min_det);
    return 0;
}

int cmd_verify(const std::string& suite) {
    std::vector<PropertyResult> results;
    if (suite == "spd3" || suite == "all") {
        const auto r = verify_spd3();
        results.insert(results.end(), r.begin(), r.end());
    }
    if (suite == "flow" || suite == "all") {
        const auto r = verify_flow();
        results.insert(results.end(), r.begin(), r.end());
    }
    if (results.empty()) throw BadParams("unknown suite: " + suite);

    bool all_pass = true;
    for (const PropertyResult& r : results) {
        std::printf("%-4s %-55s residual %.3e (limit %.3e)\n", r.pass ? "ok" : "FAIL",
                    r.name.c_str(), r.residual, r.limit);
        all_pass = all_pass && r.pass;
    }
    std::printf("%zu properties, %s\n", results.size(), all_pass ? "all passed" : "FAILURES");
    return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dtreg: diffeomorphic registration of diffusion tensor images"};
    app.require_subcommand(1);

    int threads = 1;
    app.add_option("--threads", threads, "worker threads for the voxel kernels (0 = all cores)");

    // phantom
    auto* sc_phantom = app.add_subcommand("phantom", "generate a synthetic tensor image");
    std::string kind = "two-compartment";
    std::vector<int> dims{16, 16, 16};
    std::vector<double> spacing{1.0, 1.0, 1.0};
    std::vector<double> base{2.0, 1.0, 0.6};
    std::vector<double> alt{0.6, 1.0, 2.0};
    int split_axis = 0;
    double split_frac = 0.5;
    std::string out_path = "phantom.dtir";
    sc_phantom->add_option("--kind", kind, "uniform | two-compartment | fiber-bundle");
    sc_phantom->add_option("--dims", dims, "grid dimensions")->expected(3);
    sc_phantom->add_option("--spacing", spacing, "voxel spacing")->expected(3);
    sc_phantom->add_option("--base-eigs", base, "base tensor eigenvalues")->expected(3);
    sc_phantom->add_option("--alt-eigs", alt, "second compartment eigenvalues")->expected(3);
    sc_phantom->add_option("--split-axis", split_axis, "compartment split axis (0/1/2)");
    sc_phantom->add_option("--split-frac", split_frac, "compartment split fraction");
    sc_phantom->add_option("--out", out_path, "output DTIR path")->required();

    // register
    auto* sc_register = app.add_subcommand("register", "estimate a velocity field matching two images");
    std::string floating_path, target_path, config_path, out_velocity, out_report;
    sc_register->add_option("--floating", floating_path, "floating image (DTIR)")->required();
    sc_register->add_option("--target", target_path, "target image (DTIR)")->required();
    sc_register->add_option("--config", config_path, "JSON configuration");
    sc_register->add_option("--out-velocity", out_velocity, "output velocity field (VELF)")->required();
    sc_register->add_option("--out-report", out_report, "output report (JSON)");

    // apply
    auto* sc_apply = app.add_subcommand("apply", "transport an image through a velocity field");
    std::string apply_image, apply_velocity, apply_out;
    int apply_nsteps = 64;
    sc_apply->add_option("--image", apply_image, "input image (DTIR)")->required();
    sc_apply->add_option("--velocity", apply_velocity, "velocity field (VELF)")->required();
    sc_apply->add_option("--nsteps", apply_nsteps, "integration steps");
    sc_apply->add_option("--out", apply_out, "output image (DTIR)")->required();

    // flow
    auto* sc_flow = app.add_subcommand("flow", "integrate the flow and report the determinant identity");
    std::string flow_velocity, flow_report, flow_deff;
    int flow_nsteps = 64;
    sc_flow->add_option("--velocity", flow_velocity, "velocity field (VELF)")->required();
    sc_flow->add_option("--nsteps", flow_nsteps, "integration steps");
    sc_flow->add_option("--report", flow_report, "determinant report (JSON)");
    sc_flow->add_option("--out-deformation", flow_deff, "deformation export (DEFF)");

    // verify
    auto* sc_verify = app.add_subcommand("verify", "run the property suites");
    std::string suite = "all";
    sc_verify->add_option("--suite", suite, "spd3 | flow | all");

    CLI11_PARSE(app, argc, argv);

    try {
        dtreg::set_threads(threads);
        if (sc_phantom->parsed())
            return cmd_phantom(kind, dims, spacing, base, alt, split_axis, split_frac, out_path);
        if (sc_register->parsed())
            return cmd_register(floating_path, target_path, config_path, out_velocity, out_report);
        if (sc_apply->parsed()) return cmd_apply(apply_image, apply_velocity, apply_nsteps, apply_out);
        if (sc_flow->parsed()) return cmd_flow(flow_velocity, flow_nsteps, flow_report, flow_deff);
        if (sc_verify->parsed()) return cmd_verify(suite);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
