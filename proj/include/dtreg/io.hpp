// io.hpp - part of dtreg. Binary volume formats (DTIR tensor images, VELF
// velocity fields, DEFF deformations), phantom generation and JSON config.
#pragma once

#include <cstdint>
#include <string>

#include "dtreg/flow.hpp"
#include "dtreg/objective.hpp"

namespace dtreg {

// Format errors.
struct IoError : Error {
    using Error::Error;
};
struct BadMagic : IoError {
    using IoError::IoError;
};
struct TruncatedPayload : IoError {
    using IoError::IoError;
};
struct NotSpd : IoError {
    size_t voxel_index;
    explicit NotSpd(size_t idx)
        : IoError("voxel " + std::to_string(idx) + " is not symmetric positive definite"),
          voxel_index(idx) {}
};

// All three containers share the same layout: a 4-byte little-endian header
// length, the JSON header, then a little-endian float64 payload (x-fastest).
// Writes go to a temporary file first and are renamed into place.
void write_tensor_image(const TensorImage& img, const std::string& path);
TensorImage read_tensor_image(const std::string& path);

void write_velocity_field(const VelocityField& v, const std::string& path);
VelocityField read_velocity_field(const std::string& path);

// DEFF: per-voxel endpoint (3) plus Jacobian entries (9, row-major).
void write_deformation(const FlowResult& fr, const std::string& path);
FlowResult read_deformation(const std::string& path);

enum class PhantomKind { Uniform, TwoCompartment, FiberBundle };

PhantomKind phantom_kind_from_string(const std::string& s);

struct PhantomParams {
    uint64_t seed = 0;
    double max_aniso = 10.0;

    // uniform / background tensor (eigenvalues along the coordinate axes)
    Vec3 base_eigs{1.0, 1.0, 1.0};

    // two-compartment: second tensor, split plane
    Vec3 alt_eigs{2.0, 1.0, 0.5};
    int split_axis = 0;
    double split_frac = 0.5;

    // fiber-bundle: principal axis, radius as a fraction of the cross-section
    int fiber_axis = 0;
    double fiber_radius_frac = 0.3;
    double fiber_parallel = 2.0;
    double fiber_perp = 0.5;
};

TensorImage make_phantom(PhantomKind kind, const GridSpec& grid, const PhantomParams& params);

// Registration run settings: velocity-grid time axis plus the optimizer
// configuration. Parsed from a strict JSON document (unknown keys are errors).
struct RunConfig {
    double tau = 1.0;
    int nt = 2;
    int threads = -1;  // -1: keep the process-wide setting
    ObjectiveConfig objective;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

std::string report_to_json(const ObjectiveReport& rep);
std::string det_report_to_json(const DetIdentityReport& rep, int nsteps);

}  // namespace dtreg
