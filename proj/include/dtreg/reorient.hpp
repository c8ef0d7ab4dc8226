// reorient.hpp - part of dtreg. Finite-strain transport of tensor images:
// pull back through the deformation and conjugate by the local polar factor.
#pragma once

#include <string>
#include <vector>

#include "dtreg/flow.hpp"

namespace dtreg {

struct ReorientedImage {
    GridSpec grid;
    std::vector<Spd3> voxels;
    std::string provenance;

    const Spd3& at(int i, int j, int k) const { return voxels[grid.index(i, j, k)]; }
};

// Componentwise trilinear read of the six tensor components at position p.
// Out-of-domain reads clamp to the nearest boundary voxel; eigenvalues are
// floored at the SPD cutoff if rounding pushed the interpolant outside the cone.
Spd3 interp_tensor(const TensorImage& img, const Vec3& p);

// T composed with the endpoint field of h: output voxel x = T(h(x)).
TensorImage pullback(const TensorImage& img, const FlowResult& h);

// Finite-strain transform: per voxel R = polar factor of J, output voxel
// R * T(h(x)) * R^T. The J field is usually the forward-flow Jacobian.
ReorientedImage fs_transform(const TensorImage& img, const FlowResult& h,
                             const std::vector<Mat3>& jacobian_field);
ReorientedImage fs_transform_serial(const TensorImage& img, const FlowResult& h,
                                    const std::vector<Mat3>& jacobian_field);

// Sum of squared tensor differences times cell volume; off-diagonal components
// doubled so the metric matches the full 3x3 entrywise squared distance.
double ssd(const ReorientedImage& a, const TensorImage& d);
double ssd(const TensorImage& a, const TensorImage& d);

}  // namespace dtreg
