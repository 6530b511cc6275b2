#pragma once

#include "mopr/types.hpp"

namespace mopr::so3 {

/// Rodrigues exponential. Zero tangent maps to the identity.
Rotation exp_so3(const TangentVec& tau);

/// Principal-branch matrix logarithm, ||result|| in [0, pi].
TangentVec log_so3(const Rotation& r);

/// Local-frame log at an anchor: log(anchor^T * x).
/// Throws Error(antipodal) when the geodesic distance is within 1e-6 of pi.
TangentVec log_at(const Rotation& anchor, const Rotation& x);

/// Local-frame exp at an anchor: anchor * exp_so3(tau).
Rotation exp_at(const Rotation& anchor, const TangentVec& tau);

/// Angular distance arccos((tr(a^T b) - 1) / 2), clamped into [0, pi].
double geodesic_distance(const Rotation& a, const Rotation& b);

/// Applies the symmetry element that brings r_t closest to r_0 and returns S*r_t.
/// Ties are broken by the lowest element index.
Rotation canonicalize(const Rotation& r_t, const Rotation& r_0, const SymmetryGroup& sym);

/// ceil(2*pi/step) evenly spaced rotations about `axis`, identity first.
SymmetryGroup discretize_axis_symmetry(const Vec3& axis, double step_rad);

/// True when columns are orthonormal and det = +1, both within tol.
bool is_rotation(const Mat3& m, double tol = 1e-9);

/// Uniform random rotation (quaternion method) from the given engine state.
Rotation random_rotation(std::uint64_t& state);

/// Splitmix64 step, used to derive sub-seeds and cheap uniforms.
std::uint64_t splitmix64(std::uint64_t& state);
double uniform01(std::uint64_t& state);

}  // namespace mopr::so3
