#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <stdexcept>
#include <string>
#include <vector>

namespace mopr {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Rotations are exchanged as plain 3x3 orthonormal matrices everywhere.
using Rotation = Mat3;
// Tangent coordinates at some anchor rotation, radians.
using TangentVec = Vec3;

enum class ErrorCode {
  invalid_argument,
  antipodal,
  invalid_step,
  empty_input,
  numerical,
  empty_scene,
  degenerate_mesh,
  behind_camera,
  placement_failure,
  empty_grid,
  empty_cloud,
  empty_boundary,
  no_visible_template,
  degenerate_likelihood,
  no_candidates,
  empty_denominator,
  provider_shape_mismatch,
  io,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

// Element of PCG(3): rotation and translation handled as a direct product.
struct Pose {
  Rotation rotation = Rotation::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
};

inline bool operator==(const Pose& a, const Pose& b) {
  return a.rotation == b.rotation && a.translation == b.translation;
}

// Finite set of model-frame symmetry rotations, identity always first.
struct SymmetryGroup {
  enum class Source { discrete, discretized_continuous };

  std::vector<Rotation> elements{Rotation::Identity()};
  Source source = Source::discrete;
  Vec3 axis = Vec3::UnitZ();      // only meaningful for discretized continuous symmetry
  double step_rad = 0.0;          // ditto

  static SymmetryGroup trivial() { return SymmetryGroup{}; }
  std::size_t size() const { return elements.size(); }
};

}  // namespace mopr
