#pragma once

#include "mopr/types.hpp"

namespace mopr {

struct CameraModel {
  double fx = 200.0, fy = 200.0;
  double cx = 80.0, cy = 60.0;
  int width = 160, height = 120;

  bool valid() const {
    return fx > 0 && fy > 0 && width > 0 && height > 0 && cx >= 0 && cx < width && cy >= 0 && cy < height;
  }
};

/// Pinhole projection of a camera-frame point. Throws Error(behind_camera) if z <= 0.
Vec2 project(const CameraModel& cam, const Vec3& t);

/// Inverse of project at the given depth.
Vec3 backproject(const CameraModel& cam, double px, double py, double depth);

}  // namespace mopr
