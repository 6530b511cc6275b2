#pragma once

#include "mopr/types.hpp"

#include <unordered_map>

namespace mopr {

// Uniform-grid nearest-neighbour index for bounded-radius queries.
// Deterministic: ties resolve to the lowest point index.
class PointGrid {
 public:
  PointGrid() = default;
  PointGrid(const std::vector<Vec3>& points, double cell);

  /// Index of the nearest point within max_dist, or -1. Distance via out param.
  int nearest(const Vec3& q, double max_dist, double* dist_out = nullptr) const;

  bool empty() const { return points_.empty(); }
  std::size_t size() const { return points_.size(); }
  const Vec3& point(int idx) const { return points_[std::size_t(idx)]; }

 private:
  std::int64_t key(int ix, int iy, int iz) const {
    return (std::int64_t(ix) & 0x1fffff) | ((std::int64_t(iy) & 0x1fffff) << 21) |
           ((std::int64_t(iz) & 0x1fffff) << 42);
  }

  std::vector<Vec3> points_;
  double cell_ = 1.0;
  std::unordered_map<std::int64_t, std::vector<int>> cells_;
};

}  // namespace mopr
