#include "mopr/nn_grid.hpp"

#include <cmath>

namespace mopr {

PointGrid::PointGrid(const std::vector<Vec3>& points, double cell) : points_(points), cell_(cell) {
  for (std::size_t i = 0; i < points_.size(); ++i) {
    const Vec3& p = points_[i];
    cells_[key(int(std::floor(p.x() / cell_)), int(std::floor(p.y() / cell_)), int(std::floor(p.z() / cell_)))]
        .push_back(int(i));
  }
}

int PointGrid::nearest(const Vec3& q, double max_dist, double* dist_out) const {
  if (points_.empty()) return -1;
  const int r = int(std::ceil(max_dist / cell_));
  const int qx = int(std::floor(q.x() / cell_));
  const int qy = int(std::floor(q.y() / cell_));
  const int qz = int(std::floor(q.z() / cell_));
  int best = -1;
  double best_d2 = max_dist * max_dist;
  for (int dz = -r; dz <= r; ++dz)
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx) {
        const auto it = cells_.find(key(qx + dx, qy + dy, qz + dz));
        if (it == cells_.end()) continue;
        for (int idx : it->second) {
          const double d2 = (points_[std::size_t(idx)] - q).squaredNorm();
          if (d2 < best_d2) {
            best_d2 = d2;
            best = idx;
          }
        }
      }
  if (best >= 0 && dist_out) *dist_out = std::sqrt(best_d2);
  return best;
}

}  // namespace mopr
