#pragma once

#include "mopr/nn_grid.hpp"
#include "mopr/types.hpp"

namespace mopr::opt {

struct IcpParams {
  double max_corr = 0.004;  // meters; correspondences beyond this are ignored
  int max_iterations = 30;
  double rel_tol = 1e-6;
};

/// Point-to-point ICP of posed model samples against an observed cloud.
/// Returns the input pose unchanged when no correspondences exist.
Pose local_icp(const Pose& pose, const PointGrid& observed, const std::vector<Vec3>& model_samples,
               const IcpParams& params = {});

}  // namespace mopr::opt
