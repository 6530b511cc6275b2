#include "mopr/icp.hpp"

#include <Eigen/SVD>

namespace mopr::opt {

Pose local_icp(const Pose& pose, const PointGrid& observed, const std::vector<Vec3>& model_samples,
               const IcpParams& params) {
  Pose current = pose;
  double prev_err = std::numeric_limits<double>::infinity();

  for (int iter = 0; iter < params.max_iterations; ++iter) {
    std::vector<Vec3> src, dst;
    src.reserve(model_samples.size());
    dst.reserve(model_samples.size());
    double err = 0.0;
    for (const auto& mp : model_samples) {
      const Vec3 p = current.apply(mp);
      double d = 0.0;
      const int idx = observed.nearest(p, params.max_corr, &d);
      if (idx < 0) continue;
      src.push_back(p);
      dst.push_back(observed.point(idx));
      err += d * d;
    }
    if (src.empty()) break;
    err /= double(src.size());

    // Kabsch alignment of current correspondences.
    Vec3 src_mean = Vec3::Zero(), dst_mean = Vec3::Zero();
    for (std::size_t i = 0; i < src.size(); ++i) {
      src_mean += src[i];
      dst_mean += dst[i];
    }
    src_mean /= double(src.size());
    dst_mean /= double(dst.size());
    Mat3 h = Mat3::Zero();
    for (std::size_t i = 0; i < src.size(); ++i) h += (src[i] - src_mean) * (dst[i] - dst_mean).transpose();
    Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 d_fix = Mat3::Identity();
    d_fix(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0 ? -1.0 : 1.0;
    const Mat3 r = svd.matrixV() * d_fix * svd.matrixU().transpose();
    const Vec3 t = dst_mean - r * src_mean;

    current.rotation = r * current.rotation;
    current.translation = r * current.translation + t;

    if (prev_err < std::numeric_limits<double>::infinity() &&
        std::abs(prev_err - err) < params.rel_tol * std::max(prev_err, 1e-12))
      break;
    prev_err = err;
  }
  return current;
}

}  // namespace mopr::opt
