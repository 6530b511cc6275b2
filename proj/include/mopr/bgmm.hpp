#pragma once

#include "mopr/types.hpp"

#include <Eigen/Dense>

namespace mopr::bgmm {

struct BgmmConfig {
  int max_components = 10;  // N_c
  int max_iterations = 200;
  double convergence_tol = 1e-4;  // max tangent change of any mean, radians / meters
  double alpha0 = -1.0;           // < 0 means 1 / N_c
  double beta0 = 1.0;
  double nu0 = 4.0;
  double sigma0 = 0.5;  // W_0 = I / sigma0^2; 0.5 rad for rotations, 0.05 m for translations
  std::uint64_t seed = 0;

  double alpha0_or_default() const { return alpha0 > 0 ? alpha0 : 1.0 / double(max_components); }
};

// Gaussian-Wishart posterior of one component in the tangent frame at its mean.
struct Component {
  double alpha = 0.0;
  double beta = 0.0;
  double nu = 0.0;
  double n_k = 0.0;       // effective count
  Mat3 w = Mat3::Identity();  // Wishart scale
  double mix_weight = 0.0;    // E[pi_k]

  Mat3 expected_precision() const { return nu * w; }
};

struct So3FitResult {
  std::vector<Component> components;  // all N_c of them
  std::vector<Rotation> means;
  Eigen::MatrixXd responsibilities;  // N x K, rows sum to 1
  double lower_bound = 0.0;          // final variational lower bound
  double initial_lower_bound = 0.0;
  int iterations = 0;

  int dominant_component() const;
  /// mix_weight > 1 / (10 * N_c); reporting only.
  std::vector<int> effective_components() const;
};

struct EuclideanFitResult {
  std::vector<Component> components;
  std::vector<Vec3> means;
  Eigen::MatrixXd responsibilities;
  double lower_bound = 0.0;
  double initial_lower_bound = 0.0;
  int iterations = 0;

  int dominant_component() const;
  std::vector<int> effective_components() const;
};

/// Variational Bayesian GMM on SO(3) with all sufficient statistics taken in
/// the tangent frames of the component means.
So3FitResult fit_so3(const std::vector<Rotation>& rotations, const BgmmConfig& config);

/// Standard variational Bayesian GMM on R^3 (same machinery, Euclidean ops).
EuclideanFitResult fit_euclidean(const std::vector<Vec3>& points, const BgmmConfig& config);

struct TranslationMixture {
  std::vector<Component> components;  // retained, weights renormalized
  std::vector<Vec3> means;
};

// Two-level mixture over PCG(3): rotation components, each with a nested
// Euclidean mixture over member translations. Only rotation components with
// at least one hard-assigned member are retained; weights are renormalized.
struct PcgMixture {
  Rotation r0 = Rotation::Identity();  // canonicalization anchor from pass 1
  SymmetryGroup sym;
  std::vector<Component> rot_components;
  std::vector<Rotation> rot_means;
  std::vector<TranslationMixture> translations;  // parallel to rot_components
};

/// Two-pass symmetry-aware fit: fit rotations, canonicalize against the
/// dominant mean, refit, then fit translations per rotation cluster.
PcgMixture fit_pcg3(const std::vector<Pose>& poses, const SymmetryGroup& sym, const BgmmConfig& config);

/// Ancestral sampling; deterministic per seed.
std::vector<Pose> sample(const PcgMixture& mixture, int n, std::uint64_t seed);

struct ContainsResult {
  bool rotation = false;
  bool translation = false;
};

/// Mahalanobis test at n_sigma under each component's expected precision.
ContainsResult bounding_volume_contains(const PcgMixture& mixture, const Pose& pose, double n_sigma = 3.0);

/// Nearest point (Euclidean metric) of the n_sigma translation bound to t;
/// returns t itself when already inside.
Vec3 nearest_translation_in_bound(const PcgMixture& mixture, const Vec3& t, double n_sigma = 3.0);

/// Smallest rotation Mahalanobis distance to any component.
double rotation_mahalanobis(const PcgMixture& mixture, const Rotation& r);

/// Structured-text dump for test fixtures (means row-major, covariance upper triangles).
std::string mixture_to_json(const PcgMixture& mixture);

/// Non-throwing principal-branch log for fit internals; the antipodal case
/// takes the deterministic Eigen branch.
TangentVec log_raw(const Rotation& anchor, const Rotation& x);

}  // namespace mopr::bgmm
