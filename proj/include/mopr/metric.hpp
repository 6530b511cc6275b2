#pragma once

#include "mopr/scenesim.hpp"
#include "mopr/types.hpp"

#include <Eigen/Dense>

#include <array>
#include <memory>
#include <string>

namespace mopr::metric {

struct WrConfig {
  double tau = 0.1;
  double e_tilde = 2.5;  // indicator threshold on n(e)
  int k_prime = 32;
  double x_limit = 0.75;
  double x0 = 0.5, x1 = 7.0, x2 = 0.2, x3 = 0.006;
  bool clamp_weight = true;  // raw-formula mode (no [0,1] clamp) when false
};

/// Square crop side: 800 * l_max + 50 at the 1280-wide reference, rescaled to
/// the render width and rounded to the nearest even integer.
int crop_size(double l_max, int render_width);

/// n(e) = e * 128 / S.
double normalize_cd(double e, int crop_s);

/// Piecewise comparator weight; 0 below 0, 1 above x_limit, exponential ramp
/// in between (clamped into [0,1] unless cfg.clamp_weight is off).
double weight(double x, const WrConfig& cfg);

struct RankingSample {
  double s = 0.0;  // similarity in [-1, 1]
  double e = 0.0;  // CD within the crop, native crop pixels; sample 0 has e = 0
};

/// Listwise weighted-ranking InfoNCE. Terms whose comparator mass vanishes
/// are skipped and counted in *skipped_terms.
double wr_infonce(const std::vector<RankingSample>& samples, int crop_s, const WrConfig& cfg,
                  int* skipped_terms = nullptr);

/// dL/ds_i with the weights treated as constants; matches central differences.
std::vector<double> wr_infonce_grad(const std::vector<RankingSample>& samples, int crop_s, const WrConfig& cfg);

struct CropSpec {
  int s = 0;       // side, pixels
  int x0 = 0, y0 = 0;  // window origin
};

/// k' noise poses around t0 with magnitude-ramped tangent rotations (up to
/// sigma_rot_max) and translations rejected until the projected bounding
/// center stays inside the crop window. Deterministic per seed.
std::vector<Pose> perturb_pose(const Pose& t0, const sim::ObjectModel& model, const CameraModel& cam,
                               const CropSpec& crop, int k_prime, std::uint64_t seed,
                               double sigma_rot_max = 15.0 * M_PI / 180.0);

// 128x128 input stack. I_r carries [depth, nx, ny, nz]; I_g carries
// [gray, sharpened gray].
struct InputStack {
  static constexpr int kSize = 128;
  int channels = 0;
  std::vector<float> data;  // (y * kSize + x) * channels + c

  float at(int x, int y, int c) const { return data[std::size_t(y * kSize + x) * channels + c]; }
};

struct FeatureMap {
  int size = 0;      // side; scales are 128, 64, 32
  int channels = 0;  // unit-norm per pixel
  std::vector<float> data;

  const float* at(int x, int y) const { return &data[std::size_t(y * size + x) * channels]; }
  float* at(int x, int y) { return &data[std::size_t(y * size + x) * channels]; }
};

class FeatureProvider {
 public:
  virtual ~FeatureProvider() = default;
  /// Three maps at scales {128, 64, 32}, each pixel feature unit-norm.
  virtual std::array<FeatureMap, 3> features(const InputStack& input) const = 0;
};

/// Mean per-pixel cosine between the two streams, averaged over the scales.
double similarity(const InputStack& i_r, const InputStack& i_g, const FeatureProvider& provider);

/// Rendered crop stack (depth + normals) from composited solo renders.
InputStack make_ir_stack(const std::vector<const sim::SoloRender*>& solos, const CropSpec& crop);

/// Observed crop stack (gray + unsharp-masked gray).
InputStack make_ig_stack(const ImageF& intensity, const CropSpec& crop);

// Fixed multi-scale hand-crafted features (orientation histogram + intensity)
// behind one learnable linear map per scale.
class ToyProvider : public FeatureProvider {
 public:
  static constexpr int kBaseChannels = 10;
  static constexpr int kOutChannels = 8;

  explicit ToyProvider(std::uint64_t seed = 1);  // random linear maps

  std::array<FeatureMap, 3> features(const InputStack& input) const override;

  std::array<Eigen::MatrixXd, 3> weights;  // kOut x kBase per scale

  void save(const std::string& path) const;
  static ToyProvider load(const std::string& path);
};

// One listwise training group: a crop window with the anchor render, k' noise
// renders, the observed crop, and the CDs.
struct RankingGroup {
  InputStack i_g;
  std::vector<InputStack> i_r;  // anchor first
  std::vector<double> e;        // native crop pixels, e[0] = 0
  int crop_s = 0;
};

struct DatasetParams {
  int scenes = 6;
  int n_objects = 4;
  int k_prime = 16;
  int crops_per_scene = 2;
  double object_dropout = 0.3;  // removal augmentation on the anchor pose set
  std::uint64_t seed = 0;
};

std::vector<RankingGroup> build_training_groups(const sim::ModelLibrary& lib, const DatasetParams& params);

struct TrainResult {
  std::vector<double> loss_per_epoch;
};

/// Plain gradient descent of the linear maps on wr_infonce, with analytic
/// gradients chained through the similarity. Deterministic per seed.
TrainResult toy_provider_train(ToyProvider& provider, const std::vector<RankingGroup>& dataset, int epochs,
                               double lr, std::uint64_t seed, const WrConfig& cfg = {});

/// Fraction of comparable pairs (|n(e_i) - n(e_j)| > x_limit) whose similarity
/// order matches the CD order.
double ranking_accuracy(const FeatureProvider& provider, const std::vector<RankingGroup>& dataset,
                        const WrConfig& cfg = {});

struct VoteParams {
  int stride = 0;                  // 0 = crop size
  bool single_object_crop = false; // comparison mode: one centred crop per candidate
  WrConfig wr;
};

struct VoteOutcome {
  std::vector<int> selected;              // per object, index into its pool
  std::vector<Pose> poses;
  std::vector<std::vector<int>> tallies;  // per object, per candidate
};

/// Sliding-window top-10 voting across all candidates of all objects.
VoteOutcome vote(const sim::ModelLibrary& lib, const sim::Observation& obs,
                 const std::vector<std::vector<Pose>>& pools, const std::vector<Pose>& base_poses,
                 const FeatureProvider& provider, const VoteParams& params);

/// 2-D Chamfer distance (pixels) between two objects' rendered pixel sets
/// inside a crop; used as the ranking CD.
double crop_render_cd(const std::vector<sim::SoloRender>& a, const std::vector<sim::SoloRender>& b,
                      const CropSpec& crop);

}  // namespace mopr::metric
