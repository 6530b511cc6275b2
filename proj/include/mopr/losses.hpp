#pragma once

#include "mopr/nn_grid.hpp"
#include "mopr/raster.hpp"
#include "mopr/scenesim.hpp"
#include "mopr/types.hpp"

#include <map>
#include <optional>

namespace mopr::loss {

// Per-loss inverse temperatures of the Gibbs conversion.
struct GibbsConfig {
  double gamma_collision = 1e2;
  double gamma_boundary = 1.0;
  double gamma_depth = 1e3;
  double gamma_line2d = 0.01;
};

/// exp(-gamma * loss); normalization deliberately omitted.
double gibbs(double loss_value, double gamma);

// Gradient-orientation field of a blurred edge raster plus its support mask.
struct OrientationRaster {
  ImageF orientation;  // [0, 2*pi), defined where mask = 1
  ImageU8 mask;
};

/// Theta()/M() of the boundary equations: blur the edge raster with a (7,7)
/// Gaussian, take gradient orientation, binarize the blurred support.
OrientationRaster orientation_raster(const ImageU8& edges, double sigma = 1.1);

/// Orientation field of all observed silhouette contours combined.
OrientationRaster scene_orientation(const sim::Observation& obs, double sigma = 1.1);

/// Overlap voxels divided by object-i voxels. Grids may have different
/// lattices; i-voxel centers are looked up in j. Throws Error(empty_grid).
double collision_loss(const sim::OccupancyGrid& g_i, const sim::OccupancyGrid& g_j);

/// Symmetric mean nearest-neighbour distance, per-point distances clamped.
double depth_loss(const std::vector<Vec3>& observed_points, const std::vector<Vec3>& rendered_points,
                  double clamp = 0.02);
double depth_loss(const std::vector<Vec3>& observed_points, const PointGrid& observed_grid,
                  const std::vector<Vec3>& rendered_points, double clamp = 0.02);

// One object's boundary rasters (O, E) entering a pair term.
struct EdgePair {
  ImageU8 o;
  ImageU8 e;
};

/// Boundary matching loss of one object pair, in [-max(lambda), max(lambda)].
double boundary_loss(const EdgePair& s_i, const EdgePair& s_j, const EdgePair& r_i, const EdgePair& r_j,
                     const Vec3& lambdas = Vec3(1.0, 1.0, 0.3), double sigma = 1.1);

struct Line2DConfig {
  int spread = 4;          // T: max-pool half window in pixels
  int max_features = 64;   // stride-sampled along the silhouette
  double blur_sigma = 1.1;
};

struct Line2DFeature {
  int x = 0, y = 0;
  float orientation = 0.f;
};

struct Line2DTemplate {
  std::vector<Line2DFeature> features;
};

/// Silhouette-gradient template of a posed model (solo render). Empty when
/// the model projects outside the image.
Line2DTemplate line2d_template(const sim::ObjectModel& model, const Pose& pose, const CameraModel& cam,
                               const Line2DConfig& cfg = {});

/// Template from an already-rendered full-frame silhouette mask.
Line2DTemplate line2d_template_from_mask(const ImageU8& silhouette_mask, const Line2DConfig& cfg = {});

/// Spread-max |cos| response of each template feature against the scene field.
std::vector<double> line2d_feature_responses(const Line2DTemplate& tpl, const OrientationRaster& scene, int spread);

/// 100 x mean response over features not covered by occl_mask.
/// Throws Error(no_visible_template) when every feature is masked.
double line2d_score(const Line2DTemplate& tpl, const OrientationRaster& scene, const ImageU8* occl_mask, int spread);
double line2d_score(const sim::ObjectModel& model, const Pose& pose, const CameraModel& cam,
                    const OrientationRaster& scene, const ImageU8* occl_mask, const Line2DConfig& cfg = {});

// Which object pairs interact: dilated observed masks intersect.
struct NeighborGraph {
  std::vector<std::vector<int>> neighbors;  // sorted ascending, per object

  bool are_neighbors(int i, int j) const;
  int position_of(int i, int j) const;  // index of j within neighbors[i], or -1
};

NeighborGraph neighbor_graph(const sim::Observation& obs, int dilation = 3);

struct SceneTermsConfig {
  GibbsConfig gibbs;
  Line2DConfig line2d;
  Vec3 lambdas = Vec3(1.0, 1.0, 0.3);
  double blur_sigma = 1.1;
  double collision_voxel = 0.004;
  double chamfer_clamp = 0.02;
  int neighbor_dilation = 3;
};

struct PairTerm {
  int i = 0, j = 0;       // i < j
  double collision_ij = 0.0;
  double collision_ji = 0.0;
  double boundary = 0.0;
};

struct ObjectTerm {
  int i = 0;
  double depth = 0.0;
  double line2d = 0.0;  // loss = -R_lm
  bool depth_valid = false;
  bool line2d_valid = false;
};

struct SceneTerms {
  std::vector<PairTerm> pairs;
  std::vector<ObjectTerm> objects;
  double nll_collision = 0.0;
  double nll_boundary = 0.0;
  double nll_depth = 0.0;
  double nll_line2d = 0.0;

  double total_nll() const { return nll_collision + nll_boundary + nll_depth + nll_line2d; }
};

// Memoizes per-(object, pose) render artifacts plus per-scene fixed state so
// the CEM can score many candidates that share most of the scene.
class SceneEvalCache {
 public:
  SceneEvalCache(const sim::ModelLibrary& lib, const sim::Observation& obs, const SceneTermsConfig& cfg);

  struct Entry {
    sim::SoloRender solo;
    ImageU8 mask;  // full-frame silhouette
    sim::OccupancyGrid grid;
    std::vector<Vec3> cloud;  // visible rendered points
    Line2DTemplate tpl;
  };

  const Entry& get(int obj_index, const Pose& pose);
  void clear();

  const sim::ModelLibrary& library() const { return lib_; }
  const sim::Observation& observation() const { return obs_; }
  const SceneTermsConfig& config() const { return cfg_; }
  const OrientationRaster& scene_field() const { return scene_field_; }
  const NeighborGraph& graph() const { return graph_; }
  const std::vector<Vec3>& observed_points_in_mask(int i) const { return observed_in_mask_[std::size_t(i)]; }
  const PointGrid& observed_grid(int i) const { return observed_grids_[std::size_t(i)]; }

 private:
  const sim::ModelLibrary& lib_;
  const sim::Observation& obs_;
  SceneTermsConfig cfg_;
  OrientationRaster scene_field_;
  NeighborGraph graph_;
  std::vector<std::vector<Vec3>> observed_in_mask_;
  std::vector<PointGrid> observed_grids_;
  std::map<std::pair<int, std::array<std::uint64_t, 12>>, Entry> entries_;
};

/// Full Eq.-11 decomposition for a scene hypothesis. u[i] holds the occlusion
/// state of object i against graph.neighbors[i] (aligned, 0 = i occludes).
SceneTerms scene_likelihood_terms(SceneEvalCache& cache, const std::vector<Pose>& poses,
                                  const std::vector<std::vector<int>>& u);

/// Collision + boundary + depth terms only (the soft-ELBO energy), restricted
/// to terms that involve `moved` when moved >= 0.
SceneTerms scene_cbd_terms(SceneEvalCache& cache, const std::vector<Pose>& poses, int moved = -1);

}  // namespace mopr::loss
