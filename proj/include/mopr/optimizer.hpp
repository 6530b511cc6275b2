#pragma once

#include "mopr/bgmm.hpp"
#include "mopr/icp.hpp"
#include "mopr/losses.hpp"
#include "mopr/scenesim.hpp"
#include "mopr/types.hpp"

#include <optional>
#include <string>

namespace mopr::opt {

// p0[i][k] = p(u_{i,j} = 0) for j = graph.neighbors[i][k]; the mirrored entry
// always holds the complement so u_{i,j} + u_{j,i} = 1 at the sample level.
struct OcclusionBeliefs {
  std::vector<std::vector<double>> p0;

  double at(const loss::NeighborGraph& g, int i, int j) const { return p0[std::size_t(i)][std::size_t(g.position_of(i, j))]; }
};

struct MoprConfig {
  int outer_iterations = 5;     // N
  int inner_iterations = 5;     // M
  int samples_per_object = 50;  // K: top-K seeds and per-round sampling count
  double elite_fraction = 0.3;  // eta
  double delta_thr = 5.0;       // pixels
  double icp_max_corr = 0.004;  // meters
  double collision_threshold = 0.0;
  double depth_threshold = 0.005;              // meters
  double init_rotation_gate = 90.0 * M_PI / 180.0;  // applied only when init poses are given
  int viewpoint_count = 162;                   // icosphere directions in the seed grid
  int inplane_count = 12;
  std::uint64_t seed = 0;
  bool verbose = false;
  loss::SceneTermsConfig terms;
  bgmm::BgmmConfig mixture;  // N_c etc.; per-fit seeds are derived internally
};

enum class Reject {
  accepted = 0,
  rotation_bound,
  translation_pixel,
  collision_threshold,
  depth_threshold,
  depth_unavailable,
  behind_camera,
};

struct Candidate {
  Pose pose;
  double soft_elbo = -std::numeric_limits<double>::infinity();
  double collision = 0.0;  // max pair collision loss involving the object
  double boundary = 0.0;   // summed pair boundary losses
  double depth = 0.0;
  Reject reject = Reject::accepted;

  bool accepted() const { return reject == Reject::accepted; }
};

enum class ObjectStatus { ok, low_confidence, no_candidates };

struct ObjectPool {
  std::vector<Candidate> candidates;  // surviving filtered pool, final outer iteration
  std::vector<Pose> seeds;            // top-K poses from the seeding objective
  std::vector<double> seed_scores;
  bgmm::PcgMixture seed_bound;  // constraint volumes fitted on the seeds
  Pose best;
  double best_elbo = -std::numeric_limits<double>::infinity();
  ObjectStatus status = ObjectStatus::ok;
};

struct RunResult {
  std::vector<ObjectPool> pools;
  std::vector<Pose> best_poses;
  OcclusionBeliefs beliefs;
  std::vector<std::string> audit;  // JSON lines, filled in verbose mode
};

OcclusionBeliefs init_beliefs(const loss::NeighborGraph& graph);

/// One EM belief refresh given the previous best poses.
OcclusionBeliefs update_beliefs(const OcclusionBeliefs& prev, const std::vector<Pose>& poses_prev,
                                loss::SceneEvalCache& cache);

// Precomputed template responses of the viewpoint x in-plane seed grid; the
// expensive rendering happens once, re-ranking under new beliefs is cheap.
struct SeedGrid {
  struct Entry {
    Pose pose;
    std::vector<float> responses;        // per-feature spread-max |cos|
    std::vector<std::uint32_t> covered;  // per-feature neighbour-coverage bits
  };
  std::vector<std::vector<Entry>> per_object;
  std::vector<bool> seedable;  // false when the observed mask is empty
};

SeedGrid build_seed_grid(loss::SceneEvalCache& cache, const MoprConfig& cfg,
                         const std::vector<Pose>* init_poses);

struct SeedingResult {
  std::vector<Pose> poses;
  std::vector<double> scores;  // seeding objective, descending
};

/// Top-K grid poses per object under the occlusion-marginalised template
/// objective. Throws Error(no_candidates) when everything is gated out.
SeedingResult seed_candidates(const SeedGrid& grid, int object, const OcclusionBeliefs& beliefs,
                              const loss::NeighborGraph& graph, const MoprConfig& cfg);

struct SoftElboResult {
  double value = -std::numeric_limits<double>::infinity();
  Reject reject = Reject::accepted;
  double collision_max = 0.0;
  double boundary_sum = 0.0;
  double depth_value = 0.0;

  bool accepted() const { return reject == Reject::accepted; }
};

/// Collision+boundary+depth ELBO of the hypothesis, with the hard thresholds
/// and 3-sigma bounding constraints applied to object `moved` (all objects
/// when moved < 0). Rejection is a value, not an error.
SoftElboResult soft_elbo(loss::SceneEvalCache& cache, const std::vector<Pose>& poses,
                         const std::vector<const bgmm::PcgMixture*>& bounds, const MoprConfig& cfg, int moved = -1);

/// Full EM + CEM optimisation (N outer belief/seeding iterations, M inner
/// sample/score/refit rounds per object).
RunResult run(const sim::ModelLibrary& lib, const sim::Observation& obs, const MoprConfig& cfg,
              const std::vector<Pose>* init_poses = nullptr);

/// Symmetric average-closest-point error between two posed sample sets.
double adds_metric(const sim::ObjectModel& model, const Pose& pred, const Pose& gt);

inline bool adds_pass(const sim::ObjectModel& model, double adds) { return adds < 0.1 * model.diameter; }

}  // namespace mopr::opt
