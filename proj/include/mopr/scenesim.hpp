#pragma once

#include "mopr/camera.hpp"
#include "mopr/mesh.hpp"
#include "mopr/raster.hpp"
#include "mopr/types.hpp"

#include <optional>
#include <string>
#include <vector>

namespace mopr::sim {

struct ObjectModel {
  std::string id;
  TriMesh mesh;
  std::vector<Solid> solids;        // analytic union; empty for externally loaded meshes
  std::vector<Vec3> surface_samples;
  SymmetryGroup sym;
  double diameter = 0.0;            // d: max pairwise sample distance
  double l_max = 0.0;               // bounding-sphere diameter
  Vec3 bounding_center = Vec3::Zero();  // model-frame center of the bounding sphere

  /// Fills surface_samples / diameter / l_max from the mesh.
  void finalize(int sample_count = 512, std::uint64_t seed = 7);
};

struct ModelLibrary {
  std::vector<ObjectModel> models;

  const ObjectModel& at(const std::string& id) const;
  int index_of(const std::string& id) const;
  /// box, L-bracket, axially symmetric cylinder, T-shape, U-channel.
  static ModelLibrary builtin();
};

struct Placement {
  std::string model_id;
  Pose pose;
};

struct Bin {
  Vec3 min = Vec3(-0.16, -0.12, 0.45);
  Vec3 max = Vec3(0.16, 0.12, 0.65);
};

struct SceneSpec {
  std::vector<Placement> objects;
  CameraModel camera;
  Bin bin;
  std::uint64_t seed = 0;
};

struct BoundaryParams {
  int overlap_radius = 2;
  int extension_threshold = 10;
  double depth_contact_eps = 1e-3;  // meters; median-depth gap that marks a true occlusion contact
};

// One object's boundary rasters against a specific neighbour.
struct ContactBoundary {
  int neighbor = -1;
  ImageU8 o;  // overlapping boundary pixels
  ImageU8 e;  // extended boundary (o plus nearby contour, geodesic along the contour)
};

struct ObjectBoundaries {
  ImageU8 contour;  // full silhouette contour
  ImageU8 o_all;    // union over neighbours
  ImageU8 e_all;
  std::vector<ContactBoundary> contacts;
};

struct Observation {
  CameraModel camera;
  ImageF depth;       // meters, 0 = missing
  ImageI32 instance;  // -1 = background, else object index
  ImageF intensity;   // headlight shading in [0,1]; the synthetic stand-in for RGB
  std::vector<ImageU8> masks;
  std::vector<ObjectBoundaries> boundaries;
  std::vector<Vec3> cloud;                       // back-projection of nonzero depth
  std::vector<std::pair<int, int>> cloud_pixels;  // (x, y) per cloud point
  std::vector<std::string> model_ids;
  std::vector<Pose> gt_poses;  // evaluation only

  int object_count() const { return int(masks.size()); }
};

struct OccupancyGrid {
  Vec3 origin = Vec3::Zero();  // world position of voxel (0,0,0) corner
  double voxel = 0.0;
  int nx = 0, ny = 0, nz = 0;
  std::vector<std::uint8_t> occ;

  bool at(int ix, int iy, int iz) const { return occ[(std::size_t(iz) * ny + iy) * nx + ix] != 0; }
  void set(int ix, int iy, int iz, bool v) { occ[(std::size_t(iz) * ny + iy) * nx + ix] = v ? 1 : 0; }
  std::size_t count() const;
};

// Depth + face normals of a single object, restricted to its screen ROI.
struct SoloRender {
  Rect roi;        // in full-image coordinates; images below are ROI-sized
  ImageF depth;    // 0 = not covered
  ImageF nx, ny, nz;

  bool covers(int x, int y) const {
    return x >= roi.x0 && x < roi.x1 && y >= roi.y0 && y < roi.y1 && depth.at(x - roi.x0, y - roi.y0) > 0.f;
  }
  float depth_at(int x, int y) const { return depth.at(x - roi.x0, y - roi.y0); }
};

/// Rasterizes one posed model (z-buffer, perspective-correct depth).
SoloRender render_object(const ObjectModel& model, const Pose& pose, const CameraModel& cam);

/// Composites solo renders into depth / instance / intensity rasters.
void composite(const std::vector<SoloRender>& solos, const CameraModel& cam, ImageF& depth, ImageI32& instance,
               ImageF* intensity);
void composite(const std::vector<const SoloRender*>& solos, const CameraModel& cam, ImageF& depth,
               ImageI32& instance, ImageF* intensity);

/// Full clean render of a scene: depth, masks, cloud, boundaries.
Observation render_depth(const ModelLibrary& lib, const SceneSpec& scene, const BoundaryParams& bp = {});

/// Recomputes per-object (O_s, E_s) from the observation's masks and depth.
std::vector<ObjectBoundaries> extract_boundaries(const Observation& obs, const BoundaryParams& bp = {});

/// Boundary classification from raw masks + depth. When `subset` is non-empty
/// only those objects' entries are filled (the rest stay default-empty).
std::vector<ObjectBoundaries> extract_boundaries_from(const std::vector<ImageU8>& masks, const ImageF& depth,
                                                      const BoundaryParams& bp, const std::vector<int>& subset = {});

/// Boundary classification of a clean re-render under hypothesised poses.
std::vector<ObjectBoundaries> render_edges(const ModelLibrary& lib, const std::vector<std::string>& model_ids,
                                           const std::vector<Pose>& poses, const CameraModel& cam,
                                           const BoundaryParams& bp = {});

/// Occluder raster for object i: union over neighbours j with u_ij = 1 of
/// j's rendered mask dilated by `spread`.
ImageU8 occlusion_mask(int i, const std::vector<int>& u_i, const std::vector<int>& neighbor_ids,
                       const ModelLibrary& lib, const std::vector<std::string>& model_ids,
                       const std::vector<Pose>& poses, const CameraModel& cam, int spread);

/// Same, but from caller-provided occluder masks (used before any pose estimates exist).
ImageU8 occlusion_mask_from_rasters(const std::vector<int>& u_i, const std::vector<const ImageU8*>& neighbor_masks,
                                    int spread);

struct DegradeParams {
  double dropout_rate = 0.0;
  double depth_noise_sigma = 0.0;  // meters
  int boundary_jitter = 0;         // pixels
  std::uint64_t seed = 0;
};

/// Sensor/segmentation degradation; deterministic per seed. Boundaries are
/// re-extracted from the jittered masks.
Observation degrade(const Observation& obs, const DegradeParams& dp, const BoundaryParams& bp = {});

/// Voxel centers inside the posed solid union (or mesh parity for loaded
/// meshes), plus a thin shell around surface samples. Lattice is snapped to
/// multiples of voxel_size so grids of equal pitch share a lattice.
OccupancyGrid voxelize(const ObjectModel& model, const Pose& pose, double voxel_size);

struct PlantedSceneParams {
  int n_objects = 6;
  CameraModel camera;
  Bin bin;
  double collision_voxel = 0.004;
  int max_rejections = 10000;
};

/// Non-interpenetrating random placement inside the bin; deterministic per seed.
SceneSpec make_planted_scene(const ModelLibrary& lib, const PlantedSceneParams& params, std::uint64_t seed);

/// (occupied-in-both count, occupied-in-gi count) on gi's lattice.
std::pair<std::size_t, std::size_t> grid_overlap(const OccupancyGrid& gi, const OccupancyGrid& gj);

}  // namespace mopr::sim
