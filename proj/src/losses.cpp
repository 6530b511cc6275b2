#include "mopr/losses.hpp"

#include <cmath>
#include <cstring>

namespace mopr::loss {

namespace {
constexpr float kMaskEps = 1e-7f;

std::array<std::uint64_t, 12> pose_key(const Pose& p) {
  std::array<std::uint64_t, 12> k{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) std::memcpy(&k[std::size_t(i) * 3 + j], &p.rotation(i, j), 8);
  for (int i = 0; i < 3; ++i) std::memcpy(&k[9 + i], &p.translation(i), 8);
  return k;
}
}  // namespace

double gibbs(double loss_value, double gamma) {
  if (!std::isfinite(loss_value)) throw Error(ErrorCode::invalid_argument, "gibbs: non-finite loss");
  return std::exp(-gamma * loss_value);
}

OrientationRaster orientation_raster(const ImageU8& edges, double sigma) {
  OrientationRaster out;
  const Rect bb = nonzero_bbox(edges);
  const ImageF blurred = gaussian_blur7(edges, sigma, bb);
  out.mask = binarize(blurred, kMaskEps);
  out.orientation = gradient_orientation(blurred, bb.empty() ? Rect{} : bb.expanded(4, edges.width, edges.height));
  return out;
}

OrientationRaster scene_orientation(const sim::Observation& obs, double sigma) {
  ImageU8 edges(obs.depth.width, obs.depth.height, 0);
  for (const auto& b : obs.boundaries)
    for (std::size_t p = 0; p < edges.data.size(); ++p) edges.data[p] |= b.contour.data[p];
  return orientation_raster(edges, sigma);
}

double collision_loss(const sim::OccupancyGrid& g_i, const sim::OccupancyGrid& g_j) {
  std::size_t ni = 0, overlap = 0;
  for (int iz = 0; iz < g_i.nz; ++iz)
    for (int iy = 0; iy < g_i.ny; ++iy)
      for (int ix = 0; ix < g_i.nx; ++ix) {
        if (!g_i.at(ix, iy, iz)) continue;
        ++ni;
        const Vec3 c = g_i.origin + g_i.voxel * Vec3(ix + 0.5, iy + 0.5, iz + 0.5);
        const int jx = int(std::floor((c.x() - g_j.origin.x()) / g_j.voxel));
        const int jy = int(std::floor((c.y() - g_j.origin.y()) / g_j.voxel));
        const int jz = int(std::floor((c.z() - g_j.origin.z()) / g_j.voxel));
        if (jx >= 0 && jx < g_j.nx && jy >= 0 && jy < g_j.ny && jz >= 0 && jz < g_j.nz && g_j.at(jx, jy, jz))
          ++overlap;
      }
  if (ni == 0) throw Error(ErrorCode::empty_grid, "collision_loss: object-i grid is empty");
  return double(overlap) / double(ni);
}

double depth_loss(const std::vector<Vec3>& observed_points, const PointGrid& observed_grid,
                  const std::vector<Vec3>& rendered_points, double clamp) {
  if (observed_points.empty() || rendered_points.empty())
    throw Error(ErrorCode::empty_cloud, "depth_loss: empty point set");
  const PointGrid rendered_grid(rendered_points, clamp);
  double sum_obs = 0.0;
  for (const auto& p : observed_points) {
    double d = clamp;
    rendered_grid.nearest(p, clamp, &d);
    sum_obs += std::min(d, clamp);
  }
  double sum_ren = 0.0;
  for (const auto& p : rendered_points) {
    double d = clamp;
    observed_grid.nearest(p, clamp, &d);
    sum_ren += std::min(d, clamp);
  }
  return 0.5 * (sum_obs / double(observed_points.size()) + sum_ren / double(rendered_points.size()));
}

double depth_loss(const std::vector<Vec3>& observed_points, const std::vector<Vec3>& rendered_points, double clamp) {
  if (observed_points.empty() || rendered_points.empty())
    throw Error(ErrorCode::empty_cloud, "depth_loss: empty point set");
  return depth_loss(observed_points, PointGrid(observed_points, clamp), rendered_points, clamp);
}

double boundary_loss(const EdgePair& s_i, const EdgePair& s_j, const EdgePair& r_i, const EdgePair& r_j,
                     const Vec3& lambdas, double sigma) {
  const EdgePair* s[2] = {&s_i, &s_j};
  const EdgePair* r[2] = {&r_i, &r_j};

  bool any_scene_support = false;
  double total = 0.0;
  for (int k = 0; k < 2; ++k) {
    const Rect bb = Rect::join(nonzero_bbox(s[k]->e), nonzero_bbox(r[k]->e));
    if (bb.empty()) continue;

    const ImageF blur_es = gaussian_blur7(s[k]->e, sigma, bb);
    const ImageF blur_er = gaussian_blur7(r[k]->e, sigma, bb);
    const ImageF blur_os = gaussian_blur7(s[k]->o, sigma, bb);
    const ImageF blur_or = gaussian_blur7(r[k]->o, sigma, bb);
    const Rect roi = bb.expanded(4, s[k]->e.width, s[k]->e.height);
    const ImageF theta_s = gradient_orientation(blur_es, roi);
    const ImageF theta_r = gradient_orientation(blur_er, roi);

    double w_cos_sum = 0.0;
    double m_es_sum = 0.0;
    for (int y = roi.y0; y < roi.y1; ++y)
      for (int x = roi.x0; x < roi.x1; ++x) {
        const int m_es = blur_es.at(x, y) > kMaskEps ? 1 : 0;
        const int m_er = blur_er.at(x, y) > kMaskEps ? 1 : 0;
        m_es_sum += m_es;
        if (!(m_es && m_er)) continue;
        const int m_os = blur_os.at(x, y) > kMaskEps ? 1 : 0;
        const int m_or = blur_or.at(x, y) > kMaskEps ? 1 : 0;
        const int m1 = m_os & m_or;
        const int m2 = (m_es - m_os) * (m_er - m_or);
        const int m3 = (m_es * m_er) - m1 - m2;
        const double w = lambdas.x() * m1 + lambdas.y() * m2 + lambdas.z() * m3;
        if (w == 0.0) continue;
        w_cos_sum += w * std::cos(double(theta_s.at(x, y)) - double(theta_r.at(x, y)));
      }
    if (m_es_sum > 0.0) {
      any_scene_support = true;
      total += w_cos_sum / m_es_sum;
    }
  }
  if (!any_scene_support) {
    // Distinguish "no extracted boundary at all" from "no spatial overlap".
    if (count_nonzero(s_i.e) == 0 && count_nonzero(s_j.e) == 0)
      throw Error(ErrorCode::empty_boundary, "boundary_loss: no extracted boundary support");
    return 0.0;
  }
  return -0.5 * total;
}

Line2DTemplate line2d_template_from_mask(const ImageU8& silhouette_mask, const Line2DConfig& cfg) {
  Line2DTemplate tpl;
  const ImageU8 contour = mask_contour(silhouette_mask);
  const Rect bb = nonzero_bbox(contour);
  if (bb.empty()) return tpl;
  const OrientationRaster field = orientation_raster(contour, cfg.blur_sigma);

  std::vector<std::pair<int, int>> pixels;
  for (int y = bb.y0; y < bb.y1; ++y)
    for (int x = bb.x0; x < bb.x1; ++x)
      if (contour.at(x, y)) pixels.emplace_back(x, y);

  const std::size_t stride = std::max<std::size_t>(1, pixels.size() / std::size_t(cfg.max_features));
  for (std::size_t i = 0; i < pixels.size() && tpl.features.size() < std::size_t(cfg.max_features); i += stride) {
    Line2DFeature f;
    f.x = pixels[i].first;
    f.y = pixels[i].second;
    f.orientation = field.orientation.at(f.x, f.y);
    tpl.features.push_back(f);
  }
  return tpl;
}

Line2DTemplate line2d_template(const sim::ObjectModel& model, const Pose& pose, const CameraModel& cam,
                               const Line2DConfig& cfg) {
  const sim::SoloRender solo = sim::render_object(model, pose, cam);
  ImageU8 mask(cam.width, cam.height, 0);
  if (!solo.roi.empty())
    for (int y = solo.roi.y0; y < solo.roi.y1; ++y)
      for (int x = solo.roi.x0; x < solo.roi.x1; ++x)
        if (solo.depth_at(x, y) > 0.f) mask.at(x, y) = 1;
  return line2d_template_from_mask(mask, cfg);
}

std::vector<double> line2d_feature_responses(const Line2DTemplate& tpl, const OrientationRaster& scene, int spread) {
  std::vector<double> out(tpl.features.size(), 0.0);
  const int w = scene.orientation.width, h = scene.orientation.height;
  for (std::size_t i = 0; i < tpl.features.size(); ++i) {
    const auto& f = tpl.features[i];
    double best = 0.0;
    for (int dy = -spread; dy <= spread; ++dy)
      for (int dx = -spread; dx <= spread; ++dx) {
        const int x = f.x + dx, y = f.y + dy;
        if (x < 0 || x >= w || y < 0 || y >= h || !scene.mask.at(x, y)) continue;
        best = std::max(best, std::abs(std::cos(double(f.orientation) - double(scene.orientation.at(x, y)))));
      }
    out[i] = best;
  }
  return out;
}

double line2d_score(const Line2DTemplate& tpl, const OrientationRaster& scene, const ImageU8* occl_mask, int spread) {
  if (tpl.features.empty()) throw Error(ErrorCode::no_visible_template, "line2d_score: empty template");
  const std::vector<double> responses = line2d_feature_responses(tpl, scene, spread);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < tpl.features.size(); ++i) {
    const auto& f = tpl.features[i];
    if (occl_mask && occl_mask->width > 0 && occl_mask->at(f.x, f.y)) continue;
    sum += responses[i];
    ++n;
  }
  if (n == 0) throw Error(ErrorCode::no_visible_template, "line2d_score: all template features occluded");
  return 100.0 * sum / double(n);
}

double line2d_score(const sim::ObjectModel& model, const Pose& pose, const CameraModel& cam,
                    const OrientationRaster& scene, const ImageU8* occl_mask, const Line2DConfig& cfg) {
  return line2d_score(line2d_template(model, pose, cam, cfg), scene, occl_mask, cfg.spread);
}

bool NeighborGraph::are_neighbors(int i, int j) const { return position_of(i, j) >= 0; }

int NeighborGraph::position_of(int i, int j) const {
  const auto& ns = neighbors[std::size_t(i)];
  for (std::size_t k = 0; k < ns.size(); ++k)
    if (ns[k] == j) return int(k);
  return -1;
}

NeighborGraph neighbor_graph(const sim::Observation& obs, int dilation) {
  const int n = obs.object_count();
  std::vector<ImageU8> dilated;
  dilated.resize(std::size_t(n));
  for (int i = 0; i < n; ++i) dilated[std::size_t(i)] = dilate(obs.masks[std::size_t(i)], dilation);
  NeighborGraph g;
  g.neighbors.resize(std::size_t(n));
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (masks_intersect(dilated[std::size_t(i)], dilated[std::size_t(j)])) {
        g.neighbors[std::size_t(i)].push_back(j);
        g.neighbors[std::size_t(j)].push_back(i);
      }
  return g;
}

SceneEvalCache::SceneEvalCache(const sim::ModelLibrary& lib, const sim::Observation& obs, const SceneTermsConfig& cfg)
    : lib_(lib), obs_(obs), cfg_(cfg) {
  scene_field_ = scene_orientation(obs, cfg.blur_sigma);
  graph_ = neighbor_graph(obs, cfg.neighbor_dilation);
  const int n = obs.object_count();
  observed_in_mask_.resize(std::size_t(n));
  observed_grids_.resize(std::size_t(n));
  for (std::size_t p = 0; p < obs.cloud.size(); ++p) {
    const auto [x, y] = obs.cloud_pixels[p];
    for (int i = 0; i < n; ++i)
      if (obs.masks[std::size_t(i)].at(x, y)) observed_in_mask_[std::size_t(i)].push_back(obs.cloud[p]);
  }
  for (int i = 0; i < n; ++i)
    observed_grids_[std::size_t(i)] = PointGrid(observed_in_mask_[std::size_t(i)], cfg.chamfer_clamp);
}

const SceneEvalCache::Entry& SceneEvalCache::get(int obj_index, const Pose& pose) {
  const auto key = std::make_pair(obj_index, pose_key(pose));
  auto it = entries_.find(key);
  if (it != entries_.end()) return it->second;

  Entry e;
  const auto& model = lib_.at(obs_.model_ids[std::size_t(obj_index)]);
  e.solo = sim::render_object(model, pose, obs_.camera);
  e.mask = ImageU8(obs_.camera.width, obs_.camera.height, 0);
  if (!e.solo.roi.empty())
    for (int y = e.solo.roi.y0; y < e.solo.roi.y1; ++y)
      for (int x = e.solo.roi.x0; x < e.solo.roi.x1; ++x) {
        const float z = e.solo.depth_at(x, y);
        if (z > 0.f) {
          e.mask.at(x, y) = 1;
          e.cloud.push_back(backproject(obs_.camera, x + 0.5, y + 0.5, z));
        }
      }
  e.grid = sim::voxelize(model, pose, cfg_.collision_voxel);
  e.tpl = line2d_template_from_mask(e.mask, cfg_.line2d);
  return entries_.emplace(key, std::move(e)).first->second;
}

void SceneEvalCache::clear() { entries_.clear(); }

namespace {

EdgePair contact_edges(const sim::ObjectBoundaries& b, int neighbor, int w, int h) {
  for (const auto& c : b.contacts)
    if (c.neighbor == neighbor) return EdgePair{c.o, c.e};
  return EdgePair{ImageU8(w, h, 0), ImageU8(w, h, 0)};
}

}  // namespace

SceneTerms scene_cbd_terms(SceneEvalCache& cache, const std::vector<Pose>& poses, int moved) {
  const auto& obs = cache.observation();
  const auto& cfg = cache.config();
  const int n = obs.object_count();
  const int w = obs.camera.width, h = obs.camera.height;

  std::vector<const sim::SoloRender*> solos;
  std::vector<const SceneEvalCache::Entry*> entries;
  solos.resize(std::size_t(n));
  entries.resize(std::size_t(n));
  for (int i = 0; i < n; ++i) {
    entries[std::size_t(i)] = &cache.get(i, poses[std::size_t(i)]);
    solos[std::size_t(i)] = &entries[std::size_t(i)]->solo;
  }

  // Hypothesised composite; occlusion between objects shapes the visible contours.
  ImageF depth;
  ImageI32 instance;
  sim::composite(solos, obs.camera, depth, instance, nullptr);
  std::vector<ImageU8> masks;
  masks.resize(std::size_t(n), ImageU8(w, h, 0));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int id = instance.at(x, y);
      if (id >= 0) masks[std::size_t(id)].at(x, y) = 1;
    }

  std::vector<int> subset;
  if (moved >= 0) {
    subset.push_back(moved);
    for (int j : cache.graph().neighbors[std::size_t(moved)]) subset.push_back(j);
  }
  sim::BoundaryParams bp;  // defaults shared with the clean-scene extraction
  const auto rendered_bounds = sim::extract_boundaries_from(masks, depth, bp, subset);

  SceneTerms terms;
  for (int i = 0; i < n; ++i) {
    for (int j : cache.graph().neighbors[std::size_t(i)]) {
      if (j <= i) continue;
      if (moved >= 0 && i != moved && j != moved) continue;
      PairTerm pt;
      pt.i = i;
      pt.j = j;
      pt.collision_ij = collision_loss(entries[std::size_t(i)]->grid, entries[std::size_t(j)]->grid);
      pt.collision_ji = collision_loss(entries[std::size_t(j)]->grid, entries[std::size_t(i)]->grid);
      const EdgePair s_i = contact_edges(obs.boundaries[std::size_t(i)], j, w, h);
      const EdgePair s_j = contact_edges(obs.boundaries[std::size_t(j)], i, w, h);
      const EdgePair r_i = contact_edges(rendered_bounds[std::size_t(i)], j, w, h);
      const EdgePair r_j = contact_edges(rendered_bounds[std::size_t(j)], i, w, h);
      if (count_nonzero(s_i.e) == 0 && count_nonzero(s_j.e) == 0) {
        pt.boundary = 0.0;  // neighbours in the graph but no extracted contact
      } else {
        pt.boundary = boundary_loss(s_i, s_j, r_i, r_j, cfg.lambdas, cfg.blur_sigma);
      }
      terms.nll_collision += cfg.gibbs.gamma_collision * (pt.collision_ij + pt.collision_ji);
      terms.nll_boundary += cfg.gibbs.gamma_boundary * pt.boundary;
      terms.pairs.push_back(pt);
    }
  }

  for (int i = 0; i < n; ++i) {
    if (moved >= 0 && i != moved) continue;
    ObjectTerm ot;
    ot.i = i;
    const auto& observed = cache.observed_points_in_mask(i);
    const auto& rendered = entries[std::size_t(i)]->cloud;
    if (!observed.empty() && !rendered.empty()) {
      ot.depth = depth_loss(observed, cache.observed_grid(i), rendered, cfg.chamfer_clamp);
      ot.depth_valid = true;
      terms.nll_depth += cfg.gibbs.gamma_depth * ot.depth;
    }
    terms.objects.push_back(ot);
  }
  return terms;
}

SceneTerms scene_likelihood_terms(SceneEvalCache& cache, const std::vector<Pose>& poses,
                                  const std::vector<std::vector<int>>& u) {
  SceneTerms terms = scene_cbd_terms(cache, poses, -1);
  const auto& obs = cache.observation();
  const auto& cfg = cache.config();
  const int n = obs.object_count();

  for (int i = 0; i < n; ++i) {
    ObjectTerm& ot = terms.objects[std::size_t(i)];
    if (!ot.depth_valid) throw Error(ErrorCode::empty_cloud, "scene_likelihood_terms: no depth support for object");
    const auto& nbrs = cache.graph().neighbors[std::size_t(i)];
    std::vector<const ImageU8*> nbr_masks;
    nbr_masks.reserve(nbrs.size());
    for (int j : nbrs) nbr_masks.push_back(&cache.get(j, poses[std::size_t(j)]).mask);
    const ImageU8 occl = sim::occlusion_mask_from_rasters(u[std::size_t(i)], nbr_masks, cfg.line2d.spread);
    const auto& tpl = cache.get(i, poses[std::size_t(i)]).tpl;
    const double score = line2d_score(tpl, cache.scene_field(), occl.width > 0 ? &occl : nullptr, cfg.line2d.spread);
    ot.line2d = -score;
    ot.line2d_valid = true;
    terms.nll_line2d += cfg.gibbs.gamma_line2d * ot.line2d;
  }
  return terms;
}

}  // namespace mopr::loss
