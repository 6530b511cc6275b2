#include "mopr/optimizer.hpp"

#include "mopr/so3.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace mopr::opt {

namespace {

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::uint64_t s = base ^ (a * 0x9e3779b97f4a7c15ULL) ^ (b * 0xbf58476d1ce4e5b9ULL) ^ (c * 0x94d049bb133111ebULL);
  so3::splitmix64(s);
  return s;
}

// Icosphere directions: icosahedron subdivided until `count` is reached.
// 12 -> 42 -> 162 vertices.
std::vector<Vec3> icosphere_directions(int count) {
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v = {{-1, phi, 0}, {1, phi, 0},  {-1, -phi, 0}, {1, -phi, 0}, {0, -1, phi}, {0, 1, phi},
                         {0, -1, -phi}, {0, 1, -phi}, {phi, 0, -1},  {phi, 0, 1},  {-phi, 0, -1}, {-phi, 0, 1}};
  for (auto& p : v) p.normalize();
  std::vector<std::array<int, 3>> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                                       {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                                       {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                                       {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  while (int(v.size()) < count) {
    std::map<std::pair<int, int>, int> midpoints;
    auto midpoint = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto it = midpoints.find(key);
      if (it != midpoints.end()) return it->second;
      const int idx = int(v.size());
      v.push_back((0.5 * (v[std::size_t(a)] + v[std::size_t(b)])).normalized());
      midpoints.emplace(key, idx);
      return idx;
    };
    std::vector<std::array<int, 3>> nf;
    nf.reserve(f.size() * 4);
    for (const auto& t : f) {
      const int a = midpoint(t[0], t[1]), b = midpoint(t[1], t[2]), c = midpoint(t[2], t[0]);
      nf.push_back({t[0], a, c});
      nf.push_back({t[1], b, a});
      nf.push_back({t[2], c, b});
      nf.push_back({a, b, c});
    }
    f = std::move(nf);
  }
  v.resize(std::size_t(count));
  return v;
}

Rotation rotation_from_direction(const Vec3& dir) {
  const Vec3 up = std::abs(dir.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitX();
  const Vec3 b1 = up.cross(dir).normalized();
  const Vec3 b2 = dir.cross(b1);
  Rotation r;
  r.col(0) = b1;
  r.col(1) = b2;
  r.col(2) = dir;
  return r;
}

double belief_entropy_term(const std::vector<double>& row) {
  double s = 0.0;
  for (double b0 : row) {
    if (b0 > 1e-300) s += b0 * std::log(b0);
    const double b1 = 1.0 - b0;
    if (b1 > 1e-300) s += b1 * std::log(b1);
  }
  return s;
}

}  // namespace

OcclusionBeliefs init_beliefs(const loss::NeighborGraph& graph) {
  OcclusionBeliefs b;
  b.p0.resize(graph.neighbors.size());
  for (std::size_t i = 0; i < graph.neighbors.size(); ++i)
    b.p0[i].assign(graph.neighbors[i].size(), 0.5);
  return b;
}

OcclusionBeliefs update_beliefs(const OcclusionBeliefs& prev, const std::vector<Pose>& poses_prev,
                                loss::SceneEvalCache& cache) {
  const auto& graph = cache.graph();
  const auto& cfg = cache.config();
  const double gamma = cfg.gibbs.gamma_line2d;
  const int n = int(graph.neighbors.size());
  OcclusionBeliefs next = prev;

  // Line2D likelihood of object x with the pair state against y forced to k,
  // the other neighbours at their current argmax states.
  auto pair_likelihood = [&](int x, int y, int k) -> double {
    const auto& nbrs = graph.neighbors[std::size_t(x)];
    std::vector<int> u(nbrs.size(), 0);
    std::vector<const ImageU8*> masks(nbrs.size(), nullptr);
    for (std::size_t m = 0; m < nbrs.size(); ++m) {
      const int j = nbrs[m];
      u[m] = (j == y) ? k : (prev.p0[std::size_t(x)][m] >= 0.5 ? 0 : 1);
      masks[m] = &cache.get(j, poses_prev[std::size_t(j)]).mask;
    }
    const ImageU8 occl = sim::occlusion_mask_from_rasters(u, masks, cfg.line2d.spread);
    const auto& tpl = cache.get(x, poses_prev[std::size_t(x)]).tpl;
    double score = 0.0;
    try {
      score = loss::line2d_score(tpl, cache.scene_field(), occl.width > 0 ? &occl : nullptr, cfg.line2d.spread);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::no_visible_template) throw;
      score = 0.0;  // nothing visible under this hypothesis: neutral evidence
    }
    return loss::gibbs(-score, gamma);
  };

  for (int i = 0; i < n; ++i) {
    for (int j : graph.neighbors[std::size_t(i)]) {
      if (j <= i) continue;
      const int pos_ij = graph.position_of(i, j);
      const int pos_ji = graph.position_of(j, i);
      const double prior_i0 = prev.p0[std::size_t(i)][std::size_t(pos_ij)];
      const double prior_j1 = prior_i0;  // p(u_ji = 1) = p(u_ij = 0)

      // x = i, consistent state t = 0.
      const double li0 = pair_likelihood(i, j, 0) * prior_i0;
      const double li1 = pair_likelihood(i, j, 1) * (1.0 - prior_i0);
      // x = j, consistent state t = 1.
      const double lj1 = pair_likelihood(j, i, 1) * prior_j1;
      const double lj0 = pair_likelihood(j, i, 0) * (1.0 - prior_j1);

      double p0;
      if (li0 + li1 <= 0.0 || lj0 + lj1 <= 0.0) {
        p0 = prior_i0;  // degenerate likelihoods: keep the previous belief
      } else {
        p0 = 0.5 * (li0 / (li0 + li1) + lj1 / (lj0 + lj1));
      }
      next.p0[std::size_t(i)][std::size_t(pos_ij)] = p0;
      next.p0[std::size_t(j)][std::size_t(pos_ji)] = 1.0 - p0;
    }
  }
  return next;
}

SeedGrid build_seed_grid(loss::SceneEvalCache& cache, const MoprConfig& cfg, const std::vector<Pose>* init_poses) {
  const auto& obs = cache.observation();
  const auto& lib = cache.library();
  const int n = obs.object_count();
  SeedGrid grid;
  grid.per_object.resize(std::size_t(n));
  grid.seedable.assign(std::size_t(n), false);

  const std::vector<Vec3> dirs = icosphere_directions(cfg.viewpoint_count);

  for (int i = 0; i < n; ++i) {
    const auto& mask = obs.masks[std::size_t(i)];
    // Visible centroid and median depth anchor the grid translation.
    double cx = 0.0, cy = 0.0;
    std::size_t count = 0;
    std::vector<float> depths;
    for (int y = 0; y < mask.height; ++y)
      for (int x = 0; x < mask.width; ++x)
        if (mask.at(x, y)) {
          cx += x + 0.5;
          cy += y + 0.5;
          ++count;
          if (obs.depth.at(x, y) > 0.f) depths.push_back(obs.depth.at(x, y));
        }
    if (count == 0 || depths.empty()) continue;
    grid.seedable[std::size_t(i)] = true;
    cx /= double(count);
    cy /= double(count);
    std::nth_element(depths.begin(), depths.begin() + depths.size() / 2, depths.end());
    const double med = depths[depths.size() / 2];

    const auto& model = lib.at(obs.model_ids[std::size_t(i)]);
    const Vec3 anchor = backproject(obs.camera, cx, cy, med + 0.25 * model.l_max);

    const auto& nbrs = cache.graph().neighbors[std::size_t(i)];
    std::vector<ImageU8> nbr_dilated;
    nbr_dilated.reserve(nbrs.size());
    for (int j : nbrs) nbr_dilated.push_back(dilate(obs.masks[std::size_t(j)], cfg.terms.line2d.spread));

    auto& entries = grid.per_object[std::size_t(i)];
    for (const auto& dir : dirs) {
      const Rotation base = rotation_from_direction(dir);
      for (int a = 0; a < cfg.inplane_count; ++a) {
        const Rotation r = base * so3::exp_so3(Vec3(0, 0, 2.0 * M_PI * a / cfg.inplane_count));
        if (init_poses &&
            so3::geodesic_distance(r, (*init_poses)[std::size_t(i)].rotation) > cfg.init_rotation_gate)
          continue;
        SeedGrid::Entry e;
        e.pose.rotation = r;
        e.pose.translation = anchor - r * model.bounding_center;
        const loss::Line2DTemplate tpl =
            loss::line2d_template(model, e.pose, obs.camera, cfg.terms.line2d);
        if (tpl.features.empty()) continue;
        const std::vector<double> resp =
            loss::line2d_feature_responses(tpl, cache.scene_field(), cfg.terms.line2d.spread);
        e.responses.reserve(resp.size());
        e.covered.reserve(resp.size());
        for (std::size_t fidx = 0; fidx < tpl.features.size(); ++fidx) {
          e.responses.push_back(float(resp[fidx]));
          std::uint32_t bits = 0;
          for (std::size_t m = 0; m < nbr_dilated.size() && m < 32; ++m)
            if (nbr_dilated[m].at(tpl.features[fidx].x, tpl.features[fidx].y)) bits |= (1u << m);
          e.covered.push_back(bits);
        }
        entries.push_back(std::move(e));
      }
    }
  }
  return grid;
}

SeedingResult seed_candidates(const SeedGrid& grid, int object, const OcclusionBeliefs& beliefs,
                              const loss::NeighborGraph& graph, const MoprConfig& cfg) {
  const auto& entries = grid.per_object[std::size_t(object)];
  if (!grid.seedable[std::size_t(object)] || entries.empty())
    throw Error(ErrorCode::no_candidates, "seed_candidates: no usable grid poses for object");

  const auto& belief_row = beliefs.p0[std::size_t(object)];
  const double const_term = cfg.terms.gibbs.gamma_line2d == 0.0 ? 0.0 : belief_entropy_term(belief_row);
  (void)graph;

  std::vector<std::pair<double, int>> scored;
  scored.reserve(entries.size());
  for (std::size_t e = 0; e < entries.size(); ++e) {
    const auto& entry = entries[e];
    double num = 0.0, den = 0.0;
    for (std::size_t f = 0; f < entry.responses.size(); ++f) {
      double vis = 1.0;
      std::uint32_t bits = entry.covered[f];
      while (bits) {
        const int m = __builtin_ctz(bits);
        bits &= bits - 1;
        vis *= belief_row[std::size_t(m)];
      }
      num += vis * entry.responses[f];
      den += vis;
    }
    const double expected_score = den > 1e-9 ? 100.0 * num / den : 0.0;
    scored.emplace_back(cfg.terms.gibbs.gamma_line2d * expected_score + const_term, int(e));
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });

  SeedingResult out;
  const std::size_t k = std::min<std::size_t>(std::size_t(cfg.samples_per_object), scored.size());
  out.poses.reserve(k);
  out.scores.reserve(k);
  for (std::size_t idx = 0; idx < k; ++idx) {
    out.poses.push_back(entries[std::size_t(scored[idx].second)].pose);
    out.scores.push_back(scored[idx].first);
  }
  return out;
}

SoftElboResult soft_elbo(loss::SceneEvalCache& cache, const std::vector<Pose>& poses,
                         const std::vector<const bgmm::PcgMixture*>& bounds, const MoprConfig& cfg, int moved) {
  SoftElboResult res;
  const auto& cam = cache.observation().camera;

  for (std::size_t i = 0; i < poses.size(); ++i) {
    if (moved >= 0 && int(i) != moved) continue;
    const bgmm::PcgMixture* bound = i < bounds.size() ? bounds[i] : nullptr;
    if (!bound) continue;
    if (bgmm::rotation_mahalanobis(*bound, poses[i].rotation) > 3.0) {
      res.reject = Reject::rotation_bound;
      return res;
    }
    if (poses[i].translation.z() <= 0.0) {
      res.reject = Reject::behind_camera;
      return res;
    }
    const Vec3 nearest = bgmm::nearest_translation_in_bound(*bound, poses[i].translation);
    if (nearest.z() <= 0.0) {
      res.reject = Reject::behind_camera;
      return res;
    }
    const Vec2 p0 = project(cam, poses[i].translation);
    const Vec2 p1 = project(cam, nearest);
    if ((p0 - p1).norm() >= cfg.delta_thr) {
      res.reject = Reject::translation_pixel;
      return res;
    }
  }

  const loss::SceneTerms terms = loss::scene_cbd_terms(cache, poses, moved);
  for (const auto& pt : terms.pairs) {
    res.collision_max = std::max({res.collision_max, pt.collision_ij, pt.collision_ji});
    res.boundary_sum += pt.boundary;
  }
  if (res.collision_max > cfg.collision_threshold) {
    res.reject = Reject::collision_threshold;
    return res;
  }
  for (const auto& ot : terms.objects) {
    if (!ot.depth_valid) {
      res.reject = Reject::depth_unavailable;
      return res;
    }
    res.depth_value = std::max(res.depth_value, ot.depth);
    if (ot.depth > cfg.depth_threshold) {
      res.reject = Reject::depth_threshold;
      return res;
    }
  }
  res.value = -(terms.nll_collision + terms.nll_boundary + terms.nll_depth);
  res.reject = Reject::accepted;
  return res;
}

namespace {

const char* reject_name(Reject r) {
  switch (r) {
    case Reject::accepted: return "accepted";
    case Reject::rotation_bound: return "rotation_bound";
    case Reject::translation_pixel: return "translation_pixel";
    case Reject::collision_threshold: return "collision_threshold";
    case Reject::depth_threshold: return "depth_threshold";
    case Reject::depth_unavailable: return "depth_unavailable";
    case Reject::behind_camera: return "behind_camera";
  }
  return "unknown";
}

}  // namespace

RunResult run(const sim::ModelLibrary& lib, const sim::Observation& obs, const MoprConfig& cfg,
              const std::vector<Pose>* init_poses) {
  const int n = obs.object_count();
  if (n == 0) throw Error(ErrorCode::empty_scene, "run: observation has no objects");

  loss::SceneEvalCache cache(lib, obs, cfg.terms);
  const loss::NeighborGraph& graph = cache.graph();
  const PointGrid icp_grid(obs.cloud, cfg.icp_max_corr);
  const SeedGrid grid = build_seed_grid(cache, cfg, init_poses);

  RunResult result;
  result.pools.resize(std::size_t(n));
  std::vector<Pose> t_prime(std::size_t(n), Pose{});
  OcclusionBeliefs beliefs = init_beliefs(graph);

  for (int t1 = 1; t1 <= cfg.outer_iterations; ++t1) {
    if (t1 > 1) beliefs = update_beliefs(beliefs, t_prime, cache);

    // Seeding + constraint volumes for this outer iteration.
    std::vector<SeedingResult> seeds(std::size_t(n), SeedingResult{});
    for (int i = 0; i < n; ++i) {
      ObjectPool& pool = result.pools[std::size_t(i)];
      try {
        seeds[std::size_t(i)] = seed_candidates(grid, i, beliefs, graph, cfg);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::no_candidates) throw;
        pool.status = ObjectStatus::no_candidates;
        continue;
      }
      pool.seeds = seeds[std::size_t(i)].poses;
      pool.seed_scores = seeds[std::size_t(i)].scores;
      if (t1 == 1) t_prime[std::size_t(i)] = pool.seeds.front();
      const auto& model = lib.at(obs.model_ids[std::size_t(i)]);
      bgmm::BgmmConfig bc = cfg.mixture;
      bc.seed = derive_seed(cfg.seed, std::uint64_t(t1), std::uint64_t(i), 101);
      pool.seed_bound = bgmm::fit_pcg3(pool.seeds, model.sym, bc);
    }

    for (int i = 0; i < n; ++i) {
      ObjectPool& pool = result.pools[std::size_t(i)];
      if (pool.status == ObjectStatus::no_candidates) continue;
      const auto& model = lib.at(obs.model_ids[std::size_t(i)]);

      std::vector<const bgmm::PcgMixture*> bounds(std::size_t(n), nullptr);
      bounds[std::size_t(i)] = &pool.seed_bound;

      std::optional<Candidate> best;
      std::optional<bgmm::PcgMixture> proposal;
      std::vector<Candidate> round_accepted;

      for (int t2 = 1; t2 <= cfg.inner_iterations; ++t2) {
        cache.clear();
        std::vector<Pose> cand_poses;
        if (t2 == 1 || !proposal) {
          cand_poses = seeds[std::size_t(i)].poses;
        } else {
          cand_poses = bgmm::sample(*proposal, cfg.samples_per_object,
                                    derive_seed(cfg.seed, std::uint64_t(t1) * 100 + std::uint64_t(t2),
                                                std::uint64_t(i), 202));
        }

        round_accepted.clear();
        std::map<std::string, int> rejects;
        std::vector<Pose> scene = t_prime;
        for (const auto& raw : cand_poses) {
          Candidate c;
          c.pose = local_icp(raw, icp_grid, model.surface_samples, IcpParams{cfg.icp_max_corr, 30, 1e-6});
          scene[std::size_t(i)] = c.pose;
          const SoftElboResult se = soft_elbo(cache, scene, bounds, cfg, i);
          c.soft_elbo = se.value;
          c.collision = se.collision_max;
          c.boundary = se.boundary_sum;
          c.depth = se.depth_value;
          c.reject = se.reject;
          if (c.accepted())
            round_accepted.push_back(c);
          else
            ++rejects[reject_name(c.reject)];
        }
        // Elitism: the running best re-enters with its stored score, keeping
        // the per-iteration best non-decreasing.
        if (best) round_accepted.push_back(*best);

        if (!round_accepted.empty()) {
          std::stable_sort(round_accepted.begin(), round_accepted.end(),
                           [](const Candidate& a, const Candidate& b) { return a.soft_elbo > b.soft_elbo; });
          best = round_accepted.front();
          const std::size_t n_elite = std::size_t(
              std::ceil(cfg.elite_fraction * double(round_accepted.size())));
          if (t2 < cfg.inner_iterations) {
            std::vector<Pose> elite_poses;
            elite_poses.reserve(n_elite);
            for (std::size_t e = 0; e < n_elite; ++e) elite_poses.push_back(round_accepted[e].pose);
            bgmm::BgmmConfig bc = cfg.mixture;
            bc.seed = derive_seed(cfg.seed, std::uint64_t(t1) * 100 + std::uint64_t(t2), std::uint64_t(i), 303);
            proposal = bgmm::fit_pcg3(elite_poses, model.sym, bc);
          }
        }

        if (cfg.verbose) {
          nlohmann::json j;
          j["t1"] = t1;
          j["t2"] = t2;
          j["object"] = i;
          j["accepted"] = round_accepted.size();
          j["best_elbo"] = best ? best->soft_elbo : std::numeric_limits<double>::quiet_NaN();
          j["rejects"] = rejects;
          result.audit.push_back(j.dump());
        }
      }

      if (best) {
        pool.status = ObjectStatus::ok;
        pool.best = best->pose;
        pool.best_elbo = best->soft_elbo;
        t_prime[std::size_t(i)] = best->pose;
        if (t1 == cfg.outer_iterations) pool.candidates = round_accepted;
      } else {
        pool.status = ObjectStatus::low_confidence;
        pool.best = seeds[std::size_t(i)].poses.front();
        pool.best_elbo = -std::numeric_limits<double>::infinity();
        t_prime[std::size_t(i)] = pool.best;
        if (t1 == cfg.outer_iterations) {
          Candidate fallback;
          fallback.pose = pool.best;
          fallback.reject = Reject::accepted;
          pool.candidates = {fallback};
        }
      }
    }

    if (cfg.verbose) {
      nlohmann::json j;
      j["t1"] = t1;
      j["beliefs"] = nlohmann::json::array();
      for (int i = 0; i < n; ++i)
        for (std::size_t m = 0; m < graph.neighbors[std::size_t(i)].size(); ++m)
          j["beliefs"].push_back({{"i", i}, {"j", graph.neighbors[std::size_t(i)][m]},
                                  {"p0", beliefs.p0[std::size_t(i)][m]}});
      result.audit.push_back(j.dump());
    }
  }

  result.best_poses = t_prime;
  result.beliefs = beliefs;
  return result;
}

double adds_metric(const sim::ObjectModel& model, const Pose& pred, const Pose& gt) {
  const auto& samples = model.surface_samples;
  std::vector<Vec3> gt_pts;
  gt_pts.reserve(samples.size());
  for (const auto& p : samples) gt_pts.push_back(gt.apply(p));
  double sum = 0.0;
  for (const auto& p : samples) {
    const Vec3 q = pred.apply(p);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& g : gt_pts) best = std::min(best, (q - g).squaredNorm());
    sum += std::sqrt(best);
  }
  return sum / double(samples.size());
}

}  // namespace mopr::opt
