#include "mopr/scenesim.hpp"

#include "mopr/so3.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>

namespace mopr {

Vec2 project(const CameraModel& cam, const Vec3& t) {
  if (!(t.z() > 0.0)) throw Error(ErrorCode::behind_camera, "project: point at or behind the camera");
  return Vec2(cam.fx * t.x() / t.z() + cam.cx, cam.fy * t.y() / t.z() + cam.cy);
}

Vec3 backproject(const CameraModel& cam, double px, double py, double depth) {
  return Vec3((px - cam.cx) / cam.fx * depth, (py - cam.cy) / cam.fy * depth, depth);
}

}  // namespace mopr

namespace mopr::sim {

namespace {

constexpr double kZNear = 0.02;

std::uint64_t pixel_stream(std::uint64_t seed, std::uint64_t salt, std::uint64_t idx) {
  std::uint64_t s = seed ^ (salt * 0x9e3779b97f4a7c15ULL) ^ (idx * 0xbf58476d1ce4e5b9ULL);
  so3::splitmix64(s);
  return s;
}

double gaussian01(std::uint64_t& state) {
  // Box-Muller; the second value is discarded for simplicity.
  const double u1 = std::max(so3::uniform01(state), 1e-300);
  const double u2 = so3::uniform01(state);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

// Sutherland-Hodgman against the z = kZNear plane.
int clip_near(const Vec3* in, int n, Vec3* out) {
  int m = 0;
  for (int i = 0; i < n; ++i) {
    const Vec3& a = in[i];
    const Vec3& b = in[(i + 1) % n];
    const bool ain = a.z() >= kZNear, bin = b.z() >= kZNear;
    if (ain) out[m++] = a;
    if (ain != bin) {
      const double t = (kZNear - a.z()) / (b.z() - a.z());
      out[m++] = a + t * (b - a);
    }
  }
  return m;
}

void rasterize_triangle(const Vec3& a, const Vec3& b, const Vec3& c, const CameraModel& cam, const Rect& roi,
                        const Vec3& normal, SoloRender& out) {
  const Vec2 pa = project(cam, a), pb = project(cam, b), pc = project(cam, c);
  const double area = (pb.x() - pa.x()) * (pc.y() - pa.y()) - (pb.y() - pa.y()) * (pc.x() - pa.x());
  if (std::abs(area) < 1e-12) return;
  const double inv_area = 1.0 / area;

  int x0 = std::max(roi.x0, int(std::floor(std::min({pa.x(), pb.x(), pc.x()}) - 0.5)));
  int x1 = std::min(roi.x1, int(std::ceil(std::max({pa.x(), pb.x(), pc.x()}) + 0.5)));
  int y0 = std::max(roi.y0, int(std::floor(std::min({pa.y(), pb.y(), pc.y()}) - 0.5)));
  int y1 = std::min(roi.y1, int(std::ceil(std::max({pa.y(), pb.y(), pc.y()}) + 0.5)));

  const double iza = 1.0 / a.z(), izb = 1.0 / b.z(), izc = 1.0 / c.z();
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      double l0 = ((pb.x() - px) * (pc.y() - py) - (pb.y() - py) * (pc.x() - px)) * inv_area;
      double l1 = ((pc.x() - px) * (pa.y() - py) - (pc.y() - py) * (pa.x() - px)) * inv_area;
      double l2 = 1.0 - l0 - l1;
      if (l0 < 0.0 || l1 < 0.0 || l2 < 0.0) continue;
      const double inv_z = l0 * iza + l1 * izb + l2 * izc;
      if (inv_z <= 0.0) continue;
      const float z = float(1.0 / inv_z);
      float& zbuf = out.depth.at(x - out.roi.x0, y - out.roi.y0);
      if (zbuf == 0.f || z < zbuf) {
        zbuf = z;
        out.nx.at(x - out.roi.x0, y - out.roi.y0) = float(normal.x());
        out.ny.at(x - out.roi.x0, y - out.roi.y0) = float(normal.y());
        out.nz.at(x - out.roi.x0, y - out.roi.y0) = float(normal.z());
      }
    }
}

float shade(float nz) { return 0.15f + 0.85f * std::min(1.f, std::abs(nz)); }

ImageU8 mask_from_instance(const ImageI32& instance, int idx) {
  ImageU8 m(instance.width, instance.height, 0);
  for (std::size_t i = 0; i < instance.data.size(); ++i) m.data[i] = instance.data[i] == idx ? 1 : 0;
  return m;
}

// Shared boundary classification: masks + depth in, per-object rasters out.
std::vector<ObjectBoundaries> extract_from(const std::vector<ImageU8>& masks, const ImageF& depth,
                                           const BoundaryParams& bp, const std::vector<int>& subset = {}) {
  const int n = int(masks.size());
  const int w = depth.width, h = depth.height;
  std::vector<ObjectBoundaries> out(n);
  std::vector<ImageU8> contours(n);
  for (int i = 0; i < n; ++i) contours[i] = mask_contour(masks[i]);
  std::vector<char> wanted(std::size_t(n), subset.empty() ? 1 : 0);
  for (int i : subset)
    if (i >= 0 && i < n) wanted[std::size_t(i)] = 1;

  auto local_median_depth = [&](const ImageU8& mask, int cx, int cy, int radius) -> double {
    std::vector<float> vals;
    for (int y = std::max(0, cy - radius); y <= std::min(h - 1, cy + radius); ++y)
      for (int x = std::max(0, cx - radius); x <= std::min(w - 1, cx + radius); ++x)
        if (mask.at(x, y) && depth.at(x, y) > 0.f) vals.push_back(depth.at(x, y));
    if (vals.empty()) return 0.0;
    std::nth_element(vals.begin(), vals.begin() + vals.size() / 2, vals.end());
    return vals[vals.size() / 2];
  };

  const int mw = bp.overlap_radius + 1;  // median window radius
  for (int i = 0; i < n; ++i) {
    if (!wanted[std::size_t(i)]) continue;
    out[i].contour = contours[i];
    out[i].o_all = ImageU8(w, h, 0);
    out[i].e_all = ImageU8(w, h, 0);
    std::vector<ImageU8> o_per(n);

    const Rect bb = nonzero_bbox(contours[i]);
    for (int y = bb.y0; y < bb.y1; ++y)
      for (int x = bb.x0; x < bb.x1; ++x) {
        if (!contours[i].at(x, y)) continue;
        for (int j = 0; j < n; ++j) {
          if (j == i) continue;
          bool adjacent = false;
          for (int dy = -bp.overlap_radius; dy <= bp.overlap_radius && !adjacent; ++dy)
            for (int dx = -bp.overlap_radius; dx <= bp.overlap_radius && !adjacent; ++dx) {
              const int qx = x + dx, qy = y + dy;
              if (qx >= 0 && qx < w && qy >= 0 && qy < h && masks[j].at(qx, qy)) adjacent = true;
            }
          if (!adjacent) continue;
          const double mi = local_median_depth(masks[i], x, y, mw);
          const double mj = local_median_depth(masks[j], x, y, mw);
          if (mi <= 0.0 || mj <= 0.0) continue;
          if (std::abs(mi - mj) <= bp.depth_contact_eps) continue;  // side-by-side, no occlusion
          if (o_per[j].width == 0) o_per[j] = ImageU8(w, h, 0);
          o_per[j].at(x, y) = 1;
          out[i].o_all.at(x, y) = 1;
        }
      }

    // Extend each contact along the contour by BFS.
    for (int j = 0; j < n; ++j) {
      if (o_per[j].width == 0) continue;
      ContactBoundary cb;
      cb.neighbor = j;
      cb.o = o_per[j];
      cb.e = o_per[j];
      ImageI32 dist(w, h, -1);
      std::deque<std::pair<int, int>> queue;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          if (o_per[j].at(x, y)) {
            dist.at(x, y) = 0;
            queue.emplace_back(x, y);
          }
      while (!queue.empty()) {
        auto [x, y] = queue.front();
        queue.pop_front();
        const int d = dist.at(x, y);
        if (d >= bp.extension_threshold) continue;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int qx = x + dx, qy = y + dy;
            if (qx < 0 || qx >= w || qy < 0 || qy >= h) continue;
            if (!contours[i].at(qx, qy) || dist.at(qx, qy) >= 0) continue;
            dist.at(qx, qy) = d + 1;
            cb.e.at(qx, qy) = 1;
            out[i].e_all.at(qx, qy) = 1;
            queue.emplace_back(qx, qy);
          }
      }
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          if (o_per[j].at(x, y)) out[i].e_all.at(x, y) = 1;
      out[i].contacts.push_back(std::move(cb));
    }
  }
  return out;
}

}  // namespace

void ObjectModel::finalize(int sample_count, std::uint64_t seed) {
  if (mesh.empty()) throw Error(ErrorCode::degenerate_mesh, "ObjectModel: empty mesh");
  surface_samples = sample_surface(mesh, sample_count, seed);
  if (surface_samples.empty()) throw Error(ErrorCode::degenerate_mesh, "ObjectModel: zero-area mesh");
  Vec3 lo = mesh.vertices.front(), hi = lo;
  for (const auto& v : mesh.vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  const Vec3 center = 0.5 * (lo + hi);
  double r = 0.0;
  for (const auto& v : mesh.vertices) r = std::max(r, (v - center).norm());
  for (const auto& p : surface_samples) r = std::max(r, (p - center).norm());
  bounding_center = center;
  l_max = 2.0 * r;
  double d = 0.0;
  for (std::size_t a = 0; a < surface_samples.size(); ++a)
    for (std::size_t b = a + 1; b < surface_samples.size(); ++b)
      d = std::max(d, (surface_samples[a] - surface_samples[b]).squaredNorm());
  diameter = std::sqrt(d);
}

const ObjectModel& ModelLibrary::at(const std::string& id) const {
  for (const auto& m : models)
    if (m.id == id) return m;
  throw Error(ErrorCode::invalid_argument, "ModelLibrary: unknown model id '" + id + "'");
}

int ModelLibrary::index_of(const std::string& id) const {
  for (std::size_t i = 0; i < models.size(); ++i)
    if (models[i].id == id) return int(i);
  return -1;
}

ModelLibrary ModelLibrary::builtin() {
  ModelLibrary lib;
  auto finalize_and_add = [&](ObjectModel m) {
    m.finalize();
    lib.models.push_back(std::move(m));
  };

  {
    ObjectModel m;
    m.id = "box";
    const Vec3 h(0.035, 0.025, 0.015);
    m.mesh = make_box_mesh(Vec3::Zero(), h);
    m.solids = {Solid::make_box(Vec3::Zero(), h)};
    m.sym.elements = {Rotation::Identity(), so3::exp_so3(Vec3(0, 0, M_PI)), so3::exp_so3(Vec3(M_PI, 0, 0)),
                      so3::exp_so3(Vec3(0, M_PI, 0))};
    finalize_and_add(std::move(m));
  }
  {
    ObjectModel m;
    m.id = "lbracket";
    const Vec3 c1(0.025, 0.0, 0.0), h1(0.04, 0.015, 0.01);
    const Vec3 c2(0.0, 0.03, 0.0), h2(0.015, 0.03, 0.01);
    m.mesh = make_box_mesh(c1, h1);
    append_mesh(m.mesh, make_box_mesh(c2, h2));
    m.solids = {Solid::make_box(c1, h1), Solid::make_box(c2, h2)};
    m.sym = SymmetryGroup::trivial();
    finalize_and_add(std::move(m));
  }
  {
    ObjectModel m;
    m.id = "cyl";
    m.mesh = make_cylinder_mesh(Vec3(0, 0, -0.03), 0.02, 0.06, 24);
    m.solids = {Solid::make_cylinder(Vec3(0, 0, -0.03), 0.02, 0.06)};
    m.sym = so3::discretize_axis_symmetry(Vec3::UnitZ(), 10.0 * M_PI / 180.0);
    finalize_and_add(std::move(m));
  }
  {
    ObjectModel m;
    m.id = "tshape";
    const Vec3 c1(0.0, 0.0, 0.0), h1(0.045, 0.015, 0.01);
    const Vec3 c2(0.0, -0.035, 0.0), h2(0.015, 0.035, 0.01);
    m.mesh = make_box_mesh(c1, h1);
    append_mesh(m.mesh, make_box_mesh(c2, h2));
    m.solids = {Solid::make_box(c1, h1), Solid::make_box(c2, h2)};
    m.sym.elements = {Rotation::Identity(), so3::exp_so3(Vec3(0, M_PI, 0))};
    finalize_and_add(std::move(m));
  }
  {
    ObjectModel m;
    m.id = "uchannel";
    const Vec3 cb(0.0, 0.0, 0.0), hb(0.04, 0.015, 0.01);
    const Vec3 cw1(0.03, 0.04, 0.0), cw2(-0.03, 0.04, 0.0), hw(0.01, 0.025, 0.01);
    m.mesh = make_box_mesh(cb, hb);
    append_mesh(m.mesh, make_box_mesh(cw1, hw));
    append_mesh(m.mesh, make_box_mesh(cw2, hw));
    m.solids = {Solid::make_box(cb, hb), Solid::make_box(cw1, hw), Solid::make_box(cw2, hw)};
    m.sym.elements = {Rotation::Identity(), so3::exp_so3(Vec3(0, M_PI, 0))};
    finalize_and_add(std::move(m));
  }
  return lib;
}

SoloRender render_object(const ObjectModel& model, const Pose& pose, const CameraModel& cam) {
  SoloRender out;
  // Camera-frame vertices, then a conservative screen ROI.
  std::vector<Vec3> verts(model.mesh.vertices.size());
  for (std::size_t i = 0; i < verts.size(); ++i) verts[i] = pose.apply(model.mesh.vertices[i]);

  double minx = 1e30, miny = 1e30, maxx = -1e30, maxy = -1e30;
  bool any = false;
  for (const auto& v : verts) {
    if (v.z() < kZNear) continue;
    const Vec2 p = project(cam, v);
    minx = std::min(minx, p.x());
    maxx = std::max(maxx, p.x());
    miny = std::min(miny, p.y());
    maxy = std::max(maxy, p.y());
    any = true;
  }
  if (!any) return out;
  Rect roi{int(std::floor(minx)) - 1, int(std::floor(miny)) - 1, int(std::ceil(maxx)) + 2, int(std::ceil(maxy)) + 2};
  roi.x0 = std::max(0, roi.x0);
  roi.y0 = std::max(0, roi.y0);
  roi.x1 = std::min(cam.width, roi.x1);
  roi.y1 = std::min(cam.height, roi.y1);
  if (roi.empty()) return out;

  out.roi = roi;
  out.depth = ImageF(roi.width(), roi.height(), 0.f);
  out.nx = ImageF(roi.width(), roi.height(), 0.f);
  out.ny = ImageF(roi.width(), roi.height(), 0.f);
  out.nz = ImageF(roi.width(), roi.height(), 0.f);

  for (const auto& t : model.mesh.triangles) {
    Vec3 tri[3] = {verts[t[0]], verts[t[1]], verts[t[2]]};
    Vec3 clipped[8];
    const int m = clip_near(tri, 3, clipped);
    if (m < 3) continue;
    Vec3 n = (tri[1] - tri[0]).cross(tri[2] - tri[0]);
    const double len = n.norm();
    if (len < 1e-18) continue;
    n /= len;
    if (n.z() > 0.0) n = -n;  // face the camera
    for (int k = 1; k + 1 < m; ++k) rasterize_triangle(clipped[0], clipped[k], clipped[k + 1], cam, roi, n, out);
  }
  return out;
}

void composite(const std::vector<SoloRender>& solos, const CameraModel& cam, ImageF& depth, ImageI32& instance,
               ImageF* intensity) {
  std::vector<const SoloRender*> ptrs;
  ptrs.reserve(solos.size());
  for (const auto& s : solos) ptrs.push_back(&s);
  composite(ptrs, cam, depth, instance, intensity);
}

void composite(const std::vector<const SoloRender*>& solos, const CameraModel& cam, ImageF& depth,
               ImageI32& instance, ImageF* intensity) {
  depth = ImageF(cam.width, cam.height, 0.f);
  instance = ImageI32(cam.width, cam.height, -1);
  if (intensity) *intensity = ImageF(cam.width, cam.height, 0.f);
  for (std::size_t i = 0; i < solos.size(); ++i) {
    const SoloRender& s = *solos[i];
    if (s.roi.empty()) continue;
    for (int y = s.roi.y0; y < s.roi.y1; ++y)
      for (int x = s.roi.x0; x < s.roi.x1; ++x) {
        const float z = s.depth.at(x - s.roi.x0, y - s.roi.y0);
        if (z <= 0.f) continue;
        float& zb = depth.at(x, y);
        if (zb == 0.f || z < zb) {
          zb = z;
          instance.at(x, y) = int(i);
          if (intensity) intensity->at(x, y) = shade(s.nz.at(x - s.roi.x0, y - s.roi.y0));
        }
      }
  }
}

Observation render_depth(const ModelLibrary& lib, const SceneSpec& scene, const BoundaryParams& bp) {
  if (scene.objects.empty()) throw Error(ErrorCode::empty_scene, "render_depth: scene has no objects");
  Observation obs;
  obs.camera = scene.camera;
  std::vector<SoloRender> solos;
  solos.reserve(scene.objects.size());
  for (const auto& pl : scene.objects) {
    obs.model_ids.push_back(pl.model_id);
    obs.gt_poses.push_back(pl.pose);
    solos.push_back(render_object(lib.at(pl.model_id), pl.pose, scene.camera));
  }
  composite(solos, scene.camera, obs.depth, obs.instance, &obs.intensity);
  for (int i = 0; i < int(scene.objects.size()); ++i) obs.masks.push_back(mask_from_instance(obs.instance, i));
  for (int y = 0; y < obs.depth.height; ++y)
    for (int x = 0; x < obs.depth.width; ++x)
      if (obs.depth.at(x, y) > 0.f) {
        obs.cloud.push_back(backproject(scene.camera, x + 0.5, y + 0.5, obs.depth.at(x, y)));
        obs.cloud_pixels.emplace_back(x, y);
      }
  obs.boundaries = extract_from(obs.masks, obs.depth, bp);
  return obs;
}

std::vector<ObjectBoundaries> extract_boundaries(const Observation& obs, const BoundaryParams& bp) {
  return extract_from(obs.masks, obs.depth, bp);
}

std::vector<ObjectBoundaries> extract_boundaries_from(const std::vector<ImageU8>& masks, const ImageF& depth,
                                                      const BoundaryParams& bp, const std::vector<int>& subset) {
  return extract_from(masks, depth, bp, subset);
}

std::vector<ObjectBoundaries> render_edges(const ModelLibrary& lib, const std::vector<std::string>& model_ids,
                                           const std::vector<Pose>& poses, const CameraModel& cam,
                                           const BoundaryParams& bp) {
  std::vector<SoloRender> solos;
  solos.reserve(model_ids.size());
  for (std::size_t i = 0; i < model_ids.size(); ++i) solos.push_back(render_object(lib.at(model_ids[i]), poses[i], cam));
  ImageF depth;
  ImageI32 instance;
  composite(solos, cam, depth, instance, nullptr);
  std::vector<ImageU8> masks;
  for (int i = 0; i < int(model_ids.size()); ++i) masks.push_back(mask_from_instance(instance, i));
  return extract_from(masks, depth, bp);
}

ImageU8 occlusion_mask_from_rasters(const std::vector<int>& u_i, const std::vector<const ImageU8*>& neighbor_masks,
                                    int spread) {
  ImageU8 out;
  for (std::size_t k = 0; k < u_i.size(); ++k) {
    if (u_i[k] != 1) continue;
    const ImageU8 d = dilate(*neighbor_masks[k], spread);
    if (out.width == 0) {
      out = d;
    } else {
      for (std::size_t p = 0; p < out.data.size(); ++p) out.data[p] |= d.data[p];
    }
  }
  if (out.width == 0 && !neighbor_masks.empty())
    out = ImageU8(neighbor_masks[0]->width, neighbor_masks[0]->height, 0);
  return out;
}

ImageU8 occlusion_mask(int i, const std::vector<int>& u_i, const std::vector<int>& neighbor_ids,
                       const ModelLibrary& lib, const std::vector<std::string>& model_ids,
                       const std::vector<Pose>& poses, const CameraModel& cam, int spread) {
  (void)i;
  std::vector<ImageU8> rendered;
  rendered.reserve(neighbor_ids.size());
  std::vector<const ImageU8*> ptrs;
  for (int j : neighbor_ids) {
    const SoloRender s = render_object(lib.at(model_ids[j]), poses[j], cam);
    ImageU8 m(cam.width, cam.height, 0);
    if (!s.roi.empty())
      for (int y = s.roi.y0; y < s.roi.y1; ++y)
        for (int x = s.roi.x0; x < s.roi.x1; ++x)
          if (s.depth.at(x - s.roi.x0, y - s.roi.y0) > 0.f) m.at(x, y) = 1;
    rendered.push_back(std::move(m));
  }
  for (const auto& m : rendered) ptrs.push_back(&m);
  ImageU8 out = occlusion_mask_from_rasters(u_i, ptrs, spread);
  if (out.width == 0) out = ImageU8(cam.width, cam.height, 0);
  return out;
}

Observation degrade(const Observation& obs, const DegradeParams& dp, const BoundaryParams& bp) {
  Observation out = obs;
  const int w = obs.depth.width, h = obs.depth.height;

  // Depth dropout and additive noise, counter-based so results do not depend
  // on traversal order.
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t idx = std::size_t(y) * w + x;
      float& d = out.depth.at(x, y);
      if (d <= 0.f) continue;
      std::uint64_t s = pixel_stream(dp.seed, 1, idx);
      if (dp.dropout_rate > 0.0 && so3::uniform01(s) < dp.dropout_rate) {
        d = 0.f;
        continue;
      }
      if (dp.depth_noise_sigma > 0.0) {
        std::uint64_t sn = pixel_stream(dp.seed, 2, idx);
        d = std::max(0.001f, d + float(dp.depth_noise_sigma * gaussian01(sn)));
      }
    }

  // Mask boundary jitter along the outward contour normal.
  if (dp.boundary_jitter > 0) {
    for (std::size_t i = 0; i < obs.masks.size(); ++i) {
      const ImageU8& src = obs.masks[i];
      const ImageU8 contour = mask_contour(src);
      ImageU8 dst = src;
      const Rect bb = nonzero_bbox(contour);
      for (int y = bb.y0; y < bb.y1; ++y)
        for (int x = bb.x0; x < bb.x1; ++x) {
          if (!contour.at(x, y)) continue;
          int nx = 0, ny = 0;
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              const int qx = x + dx, qy = y + dy;
              if (qx < 0 || qx >= w || qy < 0 || qy >= h || !src.at(qx, qy)) {
                nx += dx;
                ny += dy;
              }
            }
          if (nx == 0 && ny == 0) continue;
          const int sx = (nx > 0) - (nx < 0), sy = (ny > 0) - (ny < 0);
          std::uint64_t s = pixel_stream(dp.seed, 3 + i, std::size_t(y) * w + x);
          const int delta =
              int(std::floor(so3::uniform01(s) * (2 * dp.boundary_jitter + 1))) - dp.boundary_jitter;
          if (delta > 0) {
            for (int k = 1; k <= delta; ++k) {
              const int qx = x + k * sx, qy = y + k * sy;
              if (qx >= 0 && qx < w && qy >= 0 && qy < h) dst.at(qx, qy) = 1;
            }
          } else if (delta < 0) {
            for (int k = 0; k < -delta; ++k) {
              const int qx = x - k * sx, qy = y - k * sy;
              if (qx >= 0 && qx < w && qy >= 0 && qy < h) dst.at(qx, qy) = 0;
            }
          }
        }
      out.masks[i] = std::move(dst);
    }
  }

  out.cloud.clear();
  out.cloud_pixels.clear();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (out.depth.at(x, y) > 0.f) {
        out.cloud.push_back(backproject(obs.camera, x + 0.5, y + 0.5, out.depth.at(x, y)));
        out.cloud_pixels.emplace_back(x, y);
      }
  out.boundaries = extract_from(out.masks, out.depth, bp);
  return out;
}

std::size_t OccupancyGrid::count() const {
  std::size_t n = 0;
  for (auto v : occ) n += v;
  return n;
}

OccupancyGrid voxelize(const ObjectModel& model, const Pose& pose, double voxel_size) {
  if (!(voxel_size > 0.0)) throw Error(ErrorCode::invalid_argument, "voxelize: voxel_size must be > 0");
  if (model.mesh.empty() || model.surface_samples.empty())
    throw Error(ErrorCode::degenerate_mesh, "voxelize: model has no geometry");

  Vec3 lo(1e30, 1e30, 1e30), hi = -lo;
  for (const auto& v : model.mesh.vertices) {
    const Vec3 p = pose.apply(v);
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  lo -= Vec3::Constant(voxel_size);
  hi += Vec3::Constant(voxel_size);

  OccupancyGrid g;
  g.voxel = voxel_size;
  g.origin = Vec3(std::floor(lo.x() / voxel_size) * voxel_size, std::floor(lo.y() / voxel_size) * voxel_size,
                  std::floor(lo.z() / voxel_size) * voxel_size);
  g.nx = int(std::ceil((hi.x() - g.origin.x()) / voxel_size));
  g.ny = int(std::ceil((hi.y() - g.origin.y()) / voxel_size));
  g.nz = int(std::ceil((hi.z() - g.origin.z()) / voxel_size));
  if (std::size_t(g.nx) * g.ny * g.nz > (std::size_t(1) << 27))
    throw Error(ErrorCode::invalid_argument, "voxelize: grid too large");
  g.occ.assign(std::size_t(g.nx) * g.ny * g.nz, 0);

  const Rotation rt = pose.rotation.transpose();
  for (int iz = 0; iz < g.nz; ++iz)
    for (int iy = 0; iy < g.ny; ++iy)
      for (int ix = 0; ix < g.nx; ++ix) {
        const Vec3 center = g.origin + voxel_size * Vec3(ix + 0.5, iy + 0.5, iz + 0.5);
        const Vec3 pm = rt * (center - pose.translation);
        bool inside = false;
        if (!model.solids.empty()) {
          for (const auto& s : model.solids)
            if (s.contains(pm)) {
              inside = true;
              break;
            }
        } else {
          inside = mesh_contains(model.mesh, pm);
        }
        if (inside) g.set(ix, iy, iz, true);
      }

  // Thin shell: voxels whose center lies within voxel/2 of a surface sample.
  const double r2 = 0.25 * voxel_size * voxel_size;
  for (const auto& sp : model.surface_samples) {
    const Vec3 p = pose.apply(sp);
    const int cx = int(std::floor((p.x() - g.origin.x()) / voxel_size));
    const int cy = int(std::floor((p.y() - g.origin.y()) / voxel_size));
    const int cz = int(std::floor((p.z() - g.origin.z()) / voxel_size));
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int ix = cx + dx, iy = cy + dy, iz = cz + dz;
          if (ix < 0 || ix >= g.nx || iy < 0 || iy >= g.ny || iz < 0 || iz >= g.nz) continue;
          const Vec3 center = g.origin + voxel_size * Vec3(ix + 0.5, iy + 0.5, iz + 0.5);
          if ((center - p).squaredNorm() <= r2) g.set(ix, iy, iz, true);
        }
  }
  return g;
}

namespace {

bool sphere_in_frustum(const CameraModel& cam, const Vec3& center, double radius) {
  if (center.z() - radius < 2.0 * kZNear) return false;
  const double zc = center.z() - radius;
  const double margin = radius * cam.fx / zc;
  const Vec2 p = project(cam, center);
  return p.x() - margin >= 0.5 && p.x() + margin <= cam.width - 0.5 && p.y() - margin >= 0.5 &&
         p.y() + margin <= cam.height - 0.5;
}

}  // namespace

std::pair<std::size_t, std::size_t> grid_overlap(const OccupancyGrid& gi, const OccupancyGrid& gj) {
  // Lattices are snapped to multiples of the voxel pitch, so the offset
  // between the two grids is an integer.
  const double inv = 1.0 / gi.voxel;
  const int ox = int(std::llround((gj.origin.x() - gi.origin.x()) * inv));
  const int oy = int(std::llround((gj.origin.y() - gi.origin.y()) * inv));
  const int oz = int(std::llround((gj.origin.z() - gi.origin.z()) * inv));
  std::size_t ni = 0, overlap = 0;
  for (int iz = 0; iz < gi.nz; ++iz)
    for (int iy = 0; iy < gi.ny; ++iy)
      for (int ix = 0; ix < gi.nx; ++ix) {
        if (!gi.at(ix, iy, iz)) continue;
        ++ni;
        const int jx = ix - ox, jy = iy - oy, jz = iz - oz;
        if (jx >= 0 && jx < gj.nx && jy >= 0 && jy < gj.ny && jz >= 0 && jz < gj.nz && gj.at(jx, jy, jz)) ++overlap;
      }
  return {overlap, ni};
}

SceneSpec make_planted_scene(const ModelLibrary& lib, const PlantedSceneParams& params, std::uint64_t seed) {
  if (params.n_objects < 1) throw Error(ErrorCode::invalid_argument, "make_planted_scene: n_objects must be >= 1");
  SceneSpec scene;
  scene.camera = params.camera;
  scene.bin = params.bin;
  scene.seed = seed;

  std::uint64_t rng = seed * 0x9e3779b97f4a7c15ULL + 1;
  std::vector<OccupancyGrid> accepted;
  int rejections = 0;
  while (int(scene.objects.size()) < params.n_objects) {
    const auto& model = lib.models[so3::splitmix64(rng) % lib.models.size()];
    Pose pose;
    pose.rotation = so3::random_rotation(rng);
    pose.translation =
        Vec3(params.bin.min.x() + so3::uniform01(rng) * (params.bin.max.x() - params.bin.min.x()),
             params.bin.min.y() + so3::uniform01(rng) * (params.bin.max.y() - params.bin.min.y()),
             params.bin.min.z() + so3::uniform01(rng) * (params.bin.max.z() - params.bin.min.z()));

    Vec3 lo = model.mesh.vertices.front(), hi = lo;
    for (const auto& v : model.mesh.vertices) {
      lo = lo.cwiseMin(v);
      hi = hi.cwiseMax(v);
    }
    const Vec3 center = pose.apply(0.5 * (lo + hi));
    bool ok = sphere_in_frustum(params.camera, center, 0.5 * model.l_max);
    OccupancyGrid g;
    if (ok) {
      g = voxelize(model, pose, params.collision_voxel);
      for (const auto& other : accepted)
        if (grid_overlap(g, other).first > 0) {
          ok = false;
          break;
        }
    }
    if (!ok) {
      if (++rejections >= params.max_rejections)
        throw Error(ErrorCode::placement_failure, "make_planted_scene: rejection budget exhausted");
      continue;
    }
    accepted.push_back(std::move(g));
    scene.objects.push_back(Placement{model.id, pose});
  }
  return scene;
}

}  // namespace mopr::sim
