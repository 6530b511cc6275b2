#include "mopr/metric.hpp"

#include "mopr/io.hpp"
#include "mopr/so3.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace mopr::metric {

namespace {
constexpr int kScales[3] = {128, 64, 32};
}

int crop_size(double l_max, int render_width) {
  if (!(l_max > 0.0)) throw Error(ErrorCode::invalid_argument, "crop_size: l_max must be > 0");
  const double reference = 800.0 * l_max + 50.0;
  const double scaled = reference * double(render_width) / 1280.0;
  const int s = 2 * int(std::lround(scaled / 2.0));
  return std::max(s, 2);
}

double normalize_cd(double e, int crop_s) { return e * 128.0 / double(crop_s); }

double weight(double x, const WrConfig& cfg) {
  if (x < 0.0) return 0.0;
  if (x > cfg.x_limit) return 1.0;
  const double raw = cfg.x2 * std::exp(cfg.x1 * (x - cfg.x0)) - cfg.x3;
  return cfg.clamp_weight ? std::clamp(raw, 0.0, 1.0) : raw;
}

double wr_infonce(const std::vector<RankingSample>& samples, int crop_s, const WrConfig& cfg, int* skipped_terms) {
  if (samples.empty()) throw Error(ErrorCode::empty_input, "wr_infonce: no samples");
  const std::size_t n = samples.size();
  std::vector<double> ne(n), ex(n);
  for (std::size_t i = 0; i < n; ++i) {
    ne[i] = normalize_cd(samples[i].e, crop_s);
    ex[i] = std::exp(samples[i].s / cfg.tau);
  }
  double loss = 0.0;
  int skipped = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(ne[i] < cfg.e_tilde)) continue;
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j) denom += weight(ne[j] - ne[i], cfg) * ex[j];
    if (denom <= 0.0) {
      ++skipped;
      continue;
    }
    loss -= std::log(ex[i] / denom);
  }
  if (skipped_terms) *skipped_terms = skipped;
  return loss;
}

std::vector<double> wr_infonce_grad(const std::vector<RankingSample>& samples, int crop_s, const WrConfig& cfg) {
  if (samples.empty()) throw Error(ErrorCode::empty_input, "wr_infonce_grad: no samples");
  const std::size_t n = samples.size();
  std::vector<double> ne(n), ex(n), grad(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    ne[i] = normalize_cd(samples[i].e, crop_s);
    ex[i] = std::exp(samples[i].s / cfg.tau);
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!(ne[i] < cfg.e_tilde)) continue;
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j) denom += weight(ne[j] - ne[i], cfg) * ex[j];
    if (denom <= 0.0) continue;
    grad[i] -= 1.0 / cfg.tau;
    for (std::size_t m = 0; m < n; ++m) grad[m] += weight(ne[m] - ne[i], cfg) * ex[m] / (denom * cfg.tau);
  }
  return grad;
}

std::vector<Pose> perturb_pose(const Pose& t0, const sim::ObjectModel& model, const CameraModel& cam,
                               const CropSpec& crop, int k_prime, std::uint64_t seed, double sigma_rot_max) {
  if (k_prime < 1) throw Error(ErrorCode::invalid_argument, "perturb_pose: k_prime must be >= 1");
  std::uint64_t rng = seed * 0x9e3779b97f4a7c15ULL + 17;
  auto gauss = [&rng]() {
    const double u1 = std::max(so3::uniform01(rng), 1e-300);
    const double u2 = so3::uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  };
  const double world_extent = double(crop.s) * t0.translation.z() / cam.fx;

  auto center_in_crop = [&](const Pose& p) {
    const Vec3 c = p.apply(model.bounding_center);
    if (c.z() <= 0.0) return false;
    const Vec2 px = project(cam, c);
    return px.x() >= crop.x0 + 1 && px.x() <= crop.x0 + crop.s - 1 && px.y() >= crop.y0 + 1 &&
           px.y() <= crop.y0 + crop.s - 1;
  };

  std::vector<Pose> out;
  out.reserve(std::size_t(k_prime));
  for (int i = 0; i < k_prime; ++i) {
    Pose candidate = t0;
    bool ok = false;
    for (int attempt = 0; attempt < 128 && !ok; ++attempt) {
      // Magnitude ramp: many small draws, a few near sigma_rot_max, so the
      // group spans both sides of the ranking-indicator threshold.
      const double u = so3::uniform01(rng);
      const double sr = sigma_rot_max * u * u;
      const double st = world_extent / 6.0 * u * u;
      Pose p = t0;
      p.rotation = so3::exp_at(t0.rotation, Vec3(sr * gauss(), sr * gauss(), sr * gauss()));
      p.translation = t0.translation + Vec3(st * gauss(), st * gauss(), st * gauss());
      if (center_in_crop(p)) {
        candidate = p;
        ok = true;
      }
    }
    out.push_back(candidate);  // falls back to t0 when rejection fails
  }
  return out;
}

namespace {

// Essence channel: shading for rendered stacks, gray for observed ones.
std::vector<float> essence_channel(const InputStack& in) {
  const int n = InputStack::kSize * InputStack::kSize;
  std::vector<float> e(std::size_t(n), 0.f);
  if (in.channels == 4) {
    for (int p = 0; p < n; ++p) {
      const float depth = in.data[std::size_t(p) * 4 + 0];
      const float nz = in.data[std::size_t(p) * 4 + 3];
      e[std::size_t(p)] = depth > 0.f ? 0.15f + 0.85f * std::min(1.f, std::abs(nz)) : 0.f;
    }
  } else if (in.channels == 2) {
    for (int p = 0; p < n; ++p) e[std::size_t(p)] = in.data[std::size_t(p) * 2];
  } else {
    throw Error(ErrorCode::provider_shape_mismatch, "provider: expected a 4- or 2-channel 128x128 stack");
  }
  return e;
}

struct BaseMaps {
  // Per scale: kBaseChannels-vector per pixel.
  std::array<std::vector<float>, 3> maps;
};

BaseMaps base_features(const InputStack& in) {
  const std::vector<float> essence = essence_channel(in);
  BaseMaps out;
  for (int s = 0; s < 3; ++s) {
    const int size = kScales[s];
    const int factor = InputStack::kSize / size;
    std::vector<float> img(std::size_t(size) * size, 0.f);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        float acc = 0.f;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx)
            acc += essence[std::size_t(y * factor + dy) * InputStack::kSize + std::size_t(x * factor + dx)];
        img[std::size_t(y) * size + x] = acc / float(factor * factor);
      }

    auto px = [&](int x, int y) {
      x = std::clamp(x, 0, size - 1);
      y = std::clamp(y, 0, size - 1);
      return img[std::size_t(y) * size + x];
    };
    std::vector<float> mag(std::size_t(size) * size), ori(std::size_t(size) * size);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const float gx = (px(x + 1, y - 1) + 2 * px(x + 1, y) + px(x + 1, y + 1)) -
                         (px(x - 1, y - 1) + 2 * px(x - 1, y) + px(x - 1, y + 1));
        const float gy = (px(x - 1, y + 1) + 2 * px(x, y + 1) + px(x + 1, y + 1)) -
                         (px(x - 1, y - 1) + 2 * px(x, y - 1) + px(x + 1, y - 1));
        mag[std::size_t(y) * size + x] = std::sqrt(gx * gx + gy * gy);
        float o = std::atan2(gy, gx);
        if (o < 0.f) o += float(M_PI);  // folded orientation, sign-agnostic
        if (o >= float(M_PI)) o -= float(M_PI);
        ori[std::size_t(y) * size + x] = o;
      }

    std::vector<float>& feat = out.maps[std::size_t(s)];
    feat.assign(std::size_t(size) * size * ToyProvider::kBaseChannels, 0.f);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        float* f = &feat[std::size_t(y * size + x) * ToyProvider::kBaseChannels];
        // 3x3-pooled soft orientation histogram, magnitude-weighted.
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int qx = std::clamp(x + dx, 0, size - 1);
            const int qy = std::clamp(y + dy, 0, size - 1);
            const float m = mag[std::size_t(qy) * size + qx];
            if (m <= 1e-9f) continue;
            const float b = ori[std::size_t(qy) * size + qx] / float(M_PI) * 8.f;
            const int b0 = int(b) % 8;
            const int b1 = (b0 + 1) % 8;
            const float w1 = b - float(int(b));
            f[b0] += m * (1.f - w1);
            f[b1] += m * w1;
          }
        f[8] = mag[std::size_t(y) * size + x];
        f[9] = img[std::size_t(y) * size + x];
      }
  }
  return out;
}

FeatureMap linear_normalized(const std::vector<float>& base, int size, const Eigen::MatrixXd& a) {
  FeatureMap out;
  out.size = size;
  out.channels = ToyProvider::kOutChannels;
  out.data.assign(std::size_t(size) * size * ToyProvider::kOutChannels, 0.f);
  Eigen::VectorXd f(ToyProvider::kBaseChannels), o(ToyProvider::kOutChannels);
  for (int p = 0; p < size * size; ++p) {
    for (int c = 0; c < ToyProvider::kBaseChannels; ++c)
      f(c) = base[std::size_t(p) * ToyProvider::kBaseChannels + std::size_t(c)];
    o = a * f;
    const double nrm = o.norm();
    float* dst = &out.data[std::size_t(p) * ToyProvider::kOutChannels];
    if (nrm < 1e-9) {
      dst[0] = 1.f;
    } else {
      for (int c = 0; c < ToyProvider::kOutChannels; ++c) dst[c] = float(o(c) / nrm);
    }
  }
  return out;
}

}  // namespace

ToyProvider::ToyProvider(std::uint64_t seed) {
  std::uint64_t rng = seed * 0x9e3779b97f4a7c15ULL + 5;
  for (auto& w : weights) {
    w.resize(kOutChannels, kBaseChannels);
    for (int r = 0; r < kOutChannels; ++r)
      for (int c = 0; c < kBaseChannels; ++c) {
        const double u1 = std::max(so3::uniform01(rng), 1e-300);
        const double u2 = so3::uniform01(rng);
        w(r, c) = 0.3 * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
      }
  }
}

std::array<FeatureMap, 3> ToyProvider::features(const InputStack& input) const {
  const BaseMaps base = base_features(input);
  std::array<FeatureMap, 3> out;
  for (int s = 0; s < 3; ++s)
    out[std::size_t(s)] = linear_normalized(base.maps[std::size_t(s)], kScales[s], weights[std::size_t(s)]);
  return out;
}

void ToyProvider::save(const std::string& path) const {
  nlohmann::json j;
  j["version"] = 1;
  j["scales"] = {128, 64, 32};
  j["weights"] = nlohmann::json::array();
  for (const auto& w : weights) {
    std::vector<double> flat;
    for (int r = 0; r < w.rows(); ++r)
      for (int c = 0; c < w.cols(); ++c) flat.push_back(w(r, c));
    j["weights"].push_back(flat);
  }
  io::write_text_file(path, j.dump(2));
}

ToyProvider ToyProvider::load(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_text_file(path));
  } catch (const std::exception& e) {
    throw Error(ErrorCode::io, std::string("provider load: ") + e.what());
  }
  ToyProvider p(0);
  const auto& ws = j.at("weights");
  for (int s = 0; s < 3; ++s) {
    const auto flat = ws.at(std::size_t(s)).get<std::vector<double>>();
    if (int(flat.size()) != kOutChannels * kBaseChannels)
      throw Error(ErrorCode::io, "provider load: bad weight shape");
    for (int r = 0; r < kOutChannels; ++r)
      for (int c = 0; c < kBaseChannels; ++c) p.weights[std::size_t(s)](r, c) = flat[std::size_t(r * kBaseChannels + c)];
  }
  return p;
}

double similarity(const InputStack& i_r, const InputStack& i_g, const FeatureProvider& provider) {
  const auto fr = provider.features(i_r);
  const auto fg = provider.features(i_g);
  double total = 0.0;
  for (int s = 0; s < 3; ++s) {
    const FeatureMap& a = fr[std::size_t(s)];
    const FeatureMap& b = fg[std::size_t(s)];
    if (a.size != b.size || a.channels != b.channels)
      throw Error(ErrorCode::provider_shape_mismatch, "similarity: provider output shapes differ");
    double acc = 0.0;
    const int n = a.size * a.size;
    for (int p = 0; p < n; ++p) {
      const float* u = &a.data[std::size_t(p) * a.channels];
      const float* v = &b.data[std::size_t(p) * b.channels];
      double dot = 0.0;
      for (int c = 0; c < a.channels; ++c) dot += double(u[c]) * double(v[c]);
      acc += dot;
    }
    total += acc / double(n);
  }
  return total / 3.0;
}

// ---------------------------------------------------------------------------
// Crop stacks

InputStack make_ir_stack(const std::vector<const sim::SoloRender*>& solos, const CropSpec& crop) {
  InputStack out;
  out.channels = 4;
  out.data.assign(std::size_t(InputStack::kSize) * InputStack::kSize * 4, 0.f);
  float zmin = 1e30f, zmax = -1e30f;
  const int s = InputStack::kSize;
  std::vector<float> depth(std::size_t(s) * s, 0.f), nx(depth.size()), ny(depth.size()), nz(depth.size());
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) {
      const int sx = crop.x0 + int(double(x) * crop.s / s);
      const int sy = crop.y0 + int(double(y) * crop.s / s);
      float best = 0.f;
      for (const auto* solo : solos) {
        if (solo->roi.empty() || !solo->covers(sx, sy)) continue;
        const float z = solo->depth_at(sx, sy);
        if (best == 0.f || z < best) {
          best = z;
          const int lx = sx - solo->roi.x0, ly = sy - solo->roi.y0;
          nx[std::size_t(y) * s + x] = solo->nx.at(lx, ly);
          ny[std::size_t(y) * s + x] = solo->ny.at(lx, ly);
          nz[std::size_t(y) * s + x] = solo->nz.at(lx, ly);
        }
      }
      depth[std::size_t(y) * s + x] = best;
      if (best > 0.f) {
        zmin = std::min(zmin, best);
        zmax = std::max(zmax, best);
      }
    }
  const float span = std::max(zmax - zmin, 1e-6f);
  for (int p = 0; p < s * s; ++p) {
    float* dst = &out.data[std::size_t(p) * 4];
    dst[0] = depth[std::size_t(p)] > 0.f ? (depth[std::size_t(p)] - zmin) / span + 0.05f : 0.f;
    dst[1] = nx[std::size_t(p)];
    dst[2] = ny[std::size_t(p)];
    dst[3] = nz[std::size_t(p)];
  }
  return out;
}

InputStack make_ig_stack(const ImageF& intensity, const CropSpec& crop) {
  InputStack out;
  out.channels = 2;
  const int s = InputStack::kSize;
  out.data.assign(std::size_t(s) * s * 2, 0.f);
  std::vector<float> gray(std::size_t(s) * s, 0.f);
  auto sample = [&](double px, double py) {
    const int x0 = std::clamp(int(std::floor(px)), 0, intensity.width - 1);
    const int y0 = std::clamp(int(std::floor(py)), 0, intensity.height - 1);
    const int x1 = std::min(x0 + 1, intensity.width - 1);
    const int y1 = std::min(y0 + 1, intensity.height - 1);
    const double fx = px - std::floor(px), fy = py - std::floor(py);
    return float((1 - fx) * (1 - fy) * intensity.at(x0, y0) + fx * (1 - fy) * intensity.at(x1, y0) +
                 (1 - fx) * fy * intensity.at(x0, y1) + fx * fy * intensity.at(x1, y1));
  };
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x)
      gray[std::size_t(y) * s + x] =
          sample(crop.x0 + (x + 0.5) * crop.s / s - 0.5, crop.y0 + (y + 0.5) * crop.s / s - 0.5);
  // Unsharp mask with a 3x3 blur, amount 1.
  auto g = [&](int x, int y) {
    x = std::clamp(x, 0, s - 1);
    y = std::clamp(y, 0, s - 1);
    return gray[std::size_t(y) * s + x];
  };
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) {
      float blur = 0.f;
      const float k[3] = {0.25f, 0.5f, 0.25f};
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) blur += k[dx + 1] * k[dy + 1] * g(x + dx, y + dy);
      const float sharp = std::clamp(2.f * g(x, y) - blur, 0.f, 1.f);
      out.data[std::size_t(y * s + x) * 2 + 0] = g(x, y);
      out.data[std::size_t(y * s + x) * 2 + 1] = sharp;
    }
  return out;
}

double crop_render_cd(const std::vector<sim::SoloRender>& a, const std::vector<sim::SoloRender>& b,
                      const CropSpec& crop) {
  auto collect = [&](const std::vector<sim::SoloRender>& solos) {
    std::vector<Vec2> pts;
    for (int y = crop.y0; y < crop.y0 + crop.s; ++y)
      for (int x = crop.x0; x < crop.x0 + crop.s; ++x)
        for (const auto& solo : solos)
          if (!solo.roi.empty() && solo.covers(x, y)) {
            pts.emplace_back(x + 0.5, y + 0.5);
            break;
          }
    return pts;
  };
  const std::vector<Vec2> pa = collect(a), pb = collect(b);
  if (pa.empty() || pb.empty()) return 1e6;
  auto one_way = [](const std::vector<Vec2>& from, const std::vector<Vec2>& to) {
    double sum = 0.0;
    for (const auto& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : to) best = std::min(best, (p - q).squaredNorm());
      sum += std::sqrt(best);
    }
    return sum / double(from.size());
  };
  return 0.5 * (one_way(pa, pb) + one_way(pb, pa));
}

// ---------------------------------------------------------------------------
// Training

std::vector<RankingGroup> build_training_groups(const sim::ModelLibrary& lib, const DatasetParams& params) {
  std::vector<RankingGroup> groups;
  std::uint64_t rng = params.seed * 0x9e3779b97f4a7c15ULL + 31;

  for (int sc = 0; sc < params.scenes; ++sc) {
    sim::PlantedSceneParams pp;
    pp.n_objects = params.n_objects;
    const sim::SceneSpec scene = sim::make_planted_scene(lib, pp, params.seed * 1000 + std::uint64_t(sc));
    const sim::Observation obs = sim::render_depth(lib, scene);
    const int n = obs.object_count();

    for (int cp = 0; cp < params.crops_per_scene; ++cp) {
      // Removal augmentation: drop a random subset of the anchor pose set.
      std::vector<int> kept;
      for (int i = 0; i < n; ++i)
        if (so3::uniform01(rng) >= params.object_dropout) kept.push_back(i);
      if (kept.empty()) kept.push_back(int(so3::splitmix64(rng) % std::uint64_t(n)));

      const int focus = kept[so3::splitmix64(rng) % kept.size()];
      const auto& focus_model = lib.at(obs.model_ids[std::size_t(focus)]);
      const int s = crop_size(focus_model.l_max, obs.camera.width);
      if (s > obs.camera.width || s > obs.camera.height) continue;

      const Vec3 fc = obs.gt_poses[std::size_t(focus)].apply(focus_model.bounding_center);
      if (fc.z() <= 0.0) continue;
      const Vec2 fpx = project(obs.camera, fc);
      CropSpec crop;
      crop.s = s;
      crop.x0 = std::clamp(int(fpx.x()) - s / 2 + int(so3::splitmix64(rng) % 5) - 2, 0, obs.camera.width - s);
      crop.y0 = std::clamp(int(fpx.y()) - s / 2 + int(so3::splitmix64(rng) % 5) - 2, 0, obs.camera.height - s);

      std::vector<sim::SoloRender> anchor_solos;
      for (int i : kept)
        anchor_solos.push_back(
            sim::render_object(lib.at(obs.model_ids[std::size_t(i)]), obs.gt_poses[std::size_t(i)], obs.camera));

      RankingGroup group;
      group.crop_s = s;
      group.i_g = make_ig_stack(obs.intensity, crop);
      std::vector<const sim::SoloRender*> anchor_ptrs;
      for (const auto& so : anchor_solos) anchor_ptrs.push_back(&so);
      group.i_r.push_back(make_ir_stack(anchor_ptrs, crop));
      group.e.push_back(0.0);

      for (int k = 0; k < params.k_prime; ++k) {
        std::vector<sim::SoloRender> noisy_solos;
        for (std::size_t m = 0; m < kept.size(); ++m) {
          const int i = kept[m];
          const auto& model = lib.at(obs.model_ids[std::size_t(i)]);
          const CropSpec bound = (i == focus) ? crop : CropSpec{obs.camera.width, 0, 0};
          const auto noisy = perturb_pose(obs.gt_poses[std::size_t(i)], model, obs.camera, bound, 1,
                                          so3::splitmix64(rng));
          noisy_solos.push_back(sim::render_object(model, noisy.front(), obs.camera));
        }
        std::vector<const sim::SoloRender*> noisy_ptrs;
        for (const auto& so : noisy_solos) noisy_ptrs.push_back(&so);
        group.i_r.push_back(make_ir_stack(noisy_ptrs, crop));
        group.e.push_back(crop_render_cd(noisy_solos, anchor_solos, crop));
      }
      groups.push_back(std::move(group));
    }
  }
  return groups;
}

namespace {

struct PreparedGroup {
  std::vector<BaseMaps> r_bases;
  BaseMaps g_base;
  std::vector<double> e;
  int crop_s = 0;
};

double pair_similarity_and_grad(const std::array<Eigen::MatrixXd, 3>& weights, const BaseMaps& rb,
                                const BaseMaps& gb, std::array<Eigen::MatrixXd, 3>* grad) {
  double total = 0.0;
  Eigen::VectorXd fr(ToyProvider::kBaseChannels), fg(ToyProvider::kBaseChannels);
  for (int s = 0; s < 3; ++s) {
    const int size = kScales[s];
    const int n = size * size;
    const auto& a = weights[std::size_t(s)];
    double acc = 0.0;
    for (int p = 0; p < n; ++p) {
      const float* rf = &rb.maps[std::size_t(s)][std::size_t(p) * ToyProvider::kBaseChannels];
      const float* gf = &gb.maps[std::size_t(s)][std::size_t(p) * ToyProvider::kBaseChannels];
      for (int c = 0; c < ToyProvider::kBaseChannels; ++c) {
        fr(c) = rf[c];
        fg(c) = gf[c];
      }
      Eigen::VectorXd ar = a * fr, ag = a * fg;
      const double nr = ar.norm(), ng = ag.norm();
      if (nr < 1e-9 || ng < 1e-9) {
        acc += (nr < 1e-9 && ng < 1e-9) ? 1.0 : 0.0;  // both degenerate pixels match on the fallback unit
        continue;
      }
      const Eigen::VectorXd u = ar / nr, v = ag / ng;
      const double dot = u.dot(v);
      acc += dot;
      if (grad) {
        const double scale = 1.0 / (3.0 * double(n));
        (*grad)[std::size_t(s)].noalias() += scale * (((v - dot * u) / nr) * fr.transpose());
        (*grad)[std::size_t(s)].noalias() += scale * (((u - dot * v) / ng) * fg.transpose());
      }
    }
    total += acc / double(n);
  }
  return total / 3.0;
}

}  // namespace

TrainResult toy_provider_train(ToyProvider& provider, const std::vector<RankingGroup>& dataset, int epochs,
                               double lr, std::uint64_t seed, const WrConfig& cfg) {
  if (dataset.empty()) throw Error(ErrorCode::empty_input, "toy_provider_train: empty dataset");
  (void)seed;  // training order is fixed; the seed only affects initialization

  std::vector<PreparedGroup> prepared;
  prepared.reserve(dataset.size());
  for (const auto& g : dataset) {
    PreparedGroup pg;
    pg.g_base = base_features(g.i_g);
    for (const auto& ir : g.i_r) pg.r_bases.push_back(base_features(ir));
    pg.e = g.e;
    pg.crop_s = g.crop_s;
    prepared.push_back(std::move(pg));
  }

  TrainResult result;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (const auto& pg : prepared) {
      const std::size_t m = pg.r_bases.size();
      std::vector<RankingSample> samples(m);
      std::vector<std::array<Eigen::MatrixXd, 3>> sim_grads(m);
      for (std::size_t i = 0; i < m; ++i) {
        for (auto& gmat : sim_grads[i])
          gmat = Eigen::MatrixXd::Zero(ToyProvider::kOutChannels, ToyProvider::kBaseChannels);
        samples[i].s = pair_similarity_and_grad(provider.weights, pg.r_bases[i], pg.g_base, &sim_grads[i]);
        samples[i].e = pg.e[i];
      }
      epoch_loss += wr_infonce(samples, pg.crop_s, cfg);
      const std::vector<double> dls = wr_infonce_grad(samples, pg.crop_s, cfg);
      std::array<Eigen::MatrixXd, 3> step;
      for (auto& gmat : step) gmat = Eigen::MatrixXd::Zero(ToyProvider::kOutChannels, ToyProvider::kBaseChannels);
      for (std::size_t i = 0; i < m; ++i)
        for (int s = 0; s < 3; ++s) step[std::size_t(s)].noalias() += dls[i] * sim_grads[i][std::size_t(s)];
      for (int s = 0; s < 3; ++s) provider.weights[std::size_t(s)].noalias() -= lr * step[std::size_t(s)];
    }
    result.loss_per_epoch.push_back(epoch_loss / double(prepared.size()));
  }
  return result;
}

double ranking_accuracy(const FeatureProvider& provider, const std::vector<RankingGroup>& dataset,
                        const WrConfig& cfg) {
  std::size_t total = 0, correct = 0;
  for (const auto& g : dataset) {
    std::vector<double> sims(g.i_r.size());
    for (std::size_t i = 0; i < g.i_r.size(); ++i) sims[i] = similarity(g.i_r[i], g.i_g, provider);
    for (std::size_t i = 0; i < g.e.size(); ++i)
      for (std::size_t j = i + 1; j < g.e.size(); ++j) {
        const double xi = normalize_cd(g.e[i], g.crop_s), xj = normalize_cd(g.e[j], g.crop_s);
        if (std::abs(xi - xj) <= cfg.x_limit) continue;
        ++total;
        const bool want_i_higher = xi < xj;  // smaller CD should score higher
        if ((sims[i] > sims[j]) == want_i_higher) ++correct;
      }
  }
  return total == 0 ? 0.0 : double(correct) / double(total);
}

// ---------------------------------------------------------------------------
// Sliding-window voting

VoteOutcome vote(const sim::ModelLibrary& lib, const sim::Observation& obs,
                 const std::vector<std::vector<Pose>>& pools, const std::vector<Pose>& base_poses,
                 const FeatureProvider& provider, const VoteParams& params) {
  const int n = obs.object_count();
  if (n == 0 || pools.empty()) throw Error(ErrorCode::empty_input, "vote: empty pool");

  double lmax = 0.0;
  for (int i = 0; i < n; ++i) lmax = std::max(lmax, lib.at(obs.model_ids[std::size_t(i)]).l_max);
  const int s = std::min({crop_size(lmax, obs.camera.width), obs.camera.width, obs.camera.height});
  const int stride = params.stride > 0 ? params.stride : s;

  // Base solos once; candidate solos per pool entry.
  std::vector<sim::SoloRender> base_solos;
  for (int i = 0; i < n; ++i)
    base_solos.push_back(sim::render_object(lib.at(obs.model_ids[std::size_t(i)]), base_poses[std::size_t(i)],
                                            obs.camera));

  struct Cand {
    int object, index;
    sim::SoloRender solo;
  };
  std::vector<Cand> cands;
  for (int i = 0; i < n; ++i)
    for (std::size_t c = 0; c < pools[std::size_t(i)].size(); ++c)
      cands.push_back(Cand{i, int(c),
                           sim::render_object(lib.at(obs.model_ids[std::size_t(i)]),
                                              pools[std::size_t(i)][c], obs.camera)});

  VoteOutcome out;
  out.tallies.resize(std::size_t(n));
  for (int i = 0; i < n; ++i) out.tallies[std::size_t(i)].assign(pools[std::size_t(i)].size(), 0);
  std::vector<std::vector<double>> sim_sums(std::size_t(n), std::vector<double>{});
  for (int i = 0; i < n; ++i) sim_sums[std::size_t(i)].assign(pools[std::size_t(i)].size(), 0.0);

  if (params.single_object_crop) {
    // Comparison mode: one crop per candidate, centred on its own render.
    for (const auto& cand : cands) {
      const auto& model = lib.at(obs.model_ids[std::size_t(cand.object)]);
      const int cs = std::min({crop_size(model.l_max, obs.camera.width), obs.camera.width, obs.camera.height});
      const Vec3 c = pools[std::size_t(cand.object)][std::size_t(cand.index)].apply(model.bounding_center);
      if (c.z() <= 0.0) continue;
      const Vec2 px = project(obs.camera, c);
      CropSpec crop;
      crop.s = cs;
      crop.x0 = std::clamp(int(px.x()) - cs / 2, 0, obs.camera.width - cs);
      crop.y0 = std::clamp(int(px.y()) - cs / 2, 0, obs.camera.height - cs);
      std::vector<const sim::SoloRender*> only{&cand.solo};
      const double sim_v = similarity(make_ir_stack(only, crop), make_ig_stack(obs.intensity, crop), provider);
      sim_sums[std::size_t(cand.object)][std::size_t(cand.index)] = sim_v;
    }
  } else {
    for (int y0 = 0; y0 + s <= obs.camera.height; y0 += stride)
      for (int x0 = 0; x0 + s <= obs.camera.width; x0 += stride) {
        CropSpec crop{s, x0, y0};
        const Rect window{x0, y0, x0 + s, y0 + s};
        const InputStack ig = make_ig_stack(obs.intensity, crop);

        std::vector<std::pair<double, std::size_t>> scored;
        for (std::size_t ci = 0; ci < cands.size(); ++ci) {
          const auto& cand = cands[ci];
          if (cand.solo.roi.empty()) continue;
          bool covers = false;
          const Rect inter{std::max(window.x0, cand.solo.roi.x0), std::max(window.y0, cand.solo.roi.y0),
                           std::min(window.x1, cand.solo.roi.x1), std::min(window.y1, cand.solo.roi.y1)};
          for (int y = inter.y0; y < inter.y1 && !covers; ++y)
            for (int x = inter.x0; x < inter.x1 && !covers; ++x)
              if (cand.solo.covers(x, y)) covers = true;
          if (!covers) continue;

          std::vector<const sim::SoloRender*> scene;
          for (int j = 0; j < n; ++j)
            scene.push_back(j == cand.object ? &cand.solo : &base_solos[std::size_t(j)]);
          const double sim_v = similarity(make_ir_stack(scene, crop), ig, provider);
          scored.emplace_back(sim_v, ci);
          sim_sums[std::size_t(cand.object)][std::size_t(cand.index)] += sim_v;
        }
        std::stable_sort(scored.begin(), scored.end(),
                         [](const auto& a, const auto& b) { return a.first > b.first; });
        for (std::size_t rank = 0; rank < scored.size() && rank < 10; ++rank) {
          const auto& cand = cands[scored[rank].second];
          out.tallies[std::size_t(cand.object)][std::size_t(cand.index)] += int(10 - rank);
        }
      }
  }

  out.selected.resize(std::size_t(n));
  out.poses.resize(std::size_t(n));
  for (int i = 0; i < n; ++i) {
    const auto& tally = out.tallies[std::size_t(i)];
    const auto& sums = sim_sums[std::size_t(i)];
    int best = 0;
    for (std::size_t c = 1; c < tally.size(); ++c) {
      if (tally[c] > tally[std::size_t(best)] ||
          (tally[c] == tally[std::size_t(best)] && sums[c] > sums[std::size_t(best)]))
        best = int(c);
    }
    out.selected[std::size_t(i)] = best;
    out.poses[std::size_t(i)] = pools[std::size_t(i)][std::size_t(best)];
  }
  return out;
}

}  // namespace mopr::metric
