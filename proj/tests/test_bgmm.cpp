#include "mopr/bgmm.hpp"

#include "mopr/so3.hpp"

#include <doctest.h>

#include <cmath>

using namespace mopr;
using namespace mopr::bgmm;

namespace {

Rotation rot_z(double a) { return so3::exp_so3(Vec3(0, 0, a)); }

std::vector<Rotation> noisy_cluster(const Rotation& center, double sigma_rad, int n, std::uint64_t& rng) {
  std::vector<Rotation> out;
  out.reserve(std::size_t(n));
  auto gauss = [&rng]() {
    const double u1 = std::max(so3::uniform01(rng), 1e-300);
    const double u2 = so3::uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  };
  for (int i = 0; i < n; ++i)
    out.push_back(so3::exp_at(center, Vec3(sigma_rad * gauss(), sigma_rad * gauss(), sigma_rad * gauss())));
  return out;
}

}  // namespace

TEST_CASE("degenerate single-cluster fit") {
  std::vector<Rotation> data(50, rot_z(0.6));
  BgmmConfig cfg;
  cfg.seed = 3;
  const So3FitResult fit = fit_so3(data, cfg);
  CHECK(fit.effective_components().size() == 1);
  CHECK(so3::geodesic_distance(fit.means[std::size_t(fit.dominant_component())], rot_z(0.6)) < 1e-6);
}

TEST_CASE("responsibilities normalize and counts add up") {
  std::uint64_t rng = 10;
  auto data = noisy_cluster(rot_z(0.0), 0.1, 60, rng);
  auto more = noisy_cluster(rot_z(1.2), 0.1, 60, rng);
  data.insert(data.end(), more.begin(), more.end());
  BgmmConfig cfg;
  cfg.seed = 4;
  const So3FitResult fit = fit_so3(data, cfg);
  double total = 0.0;
  for (Eigen::Index i = 0; i < fit.responsibilities.rows(); ++i) {
    CHECK(fit.responsibilities.row(i).sum() == doctest::Approx(1.0).epsilon(1e-9));
    total += fit.responsibilities.row(i).sum();
  }
  double nk_sum = 0.0;
  for (const auto& c : fit.components) nk_sum += c.n_k;
  CHECK(nk_sum == doctest::Approx(total).epsilon(1e-6));
}

TEST_CASE("planted two-cluster recovery") {
  const double deg = M_PI / 180.0;
  int hits = 0;
  const int seeds = 5;
  for (int s = 0; s < seeds; ++s) {
    std::uint64_t rng = 100 + std::uint64_t(s);
    auto data = noisy_cluster(rot_z(0.0), 5 * deg, 100, rng);
    auto more = noisy_cluster(rot_z(60 * deg), 5 * deg, 100, rng);
    data.insert(data.end(), more.begin(), more.end());
    BgmmConfig cfg;
    cfg.seed = std::uint64_t(s);
    const So3FitResult fit = fit_so3(data, cfg);
    double best0 = 1e9, best60 = 1e9;
    for (int k : fit.effective_components()) {
      best0 = std::min(best0, so3::geodesic_distance(fit.means[std::size_t(k)], rot_z(0)));
      best60 = std::min(best60, so3::geodesic_distance(fit.means[std::size_t(k)], rot_z(60 * deg)));
    }
    if (best0 < 5 * deg && best60 < 5 * deg) ++hits;
  }
  CHECK(hits == seeds);
}

TEST_CASE("variational bound does not decrease over a fit") {
  std::uint64_t rng = 77;
  auto data = noisy_cluster(rot_z(0.4), 0.2, 80, rng);
  BgmmConfig cfg;
  cfg.seed = 9;
  const So3FitResult fit = fit_so3(data, cfg);
  CHECK(fit.lower_bound >= fit.initial_lower_bound - 1e-6);
}

TEST_CASE("wrapped cluster near the cut: tangent fit beats raw axis-angle fit") {
  const double deg = M_PI / 180.0;
  int wins = 0;
  const int seeds = 5;
  for (int s = 0; s < seeds; ++s) {
    std::uint64_t rng = 500 + std::uint64_t(s);
    const auto data = noisy_cluster(rot_z(175 * deg), 10 * deg, 120, rng);
    BgmmConfig cfg;
    cfg.seed = std::uint64_t(s) + 1;
    const So3FitResult lie = fit_so3(data, cfg);
    std::vector<Vec3> raw;
    raw.reserve(data.size());
    for (const auto& r : data) raw.push_back(so3::log_so3(r));
    const EuclideanFitResult euc = fit_euclidean(raw, cfg);
    // Lower negative log evidence == higher variational bound.
    if (lie.lower_bound > euc.lower_bound) ++wins;
  }
  CHECK(wins == seeds);
}

TEST_CASE("fit_pcg3 symmetry fold and nested translations") {
  const double deg = M_PI / 180.0;
  std::uint64_t rng = 42;
  std::vector<Pose> poses;
  for (int i = 0; i < 60; ++i) {
    Pose p;
    const double base = (i % 2 == 0) ? 5 * deg : 95 * deg;  // same physical pose under 4-fold symmetry
    p.rotation = so3::exp_at(rot_z(base), Vec3(0.01 * so3::uniform01(rng), 0.01 * so3::uniform01(rng), 0));
    p.translation = (i % 3 == 0) ? Vec3(0.1, 0, 0.3) : Vec3(0, 0, 0.3);
    poses.push_back(p);
  }
  const SymmetryGroup four = so3::discretize_axis_symmetry(Vec3::UnitZ(), M_PI / 2);
  BgmmConfig cfg;
  cfg.seed = 11;
  const PcgMixture mix = fit_pcg3(poses, four, cfg);

  // All rotations collapse onto one cluster once canonicalized.
  double wmax = 0.0;
  std::size_t dominant = 0;
  for (std::size_t k = 0; k < mix.rot_components.size(); ++k)
    if (mix.rot_components[k].mix_weight > wmax) {
      wmax = mix.rot_components[k].mix_weight;
      dominant = k;
    }
  CHECK(wmax > 0.9);
  const double d5 = so3::geodesic_distance(mix.rot_means[dominant], rot_z(5 * deg));
  const double d95 = so3::geodesic_distance(mix.rot_means[dominant], rot_z(95 * deg));
  CHECK(std::min(d5, d95) < 5 * deg);

  // Nested translation mixture recovers both modes within 5 mm.
  double best_a = 1e9, best_b = 1e9;
  for (const auto& tm : mix.translations)
    for (const auto& mean : tm.means) {
      best_a = std::min(best_a, (mean - Vec3(0, 0, 0.3)).norm());
      best_b = std::min(best_b, (mean - Vec3(0.1, 0, 0.3)).norm());
    }
  CHECK(best_a < 0.005);
  CHECK(best_b < 0.005);

  double wsum = 0.0;
  for (const auto& c : mix.rot_components) wsum += c.mix_weight;
  CHECK(wsum == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("trivial symmetry leaves pass-2 input unchanged") {
  std::uint64_t rng = 9;
  std::vector<Pose> poses;
  for (int i = 0; i < 40; ++i) {
    Pose p;
    p.rotation = so3::exp_at(rot_z(0.3), Vec3(0.03 * so3::uniform01(rng), 0, 0));
    p.translation = Vec3(0, 0, 0.4);
    poses.push_back(p);
  }
  BgmmConfig cfg;
  cfg.seed = 2;
  const PcgMixture mix = fit_pcg3(poses, SymmetryGroup::trivial(), cfg);
  double wmax = 0.0;
  Rotation mean = Rotation::Identity();
  for (std::size_t k = 0; k < mix.rot_components.size(); ++k)
    if (mix.rot_components[k].mix_weight > wmax) {
      wmax = mix.rot_components[k].mix_weight;
      mean = mix.rot_means[k];
    }
  CHECK(so3::geodesic_distance(mean, rot_z(0.3)) < 0.05);
}

TEST_CASE("sampling determinism and degenerate component") {
  PcgMixture mix;
  Component rc;
  rc.mix_weight = 1.0;
  rc.nu = 1e12;
  rc.w = Mat3::Identity();
  mix.rot_components = {rc};
  mix.rot_means = {rot_z(0.4)};
  TranslationMixture tm;
  Component tc = rc;
  tm.components = {tc};
  tm.means = {Vec3(0.1, 0.2, 0.5)};
  mix.translations = {tm};

  CHECK(sample(mix, 0, 1).empty());
  const auto poses = sample(mix, 5, 1);
  for (const auto& p : poses) {
    CHECK(so3::geodesic_distance(p.rotation, rot_z(0.4)) < 1e-5);
    CHECK((p.translation - Vec3(0.1, 0.2, 0.5)).norm() < 1e-5);
  }
  const auto again = sample(mix, 5, 1);
  for (std::size_t i = 0; i < poses.size(); ++i) {
    CHECK((poses[i].rotation - again[i].rotation).norm() == 0.0);
    CHECK((poses[i].translation - again[i].translation).norm() == 0.0);
  }
}

TEST_CASE("fit -> sample -> refit closure") {
  const double deg = M_PI / 180.0;
  std::uint64_t rng = 123;
  std::vector<Pose> poses;
  auto gauss = [&rng]() {
    const double u1 = std::max(so3::uniform01(rng), 1e-300);
    const double u2 = so3::uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  };
  for (int i = 0; i < 150; ++i) {
    Pose p;
    const bool a = i % 2 == 0;
    p.rotation = so3::exp_at(a ? rot_z(0.0) : rot_z(70 * deg),
                             Vec3(0.03 * gauss(), 0.03 * gauss(), 0.03 * gauss()));
    p.translation = (a ? Vec3(0, 0, 0.4) : Vec3(0.08, 0, 0.5)) + Vec3(0.002 * gauss(), 0.002 * gauss(), 0.002 * gauss());
    poses.push_back(p);
  }
  BgmmConfig cfg;
  cfg.seed = 21;
  const PcgMixture mix = fit_pcg3(poses, SymmetryGroup::trivial(), cfg);
  const auto drawn = sample(mix, 10000, 77);
  BgmmConfig cfg2;
  cfg2.seed = 22;
  const PcgMixture refit = fit_pcg3(drawn, SymmetryGroup::trivial(), cfg2);

  for (const Rotation& target : {rot_z(0.0), rot_z(70 * deg)}) {
    double best = 1e9;
    for (const auto& m : refit.rot_means) best = std::min(best, so3::geodesic_distance(m, target));
    CHECK(best < 2 * deg);
  }
  for (const Vec3& target : {Vec3(0, 0, 0.4), Vec3(0.08, 0, 0.5)}) {
    double best = 1e9;
    for (const auto& tm : refit.translations)
      for (const auto& mean : tm.means) best = std::min(best, (mean - target).norm());
    CHECK(best < 0.003);
  }
}

TEST_CASE("bounding volume membership matches direct Mahalanobis") {
  const double deg = M_PI / 180.0;
  std::uint64_t rng = 55;
  auto gauss = [&rng]() {
    const double u1 = std::max(so3::uniform01(rng), 1e-300);
    const double u2 = so3::uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  };
  std::vector<Pose> poses;
  for (int i = 0; i < 80; ++i) {
    Pose p;
    p.rotation = so3::exp_at(rot_z(0.5), Vec3(0.05 * gauss(), 0.05 * gauss(), 0.05 * gauss()));
    p.translation = Vec3(0, 0, 0.4) + Vec3(0.004 * gauss(), 0.004 * gauss(), 0.004 * gauss());
    poses.push_back(p);
  }
  BgmmConfig cfg;
  cfg.seed = 5;
  const PcgMixture mix = fit_pcg3(poses, SymmetryGroup::trivial(), cfg);

  // Mean itself accepted; a pose far away rejected.
  Pose mean_pose;
  mean_pose.rotation = mix.rot_means[0];
  mean_pose.translation = mix.translations[0].means[0];
  const auto at_mean = bounding_volume_contains(mix, mean_pose);
  CHECK(at_mean.rotation);
  CHECK(at_mean.translation);

  Pose far = mean_pose;
  far.rotation = so3::exp_at(mean_pose.rotation, Vec3(2.5, 0, 0));
  far.translation += Vec3(1.0, 0, 0);
  const auto at_far = bounding_volume_contains(mix, far);
  CHECK_FALSE(at_far.rotation);
  CHECK_FALSE(at_far.translation);

  // Boundary agreement with an independent Mahalanobis computation.
  for (int probe = 0; probe < 100; ++probe) {
    Pose p;
    p.rotation = so3::exp_at(mix.rot_means[0], Vec3(0.2 * gauss(), 0.2 * gauss(), 0.2 * gauss()));
    p.translation = mix.translations[0].means[0] + Vec3(0.01 * gauss(), 0.01 * gauss(), 0.01 * gauss());
    const auto got = bounding_volume_contains(mix, p);

    double rot_best = 1e300;
    for (std::size_t k = 0; k < mix.rot_components.size(); ++k) {
      const Vec3 tau = log_raw(mix.rot_means[k], p.rotation);
      rot_best = std::min(rot_best, std::sqrt(tau.dot(mix.rot_components[k].expected_precision() * tau)));
    }
    double tr_best = 1e300;
    for (const auto& tm : mix.translations)
      for (std::size_t c = 0; c < tm.components.size(); ++c) {
        const Vec3 d = p.translation - tm.means[c];
        tr_best = std::min(tr_best, std::sqrt(d.dot(tm.components[c].expected_precision() * d)));
      }
    CHECK(got.rotation == (rot_best <= 3.0));
    CHECK(got.translation == (tr_best <= 3.0));
  }

  // Nearest-in-bound returns the query when inside, a closer boundary point otherwise.
  const Vec3 inside = mix.translations[0].means[0];
  CHECK((nearest_translation_in_bound(mix, inside) - inside).norm() == 0.0);
  const Vec3 outside = inside + Vec3(0.5, 0, 0);
  const Vec3 nearest = nearest_translation_in_bound(mix, outside);
  CHECK((nearest - outside).norm() < 0.5);
  const Vec3 d = nearest - mix.translations[0].means[0];
  const double maha = std::sqrt(d.dot(mix.translations[0].components[0].expected_precision() * d));
  CHECK(maha == doctest::Approx(3.0).epsilon(1e-3));
}

TEST_CASE("fit_pcg3 is deterministic per seed") {
  std::uint64_t rng = 8;
  auto gauss = [&rng]() {
    const double u1 = std::max(so3::uniform01(rng), 1e-300);
    const double u2 = so3::uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  };
  std::vector<Pose> poses;
  for (int i = 0; i < 50; ++i) {
    Pose p;
    p.rotation = so3::exp_at(rot_z(1.0), Vec3(0.1 * gauss(), 0.1 * gauss(), 0.1 * gauss()));
    p.translation = Vec3(0.01 * gauss(), 0.01 * gauss(), 0.45);
    poses.push_back(p);
  }
  BgmmConfig cfg;
  cfg.seed = 99;
  CHECK(mixture_to_json(fit_pcg3(poses, SymmetryGroup::trivial(), cfg)) ==
        mixture_to_json(fit_pcg3(poses, SymmetryGroup::trivial(), cfg)));
}
