#include "mopr/so3.hpp"

#include <doctest.h>

#include <cmath>

using namespace mopr;
using namespace mopr::so3;

namespace {
Rotation rot_z(double a) { return exp_so3(Vec3(0, 0, a)); }
Rotation rot_x(double a) { return exp_so3(Vec3(a, 0, 0)); }
Rotation rot_y(double a) { return exp_so3(Vec3(0, a, 0)); }

TangentVec random_tangent(std::uint64_t& rng, double max_norm) {
  Vec3 v(uniform01(rng) * 2 - 1, uniform01(rng) * 2 - 1, uniform01(rng) * 2 - 1);
  if (v.norm() < 1e-9) v = Vec3(1, 0, 0);
  return v.normalized() * (uniform01(rng) * max_norm);
}
}  // namespace

TEST_CASE("exp_so3 basics") {
  CHECK((exp_so3(Vec3::Zero()) - Mat3::Identity()).norm() == doctest::Approx(0.0).epsilon(1e-12));
  const Rotation r = exp_so3(Vec3(0, 0, M_PI / 2));
  CHECK(r(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(r(0, 1) == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(r(1, 0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("exp/log round trips over seeded tangents") {
  std::uint64_t rng = 42;
  for (int i = 0; i < 1000; ++i) {
    const TangentVec tau = random_tangent(rng, M_PI - 1e-3);
    const TangentVec back = log_so3(exp_so3(tau));
    CHECK((back - tau).norm() < 1e-9);
  }
}

TEST_CASE("log_at basics and oracle") {
  const Rotation r = rot_z(0.7);
  CHECK(log_at(r, r).norm() < 1e-12);
  CHECK((log_at(Mat3::Identity(), rot_z(0.3)) - Vec3(0, 0, 0.3)).norm() < 1e-12);
  CHECK((log_at(rot_z(0.2), rot_z(0.5)) - Vec3(0, 0, 0.3)).norm() < 1e-12);
}

TEST_CASE("log_at throws at the antipodal cut") {
  CHECK_THROWS_AS((void)log_at(Mat3::Identity(), rot_x(M_PI)), Error);
}

TEST_CASE("exp_at inverse pair") {
  std::uint64_t rng = 7;
  CHECK((exp_at(Mat3::Identity(), Vec3::Zero()) - Mat3::Identity()).norm() < 1e-12);
  CHECK((exp_at(rot_z(0.2), Vec3(0, 0, 0.3)) - rot_z(0.5)).norm() < 1e-9);
  for (int i = 0; i < 500; ++i) {
    const Rotation anchor = random_rotation(rng);
    const Rotation x = exp_at(anchor, random_tangent(rng, M_PI - 1e-2));
    const Rotation back = exp_at(anchor, log_at(anchor, x));
    CHECK((back - x).norm() < 1e-9);
  }
}

TEST_CASE("geodesic distance identities and metric axioms") {
  std::uint64_t rng = 11;
  CHECK(geodesic_distance(rot_z(0.4), rot_z(0.4)) == doctest::Approx(0.0));
  CHECK(geodesic_distance(Mat3::Identity(), rot_z(M_PI / 2)) == doctest::Approx(M_PI / 2).epsilon(1e-12));

  // Matrix-log oracle for a mixed-axis pair.
  const Rotation a = rot_x(0.1), b = rot_y(0.1);
  const double oracle = log_so3(Rotation(rot_x(-0.1) * rot_y(0.1))).norm();
  CHECK(geodesic_distance(a, b) == doctest::Approx(oracle).epsilon(1e-12));

  for (int i = 0; i < 300; ++i) {
    const Rotation p = random_rotation(rng), q = random_rotation(rng), r = random_rotation(rng);
    const double dpq = geodesic_distance(p, q);
    CHECK(dpq == doctest::Approx(geodesic_distance(q, p)).epsilon(1e-12));
    CHECK(dpq + geodesic_distance(q, r) + 1e-9 >= geodesic_distance(p, r));
  }
}

TEST_CASE("rotation validity is preserved by composition and exp_at") {
  std::uint64_t rng = 23;
  Rotation acc = Mat3::Identity();
  for (int i = 0; i < 1000; ++i) {
    acc = exp_at(acc, random_tangent(rng, 0.5));
    CHECK(is_rotation(acc, 1e-9));
  }
}

TEST_CASE("canonicalize") {
  const SymmetryGroup trivial = SymmetryGroup::trivial();
  const Rotation r = rot_z(0.9);
  CHECK((canonicalize(r, Mat3::Identity(), trivial) - r).norm() < 1e-15);

  const SymmetryGroup four = discretize_axis_symmetry(Vec3::UnitZ(), M_PI / 2);
  const Rotation rt = rot_z(100.0 * M_PI / 180.0);
  const Rotation canon = canonicalize(rt, Mat3::Identity(), four);
  CHECK(geodesic_distance(canon, rot_z(10.0 * M_PI / 180.0)) < 1e-9);

  // Idempotent, and never worse than any group element.
  const Rotation canon2 = canonicalize(canon, Mat3::Identity(), four);
  CHECK((canon2 - canon).norm() < 1e-12);
  std::uint64_t rng = 5;
  for (int i = 0; i < 100; ++i) {
    const Rotation x = random_rotation(rng);
    const Rotation c = canonicalize(x, Mat3::Identity(), four);
    const double dc = geodesic_distance(c, Mat3::Identity());
    for (const auto& s : four.elements)
      CHECK(dc <= geodesic_distance(Rotation(s * x), Mat3::Identity()) + 1e-12);
  }
}

TEST_CASE("discretize_axis_symmetry counts") {
  CHECK(discretize_axis_symmetry(Vec3::UnitZ(), M_PI / 2).elements.size() == 4);
  CHECK(discretize_axis_symmetry(Vec3::UnitZ(), 2 * M_PI).elements.size() == 1);
  CHECK(discretize_axis_symmetry(Vec3::UnitZ(), 10.0 * M_PI / 180.0).elements.size() == 36);
  CHECK((discretize_axis_symmetry(Vec3::UnitZ(), M_PI / 2).elements[0] - Mat3::Identity()).norm() < 1e-15);
  CHECK_THROWS_AS((void)discretize_axis_symmetry(Vec3::UnitZ(), 0.0), Error);
}
