#include "mopr/so3.hpp"

#include <cmath>
#include <limits>

namespace mopr::so3 {

namespace {
constexpr double kPi = 3.14159265358979323846;

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}
}  // namespace

Rotation exp_so3(const TangentVec& tau) {
  const double theta = tau.norm();
  if (theta < 1e-12) {
    // Second-order expansion keeps round trips tight near zero.
    const Mat3 k = skew(tau);
    return Mat3::Identity() + k + 0.5 * k * k;
  }
  const Mat3 k = skew(tau / theta);
  return Mat3::Identity() + std::sin(theta) * k + (1.0 - std::cos(theta)) * k * k;
}

TangentVec log_so3(const Rotation& r) {
  // Quaternion route is stable near theta = pi where the antisymmetric-part
  // formula cancels out.
  Eigen::AngleAxisd aa(r);
  return aa.angle() * aa.axis();
}

TangentVec log_at(const Rotation& anchor, const Rotation& x) {
  const Rotation rel = anchor.transpose() * x;
  if (geodesic_distance(anchor, x) > kPi - 1e-6)
    throw Error(ErrorCode::antipodal, "log_at: rotations are antipodal, log branch ambiguous");
  return log_so3(rel);
}

Rotation exp_at(const Rotation& anchor, const TangentVec& tau) { return anchor * exp_so3(tau); }

double geodesic_distance(const Rotation& a, const Rotation& b) {
  const double c = ((a.transpose() * b).trace() - 1.0) / 2.0;
  return std::acos(std::clamp(c, -1.0, 1.0));
}

Rotation canonicalize(const Rotation& r_t, const Rotation& r_0, const SymmetryGroup& sym) {
  if (sym.elements.empty()) throw Error(ErrorCode::invalid_argument, "canonicalize: empty symmetry group");
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < sym.elements.size(); ++i) {
    const double d = geodesic_distance(sym.elements[i] * r_t, r_0);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return sym.elements[best] * r_t;
}

SymmetryGroup discretize_axis_symmetry(const Vec3& axis, double step_rad) {
  if (!(step_rad > 0.0)) throw Error(ErrorCode::invalid_step, "discretize_axis_symmetry: step must be > 0");
  if (axis.norm() < 1e-12) throw Error(ErrorCode::invalid_argument, "discretize_axis_symmetry: zero axis");
  const Vec3 n = axis.normalized();
  const auto count = static_cast<std::size_t>(std::ceil(2.0 * kPi / step_rad - 1e-12));
  SymmetryGroup g;
  g.source = SymmetryGroup::Source::discretized_continuous;
  g.axis = n;
  g.step_rad = step_rad;
  g.elements.clear();
  for (std::size_t i = 0; i < std::max<std::size_t>(count, 1); ++i)
    g.elements.push_back(exp_so3(n * (2.0 * kPi * double(i) / double(std::max<std::size_t>(count, 1)))));
  return g;
}

bool is_rotation(const Mat3& m, double tol) {
  const Mat3 err = m.transpose() * m - Mat3::Identity();
  return err.cwiseAbs().maxCoeff() < tol && std::abs(m.determinant() - 1.0) < tol;
}

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double uniform01(std::uint64_t& state) {
  return double(splitmix64(state) >> 11) * (1.0 / 9007199254740992.0);
}

Rotation random_rotation(std::uint64_t& state) {
  // Shoemake's uniform quaternion sampling.
  const double u1 = uniform01(state), u2 = uniform01(state), u3 = uniform01(state);
  const double a = std::sqrt(1.0 - u1), b = std::sqrt(u1);
  Eigen::Quaterniond q(a * std::sin(2 * kPi * u2), a * std::cos(2 * kPi * u2), b * std::sin(2 * kPi * u3),
                       b * std::cos(2 * kPi * u3));
  return q.normalized().toRotationMatrix();
}

}  // namespace mopr::so3
