#include "mopr/mesh.hpp"

#include "mopr/so3.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

namespace mopr {

double TriMesh::surface_area() const {
  double a = 0.0;
  for (const auto& t : triangles) {
    const Vec3 e1 = vertices[t[1]] - vertices[t[0]];
    const Vec3 e2 = vertices[t[2]] - vertices[t[0]];
    a += 0.5 * e1.cross(e2).norm();
  }
  return a;
}

bool Solid::contains(const Vec3& p) const {
  if (kind == Kind::box) {
    const Vec3 d = (p - box.center).cwiseAbs();
    return d.x() <= box.half_extent.x() && d.y() <= box.half_extent.y() && d.z() <= box.half_extent.z();
  }
  const Vec3 d = p - cylinder.base_center;
  if (d.z() < 0.0 || d.z() > cylinder.height) return false;
  return d.x() * d.x() + d.y() * d.y() <= cylinder.radius * cylinder.radius;
}

Solid Solid::make_box(const Vec3& center, const Vec3& half_extent) {
  Solid s;
  s.kind = Kind::box;
  s.box = SolidBox{center, half_extent};
  return s;
}

Solid Solid::make_cylinder(const Vec3& base_center, double radius, double height) {
  Solid s;
  s.kind = Kind::cylinder;
  s.cylinder = SolidCylinder{base_center, radius, height};
  return s;
}

TriMesh make_box_mesh(const Vec3& c, const Vec3& h) {
  TriMesh m;
  for (int i = 0; i < 8; ++i)
    m.vertices.push_back(c + Vec3((i & 1) ? h.x() : -h.x(), (i & 2) ? h.y() : -h.y(), (i & 4) ? h.z() : -h.z()));
  // 12 triangles, outward CCW.
  const int f[12][3] = {{0, 2, 1}, {1, 2, 3}, {4, 5, 6}, {5, 7, 6}, {0, 1, 4}, {1, 5, 4},
                        {2, 6, 3}, {3, 6, 7}, {0, 4, 2}, {2, 4, 6}, {1, 3, 5}, {3, 7, 5}};
  for (auto& t : f) m.triangles.push_back({t[0], t[1], t[2]});
  return m;
}

TriMesh make_cylinder_mesh(const Vec3& base, double radius, double height, int segments) {
  TriMesh m;
  const int n = std::max(segments, 3);
  for (int i = 0; i < n; ++i) {
    const double a = 2.0 * M_PI * i / n;
    const Vec3 rim(radius * std::cos(a), radius * std::sin(a), 0.0);
    m.vertices.push_back(base + rim);
    m.vertices.push_back(base + rim + Vec3(0, 0, height));
  }
  const int bc = int(m.vertices.size());
  m.vertices.push_back(base);
  m.vertices.push_back(base + Vec3(0, 0, height));
  for (int i = 0; i < n; ++i) {
    const int j = (i + 1) % n;
    const int b0 = 2 * i, t0 = 2 * i + 1, b1 = 2 * j, t1 = 2 * j + 1;
    m.triangles.push_back({b0, b1, t0});
    m.triangles.push_back({t0, b1, t1});
    m.triangles.push_back({bc, b1, b0});      // bottom cap, normal -z
    m.triangles.push_back({bc + 1, t0, t1});  // top cap, normal +z
  }
  return m;
}

void append_mesh(TriMesh& dst, const TriMesh& src) {
  const int off = int(dst.vertices.size());
  dst.vertices.insert(dst.vertices.end(), src.vertices.begin(), src.vertices.end());
  for (const auto& t : src.triangles) dst.triangles.push_back({t[0] + off, t[1] + off, t[2] + off});
}

std::vector<Vec3> sample_surface(const TriMesh& mesh, int count, std::uint64_t seed) {
  std::vector<Vec3> out;
  if (mesh.empty() || count <= 0) return out;
  std::vector<double> cum;
  double total = 0.0;
  for (const auto& t : mesh.triangles) {
    const Vec3 e1 = mesh.vertices[t[1]] - mesh.vertices[t[0]];
    const Vec3 e2 = mesh.vertices[t[2]] - mesh.vertices[t[0]];
    total += 0.5 * e1.cross(e2).norm();
    cum.push_back(total);
  }
  if (total <= 0.0) return out;
  std::uint64_t state = seed;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    const double r = so3::uniform01(state) * total;
    const auto it = std::lower_bound(cum.begin(), cum.end(), r);
    const auto& t = mesh.triangles[std::size_t(it - cum.begin())];
    double u = so3::uniform01(state), v = so3::uniform01(state);
    if (u + v > 1.0) {
      u = 1.0 - u;
      v = 1.0 - v;
    }
    out.push_back(mesh.vertices[t[0]] + u * (mesh.vertices[t[1]] - mesh.vertices[t[0]]) +
                  v * (mesh.vertices[t[2]] - mesh.vertices[t[0]]));
  }
  return out;
}

TriMesh load_obj(std::istream& in) {
  TriMesh m;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "v") {
      double x, y, z;
      ss >> x >> y >> z;
      if (!ss.fail()) m.vertices.emplace_back(x, y, z);
    } else if (tag == "f") {
      int a, b, c;
      ss >> a >> b >> c;
      if (!ss.fail()) m.triangles.push_back({a - 1, b - 1, c - 1});
    }
  }
  for (const auto& t : m.triangles)
    for (int k : t)
      if (k < 0 || k >= int(m.vertices.size())) throw Error(ErrorCode::io, "load_obj: face index out of range");
  return m;
}

void save_obj(std::ostream& out, const TriMesh& mesh) {
  out.precision(12);
  for (const auto& v : mesh.vertices) out << "v " << v.x() << " " << v.y() << " " << v.z() << "\n";
  for (const auto& t : mesh.triangles) out << "f " << t[0] + 1 << " " << t[1] + 1 << " " << t[2] + 1 << "\n";
}

TriMesh load_stl_ascii(std::istream& in) {
  TriMesh m;
  std::string tok;
  std::vector<Vec3> tri;
  while (in >> tok) {
    if (tok == "vertex") {
      double x, y, z;
      in >> x >> y >> z;
      tri.emplace_back(x, y, z);
      if (tri.size() == 3) {
        const int base = int(m.vertices.size());
        m.vertices.insert(m.vertices.end(), tri.begin(), tri.end());
        m.triangles.push_back({base, base + 1, base + 2});
        tri.clear();
      }
    }
  }
  return m;
}

bool mesh_contains(const TriMesh& mesh, const Vec3& p) {
  // Parity along +x with a slightly tilted direction to dodge edge hits.
  const Vec3 dir = Vec3(1.0, 1e-4, 2e-4).normalized();
  int crossings = 0;
  for (const auto& t : mesh.triangles) {
    const Vec3& a = mesh.vertices[t[0]];
    const Vec3 e1 = mesh.vertices[t[1]] - a;
    const Vec3 e2 = mesh.vertices[t[2]] - a;
    const Vec3 pv = dir.cross(e2);
    const double det = e1.dot(pv);
    if (std::abs(det) < 1e-14) continue;
    const Vec3 tv = p - a;
    const double u = tv.dot(pv) / det;
    if (u < 0.0 || u > 1.0) continue;
    const Vec3 qv = tv.cross(e1);
    const double v = dir.dot(qv) / det;
    if (v < 0.0 || u + v > 1.0) continue;
    const double dist = e2.dot(qv) / det;
    if (dist > 1e-12) ++crossings;
  }
  return (crossings % 2) == 1;
}

}  // namespace mopr
