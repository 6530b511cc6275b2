#pragma once

#include "mopr/types.hpp"

#include <array>
#include <iosfwd>
#include <string>
#include <vector>

namespace mopr {

struct TriMesh {
  std::vector<Vec3> vertices;                 // model frame, meters
  std::vector<std::array<int, 3>> triangles;  // CCW outward

  bool empty() const { return triangles.empty(); }
  double surface_area() const;
};

// Analytic solid primitives in the model frame. Object shapes are unions of
// these; voxelization tests voxel centers against the union directly, which
// stays exact for overlapping sub-solids where mesh parity tests would not.
struct SolidBox {
  Vec3 center = Vec3::Zero();
  Vec3 half_extent = Vec3::Zero();
};
struct SolidCylinder {
  Vec3 base_center = Vec3::Zero();  // axis along +z from here
  double radius = 0.0;
  double height = 0.0;
};
struct Solid {
  enum class Kind { box, cylinder } kind = Kind::box;
  SolidBox box;
  SolidCylinder cylinder;

  bool contains(const Vec3& p) const;
  static Solid make_box(const Vec3& center, const Vec3& half_extent);
  static Solid make_cylinder(const Vec3& base_center, double radius, double height);
};

TriMesh make_box_mesh(const Vec3& center, const Vec3& half_extent);
TriMesh make_cylinder_mesh(const Vec3& base_center, double radius, double height, int segments);
void append_mesh(TriMesh& dst, const TriMesh& src);

/// Area-weighted random surface points, deterministic per seed.
std::vector<Vec3> sample_surface(const TriMesh& mesh, int count, std::uint64_t seed);

// ASCII OBJ subset: `v x y z` and `f i j k` (1-based, no slashes) only.
TriMesh load_obj(std::istream& in);
void save_obj(std::ostream& out, const TriMesh& mesh);

// ASCII STL.
TriMesh load_stl_ascii(std::istream& in);

/// Parity ray-cast inside test; requires a watertight mesh.
bool mesh_contains(const TriMesh& mesh, const Vec3& p);

}  // namespace mopr
