#include "mopr/scenesim.hpp"

#include "mopr/io.hpp"
#include "mopr/losses.hpp"
#include "mopr/so3.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>

using namespace mopr;
using namespace mopr::sim;

namespace {

ObjectModel plane_model(double half) {
  ObjectModel m;
  m.id = "plane";
  m.mesh.vertices = {{-half, -half, 0}, {half, -half, 0}, {half, half, 0}, {-half, half, 0}};
  m.mesh.triangles = {{0, 1, 2}, {0, 2, 3}};
  m.finalize();
  return m;
}

ObjectModel sphere_model(double radius, int bands = 48) {
  ObjectModel m;
  m.id = "sphere";
  for (int b = 0; b <= bands / 2; ++b) {
    const double phi = M_PI * b / (bands / 2);
    for (int a = 0; a < bands; ++a) {
      const double th = 2 * M_PI * a / bands;
      m.mesh.vertices.emplace_back(radius * std::sin(phi) * std::cos(th), radius * std::sin(phi) * std::sin(th),
                                   radius * std::cos(phi));
    }
  }
  for (int b = 0; b < bands / 2; ++b)
    for (int a = 0; a < bands; ++a) {
      const int a1 = (a + 1) % bands;
      const int r0 = b * bands, r1 = (b + 1) * bands;
      m.mesh.triangles.push_back({r0 + a, r0 + a1, r1 + a});
      m.mesh.triangles.push_back({r0 + a1, r1 + a1, r1 + a});
    }
  m.finalize();
  return m;
}

ModelLibrary lib_with(std::initializer_list<ObjectModel> models) {
  ModelLibrary lib;
  for (const auto& m : models) lib.models.push_back(m);
  return lib;
}

SceneSpec two_box_overlap_scene(const CameraModel& cam) {
  // Front box partially covering a rear box.
  SceneSpec scene;
  scene.camera = cam;
  Placement a{"box", Pose{Rotation::Identity(), Vec3(0.0, 0.0, 0.50)}};
  Placement b{"box", Pose{Rotation::Identity(), Vec3(0.03, 0.01, 0.56)}};
  scene.objects = {a, b};
  return scene;
}

}  // namespace

TEST_CASE("fronto-parallel plane renders constant depth") {
  ModelLibrary lib = lib_with({plane_model(0.04)});
  SceneSpec scene;
  scene.camera = CameraModel{};
  scene.objects = {Placement{"plane", Pose{Rotation::Identity(), Vec3(0, 0, 0.5)}}};
  const Observation obs = render_depth(lib, scene);
  std::size_t covered = 0;
  for (float d : obs.depth.data)
    if (d > 0.f) {
      ++covered;
      CHECK(d == doctest::Approx(0.5).epsilon(1e-6));
    }
  CHECK(covered > 100);
}

TEST_CASE("fully hidden object has an empty mask") {
  ModelLibrary lib = ModelLibrary::builtin();
  SceneSpec scene;
  scene.camera = CameraModel{};
  scene.objects = {Placement{"box", Pose{Rotation::Identity(), Vec3(0, 0, 0.45)}},
                   Placement{"box", Pose{Rotation::Identity(), Vec3(0, 0, 0.60)}}};
  const Observation obs = render_depth(lib, scene);
  CHECK(count_nonzero(obs.masks[0]) > 0);
  CHECK(count_nonzero(obs.masks[1]) == 0);
}

TEST_CASE("sphere silhouette area matches the analytic disc") {
  ModelLibrary lib = lib_with({sphere_model(0.04)});
  SceneSpec scene;
  scene.camera = CameraModel{};
  scene.objects = {Placement{"sphere", Pose{Rotation::Identity(), Vec3(0, 0, 0.5)}}};
  const Observation obs = render_depth(lib, scene);
  const double analytic = M_PI * std::pow(0.04 * scene.camera.fx / 0.5, 2.0);
  CHECK(double(count_nonzero(obs.masks[0])) == doctest::Approx(analytic).epsilon(0.02));
}

TEST_CASE("depth and mask stay consistent on clean renders") {
  ModelLibrary lib = ModelLibrary::builtin();
  const SceneSpec scene = make_planted_scene(lib, PlantedSceneParams{}, 4);
  const Observation obs = render_depth(lib, scene);
  for (int y = 0; y < obs.depth.height; ++y)
    for (int x = 0; x < obs.depth.width; ++x) {
      int owners = 0;
      for (const auto& m : obs.masks) owners += m.at(x, y);
      if (obs.depth.at(x, y) > 0.f)
        CHECK(owners == 1);
      else
        CHECK(owners == 0);
    }
}

TEST_CASE("boundary extraction on contact and isolated objects") {
  ModelLibrary lib = ModelLibrary::builtin();
  const CameraModel cam;

  SUBCASE("isolated object has no overlap boundaries") {
    SceneSpec scene;
    scene.camera = cam;
    scene.objects = {Placement{"box", Pose{Rotation::Identity(), Vec3(0, 0, 0.5)}}};
    const Observation obs = render_depth(lib, scene);
    CHECK(count_nonzero(obs.boundaries[0].o_all) == 0);
    CHECK(count_nonzero(obs.boundaries[0].e_all) == 0);
  }

  SUBCASE("overlapping boxes produce contact boundaries along the shared silhouette") {
    const Observation obs = render_depth(lib, two_box_overlap_scene(cam));
    const auto& front = obs.boundaries[0];
    const auto& rear = obs.boundaries[1];
    CHECK(count_nonzero(front.o_all) > 0);
    CHECK(count_nonzero(rear.o_all) > 0);

    // Brute-force oracle: every O pixel is a contour pixel adjacent to the
    // other object's mask.
    BoundaryParams bp;
    for (int y = 0; y < cam.height; ++y)
      for (int x = 0; x < cam.width; ++x) {
        if (!front.o_all.at(x, y)) continue;
        CHECK(front.contour.at(x, y) == 1);
        bool adjacent = false;
        for (int dy = -bp.overlap_radius; dy <= bp.overlap_radius; ++dy)
          for (int dx = -bp.overlap_radius; dx <= bp.overlap_radius; ++dx) {
            const int qx = x + dx, qy = y + dy;
            if (qx >= 0 && qx < cam.width && qy >= 0 && qy < cam.height && obs.masks[1].at(qx, qy)) adjacent = true;
          }
        CHECK(adjacent);
      }

    // O subset of E, and the contact has a counterpart on the other object.
    for (int y = 0; y < cam.height; ++y)
      for (int x = 0; x < cam.width; ++x) {
        if (front.o_all.at(x, y)) CHECK(front.e_all.at(x, y) == 1);
        if (!front.o_all.at(x, y)) continue;
        bool counterpart = false;
        for (int dy = -bp.overlap_radius; dy <= bp.overlap_radius && !counterpart; ++dy)
          for (int dx = -bp.overlap_radius; dx <= bp.overlap_radius && !counterpart; ++dx) {
            const int qx = x + dx, qy = y + dy;
            if (qx >= 0 && qx < cam.width && qy >= 0 && qy < cam.height && rear.o_all.at(qx, qy))
              counterpart = true;
          }
        CHECK(counterpart);
      }
  }

  SUBCASE("extended boundary grows monotonically with the threshold") {
    const Observation obs = render_depth(lib, two_box_overlap_scene(cam));
    BoundaryParams bp5;
    bp5.extension_threshold = 5;
    BoundaryParams bp12;
    bp12.extension_threshold = 12;
    const auto b5 = extract_boundaries(obs, bp5);
    const auto b12 = extract_boundaries(obs, bp12);
    CHECK(count_nonzero(b12[0].e_all) >= count_nonzero(b5[0].e_all));
    for (std::size_t p = 0; p < b5[0].e_all.data.size(); ++p)
      if (b5[0].e_all.data[p]) CHECK(b12[0].e_all.data[p] == 1);
  }
}

TEST_CASE("render_edges at ground truth reproduces the clean extraction bit-exactly") {
  ModelLibrary lib = ModelLibrary::builtin();
  const SceneSpec scene = make_planted_scene(lib, PlantedSceneParams{}, 12);
  const Observation obs = render_depth(lib, scene);
  const auto again = render_edges(lib, obs.model_ids, obs.gt_poses, obs.camera);
  REQUIRE(again.size() == obs.boundaries.size());
  for (std::size_t i = 0; i < again.size(); ++i) {
    CHECK(again[i].o_all.data == obs.boundaries[i].o_all.data);
    CHECK(again[i].e_all.data == obs.boundaries[i].e_all.data);
  }
}

TEST_CASE("shifting a contact pair shifts the extended boundary centroid") {
  ModelLibrary lib = ModelLibrary::builtin();
  const CameraModel cam;
  const SceneSpec base = two_box_overlap_scene(cam);
  const double z = 0.50;
  const double shift_px = 20.0;
  const double shift_world = shift_px * z / cam.fx;

  const auto centroid = [](const ImageU8& img) {
    double cx = 0, cy = 0, n = 0;
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        if (img.at(x, y)) {
          cx += x;
          cy += y;
          n += 1;
        }
    return Vec2(cx / n, cy / n);
  };

  const auto e0 = render_edges(lib, {"box", "box"}, {base.objects[0].pose, base.objects[1].pose}, cam);
  SceneSpec shifted = base;
  // Per-object world shift scaled by its own depth, so every silhouette moves
  // by exactly shift_px in the image.
  (void)z;
  (void)shift_world;
  for (auto& o : shifted.objects) o.pose.translation.x() -= shift_px * o.pose.translation.z() / cam.fx;
  const auto e1 = render_edges(lib, {"box", "box"}, {shifted.objects[0].pose, shifted.objects[1].pose}, cam);
  REQUIRE(count_nonzero(e0[0].e_all) > 0);
  REQUIRE(count_nonzero(e1[0].e_all) > 0);
  const Vec2 c0 = centroid(e0[0].e_all), c1 = centroid(e1[0].e_all);
  CHECK(std::abs((c0.x() - c1.x()) - shift_px) < 1.0);
  CHECK(std::abs(c0.y() - c1.y()) < 1.0);
}

TEST_CASE("occlusion mask construction") {
  ModelLibrary lib = ModelLibrary::builtin();
  const CameraModel cam;
  const SceneSpec scene = two_box_overlap_scene(cam);
  std::vector<Pose> poses = {scene.objects[0].pose, scene.objects[1].pose};
  std::vector<std::string> ids = {"box", "box"};

  SUBCASE("no occluders yields an empty mask") {
    const ImageU8 m = occlusion_mask(1, {0}, {0}, lib, ids, poses, cam, 4);
    CHECK(count_nonzero(m) == 0);
  }
  SUBCASE("occluded-by state marks the dilated occluder silhouette") {
    const ImageU8 m = occlusion_mask(1, {1}, {0}, lib, ids, poses, cam, 4);
    const SoloRender solo = render_object(lib.at("box"), poses[0], cam);
    ImageU8 mask(cam.width, cam.height, 0);
    for (int y = solo.roi.y0; y < solo.roi.y1; ++y)
      for (int x = solo.roi.x0; x < solo.roi.x1; ++x)
        if (solo.depth_at(x, y) > 0.f) mask.at(x, y) = 1;
    const ImageU8 oracle = dilate(mask, 4);
    CHECK(m.data == oracle.data);

    const ImageU8 wider = occlusion_mask(1, {1}, {0}, lib, ids, poses, cam, 6);
    CHECK(count_nonzero(wider) >= count_nonzero(m));
  }
}

TEST_CASE("degrade") {
  ModelLibrary lib = ModelLibrary::builtin();
  const SceneSpec scene = make_planted_scene(lib, PlantedSceneParams{}, 21);
  const Observation obs = render_depth(lib, scene);

  SUBCASE("no-op parameters reproduce the observation") {
    const Observation same = degrade(obs, DegradeParams{0.0, 0.0, 0, 1});
    CHECK(same.depth.data == obs.depth.data);
    for (std::size_t i = 0; i < obs.masks.size(); ++i) CHECK(same.masks[i].data == obs.masks[i].data);
  }

  SUBCASE("dropout removes the expected fraction of pixels") {
    const double original = double(obs.cloud.size());
    double kept = 0.0;
    const int seeds = 10;
    for (int s = 0; s < seeds; ++s) {
      DegradeParams dp;
      dp.dropout_rate = 0.3;
      dp.seed = std::uint64_t(s);
      kept += double(degrade(obs, dp).cloud.size());
    }
    CHECK(kept / (seeds * original) == doctest::Approx(0.7).epsilon(0.01));
  }

  SUBCASE("boundary jitter stays within the configured bound") {
    DegradeParams dp;
    dp.boundary_jitter = 2;
    dp.seed = 5;
    const Observation noisy = degrade(obs, dp);
    for (std::size_t i = 0; i < obs.masks.size(); ++i) {
      const ImageU8 contour = mask_contour(obs.masks[i]);
      const ImageU8 near_contour = dilate(contour, dp.boundary_jitter);
      for (int y = 0; y < obs.depth.height; ++y)
        for (int x = 0; x < obs.depth.width; ++x)
          if (noisy.masks[i].at(x, y) != obs.masks[i].at(x, y)) CHECK(near_contour.at(x, y) == 1);
    }
  }

  SUBCASE("bit-exact per seed") {
    DegradeParams dp;
    dp.dropout_rate = 0.25;
    dp.depth_noise_sigma = 0.002;
    dp.boundary_jitter = 2;
    dp.seed = 9;
    const Observation a = degrade(obs, dp);
    const Observation b = degrade(obs, dp);
    CHECK(a.depth.data == b.depth.data);
    for (std::size_t i = 0; i < a.masks.size(); ++i) CHECK(a.masks[i].data == b.masks[i].data);
  }
}

TEST_CASE("voxelize") {
  SUBCASE("unit cube occupancy") {
    ObjectModel cube;
    cube.id = "unit";
    cube.mesh = make_box_mesh(Vec3::Zero(), Vec3(0.5, 0.5, 0.5));
    cube.solids = {Solid::make_box(Vec3::Zero(), Vec3(0.5, 0.5, 0.5))};
    cube.finalize();
    const OccupancyGrid g = voxelize(cube, Pose{}, 0.1);
    CHECK(double(g.count()) == doctest::Approx(1000.0).epsilon(0.10));
  }

  SUBCASE("occupied count is stable under rigid motion") {
    ModelLibrary lib = ModelLibrary::builtin();
    const auto& model = lib.at("lbracket");
    const OccupancyGrid base = voxelize(model, Pose{}, 0.004);
    std::uint64_t rng = 3;
    for (int i = 0; i < 5; ++i) {
      Pose p;
      p.rotation = so3::random_rotation(rng);
      p.translation = Vec3(so3::uniform01(rng), so3::uniform01(rng), so3::uniform01(rng));
      const OccupancyGrid moved = voxelize(model, p, 0.004);
      CHECK(std::abs(double(moved.count()) - double(base.count())) / double(base.count()) < 0.10);
    }
  }

  SUBCASE("empty model is an error") {
    ObjectModel empty;
    CHECK_THROWS_AS((void)voxelize(empty, Pose{}, 0.01), Error);
  }
}

TEST_CASE("pinhole projection") {
  CameraModel cam;
  cam.fx = 500;
  cam.fy = 500;
  cam.cx = 320;
  cam.cy = 240;
  cam.width = 640;
  cam.height = 480;
  const Vec2 p0 = project(cam, Vec3(0, 0, 1.0));
  CHECK(p0.x() == doctest::Approx(320.0));
  CHECK(p0.y() == doctest::Approx(240.0));
  const Vec2 p1 = project(cam, Vec3(0.1, 0, 1.0));
  CHECK(p1.x() == doctest::Approx(370.0));
  const Vec2 p2 = project(cam, Vec3(0.1, 0, 2.0));
  CHECK(p2.x() - 320.0 == doctest::Approx((p1.x() - 320.0) / 2));
  CHECK_THROWS_AS((void)project(cam, Vec3(0, 0, -0.1)), Error);
}

TEST_CASE("planted scenes respect the collision-free construction") {
  ModelLibrary lib = ModelLibrary::builtin();

  SUBCASE("single object") {
    PlantedSceneParams pp;
    pp.n_objects = 1;
    const SceneSpec scene = make_planted_scene(lib, pp, 7);
    CHECK(scene.objects.size() == 1);
  }

  SUBCASE("pairwise collision losses are zero") {
    PlantedSceneParams pp;
    pp.n_objects = 5;
    const SceneSpec scene = make_planted_scene(lib, pp, 77);
    std::vector<OccupancyGrid> grids;
    for (const auto& o : scene.objects) grids.push_back(voxelize(lib.at(o.model_id), o.pose, 0.004));
    for (std::size_t i = 0; i < grids.size(); ++i)
      for (std::size_t j = 0; j < grids.size(); ++j)
        if (i != j) CHECK(loss::collision_loss(grids[i], grids[j]) == 0.0);
  }

  SUBCASE("deterministic per seed") {
    PlantedSceneParams pp;
    pp.n_objects = 4;
    CHECK(io::scene_to_json(make_planted_scene(lib, pp, 5)) == io::scene_to_json(make_planted_scene(lib, pp, 5)));
  }
}

TEST_CASE("scene and mesh file round trips") {
  ModelLibrary lib = ModelLibrary::builtin();
  const SceneSpec scene = make_planted_scene(lib, PlantedSceneParams{}, 3);
  const SceneSpec back = io::scene_from_json(io::scene_to_json(scene));
  REQUIRE(back.objects.size() == scene.objects.size());
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    CHECK(back.objects[i].model_id == scene.objects[i].model_id);
    CHECK((back.objects[i].pose.rotation - scene.objects[i].pose.rotation).norm() < 1e-15);
    CHECK((back.objects[i].pose.translation - scene.objects[i].pose.translation).norm() < 1e-15);
  }

  std::stringstream obj;
  save_obj(obj, lib.at("tshape").mesh);
  const TriMesh re = load_obj(obj);
  CHECK(re.vertices.size() == lib.at("tshape").mesh.vertices.size());
  CHECK(re.triangles.size() == lib.at("tshape").mesh.triangles.size());

  const auto dir = std::filesystem::temp_directory_path() / "mopr_io_test";
  std::filesystem::create_directories(dir);
  const Observation obs = render_depth(lib, scene);
  io::save_depth_png16((dir / "depth.png").string(), obs.depth);
  io::save_png8((dir / "intensity.png").string(), obs.intensity);
  io::save_ply((dir / "cloud.ply").string(), obs.cloud);
  io::save_depth_csv((dir / "depth.csv").string(), obs.depth);
  CHECK(std::filesystem::file_size(dir / "depth.png") > 100);
  CHECK(std::filesystem::file_size(dir / "cloud.ply") > 100);
  std::filesystem::remove_all(dir);
}
