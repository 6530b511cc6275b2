#include "mopr/io.hpp"

#include <json.hpp>
#include <png.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace mopr::io {

namespace {

struct PngFile {
  FILE* f = nullptr;
  png_structp png = nullptr;
  png_infop info = nullptr;

  ~PngFile() {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    if (f) std::fclose(f);
  }
};

void write_png_gray(const std::string& path, int w, int h, int bit_depth, const void* rows_base, std::size_t row_bytes) {
  PngFile pf;
  pf.f = std::fopen(path.c_str(), "wb");
  if (!pf.f) throw Error(ErrorCode::io, "cannot open for writing: " + path);
  pf.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  pf.info = png_create_info_struct(pf.png);
  if (setjmp(png_jmpbuf(pf.png))) throw Error(ErrorCode::io, "libpng failure writing " + path);
  png_init_io(pf.png, pf.f);
  png_set_IHDR(pf.png, pf.info, w, h, bit_depth, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(pf.png, pf.info);
  if (bit_depth == 16) png_set_swap(pf.png);  // rows are little-endian uint16
  for (int y = 0; y < h; ++y)
    png_write_row(pf.png, const_cast<png_bytep>(static_cast<const png_byte*>(rows_base) + std::size_t(y) * row_bytes));
  png_write_end(pf.png, nullptr);
}

}  // namespace

void save_depth_png16(const std::string& path, const ImageF& depth_m) {
  std::vector<std::uint16_t> buf(std::size_t(depth_m.width) * depth_m.height);
  for (std::size_t i = 0; i < buf.size(); ++i) {
    const double mm = double(depth_m.data[i]) * 1000.0;
    buf[i] = std::uint16_t(std::clamp(mm, 0.0, 65535.0) + 0.5);
  }
  write_png_gray(path, depth_m.width, depth_m.height, 16, buf.data(), std::size_t(depth_m.width) * 2);
}

void save_png8(const std::string& path, const ImageF& img) {
  std::vector<std::uint8_t> buf(std::size_t(img.width) * img.height);
  for (std::size_t i = 0; i < buf.size(); ++i)
    buf[i] = std::uint8_t(std::clamp(double(img.data[i]) * 255.0, 0.0, 255.0) + 0.5);
  write_png_gray(path, img.width, img.height, 8, buf.data(), std::size_t(img.width));
}

void save_png8(const std::string& path, const ImageU8& img) {
  write_png_gray(path, img.width, img.height, 8, img.data.data(), std::size_t(img.width));
}

void save_depth_csv(const std::string& path, const ImageF& depth_m) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::io, "cannot open for writing: " + path);
  out.precision(6);
  for (int y = 0; y < depth_m.height; ++y) {
    for (int x = 0; x < depth_m.width; ++x) out << (x ? "," : "") << depth_m.at(x, y);
    out << "\n";
  }
}

void save_ply(const std::string& path, const std::vector<Vec3>& points) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::io, "cannot open for writing: " + path);
  out << "ply\nformat ascii 1.0\nelement vertex " << points.size()
      << "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
  out.precision(8);
  for (const auto& p : points) out << p.x() << " " << p.y() << " " << p.z() << "\n";
}

namespace {

nlohmann::json pose_to_json(const Pose& p) {
  nlohmann::json j;
  std::vector<double> r(9);
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) r[std::size_t(i) * 3 + k] = p.rotation(i, k);
  j["rotation"] = r;
  j["translation"] = {p.translation.x(), p.translation.y(), p.translation.z()};
  return j;
}

Pose pose_from_json(const nlohmann::json& j) {
  Pose p;
  const auto r = j.at("rotation").get<std::vector<double>>();
  if (r.size() != 9) throw Error(ErrorCode::io, "pose: rotation must have 9 entries");
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) p.rotation(i, k) = r[std::size_t(i) * 3 + k];
  const auto t = j.at("translation").get<std::vector<double>>();
  if (t.size() != 3) throw Error(ErrorCode::io, "pose: translation must have 3 entries");
  p.translation = Vec3(t[0], t[1], t[2]);
  return p;
}

}  // namespace

std::string scene_to_json(const sim::SceneSpec& scene) {
  nlohmann::json j;
  j["version"] = 1;
  j["seed"] = scene.seed;
  j["camera"] = {{"fx", scene.camera.fx}, {"fy", scene.camera.fy}, {"cx", scene.camera.cx},
                 {"cy", scene.camera.cy}, {"width", scene.camera.width}, {"height", scene.camera.height}};
  j["bin"] = {{"min", {scene.bin.min.x(), scene.bin.min.y(), scene.bin.min.z()}},
              {"max", {scene.bin.max.x(), scene.bin.max.y(), scene.bin.max.z()}}};
  j["objects"] = nlohmann::json::array();
  for (const auto& o : scene.objects) {
    nlohmann::json jo = pose_to_json(o.pose);
    jo["model"] = o.model_id;
    j["objects"].push_back(jo);
  }
  return j.dump(2);
}

sim::SceneSpec scene_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    throw Error(ErrorCode::io, std::string("scene json parse error: ") + e.what());
  }
  sim::SceneSpec s;
  s.seed = j.value("seed", std::uint64_t(0));
  const auto& c = j.at("camera");
  s.camera.fx = c.at("fx");
  s.camera.fy = c.at("fy");
  s.camera.cx = c.at("cx");
  s.camera.cy = c.at("cy");
  s.camera.width = c.at("width");
  s.camera.height = c.at("height");
  if (j.contains("bin")) {
    const auto bmin = j["bin"].at("min").get<std::vector<double>>();
    const auto bmax = j["bin"].at("max").get<std::vector<double>>();
    s.bin.min = Vec3(bmin[0], bmin[1], bmin[2]);
    s.bin.max = Vec3(bmax[0], bmax[1], bmax[2]);
  }
  for (const auto& jo : j.at("objects")) {
    sim::Placement p;
    p.model_id = jo.at("model");
    p.pose = pose_from_json(jo);
    s.objects.push_back(std::move(p));
  }
  return s;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io, "cannot open for writing: " + path);
  out << text;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open for reading: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

sim::ObjectModel load_model_file(const std::string& path, const std::string& id) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open model file: " + path);
  sim::ObjectModel m;
  m.id = id;
  const auto ext = std::filesystem::path(path).extension().string();
  if (ext == ".obj")
    m.mesh = load_obj(in);
  else if (ext == ".stl")
    m.mesh = load_stl_ascii(in);
  else
    throw Error(ErrorCode::io, "unsupported mesh format: " + path);
  m.finalize();
  return m;
}

}  // namespace mopr::io
