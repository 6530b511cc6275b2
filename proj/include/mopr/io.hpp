#pragma once

#include "mopr/scenesim.hpp"

#include <string>

namespace mopr::io {

/// 16-bit grayscale PNG; values are meters * 1000, clamped to [0, 65535].
void save_depth_png16(const std::string& path, const ImageF& depth_m);

/// 8-bit grayscale PNG from floats in [0, 1].
void save_png8(const std::string& path, const ImageF& img);

/// 8-bit grayscale PNG from raw bytes.
void save_png8(const std::string& path, const ImageU8& img);

void save_depth_csv(const std::string& path, const ImageF& depth_m);

/// ASCII PLY point cloud.
void save_ply(const std::string& path, const std::vector<Vec3>& points);

std::string scene_to_json(const sim::SceneSpec& scene);
sim::SceneSpec scene_from_json(const std::string& text);

void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

sim::ObjectModel load_model_file(const std::string& path, const std::string& id);

}  // namespace mopr::io
