#pragma once

#include <string>
#include <vector>

#include "insfusion/geometry.hpp"
#include "insfusion/tensor.hpp"

namespace insfusion {

struct SceneConfig {
  double bev_min = -20.0, bev_max = 20.0;  // square BEV range, meters
  Index grid = 40;                         // BEV cells per axis
  int boxes_min = 2, boxes_max = 8;
  int cameras = 2;
  Index img_h = 64, img_w = 96;
  double camera_distance = 40.0;  // from BEV center
  double camera_height = 6.0;
  double focal = 48.0;
  int clutter_points = 600;
  double box_point_density = 6.0;  // LiDAR returns per m^2 of box surface
  double max_box_overlap = 0.3;    // BEV IoU between sampled boxes
  double render_step = 0.15;       // face sampling step for image splatting
  int num_classes = 3;

  double cell_size() const { return (bev_max - bev_min) / static_cast<double>(grid); }
  void validate() const;
};

struct NoiseSpec {
  double yaw_sigma_deg = 0.0;
  double trans_sigma_m = 0.0;
  double depth_sigma = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
  bool zero() const { return yaw_sigma_deg == 0.0 && trans_sigma_m == 0.0 && depth_sigma == 0.0; }
};

struct Scene {
  std::uint64_t seed = 0;
  std::vector<Box3D> boxes;
  Tensor points;                      // N×4: x, y, z, intensity
  std::vector<Tensor> images;         // per camera, H×W×1 grayscale
  std::vector<CameraCalib> calibs;    // believed calibration (noise applies here)
  double depth_scale = 1.0;           // believed depth scale for camera lifting

  bool operator==(const Scene& other) const;
};

Scene generate_scene(std::uint64_t seed, const SceneConfig& cfg);

// Copy with perturbed calibration / depth scale; boxes, points and rendered
// images stay untouched.
Scene inject_noise(const Scene& scene, const NoiseSpec& noise);

// One file per split: magic, version, scene count, offset table, payloads.
void write_dataset(const std::string& path, const std::vector<Scene>& scenes);
std::vector<Scene> read_dataset(const std::string& path);

// Per-class size profiles (class 0 small .. 2 large).
struct ClassProfile {
  double l_lo, l_hi, w_lo, w_hi, h_lo, h_hi;
};
const std::vector<ClassProfile>& class_profiles();

std::uint64_t scene_hash(const Scene& s);

}  // namespace insfusion
