#pragma once

// Pinhole camera with a world-to-camera rigid transform. Camera space looks
// down +z; pixel (x, y) has its center at (x + 0.5, y + 0.5).

#include "gsavatar/geometry.hpp"

#include <nlohmann/json_fwd.hpp>

#include <string>
#include <vector>

namespace gsavatar {

struct Camera {
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
  int width = 1, height = 1;
  Mat4 world_to_camera = Mat4::Identity();
  double near = 0.01, far = 100.0;

  Mat3 rotation() const { return world_to_camera.topLeftCorner<3, 3>(); }
  Vec3 translation() const { return world_to_camera.topRightCorner<3, 1>(); }
  Vec3 center() const { return -rotation().transpose() * translation(); }
  bool valid() const { return fx > 0 && fy > 0 && near < far && width > 0 && height > 0; }

  /// Camera at `eye` looking at `target`; image y grows along -up.
  static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, int width, int height,
                        double fov_y_deg);

  nlohmann::json to_json() const;
  static Camera from_json(const nlohmann::json& j);
};

std::vector<Camera> load_cameras(const std::string& path);
void save_cameras(const std::string& path, const std::vector<Camera>& cams);

}  // namespace gsavatar
