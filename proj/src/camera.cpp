#include "gsavatar/camera.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace gsavatar {

Camera Camera::look_at(const Vec3& eye, const Vec3& target, const Vec3& up, int width, int height,
                       double fov_y_deg) {
  const Vec3 z = (target - eye).normalized();
  const Vec3 y = (-up + up.dot(z) * z).normalized();
  const Vec3 x = y.cross(z);
  Mat3 r;
  r.row(0) = x.transpose();
  r.row(1) = y.transpose();
  r.row(2) = z.transpose();
  Camera c;
  c.width = width;
  c.height = height;
  c.fy = 0.5 * height / std::tan(0.5 * fov_y_deg * std::numbers::pi / 180.0);
  c.fx = c.fy;
  c.cx = 0.5 * width;
  c.cy = 0.5 * height;
  c.world_to_camera = make_transform(r, -r * eye);
  return c;
}

nlohmann::json Camera::to_json() const {
  nlohmann::json m = nlohmann::json::array();
  for (int r = 0; r < 4; ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < 4; ++c) row.push_back(world_to_camera(r, c));
    m.push_back(row);
  }
  return {{"fx", fx}, {"fy", fy}, {"cx", cx}, {"cy", cy}, {"width", width}, {"height", height},
          {"near", near}, {"far", far}, {"world_to_camera", m}};
}

Camera Camera::from_json(const nlohmann::json& j) {
  Camera c;
  c.fx = j.at("fx").get<double>();
  c.fy = j.at("fy").get<double>();
  c.cx = j.at("cx").get<double>();
  c.cy = j.at("cy").get<double>();
  c.width = j.at("width").get<int>();
  c.height = j.at("height").get<int>();
  c.near = j.value("near", 0.01);
  c.far = j.value("far", 100.0);
  const auto& m = j.at("world_to_camera");
  for (int r = 0; r < 4; ++r) {
    for (int k = 0; k < 4; ++k) c.world_to_camera(r, k) = m.at(r).at(k).get<double>();
  }
  if (!c.valid()) throw std::invalid_argument("invalid camera parameters");
  return c;
}

std::vector<Camera> load_cameras(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  const auto j = nlohmann::json::parse(in);
  std::vector<Camera> cams;
  for (const auto& c : j.at("cameras")) cams.push_back(Camera::from_json(c));
  return cams;
}

void save_cameras(const std::string& path, const std::vector<Camera>& cams) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& c : cams) arr.push_back(c.to_json());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << nlohmann::json{{"cameras", arr}}.dump(1) << "\n";
}

}  // namespace gsavatar
