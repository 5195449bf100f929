#pragma once

// Declarative configuration: TOML-style "[section]" headers and
// "key = value" lines. Unknown sections or keys are rejected.

#include "gsavatar/deformation.hpp"
#include "gsavatar/gaussians.hpp"
#include "gsavatar/rasterizer.hpp"
#include "gsavatar/skinning.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>

namespace gsavatar {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& msg, std::string key = {}) : std::runtime_error(msg), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct SynthConfig {
  int bones = 2;
  double bone_length = 0.5;
  double radius = 0.16;
  int width = 64;
  int height = 64;
  int train_frames = 40;
  int novel_frames = 4;
  double bend_max_deg = 60.0;
  double novel_bend_deg = 35.0;
  int gt_gaussians = 6000;
  double gt_opacity = 0.95;
  double camera_distance = 2.4;
  double fov_deg = 40.0;
  double stripe_frequency = 4.0;
  std::uint64_t seed = 7;
};

struct ModelConfig {
  int n_init = 50000;
  int knn = 5;
  int color_width = 64;
  SkinningFieldConfig skinning;
  NonRigidConfig nonrigid;
};

struct LossConfig {
  double l1 = 1.0;
  double perc = 0.01;
  double mask = 0.1;
  double skin = 10.0;
  double skin_late = 0.1;
  long skin_switch = 1000;
  double isopos = 1.0;
  double isocov = 100.0;
  int skin_samples = 1024;
  std::string perceptual = "pyramid_l1";
};

struct ScheduleConfig {
  long iterations = 15000;
  long gaussian_gate = 1000;
  long nonrigid_gate = 3000;
  long pose_gate = 5000;
  long eval_interval = 500;
};

struct LrConfig {
  double skinning = 1e-4;
  double networks = 1e-3;
  double network_decay = 0.1;
  double position = 1.6e-4;
  double position_final = 1.6e-6;
  double feature = 2.5e-3;
  double opacity = 5e-2;
  double scale = 5e-3;
  double rotation = 1e-3;
  double latent_weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-15;
  bool optimize_pose_scale = false;
};

struct DensifySchedule {
  long interval = 100;
  double until_fraction = 0.6;
  DensifyConfig params{.scene_extent = 0.0};  // 0: derive from the cameras
};

struct AugmentConfig {
  bool pose_noise = true;
  double pose_noise_std = 0.1;
  double pose_noise_prob = 0.5;
  double viewdir_max_deg = 45.0;
};

struct TrainConfig {
  std::uint64_t seed = 0;
  long log_interval = 1;
};

struct Config {
  SynthConfig synth;
  ModelConfig model;
  LossConfig loss;
  ScheduleConfig schedule;
  LrConfig lr;
  DensifySchedule densify;
  AugmentConfig augment;
  RenderOptions render;
  TrainConfig train;

  /// Throws ConfigError on syntax errors, unknown keys or bad values.
  static Config parse(const std::string& text, const std::string& origin = "<string>");
  static Config load(const std::string& path);
  /// "section.key = value" assignment on top of the current values.
  void set(const std::string& dotted_key, const std::string& value);
  /// Every key with its resolved value, in the file format.
  std::string dump() const;
  void validate() const;
};

}  // namespace gsavatar
