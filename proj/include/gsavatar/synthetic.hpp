#pragma once

// Synthetic articulated scenes: a capsule chain along +y with smooth
// ground-truth skinning weights, textured ground-truth Gaussians posed by
// linear blend skinning, and oracle-rendered images and masks.

#include "gsavatar/camera.hpp"
#include "gsavatar/config.hpp"
#include "gsavatar/image_io.hpp"
#include "gsavatar/rasterizer.hpp"
#include "gsavatar/skeleton.hpp"

#include <string>
#include <vector>

namespace gsavatar {

/// Bones of length `bone_length` stacked from y = -B*L/2 upwards, each joint
/// at the base of its bone. Weights blend over +-radius around interior joints.
SkinnedTemplate make_capsule_chain(int bones, double bone_length, double radius, int rings_per_bone = 12,
                                   int segments = 16);

/// Every interior joint bent by `degrees` about +z.
PoseParams bend_pose(std::size_t bones, double degrees);

/// Dense textured Gaussians on the template surface (canonical space).
struct GroundTruthAvatar {
  std::vector<Vec3> positions;
  std::vector<std::vector<double>> weights;
  std::vector<Vec3> colors;
  double sigma = 0.0;
  double opacity = 0.95;
};

GroundTruthAvatar make_ground_truth(const SkinnedTemplate& tmpl, const SynthConfig& cfg);
Vec3 bone_base_color(std::size_t bone);

/// Ground truth posed with ground-truth LBS.
SplatScene pose_ground_truth(const GroundTruthAvatar& gt, const BoneTransforms& bones);

/// Color image and binary mask (opacity > 0.5) from the reference renderer.
struct OracleView {
  Image rgb;
  Image mask;
};
OracleView render_oracle(const GroundTruthAvatar& gt, const SkinnedTemplate& tmpl, const PoseParams& pose,
                         const Camera& cam, const RenderOptions& opt = {});

Camera orbit_camera(const SynthConfig& cfg, double azimuth_deg, double elevation_deg = 10.0);

struct DatasetFrame {
  int index = 0;
  bool train = true;
  int camera = 0;
  double bend_deg = 0.0;
  PoseParams pose;
  std::string image_path;  // relative to the dataset root
  std::string mask_path;
  Image rgb;
  Image mask;
};

struct Dataset {
  std::string root;
  SkinnedTemplate tmpl;
  std::vector<Camera> cameras;
  std::vector<DatasetFrame> frames;

  std::vector<const DatasetFrame*> split(bool train) const;
};

/// Writes template.json, cameras.json, poses.json, frames/NNNN.png, masks/NNNN.png.
void write_synthetic_dataset(const SynthConfig& cfg, const std::string& dir);
Dataset load_dataset(const std::string& dir);

}  // namespace gsavatar
