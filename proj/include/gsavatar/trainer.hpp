#pragma once

// Staged training loop and frame evaluation.

#include "gsavatar/config.hpp"
#include "gsavatar/model.hpp"
#include "gsavatar/optimizer.hpp"
#include "gsavatar/synthetic.hpp"

#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace gsavatar {

class NonFiniteLossError : public std::runtime_error {
 public:
  NonFiniteLossError(const std::string& msg, std::vector<std::size_t> gaussians)
      : std::runtime_error(msg), gaussians_(std::move(gaussians)) {}
  const std::vector<std::size_t>& gaussians() const { return gaussians_; }

 private:
  std::vector<std::size_t> gaussians_;
};

struct MetricsRow {
  long iteration = 0;
  LossTerms loss;
  std::optional<double> psnr;  // held-out frame, at eval iterations
};

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);

/// Registers every model tensor with its stage gate and learning-rate schedule.
void register_parameters(ParamStore& store, AvatarModel& model, const Config& cfg);

/// 1.1 x the largest camera distance from the mean camera center.
double scene_extent_from_cameras(const std::vector<Camera>& cams);

struct TrainOptions {
  std::string out_dir;         // checkpoint.gsck and metrics.csv; empty writes nothing
  std::ostream* log = nullptr; // stage banners and progress
  /// Called after each optimizer step with the iteration just completed.
  std::function<void(long, const AvatarModel&)> on_step;
};

struct TrainResult {
  AvatarModel model;
  std::vector<MetricsRow> metrics;
  std::string checkpoint_path;
  std::string metrics_path;
};

/// Model initialized from a dataset, before any step.
AvatarModel init_model(const Config& cfg, const Dataset& ds);

TrainResult train(const Config& cfg, const Dataset& ds, const TrainOptions& opt = {});

/// Splats whose observed center lies farther than 3 x their largest scale
/// from the template mesh posed with the frame's bones and ground-truth
/// weights.
std::size_t count_scattered_splats(const FrameState& s, const SkinnedTemplate& tmpl);

struct FrameEval {
  int frame = 0;
  bool train = true;
  double psnr = 0.0;
  double ssim = 0.0;
  double iou = 0.0;
  bool finite = true;
  std::size_t scattered = 0;
};

/// Renders a dataset frame without augmentation. Training frames use their
/// learned pose row and latent; other frames use the stored pose.
FrameState render_dataset_frame(const AvatarModel& model, const Dataset& ds, const DatasetFrame& f,
                                const RenderOptions& render, bool nonrigid);
std::vector<FrameEval> evaluate_frames(const AvatarModel& model, const Dataset& ds, const RenderOptions& render,
                                       bool nonrigid);

}  // namespace gsavatar
