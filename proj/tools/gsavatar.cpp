// gsavatar: synthetic data, training, rendering and evaluation of
// articulated Gaussian avatars.

#include "gsavatar/checkpoint.hpp"
#include "gsavatar/gradcheck.hpp"
#include "gsavatar/image_io.hpp"
#include "gsavatar/metrics.hpp"
#include "gsavatar/synthetic.hpp"
#include "gsavatar/trainer.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

namespace fs = std::filesystem;
using namespace gsavatar;

namespace {

constexpr int kExitConfig = 2;

Config resolve_config(const std::string& path, const std::vector<std::string>& overrides) {
  Config cfg = path.empty() ? Config{} : Config::load(path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + kv + "' is not key=value", kv);
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

std::string numbered(int i, const std::string& suffix = "") {
  std::ostringstream os;
  os << std::setw(4) << std::setfill('0') << i << suffix << ".png";
  return os.str();
}

void write_frame(const fs::path& path, const Framebuffer& fb) {
  write_png(path.string(), fb.width, fb.height, 3, fb.rgb);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Articulated 3D Gaussian splatting avatars on the CPU"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "Configuration file");
    sub->add_option("--set", overrides, "Override a key, e.g. --set loss.mask=0.2");
  };

  std::string out_dir, data_dir, ckpt_path, poses_path, cameras_path, json_path;
  long iters = -1;
  bool no_nonrigid = false, quiet = false, inject_fault = false;
  int camera_index = 0;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic articulated dataset");
  add_config(synth);
  synth->add_option("-o,--out", out_dir, "Dataset directory")->required();

  auto* train_cmd = app.add_subcommand("train", "Train an avatar on a dataset");
  add_config(train_cmd);
  train_cmd->add_option("-d,--data", data_dir, "Dataset directory")->required();
  train_cmd->add_option("-o,--out", out_dir, "Output directory for checkpoint.gsck and metrics.csv")->required();
  train_cmd->add_option("--iters", iters, "Override schedule.iterations");
  train_cmd->add_flag("-q,--quiet", quiet, "Only print stage banners and evaluations");

  auto* render_cmd = app.add_subcommand("render", "Render every (pose, camera) pair");
  render_cmd->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
  render_cmd->add_option("--poses", poses_path, "Poses (motion file or dataset poses.json)")->required();
  render_cmd->add_option("--cameras", cameras_path, "cameras.json")->required();
  render_cmd->add_option("-o,--out", out_dir, "Output directory")->required();
  render_cmd->add_flag("--no-nonrigid", no_nonrigid, "Disable the non-rigid deformation");

  auto* animate_cmd = app.add_subcommand("animate", "Render a motion clip from one camera");
  animate_cmd->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
  animate_cmd->add_option("--motion", poses_path, "Motion file")->required();
  animate_cmd->add_option("--cameras", cameras_path, "cameras.json")->required();
  animate_cmd->add_option("--camera-index", camera_index, "Camera to render from");
  animate_cmd->add_option("-o,--out", out_dir, "Output directory")->required();
  animate_cmd->add_flag("--no-nonrigid", no_nonrigid, "Disable the non-rigid deformation");

  auto* eval_cmd = app.add_subcommand("eval", "PSNR / SSIM / mask IoU on every dataset frame");
  eval_cmd->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
  eval_cmd->add_option("-d,--data", data_dir, "Dataset directory")->required();
  eval_cmd->add_option("--json", json_path, "Also write the table as JSON");
  eval_cmd->add_flag("--no-nonrigid", no_nonrigid, "Disable the non-rigid deformation");

  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "Finite-difference audit of every parameter class");
  GradcheckOptions gc;
  gradcheck_cmd->add_option("--eps", gc.epsilon, "Central-difference step");
  gradcheck_cmd->add_option("--tol", gc.tolerance, "Relative error tolerance");
  gradcheck_cmd->add_option("--seed", gc.seed, "Micro-scene seed");
  gradcheck_cmd->add_flag("--inject-fault", inject_fault, "Flip the sign of the log-scale offset gradient");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      const Config cfg = resolve_config(config_path, overrides);
      write_synthetic_dataset(cfg.synth, out_dir);
      std::cout << "wrote dataset to " << out_dir << "\n";
      return 0;
    }
    if (*train_cmd) {
      Config cfg = resolve_config(config_path, overrides);
      if (iters >= 0) cfg.schedule.iterations = iters;
      cfg.validate();
      const Dataset ds = load_dataset(data_dir);
      TrainOptions opt;
      opt.out_dir = out_dir;
      opt.log = &std::cout;
      if (quiet) cfg.train.log_interval = 0;
      const TrainResult r = train(cfg, ds, opt);
      std::cout << "checkpoint " << r.checkpoint_path << " hash " << hex64(hash_file(r.checkpoint_path)) << "\n";
      std::cout << "metrics " << r.metrics_path << "\n";
      return 0;
    }
    if (*render_cmd || *animate_cmd) {
      const Checkpoint ck = load_checkpoint(ckpt_path);
      const auto poses = load_motion(poses_path);
      const auto cams = load_cameras(cameras_path);
      if (cams.empty()) throw std::runtime_error(cameras_path + ": no cameras");
      fs::create_directories(out_dir);
      FrameOptions fo;
      fo.nonrigid = !no_nonrigid;
      std::size_t written = 0;
      for (std::size_t p = 0; p < poses.size(); ++p) {
        FrameRequest req;
        req.pose = poses[p];
        if (*animate_cmd) {
          if (camera_index < 0 || static_cast<std::size_t>(camera_index) >= cams.size()) {
            throw std::runtime_error("camera index out of range");
          }
          req.camera = cams[static_cast<std::size_t>(camera_index)];
          write_frame(fs::path(out_dir) / numbered(static_cast<int>(p)), ck.model.forward(req, fo, ck.config.render).image);
          ++written;
          continue;
        }
        for (std::size_t c = 0; c < cams.size(); ++c) {
          req.camera = cams[c];
          std::ostringstream suffix;
          suffix << "_c" << std::setw(2) << std::setfill('0') << c;
          write_frame(fs::path(out_dir) / numbered(static_cast<int>(p), suffix.str()),
                      ck.model.forward(req, fo, ck.config.render).image);
          ++written;
        }
      }
      std::cout << "wrote " << written << " images to " << out_dir << "\n";
      return 0;
    }
    if (*eval_cmd) {
      const Checkpoint ck = load_checkpoint(ckpt_path);
      const Dataset ds = load_dataset(data_dir);
      const auto rows = evaluate_frames(ck.model, ds, ck.config.render, !no_nonrigid);
      std::cout << std::left << std::setw(7) << "frame" << std::setw(7) << "split" << std::right << std::setw(9)
                << "psnr" << std::setw(9) << "ssim" << std::setw(9) << "iou" << std::setw(11) << "scattered" << "\n";
      nlohmann::json j = nlohmann::json::array();
      double sum[2][4] = {{0, 0, 0, 0}, {0, 0, 0, 0}};
      int count[2] = {0, 0};
      for (const auto& r : rows) {
        std::cout << std::left << std::setw(7) << r.frame << std::setw(7) << (r.train ? "train" : "novel") << std::right
                  << std::fixed << std::setprecision(3) << std::setw(9) << r.psnr << std::setw(9) << r.ssim
                  << std::setw(9) << r.iou << std::setw(11) << r.scattered << "\n";
        const int s = r.train ? 0 : 1;
        sum[s][0] += r.psnr;
        sum[s][1] += r.ssim;
        sum[s][2] += r.iou;
        sum[s][3] += static_cast<double>(r.scattered);
        ++count[s];
        j.push_back({{"frame", r.frame}, {"split", r.train ? "train" : "novel"}, {"psnr", r.psnr}, {"ssim", r.ssim},
                     {"iou", r.iou}, {"scattered", r.scattered}, {"finite", r.finite}});
      }
      for (int s = 0; s < 2; ++s) {
        if (count[s] == 0) continue;
        std::cout << std::left << std::setw(7) << "mean" << std::setw(7) << (s == 0 ? "train" : "novel") << std::right
                  << std::setw(9) << sum[s][0] / count[s] << std::setw(9) << sum[s][1] / count[s] << std::setw(9)
                  << sum[s][2] / count[s] << std::setw(11) << sum[s][3] / count[s] << "\n";
      }
      if (!json_path.empty()) {
        std::ofstream out(json_path);
        out << j.dump(1) << "\n";
      }
      return 0;
    }
    if (*gradcheck_cmd) {
      gc.flip_delta_scale_grad = inject_fault;
      const GradcheckReport r = run_gradcheck(gc);
      std::cout << format_gradcheck(r, gc.tolerance);
      return r.pass ? 0 : 1;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    if (!e.key().empty()) std::cerr << "key: " << e.key() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
