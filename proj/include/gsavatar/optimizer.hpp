#pragma once

// Registry of learnable tensors with Adam state, learning-rate schedules and
// stage gates.

#include "gsavatar/tensor.hpp"

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace gsavatar {

/// Grouping used by the gradient audit and reports.
enum class ParamClass { kGaussian, kSkinning, kNonRigid, kHashGrid, kColor, kLatent, kPose };
const char* param_class_name(ParamClass c);
std::vector<ParamClass> all_param_classes();

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-15;
};

struct ParamEntry {
  std::string name;
  Tensor* tensor = nullptr;
  ParamClass cls = ParamClass::kGaussian;
  bool per_gaussian = false;  // rows follow densification
  long gate = 0;              // first iteration that updates this tensor
  std::function<double(long)> lr;  // learning rate at an iteration
  double weight_decay = 0.0;       // decoupled, multiplied by lr
  std::vector<unsigned char> frozen_cols;  // optional per-column freeze mask
  std::vector<double> m, v;
  long steps = 0;
};

class ParamStore {
 public:
  ParamEntry& add(std::string name, Tensor* tensor, ParamClass cls, long gate, std::function<double(long)> lr,
                  bool per_gaussian = false);

  std::vector<ParamEntry>& entries() { return entries_; }
  const std::vector<ParamEntry>& entries() const { return entries_; }
  ParamEntry* find(const std::string& name);

  void zero_grad();
  /// One Adam step at `iteration`; tensors before their gate are untouched.
  void step(long iteration, const AdamConfig& cfg);

  /// Rebuilds per-Gaussian optimizer state after a density change:
  /// source[i] >= 0 copies row source[i], -1 starts a fresh row.
  void remap_gaussian_rows(std::span<const long> source);

  /// Checks that every tensor has matching grad/value sizes.
  bool consistent() const;

 private:
  std::vector<ParamEntry> entries_;
};

/// lr0 * final_factor^(t / total)
std::function<double(long)> exponential_decay(double lr0, double final_factor, long total);
/// log-linear interpolation from lr0 to lr1 over `total` iterations.
std::function<double(long)> log_linear(double lr0, double lr1, long total);
std::function<double(long)> constant_lr(double lr);

}  // namespace gsavatar
