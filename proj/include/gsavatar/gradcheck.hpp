#pragma once

// Finite-difference audit of the full training objective on a micro-scene
// (5 Gaussians, 2 bones, 8x8 pixels), one row per parameter class.

#include "gsavatar/optimizer.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace gsavatar {

struct GradcheckOptions {
  double epsilon = 1e-6;
  double tolerance = 1e-3;
  int top_entries = 4;     // largest-gradient entries per tensor
  int random_entries = 4;  // plus random entries with non-negligible gradient
  std::uint64_t seed = 3;
  bool flip_delta_scale_grad = false;
};

struct GradcheckEntry {
  std::string tensor;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradcheckRow {
  ParamClass cls = ParamClass::kGaussian;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  GradcheckEntry worst;
  bool pass = false;
};

struct GradcheckReport {
  double loss = 0.0;
  std::vector<GradcheckRow> rows;  // one per registered class
  bool pass = false;
};

GradcheckReport run_gradcheck(const GradcheckOptions& opt = {});
std::string format_gradcheck(const GradcheckReport& report, double tolerance);

}  // namespace gsavatar
