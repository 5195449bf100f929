#include "gsavatar/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gsavatar {

const char* param_class_name(ParamClass c) {
  switch (c) {
    case ParamClass::kGaussian: return "gaussian";
    case ParamClass::kSkinning: return "skinning";
    case ParamClass::kNonRigid: return "nonrigid";
    case ParamClass::kHashGrid: return "hashgrid";
    case ParamClass::kColor: return "color";
    case ParamClass::kLatent: return "latent";
    case ParamClass::kPose: return "pose";
  }
  return "unknown";
}

std::vector<ParamClass> all_param_classes() {
  return {ParamClass::kGaussian, ParamClass::kSkinning, ParamClass::kNonRigid, ParamClass::kHashGrid,
          ParamClass::kColor,    ParamClass::kLatent,   ParamClass::kPose};
}

ParamEntry& ParamStore::add(std::string name, Tensor* tensor, ParamClass cls, long gate,
                            std::function<double(long)> lr, bool per_gaussian) {
  if (find(name)) throw std::invalid_argument("duplicate parameter name " + name);
  ParamEntry e;
  e.name = std::move(name);
  e.tensor = tensor;
  e.cls = cls;
  e.gate = gate;
  e.lr = std::move(lr);
  e.per_gaussian = per_gaussian;
  e.m.assign(tensor->size(), 0.0);
  e.v.assign(tensor->size(), 0.0);
  entries_.push_back(std::move(e));
  return entries_.back();
}

ParamEntry* ParamStore::find(const std::string& name) {
  for (auto& e : entries_) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.tensor->zero_grad();
}

void ParamStore::step(long iteration, const AdamConfig& cfg) {
  for (auto& e : entries_) {
    if (iteration < e.gate) continue;
    Tensor& t = *e.tensor;
    if (e.m.size() != t.size()) {
      e.m.assign(t.size(), 0.0);
      e.v.assign(t.size(), 0.0);
    }
    ++e.steps;
    const double lr = e.lr(iteration);
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(e.steps));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(e.steps));
    const double shrink = 1.0 - lr * e.weight_decay;
    const bool masked = !e.frozen_cols.empty();
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (masked && e.frozen_cols[i % t.cols]) continue;
      const double g = t.grad[i];
      e.m[i] = cfg.beta1 * e.m[i] + (1.0 - cfg.beta1) * g;
      e.v[i] = cfg.beta2 * e.v[i] + (1.0 - cfg.beta2) * g * g;
      const double mh = e.m[i] / bc1, vh = e.v[i] / bc2;
      if (e.weight_decay != 0.0) t.value[i] *= shrink;
      t.value[i] -= lr * mh / (std::sqrt(vh) + cfg.eps);
    }
  }
}

void ParamStore::remap_gaussian_rows(std::span<const long> source) {
  for (auto& e : entries_) {
    if (!e.per_gaussian) continue;
    const std::size_t cols = e.tensor->cols;
    std::vector<double> m(source.size() * cols, 0.0), v(source.size() * cols, 0.0);
    for (std::size_t r = 0; r < source.size(); ++r) {
      if (source[r] < 0) continue;
      const auto s = static_cast<std::size_t>(source[r]);
      if ((s + 1) * cols > e.m.size()) continue;
      std::copy_n(e.m.begin() + static_cast<long>(s * cols), cols, m.begin() + static_cast<long>(r * cols));
      std::copy_n(e.v.begin() + static_cast<long>(s * cols), cols, v.begin() + static_cast<long>(r * cols));
    }
    e.m = std::move(m);
    e.v = std::move(v);
  }
}

bool ParamStore::consistent() const {
  for (const auto& e : entries_) {
    if (e.tensor->grad.size() != e.tensor->value.size()) return false;
    if (e.tensor->value.size() != e.tensor->rows * e.tensor->cols) return false;
  }
  return true;
}

std::function<double(long)> exponential_decay(double lr0, double final_factor, long total) {
  return [=](long t) {
    if (total <= 0) return lr0;
    const double f = std::clamp(static_cast<double>(t) / static_cast<double>(total), 0.0, 1.0);
    return lr0 * std::pow(final_factor, f);
  };
}

std::function<double(long)> log_linear(double lr0, double lr1, long total) {
  return [=](long t) {
    if (total <= 0) return lr0;
    const double f = std::clamp(static_cast<double>(t) / static_cast<double>(total), 0.0, 1.0);
    return std::exp(std::log(lr0) * (1.0 - f) + std::log(lr1) * f);
  };
}

std::function<double(long)> constant_lr(double lr) {
  return [=](long) { return lr; };
}

}  // namespace gsavatar
