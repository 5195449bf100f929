#include "gsavatar/skeleton.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace gsavatar {

using nlohmann::json;

Vec3 BoundingBox::normalize(const Vec3& p, bool* clamped) const {
  const Vec3 u = (p - lo).cwiseQuotient(extent());
  const Vec3 c = u.cwiseMax(0.0).cwiseMin(1.0);
  if (clamped) *clamped = (c != u);
  return c;
}

bool BoundingBox::contains(const Vec3& p) const {
  return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
}

SkinnedTemplate::SkinnedTemplate(std::vector<std::string> names, std::vector<int> parents,
                                 std::vector<Vec3> rest_joints, std::vector<Vec3> vertices,
                                 std::vector<std::array<std::uint32_t, 3>> triangles,
                                 std::vector<std::vector<double>> weights, double bbox_padding)
    : names_(std::move(names)),
      parents_(std::move(parents)),
      rest_joints_(std::move(rest_joints)),
      vertices_(std::move(vertices)),
      triangles_(std::move(triangles)),
      weights_(std::move(weights)),
      bbox_padding_(bbox_padding) {
  const std::size_t b = parents_.size();
  if (b == 0) throw TemplateError("template has no joints");
  if (rest_joints_.size() != b) throw TemplateError("rest joint count does not match parents");
  if (names_.empty()) {
    for (std::size_t i = 0; i < b; ++i) names_.push_back("joint" + std::to_string(i));
  }
  if (names_.size() != b) throw TemplateError("joint name count does not match parents");

  int roots = 0;
  children_.assign(b, {});
  for (std::size_t i = 0; i < b; ++i) {
    const int p = parents_[i];
    if (p < 0) {
      ++roots;
      continue;
    }
    if (static_cast<std::size_t>(p) >= b || static_cast<std::size_t>(p) == i) {
      throw TemplateError("joint " + std::to_string(i) + " has invalid parent " + std::to_string(p));
    }
    children_[static_cast<std::size_t>(p)].push_back(static_cast<int>(i));
  }
  if (roots != 1) throw TemplateError("kinematic tree must have exactly one root");

  // breadth-first from the root; unreached joints mean a cycle
  const int root = static_cast<int>(std::find(parents_.begin(), parents_.end(), -1) - parents_.begin());
  order_.push_back(root);
  for (std::size_t head = 0; head < order_.size(); ++head) {
    for (int c : children_[static_cast<std::size_t>(order_[head])]) order_.push_back(c);
  }
  if (order_.size() != b) throw TemplateError("kinematic tree contains a cycle");

  if (weights_.size() != vertices_.size()) {
    throw TemplateError("skinning weight rows do not match vertex count");
  }
  for (std::size_t v = 0; v < weights_.size(); ++v) {
    if (weights_[v].size() != b) throw TemplateError("skinning weight row has wrong width");
    double s = 0.0;
    for (double w : weights_[v]) {
      if (w < 0.0 || w > 1.0) throw TemplateError("skinning weight outside [0,1]");
      s += w;
    }
    if (std::abs(s - 1.0) > 1e-6) {
      throw TemplateError("skinning weights of vertex " + std::to_string(v) + " do not sum to 1");
    }
  }
  for (const auto& t : triangles_) {
    for (auto idx : t) {
      if (idx >= vertices_.size()) throw TemplateError("triangle references missing vertex");
    }
  }

  cumulative_area_.resize(triangles_.size());
  double acc = 0.0;
  for (std::size_t t = 0; t < triangles_.size(); ++t) {
    acc += triangle_area(t);
    cumulative_area_[t] = acc;
  }

  if (!vertices_.empty()) {
    Vec3 lo = vertices_[0], hi = vertices_[0];
    for (const auto& v : vertices_) {
      lo = lo.cwiseMin(v);
      hi = hi.cwiseMax(v);
    }
    // proportional padding per axis; a floor keeps flat axes non-degenerate
    const Vec3 pad = ((hi - lo) * bbox_padding_).cwiseMax(1e-3);
    bbox_.lo = lo - pad;
    bbox_.hi = hi + pad;
  }
}

double SkinnedTemplate::triangle_area(std::size_t t) const {
  const auto& tri = triangles_[t];
  const Vec3& a = vertices_[tri[0]];
  const Vec3& b = vertices_[tri[1]];
  const Vec3& c = vertices_[tri[2]];
  return 0.5 * (b - a).cross(c - a).norm();
}

double SkinnedTemplate::surface_area() const {
  return cumulative_area_.empty() ? 0.0 : cumulative_area_.back();
}

std::vector<SurfaceSample> SkinnedTemplate::sample_surface(std::size_t n,
                                                           std::mt19937_64& rng) const {
  if (triangles_.empty() || !(surface_area() > 0.0)) {
    throw TemplateError("cannot sample an empty template surface");
  }
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::vector<SurfaceSample> out;
  out.reserve(n);
  const double total = surface_area();
  for (std::size_t i = 0; i < n; ++i) {
    const double r = u01(rng) * total;
    auto it = std::upper_bound(cumulative_area_.begin(), cumulative_area_.end(), r);
    if (it == cumulative_area_.end()) --it;
    const auto t = static_cast<std::size_t>(it - cumulative_area_.begin());
    const double s1 = std::sqrt(u01(rng));
    const double s2 = u01(rng);
    const Vec3 bary{1.0 - s1, s1 * (1.0 - s2), s1 * s2};
    const auto& tri = triangles_[t];
    SurfaceSample s;
    s.triangle = static_cast<std::uint32_t>(t);
    s.barycentric = bary;
    s.position = bary[0] * vertices_[tri[0]] + bary[1] * vertices_[tri[1]] + bary[2] * vertices_[tri[2]];
    s.weights.assign(bone_count(), 0.0);
    for (int k = 0; k < 3; ++k) {
      for (std::size_t b = 0; b < bone_count(); ++b) s.weights[b] += bary[k] * weights_[tri[k]][b];
    }
    out.push_back(std::move(s));
  }
  return out;
}

double SkinnedTemplate::distance_to_surface(const Vec3& p) const {
  return distance_to_mesh(p, vertices_, triangles_);
}

json SkinnedTemplate::to_json() const {
  json joints = json::array();
  for (std::size_t i = 0; i < bone_count(); ++i) {
    const Vec3& r = rest_joints_[i];
    joints.push_back({{"name", names_[i]}, {"parent", parents_[i]}, {"rest_position", {r.x(), r.y(), r.z()}}});
  }
  json verts = json::array();
  for (const auto& v : vertices_) verts.push_back({v.x(), v.y(), v.z()});
  json tris = json::array();
  for (const auto& t : triangles_) tris.push_back({t[0], t[1], t[2]});
  return {{"joints", joints},
          {"mesh", {{"vertices", verts}, {"triangles", tris}, {"weights", weights_}}},
          {"bbox_padding", bbox_padding_}};
}

SkinnedTemplate SkinnedTemplate::from_json(const json& j) {
  try {
    std::vector<std::string> names;
    std::vector<int> parents;
    std::vector<Vec3> rest;
    for (const auto& jt : j.at("joints")) {
      names.push_back(jt.value("name", "joint" + std::to_string(names.size())));
      parents.push_back(jt.at("parent").get<int>());
      const auto r = jt.at("rest_position").get<std::vector<double>>();
      if (r.size() != 3) throw TemplateError("rest_position must have 3 entries");
      rest.emplace_back(r[0], r[1], r[2]);
    }
    const auto& mesh = j.at("mesh");
    std::vector<Vec3> verts;
    for (const auto& v : mesh.at("vertices")) {
      const auto p = v.get<std::vector<double>>();
      if (p.size() != 3) throw TemplateError("vertex must have 3 coordinates");
      verts.emplace_back(p[0], p[1], p[2]);
    }
    std::vector<std::array<std::uint32_t, 3>> tris;
    for (const auto& t : mesh.at("triangles")) tris.push_back(t.get<std::array<std::uint32_t, 3>>());
    auto weights = mesh.at("weights").get<std::vector<std::vector<double>>>();
    return SkinnedTemplate(std::move(names), std::move(parents), std::move(rest), std::move(verts),
                           std::move(tris), std::move(weights), j.value("bbox_padding", 0.1));
  } catch (const json::exception& e) {
    throw TemplateError(std::string("malformed template json: ") + e.what());
  }
}

SkinnedTemplate SkinnedTemplate::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw TemplateError("cannot open template file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw TemplateError("cannot parse template file " + path + ": " + e.what());
  }
  return from_json(j);
}

void SkinnedTemplate::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw TemplateError("cannot write template file " + path);
  out << to_json().dump(1) << '\n';
}

double point_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  // Ericson, closest point on triangle
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return ap.norm();
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return bp.norm();
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return (p - (a + ab * (d1 / (d1 - d3)))).norm();
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return cp.norm();
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return (p - (a + ac * (d2 / (d2 - d6)))).norm();
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return (p - (b + (c - b) * w)).norm();
  }
  const double denom = 1.0 / (va + vb + vc);
  const double v = vb * denom, w = vc * denom;
  return (p - (a + ab * v + ac * w)).norm();
}

std::vector<Vec3> pose_vertices(const SkinnedTemplate& tmpl, const std::vector<Mat4>& bones) {
  std::vector<Vec3> out;
  out.reserve(tmpl.vertices().size());
  for (std::size_t v = 0; v < tmpl.vertices().size(); ++v) {
    Mat4 t = Mat4::Zero();
    for (std::size_t b = 0; b < tmpl.bone_count(); ++b) t += tmpl.weights()[v][b] * bones[b];
    out.push_back(transform_point(t, tmpl.vertices()[v]));
  }
  return out;
}

double distance_to_mesh(const Vec3& p, const std::vector<Vec3>& vertices,
                        const std::vector<std::array<std::uint32_t, 3>>& triangles) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& t : triangles) {
    best = std::min(best, point_triangle_distance(p, vertices[t[0]], vertices[t[1]], vertices[t[2]]));
  }
  return best;
}

// ---------------------------------------------------------------------------

PoseParams PoseParams::identity(std::size_t bones) {
  PoseParams p;
  p.local_rotations.assign(bones, Quat::identity());
  return p;
}

std::vector<double> PoseParams::flatten() const {
  std::vector<double> f;
  f.reserve(flat_size(local_rotations.size()));
  f.insert(f.end(), {translation.x(), translation.y(), translation.z()});
  f.insert(f.end(), {global_rotation.w, global_rotation.x, global_rotation.y, global_rotation.z});
  for (const auto& q : local_rotations) f.insert(f.end(), {q.w, q.x, q.y, q.z});
  f.push_back(scale);
  return f;
}

PoseParams PoseParams::unflatten(std::span<const double> f, std::size_t bones) {
  if (f.size() != flat_size(bones)) throw std::invalid_argument("pose vector has wrong size");
  PoseParams p;
  p.translation = {f[0], f[1], f[2]};
  p.global_rotation = {f[3], f[4], f[5], f[6]};
  for (std::size_t b = 0; b < bones; ++b) {
    const std::size_t o = 7 + 4 * b;
    p.local_rotations.push_back({f[o], f[o + 1], f[o + 2], f[o + 3]});
  }
  p.scale = f[7 + 4 * bones];
  return p;
}

json PoseParams::to_json() const {
  json locals = json::array();
  for (const auto& q : local_rotations) locals.push_back({q.w, q.x, q.y, q.z});
  return {{"translation", {translation.x(), translation.y(), translation.z()}},
          {"global_rotation", {global_rotation.w, global_rotation.x, global_rotation.y, global_rotation.z}},
          {"local_rotations", locals},
          {"scale", scale}};
}

PoseParams PoseParams::from_json(const json& j) {
  PoseParams p;
  const auto t = j.at("translation").get<std::array<double, 3>>();
  p.translation = {t[0], t[1], t[2]};
  const auto g = j.at("global_rotation").get<std::array<double, 4>>();
  p.global_rotation = {g[0], g[1], g[2], g[3]};
  for (const auto& q : j.at("local_rotations")) {
    const auto a = q.get<std::array<double, 4>>();
    p.local_rotations.push_back({a[0], a[1], a[2], a[3]});
  }
  p.scale = j.value("scale", 1.0);
  return p;
}

std::vector<double> PoseGrad::flatten() const {
  std::vector<double> f{translation.x(), translation.y(), translation.z(), global_rotation.w,
                        global_rotation.x, global_rotation.y, global_rotation.z};
  for (const auto& q : local_rotations) f.insert(f.end(), {q.w, q.x, q.y, q.z});
  f.push_back(scale);
  return f;
}

PoseGrad& PoseGrad::operator+=(const PoseGrad& o) {
  translation += o.translation;
  global_rotation = Quat::from_vec(global_rotation.as_vec() + o.global_rotation.as_vec());
  for (std::size_t i = 0; i < local_rotations.size(); ++i) {
    local_rotations[i] = Quat::from_vec(local_rotations[i].as_vec() + o.local_rotations[i].as_vec());
  }
  scale += o.scale;
  return *this;
}

BoneTransforms forward_kinematics(const SkinnedTemplate& tmpl, const PoseParams& pose,
                                  FkCache* cache) {
  const std::size_t b = tmpl.bone_count();
  if (pose.local_rotations.size() != b) {
    throw std::invalid_argument("pose has " + std::to_string(pose.local_rotations.size()) +
                                " local rotations, template has " + std::to_string(b) + " joints");
  }
  FkCache local_cache;
  FkCache& c = cache ? *cache : local_cache;
  c.local.assign(b, Mat4::Identity());
  c.chain.assign(b, Mat4::Identity());
  for (int j : tmpl.topological_order()) {
    const auto ju = static_cast<std::size_t>(j);
    const Mat3 r = quat_to_rotmat(pose.local_rotations[ju]);
    const Vec3& rest = tmpl.rest_joints()[ju];
    c.local[ju] = make_transform(r, rest - r * rest);
    const int p = tmpl.parents()[ju];
    c.chain[ju] = p < 0 ? c.local[ju] : Mat4(c.chain[static_cast<std::size_t>(p)] * c.local[ju]);
  }
  c.global = make_transform(pose.scale * quat_to_rotmat(pose.global_rotation), pose.translation);
  BoneTransforms bones(b);
  for (std::size_t j = 0; j < b; ++j) bones[j] = c.global * c.chain[j];
  return bones;
}

PoseGrad forward_kinematics_backward(const SkinnedTemplate& tmpl, const PoseParams& pose,
                                     const FkCache& c, const std::vector<Mat4>& d_bones) {
  const std::size_t b = tmpl.bone_count();
  PoseGrad g(b);
  auto top = [](Mat4 m) {
    m.row(3).setZero();
    return m;
  };
  Mat4 d_global = Mat4::Zero();
  std::vector<Mat4> d_chain(b, Mat4::Zero());
  for (std::size_t j = 0; j < b; ++j) {
    const Mat4 db = top(d_bones[j]);
    d_global += db * c.chain[j].transpose();
    d_chain[j] += top(c.global.transpose() * db);
  }
  const auto& order = tmpl.topological_order();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const auto j = static_cast<std::size_t>(*it);
    const int p = tmpl.parents()[j];
    Mat4 d_local;
    if (p < 0) {
      d_local = d_chain[j];
    } else {
      const auto pu = static_cast<std::size_t>(p);
      d_chain[pu] += top(d_chain[j] * c.local[j].transpose());
      d_local = top(c.chain[pu].transpose() * d_chain[j]);
    }
    const Vec3& rest = tmpl.rest_joints()[j];
    const Mat3 d_rot = d_local.topLeftCorner<3, 3>() - d_local.topRightCorner<3, 1>() * rest.transpose();
    g.local_rotations[j] = quat_to_rotmat_backward(pose.local_rotations[j], d_rot);
  }
  g.translation = d_global.topRightCorner<3, 1>();
  const Mat3 d_linear = d_global.topLeftCorner<3, 3>();
  const Mat3 rg = quat_to_rotmat(pose.global_rotation);
  g.global_rotation = quat_to_rotmat_backward(pose.global_rotation, pose.scale * d_linear);
  g.scale = (d_linear.array() * rg.array()).sum();
  return g;
}

std::vector<PoseParams> load_motion(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open motion file " + path);
  json j;
  in >> j;
  const json& frames = j.is_object() && j.contains("frames") ? j.at("frames") : j;
  std::vector<PoseParams> out;
  for (const auto& f : frames) out.push_back(PoseParams::from_json(f.contains("pose") ? f.at("pose") : f));
  return out;
}

void save_motion(const std::string& path, const std::vector<PoseParams>& poses) {
  json j = json::array();
  for (const auto& p : poses) j.push_back(p.to_json());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write motion file " + path);
  out << j.dump(1) << '\n';
}

}  // namespace gsavatar
