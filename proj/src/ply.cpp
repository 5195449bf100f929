#include "gsavatar/gaussians.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace gsavatar {

namespace {

std::vector<std::string> property_names() {
  std::vector<std::string> names = {"x", "y", "z", "log_scale_0", "log_scale_1", "log_scale_2",
                                    "rot_0", "rot_1", "rot_2", "rot_3", "alpha_logit"};
  for (std::size_t k = 0; k < kFeatureDim; ++k) names.push_back("f_" + std::to_string(k));
  return names;
}

// row values in file order
void pack_row(const GaussianSet& set, std::size_t i, std::vector<double>& out) {
  out.clear();
  for (int a = 0; a < 3; ++a) out.push_back(set.positions(i, a));
  for (int a = 0; a < 3; ++a) out.push_back(set.log_scales(i, a));
  for (int a = 0; a < 4; ++a) out.push_back(set.rotations(i, a));
  out.push_back(set.opacity_logits(i, 0));
  for (std::size_t k = 0; k < kFeatureDim; ++k) out.push_back(set.features(i, k));
}

void unpack_row(GaussianSet& set, std::size_t i, const std::vector<double>& v) {
  std::size_t c = 0;
  for (int a = 0; a < 3; ++a) set.positions(i, a) = v[c++];
  for (int a = 0; a < 3; ++a) set.log_scales(i, a) = v[c++];
  for (int a = 0; a < 4; ++a) set.rotations(i, a) = v[c++];
  set.opacity_logits(i, 0) = v[c++];
  for (std::size_t k = 0; k < kFeatureDim; ++k) set.features(i, k) = v[c++];
}

enum class PropType { kFloat, kDouble };

}  // namespace

void save_ply(const GaussianSet& set, const std::string& path, PlyFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PlyError("cannot open " + path + " for writing");
  const auto names = property_names();
  out << "ply\n";
  out << (format == PlyFormat::kAscii ? "format ascii 1.0\n" : "format binary_little_endian 1.0\n");
  out << "element vertex " << set.size() << "\n";
  for (const auto& n : names) out << "property float " << n << "\n";
  out << "end_header\n";
  std::vector<double> row;
  if (format == PlyFormat::kAscii) {
    out << std::setprecision(std::numeric_limits<float>::max_digits10);
    for (std::size_t i = 0; i < set.size(); ++i) {
      pack_row(set, i, row);
      for (std::size_t c = 0; c < row.size(); ++c) {
        if (c) out << ' ';
        out << static_cast<float>(row[c]);
      }
      out << '\n';
    }
  } else {
    static_assert(std::endian::native == std::endian::little, "binary PLY writer assumes little endian");
    std::vector<float> buf;
    for (std::size_t i = 0; i < set.size(); ++i) {
      pack_row(set, i, row);
      buf.assign(row.begin(), row.end());
      out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
  }
  if (!out) throw PlyError("write failed for " + path);
}

GaussianSet load_ply(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PlyError("cannot open " + path);
  std::string line;
  std::size_t line_no = 0;
  auto next_line = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  };
  auto fail = [&](const std::string& msg) -> PlyError {
    return PlyError(path + ":" + std::to_string(line_no) + ": " + msg);
  };

  if (!next_line() || line != "ply") throw fail("missing 'ply' magic");
  bool ascii = false;
  bool have_format = false;
  std::size_t count = 0;
  bool in_vertex = false;
  bool have_vertex = false;
  std::vector<std::string> props;
  std::vector<PropType> types;
  while (true) {
    if (!next_line()) throw fail("unexpected end of header");
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "end_header") break;
    if (key == "comment" || key == "obj_info" || key.empty()) continue;
    if (key == "format") {
      std::string fmt, ver;
      ls >> fmt >> ver;
      if (fmt == "ascii") ascii = true;
      else if (fmt == "binary_little_endian") ascii = false;
      else throw fail("unsupported format '" + fmt + "'");
      have_format = true;
    } else if (key == "element") {
      std::string name;
      long long n = -1;
      ls >> name >> n;
      if (name == "vertex") {
        if (n < 0) throw fail("bad vertex count");
        count = static_cast<std::size_t>(n);
        in_vertex = true;
        have_vertex = true;
      } else {
        if (n != 0) throw fail("unsupported element '" + name + "'");
        in_vertex = false;
      }
    } else if (key == "property") {
      std::string type, name;
      ls >> type >> name;
      if (!in_vertex) continue;
      if (type == "float" || type == "float32") types.push_back(PropType::kFloat);
      else if (type == "double" || type == "float64") types.push_back(PropType::kDouble);
      else throw fail("property '" + name + "' has unsupported type '" + type + "'");
      props.push_back(name);
    } else {
      throw fail("unknown header keyword '" + key + "'");
    }
  }
  if (!have_format) throw fail("missing format line");
  if (!have_vertex) throw fail("missing vertex element");

  const auto expected = property_names();
  std::vector<int> column(expected.size(), -1);
  for (std::size_t p = 0; p < props.size(); ++p) {
    for (std::size_t e = 0; e < expected.size(); ++e) {
      if (props[p] == expected[e]) column[e] = static_cast<int>(p);
    }
  }
  for (std::size_t e = 0; e < expected.size(); ++e) {
    if (column[e] < 0) throw fail("missing property '" + expected[e] + "'");
  }

  GaussianSet set;
  set.resize(count);
  std::vector<double> raw(props.size()), row(expected.size());
  for (std::size_t i = 0; i < count; ++i) {
    if (ascii) {
      if (!next_line()) throw fail("expected " + std::to_string(count) + " vertices, got " + std::to_string(i));
      std::istringstream ls(line);
      for (std::size_t p = 0; p < props.size(); ++p) {
        std::string tok;
        if (!(ls >> tok)) throw fail("vertex " + std::to_string(i) + ": missing field '" + props[p] + "'");
        char* end = nullptr;
        const double v = std::strtod(tok.c_str(), &end);
        if (end == tok.c_str() || *end != '\0') {
          throw fail("vertex " + std::to_string(i) + ": field '" + props[p] + "' is not a number: '" + tok + "'");
        }
        raw[p] = types[p] == PropType::kFloat ? static_cast<double>(static_cast<float>(v)) : v;
      }
      std::string extra;
      if (ls >> extra) throw fail("vertex " + std::to_string(i) + ": trailing data '" + extra + "'");
    } else {
      for (std::size_t p = 0; p < props.size(); ++p) {
        if (types[p] == PropType::kFloat) {
          float f;
          if (!in.read(reinterpret_cast<char*>(&f), sizeof f)) {
            throw PlyError(path + ": truncated binary data at vertex " + std::to_string(i) + ", field '" + props[p] + "'");
          }
          raw[p] = f;
        } else {
          double d;
          if (!in.read(reinterpret_cast<char*>(&d), sizeof d)) {
            throw PlyError(path + ": truncated binary data at vertex " + std::to_string(i) + ", field '" + props[p] + "'");
          }
          raw[p] = d;
        }
      }
    }
    for (std::size_t e = 0; e < expected.size(); ++e) row[e] = raw[static_cast<std::size_t>(column[e])];
    unpack_row(set, i, row);
  }
  set.rebuild_knn();
  return set;
}

}  // namespace gsavatar
