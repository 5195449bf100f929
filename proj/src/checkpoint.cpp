#include "gsavatar/checkpoint.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace gsavatar {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr const char* kMagic = "GSAVATAR-CKPT";

void write_section(std::ostream& os, const std::string& name, const std::string& bytes) {
  os << "section " << name << " " << bytes.size() << "\n";
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void write_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
  os << "tensor " << name << " " << t.rows << " " << t.cols << "\n";
  os.write(reinterpret_cast<const char*>(t.value.data()), static_cast<std::streamsize>(t.value.size() * sizeof(double)));
}

std::string read_line(std::istream& in, const std::string& path) {
  std::string line;
  if (!std::getline(in, line)) throw CheckpointError(path + ": truncated checkpoint");
  return line;
}

}  // namespace

void save_checkpoint(const std::string& path, const Config& cfg, long iteration, AvatarModel& model) {
  std::ostringstream os(std::ios::binary);
  os << kMagic << " " << kCheckpointVersion << "\n";
  write_section(os, "config", cfg.dump());
  write_section(os, "template", model.tmpl.to_json().dump());
  write_section(os, "meta", nlohmann::json{{"iteration", iteration}, {"gaussians", model.gaussians.size()}}.dump());
  for (const auto& nt : model.named_tensors()) write_tensor(os, nt.name, *nt.tensor);
  os << "end\n";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path);
  const std::string bytes = os.str();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  {
    std::istringstream header(read_line(in, path));
    std::string magic;
    int version = -1;
    header >> magic >> version;
    if (magic != kMagic) throw CheckpointError(path + ": not a checkpoint file");
    if (version != kCheckpointVersion) {
      throw CheckpointError(path + ": checkpoint version " + std::to_string(version) + " does not match supported version " +
                            std::to_string(kCheckpointVersion));
    }
  }
  std::map<std::string, std::string> sections;
  std::map<std::string, Tensor> tensors;
  std::vector<std::string> order;
  for (;;) {
    std::istringstream ls(read_line(in, path));
    std::string kind, name;
    ls >> kind;
    if (kind == "end") break;
    if (kind == "section") {
      std::size_t bytes = 0;
      ls >> name >> bytes;
      std::string data(bytes, '\0');
      if (!in.read(data.data(), static_cast<std::streamsize>(bytes))) throw CheckpointError(path + ": truncated section " + name);
      sections[name] = std::move(data);
    } else if (kind == "tensor") {
      std::size_t rows = 0, cols = 0;
      ls >> name >> rows >> cols;
      if (!ls) throw CheckpointError(path + ": malformed tensor header");
      Tensor t(rows, cols);
      if (!in.read(reinterpret_cast<char*>(t.value.data()), static_cast<std::streamsize>(t.value.size() * sizeof(double)))) {
        throw CheckpointError(path + ": truncated tensor " + name);
      }
      tensors[name] = std::move(t);
    } else {
      throw CheckpointError(path + ": unexpected record '" + kind + "'");
    }
  }
  for (const char* required : {"config", "template", "meta"}) {
    if (!sections.count(required)) throw CheckpointError(path + ": missing section " + required);
  }

  Checkpoint ck;
  ck.config = Config::parse(sections["config"], path + "#config");
  const auto meta = nlohmann::json::parse(sections["meta"]);
  ck.iteration = meta.at("iteration").get<long>();
  SkinnedTemplate tmpl = SkinnedTemplate::from_json(nlohmann::json::parse(sections["template"]));
  const auto pose_it = tensors.find("poses");
  if (pose_it == tensors.end()) throw CheckpointError(path + ": missing tensor poses");
  std::vector<PoseParams> poses(pose_it->second.rows, PoseParams::identity(tmpl.bone_count()));
  ModelConfig mcfg = ck.config.model;
  mcfg.n_init = 1;  // replaced below
  ck.model = AvatarModel(std::move(tmpl), mcfg, poses, 0);
  ck.model.config = ck.config.model;
  const auto pos_it = tensors.find("gaussians.position");
  if (pos_it == tensors.end()) throw CheckpointError(path + ": missing tensor gaussians.position");
  ck.model.gaussians.resize(pos_it->second.rows);
  for (const auto& nt : ck.model.named_tensors()) {
    const auto it = tensors.find(nt.name);
    if (it == tensors.end()) throw CheckpointError(path + ": missing tensor " + nt.name);
    if (it->second.rows != nt.tensor->rows || it->second.cols != nt.tensor->cols) {
      throw CheckpointError(path + ": tensor " + nt.name + " has shape " + std::to_string(it->second.rows) + "x" +
                            std::to_string(it->second.cols) + ", expected " + std::to_string(nt.tensor->rows) + "x" +
                            std::to_string(nt.tensor->cols));
    }
    *nt.tensor = std::move(it->second);
  }
  ck.model.gaussians.rebuild_knn(static_cast<std::size_t>(ck.config.model.knn));
  return ck;
}

std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t h) {
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path);
  std::vector<unsigned char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return fnv1a64(data);
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

}  // namespace gsavatar
