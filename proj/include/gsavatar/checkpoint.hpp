#pragma once

// Single-file checkpoint archive.
//
//   GSAVATAR-CKPT <version>\n
//   section <name> <bytes>\n<bytes>          config (resolved dump), template (JSON), meta
//   tensor <name> <rows> <cols>\n<rows*cols little-endian f64>
//   ...
//   end\n

#include "gsavatar/config.hpp"
#include "gsavatar/model.hpp"

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>

namespace gsavatar {

inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  Config config;
  long iteration = 0;
  AvatarModel model;
};

void save_checkpoint(const std::string& path, const Config& cfg, long iteration, AvatarModel& model);
Checkpoint load_checkpoint(const std::string& path);

std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t hash_file(const std::string& path);
std::string hex64(std::uint64_t v);

}  // namespace gsavatar
