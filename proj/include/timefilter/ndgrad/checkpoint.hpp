#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "timefilter/ndgrad/parameters.hpp"

namespace timefilter::ndgrad {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Contents of a checkpoint file. See docs/checkpoint_format.md for the byte layout.
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string model_hash;
  std::string config_json;
  ParameterStore params;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace timefilter::ndgrad
