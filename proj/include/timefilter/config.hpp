#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include "timefilter/data.hpp"
#include "timefilter/model.hpp"

namespace timefilter {

/// Invalid config key or value; the message starts with the key path.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DatasetSection {
  std::string path;
  bool date_column = true;
  std::optional<data::SplitSizes> splits;  // published or 70/10/20 when absent
};

struct WindowSection {
  std::size_t lookback = 96;
  std::size_t horizon = 96;
  std::size_t stride = 1;
  std::size_t eval_stride = 1;
};

struct ModelSection {
  std::size_t patch_len = 16;
  std::size_t d_model = 64;
  std::size_t heads = 8;
  double alpha = 0.5;
  std::size_t e_layers = 2;
  std::size_t d_ff = 128;
};

struct PsfSection {
  double top_p = 0.5;
  psf::Strategy strategy = psf::Strategy::TimeFilter;
  bool weight_edges_by_gate = false;
  std::uint64_t seed = 0;
  std::optional<std::size_t> ablation_k;
};

struct LossSection {
  double lambda_dyn = 0.01;
  double lambda_imp = 0.01;
  int dyn_sign = 1;
  double imp_eps = 1e-10;
};

struct TrainSection {
  double lr = 1e-3;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  std::optional<std::size_t> micro_batch;  // gradient accumulation chunk, defaults to batch_size
  std::uint64_t seed = 0;
  std::size_t patience = 3;
  double clip_norm = 5.0;
};

/// Windows per forward pass: micro_batch capped at batch_size.
std::size_t chunk_size(const TrainSection& train);

struct RunConfig {
  DatasetSection dataset;
  WindowSection window;
  ModelSection model;
  PsfSection psf;
  LossSection loss;
  TrainSection train;
};

/// Strict parse: unknown keys and ill-typed values raise ConfigError naming
/// the key path. Missing keys keep their defaults. Relative dataset paths
/// are resolved against `base_dir` when given.
RunConfig parse_config(const std::string& json_text,
                       const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);

/// Fully resolved config as compact JSON with sorted keys.
std::string config_to_json(const RunConfig& config);

/// Applies a command-line seed to both the training and the router streams.
void override_seed(RunConfig& config, std::uint64_t seed);

ModelConfig model_config(const RunConfig& config, std::size_t channels);

/// FNV-1a over everything that fixes parameter shapes and forward semantics.
std::string model_hash(const RunConfig& config, std::size_t channels);

}  // namespace timefilter
