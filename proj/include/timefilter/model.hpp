#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "timefilter/agl.hpp"
#include "timefilter/ndgrad/parameters.hpp"
#include "timefilter/psf.hpp"
#include "timefilter/stc.hpp"

namespace timefilter {

using ndgrad::Array;
using ndgrad::ParameterStore;
using ndgrad::Tape;
using ndgrad::Var;

struct ModelConfig {
  std::size_t channels = 1;
  std::size_t lookback = 96;
  std::size_t horizon = 96;
  std::size_t patch_len = 16;
  std::size_t d_model = 64;
  std::size_t heads = 8;
  double alpha = 0.5;
  std::size_t e_layers = 2;
  std::size_t d_ff = 128;
  double top_p = 0.5;
  psf::Strategy strategy = psf::Strategy::TimeFilter;
  bool weight_edges_by_gate = false;
  std::optional<std::size_t> ablation_k;  // defaults to the k-NN size
  std::uint64_t psf_seed = 0;
};

/// Sizes derived from a ModelConfig; construction validates the config.
struct ModelDims {
  std::size_t patches = 0;     // N
  std::size_t nodes = 0;       // n = C * N
  std::size_t head_width = 0;  // floor(D / H)
  std::size_t neighbors = 0;   // k
  std::size_t edge_budget = 0;

  static ModelDims from(const ModelConfig& config);
};

struct ForwardOptions {
  bool training = false;
  std::uint64_t step = 0;                // keys router noise and RandomK draws
  std::vector<std::size_t> sample_ids;   // one per batch item; defaults to 0..B-1
};

struct ForwardResult {
  Var prediction;                // [B, C, T], dataset scale
  std::optional<Var> routing;    // [B, rows, 3] confidences when a router is active
  psf::RouterDecision decision;
  Array adjacency;               // M,  [B, H, n, n]
  Array filtered;                // M', [B, H, n, n]
};

class TimeFilterModel {
 public:
  explicit TimeFilterModel(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  const ModelDims& dims() const { return dims_; }
  const stc::EgoMasks& masks() const { return masks_; }

  /// Parameter shapes, in registration order.
  std::vector<std::pair<std::string, ndgrad::Shape>> parameter_shapes() const;
  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) maps, zero combine output maps.
  ParameterStore initialize(std::uint64_t seed) const;

  /// `inputs` is [B, C, L] on the dataset scale; instance normalization
  /// happens inside and is undone on the prediction.
  ForwardResult forward(Tape& tape, const ParameterStore& params, const Array& inputs,
                        const ForwardOptions& options) const;

  /// Prediction with the graph block skipped: node states keep their
  /// initial value X_h, so the head sees X_h + X_h.
  Array linear_path(const ParameterStore& params, const Array& inputs) const;

 private:
  Var head_tokens(Tape& tape, const ParameterStore& params, const Array& normalized) const;

  ModelConfig config_;
  ModelDims dims_;
  stc::EgoMasks masks_;
};

}  // namespace timefilter
