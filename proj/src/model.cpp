#include "timefilter/model.hpp"

#include <cmath>
#include <stdexcept>

#include "timefilter/data.hpp"
#include "timefilter/random.hpp"

namespace timefilter {

using psf::Strategy;

ModelDims ModelDims::from(const ModelConfig& c) {
  if (c.channels == 0) throw std::invalid_argument("model needs at least one channel");
  if (c.horizon == 0) throw std::invalid_argument("horizon must be positive");
  if (c.e_layers == 0) throw std::invalid_argument("e_layers must be positive");
  if (c.d_ff == 0) throw std::invalid_argument("d_ff must be positive");
  if (!(c.top_p >= 0.0 && c.top_p < 1.0)) {
    throw std::invalid_argument("top_p " + std::to_string(c.top_p) + " must lie in [0, 1)");
  }
  ModelDims d;
  d.patches = stc::patch_count(c.lookback, c.patch_len);
  d.nodes = c.channels * d.patches;
  if (d.nodes < 2) throw std::invalid_argument("the patch graph needs at least two nodes");
  d.head_width = stc::head_width(c.d_model, c.heads);
  d.neighbors = stc::neighbor_count(d.nodes, c.alpha);
  d.edge_budget = c.ablation_k.value_or(d.neighbors);
  return d;
}

TimeFilterModel::TimeFilterModel(ModelConfig config)
    : config_(std::move(config)),
      dims_(ModelDims::from(config_)),
      masks_(config_.channels, dims_.patches) {}

std::vector<std::pair<std::string, ndgrad::Shape>> TimeFilterModel::parameter_shapes() const {
  const std::size_t n = dims_.nodes;
  const std::size_t dh = dims_.head_width;
  const std::size_t m = psf::kFilterCount;
  std::vector<std::pair<std::string, ndgrad::Shape>> shapes = {
      {"embed.weight", {config_.patch_len, config_.d_model}},
      {"embed.bias", {config_.d_model}},
      {"dist.weight", {dh, dh}},
      {"dist.bias", {dh}},
  };
  if (config_.strategy == Strategy::TimeFilter || config_.strategy == Strategy::CFilter) {
    shapes.push_back({"router.gate.weight", {n, m}});
    shapes.push_back({"router.gate.bias", {m}});
    shapes.push_back({"router.noise.weight", {n, m}});
    shapes.push_back({"router.noise.bias", {m}});
  }
  if (config_.strategy == Strategy::RegionThre) {
    shapes.push_back({"region_thre.weight", {n, m}});
    shapes.push_back({"region_thre.bias", {m}});
  }
  for (std::size_t l = 0; l < config_.e_layers; ++l) {
    const std::string p = "gnn." + std::to_string(l) + ".";
    shapes.push_back({p + "up.weight", {dh, config_.d_ff}});
    shapes.push_back({p + "up.bias", {config_.d_ff}});
    shapes.push_back({p + "down.weight", {config_.d_ff, dh}});
    shapes.push_back({p + "down.bias", {dh}});
  }
  shapes.push_back({"head.weight", {dims_.patches * config_.heads * dh, config_.horizon}});
  shapes.push_back({"head.bias", {config_.horizon}});
  return shapes;
}

ParameterStore TimeFilterModel::initialize(std::uint64_t seed) const {
  ParameterStore store;
  Rng rng(mix_keys({seed, 0x696e6974ULL}));
  ndgrad::Shape fan_shape;
  for (const auto& [name, shape] : parameter_shapes()) {
    Array value(shape, 0.0);
    const bool is_weight = name.ends_with(".weight");
    if (is_weight) fan_shape = shape;
    const bool combine_out = name.find(".down.") != std::string::npos;
    if (!combine_out) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_shape.front()));
      for (auto& v : value.values()) v = rng.uniform(-bound, bound);
    }
    store.add(name, std::move(value));
  }
  return store;
}

Var TimeFilterModel::head_tokens(Tape& tape, const ParameterStore& params,
                                 const Array& normalized) const {
  auto param = [&](const char* name) { return tape.parameter(name, params.at(name)); };
  Var patches = tape.constant(stc::patchify(normalized, config_.patch_len), "patches");
  Var tokens = stc::embed(patches, param("embed.weight"), param("embed.bias"));
  return stc::split_heads(tokens, config_.heads);
}

namespace {

void check_inputs(const Array& inputs, const ModelConfig& c) {
  if (inputs.rank() != 3 || inputs.dim(1) != c.channels || inputs.dim(2) != c.lookback) {
    throw ndgrad::ShapeError("model: expected inputs [B, " + std::to_string(c.channels) + ", " +
                             std::to_string(c.lookback) + "], got " +
                             ndgrad::shape_string(inputs.shape()));
  }
}

Var rescale(Var normalized_prediction, const data::WindowStats& stats) {
  Tape& tape = normalized_prediction.tape();
  const std::size_t batch = stats.mean.dim(0);
  const std::size_t channels = stats.mean.dim(1);
  Var scale = tape.constant(stats.std.reshaped({batch, channels, 1}), "window_std");
  Var shift = tape.constant(stats.mean.reshaped({batch, channels, 1}), "window_mean");
  return ndgrad::add(ndgrad::mul(normalized_prediction, scale), shift);
}

// Per-edge weights sum_f values[b, i, f] * [region(i, j) == f], [B, n, n].
Var spread_over_regions(Var per_region, const stc::EgoMasks& masks) {
  Var total;
  for (std::size_t f = 0; f < psf::kFilterCount; ++f) {
    Var part = ndgrad::masked(ndgrad::slice_last(per_region, f, 1),
                              masks.mask(static_cast<stc::Region>(f)));
    total = f == 0 ? part : ndgrad::add(total, part);
  }
  return total;
}

Array selected_regions(const psf::RouterDecision& decision, const ndgrad::Shape& shape) {
  Array selected(shape, 0.0);
  for (std::size_t r = 0; r < decision.rows(); ++r) {
    for (std::size_t f = 0; f < psf::kFilterCount; ++f) {
      selected[r * psf::kFilterCount + f] = decision.allocations[r].selected[f] ? 1.0 : 0.0;
    }
  }
  return selected;
}

}  // namespace

ForwardResult TimeFilterModel::forward(Tape& tape, const ParameterStore& params,
                                       const Array& inputs, const ForwardOptions& options) const {
  check_inputs(inputs, config_);
  const std::size_t batch = inputs.dim(0);
  const std::size_t n = dims_.nodes;
  std::vector<std::size_t> ids = options.sample_ids;
  if (ids.empty()) {
    for (std::size_t b = 0; b < batch; ++b) ids.push_back(b);
  }
  if (ids.size() != batch) throw ndgrad::ShapeError("model: one sample id per batch item required");
  auto param = [&](const std::string& name) { return tape.parameter(name, params.at(name)); };

  const data::NormalizedInputs norm = data::normalize(inputs);
  Var x_h = head_tokens(tape, params, norm.values);
  Var dist = stc::proj_distance(x_h, param("dist.weight"), param("dist.bias"));
  stc::Adjacency adj = stc::knn_adjacency(dist, config_.alpha);
  Var features = ndgrad::mean_axis(adj.weights, 1);  // [B, n, n]

  ForwardResult result;
  result.adjacency = adj.weights.value();
  Var filtered;
  const Strategy strategy = config_.strategy;

  if (strategy == Strategy::TimeFilter || strategy == Strategy::CFilter) {
    const bool per_channel = strategy == Strategy::CFilter;
    Var router_in = features;
    std::size_t rows = n;
    if (per_channel) {
      rows = config_.channels;
      router_in = ndgrad::mean_axis(
          ndgrad::reshape(features, {batch, config_.channels, dims_.patches, n}), 2);
    }
    psf::RouterParams rp{param("router.gate.weight"), param("router.gate.bias"),
                         param("router.noise.weight"), param("router.noise.bias")};
    Array noise;
    if (options.training) noise = psf::router_noise(config_.psf_seed, options.step, ids, rows);
    Var r = psf::route_confidence(router_in, rp, options.training ? &noise : nullptr);
    result.routing = r;
    result.decision = psf::allocate(r.value(), config_.top_p, options.training);
    if (!per_channel && config_.weight_edges_by_gate) {
      Var gates = ndgrad::masked(r, selected_regions(result.decision, r.shape()));
      Var edge_gates = spread_over_regions(gates, masks_);
      filtered = ndgrad::mul(adj.weights, ndgrad::reshape(edge_gates, {batch, 1, n, n}));
    } else {
      const Array keep = psf::filtration_mask(result.decision, masks_, batch, per_channel);
      filtered = ndgrad::masked(adj.weights, keep.reshaped({batch, 1, n, n}));
    }
  } else {
    psf::AblationInputs ab;
    ab.edge_budget = dims_.edge_budget;
    ab.seed = config_.psf_seed;
    ab.stream = options.step;
    ab.sample_ids = ids;
    if (strategy == Strategy::RegionThre) {
      Var thresholds = ndgrad::add(ndgrad::matmul(features, param("region_thre.weight")),
                                   param("region_thre.bias"));
      const Array theta = thresholds.value();
      ab.thresholds = &theta;
      const Array keep = psf::ablation_mask(strategy, features.value(), masks_, ab)
                             .reshaped({batch, 1, n, n});
      // Straight-through: the forward value is the hard mask, gradients
      // reach the thresholds through sigmoid(weight - threshold).
      Var soft = ndgrad::sigmoid(ndgrad::sub(features, spread_over_regions(thresholds, masks_)));
      Var soft4 = ndgrad::reshape(soft, {batch, 1, n, n});
      Var surrogate = ndgrad::masked(ndgrad::sub(soft4, ndgrad::stop_gradient(soft4)), keep);
      Var gate = ndgrad::add(surrogate, tape.constant(keep, "keep"));
      filtered = ndgrad::mul(adj.weights, gate);
    } else {
      const Array keep = psf::ablation_mask(strategy, features.value(), masks_, ab);
      filtered = ndgrad::masked(adj.weights, keep.reshaped({batch, 1, n, n}));
    }
  }
  result.filtered = filtered.value();

  Var weights = agl::normalize_rows(filtered);
  Var states = x_h;
  for (std::size_t l = 0; l < config_.e_layers; ++l) {
    const std::string p = "gnn." + std::to_string(l) + ".";
    agl::CombineParams cp{param(p + "up.weight"), param(p + "up.bias"), param(p + "down.weight"),
                          param(p + "down.bias")};
    states = agl::gnn_layer(states, weights, cp);
  }
  Var y = agl::forecast_head(x_h, states, param("head.weight"), param("head.bias"),
                             config_.channels);
  result.prediction = rescale(y, norm.stats);
  return result;
}

Array TimeFilterModel::linear_path(const ParameterStore& params, const Array& inputs) const {
  check_inputs(inputs, config_);
  Tape tape;
  const data::NormalizedInputs norm = data::normalize(inputs);
  Var x_h = head_tokens(tape, params, norm.values);
  Var y = agl::forecast_head(x_h, x_h, tape.parameter("head.weight", params.at("head.weight")),
                             tape.parameter("head.bias", params.at("head.bias")),
                             config_.channels);
  return rescale(y, norm.stats).value();
}

}  // namespace timefilter
