#include "timefilter/agl.hpp"

#include <string>

namespace timefilter::agl {

using ndgrad::ShapeError;
using ndgrad::shape_string;

std::vector<EgoRow> ego_rows(const Array& adjacency) {
  if (adjacency.rank() != 2 || adjacency.dim(0) != adjacency.dim(1)) {
    throw ShapeError("ego_rows: expected [n, n], got " + shape_string(adjacency.shape()));
  }
  const std::size_t n = adjacency.dim(0);
  std::vector<EgoRow> rows(n);
  for (std::size_t i = 0; i < n; ++i) {
    rows[i].node = i;
    rows[i].weights.assign(adjacency.data() + i * n, adjacency.data() + (i + 1) * n);
  }
  return rows;
}

Array merge_ego_graphs(const std::vector<EgoRow>& rows, std::size_t nodes) {
  Array merged({nodes, nodes}, 0.0);
  for (const auto& row : rows) {
    if (row.node >= nodes || row.weights.size() != nodes) {
      throw ShapeError("merge_ego_graphs: row for node " + std::to_string(row.node) + " with " +
                       std::to_string(row.weights.size()) + " weights does not fit n=" +
                       std::to_string(nodes));
    }
    double* dst = merged.data() + row.node * nodes;
    for (std::size_t j = 0; j < nodes; ++j) {
      if (dst[j] == 0.0) dst[j] = row.weights[j];
    }
  }
  return merged;
}

Var normalize_rows(Var adjacency) {
  const std::size_t last = adjacency.shape().size() - 1;
  Var totals = ndgrad::sum_axis(ndgrad::abs(adjacency), last, true);
  return ndgrad::mul(adjacency, ndgrad::safe_reciprocal(totals));
}

Var aggregate(Var states, Var normalized) {
  if (states.shape().size() != 4 || normalized.shape().size() != 4) {
    throw ShapeError("gnn_layer: expected [B, H, n, dh] states and [B, H, n, n] weights, got " +
                     shape_string(states.shape()) + " and " + shape_string(normalized.shape()));
  }
  const auto& s = states.shape();
  const auto& w = normalized.shape();
  if (w[0] != s[0] || w[1] != s[1] || w[2] != s[2] || w[3] != s[2]) {
    throw ShapeError("gnn_layer: weights " + shape_string(w) + " do not match states " +
                     shape_string(s));
  }
  return ndgrad::matmul(normalized, states);
}

Var gnn_layer(Var states, Var normalized, const CombineParams& combine) {
  Var agg = aggregate(states, normalized);
  Var hidden = ndgrad::gelu(ndgrad::add(ndgrad::matmul(agg, combine.up_weight), combine.up_bias));
  Var update = ndgrad::add(ndgrad::matmul(hidden, combine.down_weight), combine.down_bias);
  return ndgrad::add(states, update);
}

Var forecast_head(Var head_tokens, Var final_states, Var weight, Var bias, std::size_t channels) {
  const auto& s = head_tokens.shape();
  if (s.size() != 4 || final_states.shape() != s) {
    throw ShapeError("forecast_head: residual inputs " + shape_string(s) + " and " +
                     shape_string(final_states.shape()) + " must match as [B, H, n, dh]");
  }
  if (channels == 0 || s[2] % channels != 0) {
    throw ShapeError("forecast_head: " + std::to_string(s[2]) + " nodes do not split into " +
                     std::to_string(channels) + " channels");
  }
  const std::size_t features = (s[2] / channels) * s[1] * s[3];
  if (weight.shape().size() != 2 || weight.shape()[0] != features) {
    throw ShapeError("forecast_head: weight " + shape_string(weight.shape()) + " does not map " +
                     std::to_string(features) + " features");
  }
  Var residual = ndgrad::add(head_tokens, final_states);
  Var per_channel =
      ndgrad::reshape(ndgrad::permute(residual, {0, 2, 1, 3}), {s[0], channels, features});
  return ndgrad::add(ndgrad::matmul(per_channel, weight), bias);
}

}  // namespace timefilter::agl
