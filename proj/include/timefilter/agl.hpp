#pragma once

#include <cstddef>
#include <vector>

#include "timefilter/ndgrad/ops.hpp"

// Adaptive graph learning: reassemble filtered ego graphs, run weighted
// additive message passing and project the residual states to forecasts.
namespace timefilter::agl {

using ndgrad::Array;
using ndgrad::Var;

/// One node's filtered adjacency row.
struct EgoRow {
  std::size_t node = 0;
  std::vector<double> weights;  // length n
};

/// Splits an [n, n] adjacency into its n ego rows.
std::vector<EgoRow> ego_rows(const Array& adjacency);

/// Global [n, n] adjacency with row i taken from node i's ego row. A node
/// listed more than once contributes the union of its neighbor sets (the
/// first nonzero weight wins). Nodes without a row get an empty row.
Array merge_ego_graphs(const std::vector<EgoRow>& rows, std::size_t nodes);

/// Divides each row by the sum of its absolute weights; empty rows stay zero.
Var normalize_rows(Var adjacency);

struct CombineParams {
  Var up_weight;    // [dh, d_ff]
  Var up_bias;      // [d_ff]
  Var down_weight;  // [d_ff, dh]
  Var down_bias;    // [dh]
};

/// Additive aggregation over normalized edges followed by the residual
/// combine h + Down(GeLU(Up(agg))). `states` is [B, H, n, dh] and
/// `normalized` is [B, H, n, n].
Var gnn_layer(Var states, Var normalized, const CombineParams& combine);

/// Aggregated neighbor states alone, sum_j w_ij h_j.
Var aggregate(Var states, Var normalized);

/// Y = Linear(X_h + h_out) over each channel's flattened patch and head
/// features: [B, H, n, dh] -> [B, C, T] with weight [N*H*dh, T].
Var forecast_head(Var head_tokens, Var final_states, Var weight, Var bias, std::size_t channels);

}  // namespace timefilter::agl
