#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "timefilter/ndgrad/ops.hpp"
#include "timefilter/stc.hpp"

// Patch-specific filtration: a noisy-gated router scores the three region
// filters for every ego graph, Top-p allocation picks a variable number of
// them, and edges outside the picked regions are dropped.
namespace timefilter::psf {

using ndgrad::Array;
using ndgrad::Var;
using stc::EgoMasks;
using stc::Region;

inline constexpr std::size_t kFilterCount = stc::kRegionCount;

enum class Strategy { TimeFilter, TopK, RandomK, RegionTopK, RegionThre, CFilter, NoFilter };

Strategy parse_strategy(std::string_view name);
std::string_view strategy_name(Strategy strategy);
const std::vector<Strategy>& all_strategies();

struct Allocation {
  std::array<std::size_t, kFilterCount> order{};  // filters by descending confidence
  std::size_t count = 0;                          // q, in 1..3
  std::array<bool, kFilterCount> selected{};

  bool operator==(const Allocation&) const = default;
};

/// Smallest descending prefix whose cumulative confidence reaches top_p.
/// Sorting is stable, so equal confidences keep filter order.
Allocation dynamic_allocation(std::span<const double> confidences, double top_p);

/// g_j = r_j on selected filters, 0 elsewhere.
std::array<double, kFilterCount> gate_values(std::span<const double> confidences,
                                             const Allocation& allocation);

struct RouterDecision {
  Array confidences;  // [..., 3]
  Array gates;        // same shape
  std::vector<Allocation> allocations;  // one per confidence row
  double top_p = 0.0;
  bool training = false;

  std::size_t rows() const { return allocations.size(); }
};

RouterDecision allocate(const Array& confidences, double top_p, bool training);

struct RouterParams {
  Var gate_weight;   // [n, 3]
  Var gate_bias;     // [3]
  Var noise_weight;  // [n, 3]
  Var noise_bias;    // [3]
};

/// psi = Linear_g(x) + eps * Softplus(Linear_n(x)); r = softmax(psi).
/// `features` is [B, R, n]; `noise` is [B, R, 3] standard normal draws or
/// null when evaluating (noise off).
Var route_confidence(Var features, const RouterParams& params, const Array* noise);

/// Standard normal draws keyed by (seed, stream, sample id, row, filter), so
/// any evaluation order yields the same values.
Array router_noise(std::uint64_t seed, std::uint64_t stream,
                   std::span<const std::size_t> sample_ids, std::size_t rows);

/// [B, n, n] keep mask: edge (i, j) survives iff the region of (i, j) is
/// selected for node i. `decision` rows are B*n for per-node routing or
/// B*C when `per_channel` (every patch of a channel shares one decision).
Array filtration_mask(const RouterDecision& decision, const EgoMasks& masks, std::size_t batch,
                      bool per_channel = false);

/// M' = M * mask, applied identically to every head. `adjacency` is
/// [B, H, n, n]; a rank-2 [n, n] input is treated as B = H = 1.
Array apply_filtration(const Array& adjacency, const EgoMasks& masks,
                       const RouterDecision& decision);

/// Inputs consumed by the non-router filter strategies.
struct AblationInputs {
  std::size_t edge_budget = 0;                      // K
  std::uint64_t seed = 0;                           // RandomK
  std::uint64_t stream = 0;                         // RandomK
  std::vector<std::size_t> sample_ids;              // RandomK, one per batch item
  const Array* thresholds = nullptr;                // RegionThre, [B, n, 3]
  const RouterDecision* channel_decision = nullptr;  // CFilter, B*C rows
};

/// [B, n, n] keep mask computed from head-averaged edge weights [B, n, n].
/// Only existing (nonzero) edges are ever kept. A budget above the number of
/// available edges keeps them all.
Array ablation_mask(Strategy strategy, const Array& head_mean, const EgoMasks& masks,
                    const AblationInputs& inputs);

/// M' for a filter strategy other than TimeFilter; M is [B, H, n, n].
Array ablation_filter(Strategy strategy, const Array& adjacency, const EgoMasks& masks,
                      const AblationInputs& inputs);

/// Mean routing entropy, -(1/rows) sum_i sum_j r_ij log r_ij with 0 log 0 = 0.
Var dyn_loss(Var confidences);
/// Mean coefficient of variation of each routing row (population std).
Var imp_loss(Var confidences, double eps = 1e-10);

double dyn_loss(const Array& confidences);
double imp_loss(const Array& confidences, double eps = 1e-10);

}  // namespace timefilter::psf
