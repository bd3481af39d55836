#include "timefilter/psf.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "timefilter/random.hpp"

namespace timefilter::psf {

using ndgrad::ShapeError;
using ndgrad::shape_string;

namespace {

struct NamedStrategy {
  Strategy strategy;
  std::string_view name;
};

constexpr NamedStrategy kStrategies[] = {
    {Strategy::TimeFilter, "timefilter"}, {Strategy::TopK, "topk"},
    {Strategy::RandomK, "randomk"},       {Strategy::RegionTopK, "region_topk"},
    {Strategy::RegionThre, "region_thre"}, {Strategy::CFilter, "cfilter"},
    {Strategy::NoFilter, "none"},
};

void check_batched_square(const Array& a, const char* op) {
  if (a.rank() != 3 || a.dim(1) != a.dim(2)) {
    throw ShapeError(std::string(op) + ": expected [B, n, n], got " + shape_string(a.shape()));
  }
}

// Candidate columns of row `i` holding an edge, best weight first, ties by index.
void ranked_edges(const double* row, std::size_t n, std::size_t self,
                  const std::vector<bool>* allowed, std::vector<std::size_t>& out) {
  out.clear();
  for (std::size_t j = 0; j < n; ++j) {
    if (j == self || row[j] == 0.0) continue;
    if (allowed && !(*allowed)[j]) continue;
    out.push_back(j);
  }
  std::stable_sort(out.begin(), out.end(),
                   [row](std::size_t a, std::size_t b) { return row[a] > row[b]; });
}

}  // namespace

Strategy parse_strategy(std::string_view name) {
  for (const auto& s : kStrategies) {
    if (s.name == name) return s.strategy;
  }
  throw std::invalid_argument("unknown filter strategy '" + std::string(name) +
                              "' (expected timefilter, topk, randomk, region_topk, region_thre, "
                              "cfilter or none)");
}

std::string_view strategy_name(Strategy strategy) {
  for (const auto& s : kStrategies) {
    if (s.strategy == strategy) return s.name;
  }
  return "?";
}

const std::vector<Strategy>& all_strategies() {
  static const std::vector<Strategy> all = [] {
    std::vector<Strategy> v;
    for (const auto& s : kStrategies) v.push_back(s.strategy);
    return v;
  }();
  return all;
}

Allocation dynamic_allocation(std::span<const double> confidences, double top_p) {
  if (confidences.size() != kFilterCount) {
    throw ShapeError("dynamic_allocation: expected 3 confidences, got " +
                     std::to_string(confidences.size()));
  }
  if (!(top_p >= 0.0 && top_p < 1.0)) {
    throw std::invalid_argument("top_p " + std::to_string(top_p) + " must lie in [0, 1)");
  }
  Allocation a;
  std::iota(a.order.begin(), a.order.end(), std::size_t{0});
  std::stable_sort(a.order.begin(), a.order.end(), [&](std::size_t x, std::size_t y) {
    return confidences[x] > confidences[y];
  });
  double cumulative = 0.0;
  a.count = kFilterCount;
  for (std::size_t j = 0; j < kFilterCount; ++j) {
    cumulative += confidences[a.order[j]];
    if (cumulative >= top_p) {
      a.count = j + 1;
      break;
    }
  }
  for (std::size_t j = 0; j < a.count; ++j) a.selected[a.order[j]] = true;
  return a;
}

std::array<double, kFilterCount> gate_values(std::span<const double> confidences,
                                             const Allocation& allocation) {
  std::array<double, kFilterCount> g{};
  for (std::size_t j = 0; j < kFilterCount; ++j) {
    g[j] = allocation.selected[j] ? confidences[j] : 0.0;
  }
  return g;
}

RouterDecision allocate(const Array& confidences, double top_p, bool training) {
  if (confidences.rank() == 0 || confidences.shape().back() != kFilterCount) {
    throw ShapeError("allocate: expected [..., 3] confidences, got " +
                     shape_string(confidences.shape()));
  }
  RouterDecision d;
  d.confidences = confidences;
  d.gates = Array(confidences.shape(), 0.0);
  d.top_p = top_p;
  d.training = training;
  const std::size_t rows = confidences.size() / kFilterCount;
  d.allocations.reserve(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::span<const double> row(confidences.data() + r * kFilterCount, kFilterCount);
    d.allocations.push_back(dynamic_allocation(row, top_p));
    const auto g = gate_values(row, d.allocations.back());
    std::copy(g.begin(), g.end(), d.gates.data() + r * kFilterCount);
  }
  return d;
}

Var route_confidence(Var features, const RouterParams& params, const Array* noise) {
  Var clean = ndgrad::add(ndgrad::matmul(features, params.gate_weight), params.gate_bias);
  if (noise == nullptr) return ndgrad::softmax(clean);
  if (noise->shape() != clean.shape()) {
    throw ShapeError("route_confidence: noise " + shape_string(noise->shape()) +
                     " does not match scores " + shape_string(clean.shape()));
  }
  Var spread = ndgrad::softplus(
      ndgrad::add(ndgrad::matmul(features, params.noise_weight), params.noise_bias));
  Var scores = ndgrad::add(clean, ndgrad::masked(spread, *noise));
  return ndgrad::softmax(scores);
}

Array router_noise(std::uint64_t seed, std::uint64_t stream,
                   std::span<const std::size_t> sample_ids, std::size_t rows) {
  Array eps({sample_ids.size(), rows, kFilterCount});
  for (std::size_t b = 0; b < sample_ids.size(); ++b) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t f = 0; f < kFilterCount; ++f) {
        eps[(b * rows + r) * kFilterCount + f] =
            keyed_normal({seed, stream, sample_ids[b], r, f, 0x6e6f697365ULL});
      }
    }
  }
  return eps;
}

Array filtration_mask(const RouterDecision& decision, const EgoMasks& masks, std::size_t batch,
                      bool per_channel) {
  const std::size_t n = masks.nodes();
  const std::size_t owners = per_channel ? masks.channels() : n;
  if (decision.rows() != batch * owners) {
    throw ShapeError("filtration: " + std::to_string(decision.rows()) + " decisions for " +
                     std::to_string(batch) + " x " + std::to_string(owners) + " routed rows");
  }
  Array keep({batch, n, n}, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t owner = per_channel ? masks.channel_of(i) : i;
      const Allocation& a = decision.allocations[b * owners + owner];
      double* row = keep.data() + (b * n + i) * n;
      for (std::size_t j = 0; j < n; ++j) {
        const Region r = masks.region(i, j);
        if (r != Region::Self && a.selected[static_cast<std::size_t>(r)]) row[j] = 1.0;
      }
    }
  }
  return keep;
}

namespace {

Array apply_row_mask(const Array& adjacency, const Array& keep) {
  const std::size_t n = keep.dim(1);
  const std::size_t batch = keep.dim(0);
  if (adjacency.rank() != 4 || adjacency.dim(0) != batch || adjacency.dim(2) != n ||
      adjacency.dim(3) != n) {
    throw ShapeError("filtration: adjacency " + shape_string(adjacency.shape()) +
                     " does not match mask " + shape_string(keep.shape()));
  }
  const std::size_t heads = adjacency.dim(1);
  Array out = adjacency;
  for (std::size_t b = 0; b < batch; ++b) {
    const double* k = keep.data() + b * n * n;
    for (std::size_t h = 0; h < heads; ++h) {
      double* m = out.data() + (b * heads + h) * n * n;
      for (std::size_t e = 0; e < n * n; ++e) m[e] *= k[e];
    }
  }
  return out;
}

Array as_batched(const Array& adjacency) {
  if (adjacency.rank() == 2) return adjacency.reshaped({1, 1, adjacency.dim(0), adjacency.dim(1)});
  return adjacency;
}

}  // namespace

Array apply_filtration(const Array& adjacency, const EgoMasks& masks,
                       const RouterDecision& decision) {
  const Array m = as_batched(adjacency);
  Array out = apply_row_mask(m, filtration_mask(decision, masks, m.dim(0)));
  return adjacency.rank() == 2 ? out.reshaped(adjacency.shape()) : out;
}

Array ablation_mask(Strategy strategy, const Array& head_mean, const EgoMasks& masks,
                    const AblationInputs& inputs) {
  check_batched_square(head_mean, "ablation_mask");
  const std::size_t batch = head_mean.dim(0);
  const std::size_t n = head_mean.dim(1);
  if (n != masks.nodes()) {
    throw ShapeError("ablation_mask: " + std::to_string(n) + " nodes, masks cover " +
                     std::to_string(masks.nodes()));
  }
  Array keep({batch, n, n}, 0.0);
  std::vector<std::size_t> ranked;

  switch (strategy) {
    case Strategy::TimeFilter:
      throw std::logic_error("ablation_mask: timefilter routing is not an ablation strategy");

    case Strategy::NoFilter:
      keep.fill(1.0);
      return keep;

    case Strategy::TopK:
      for (std::size_t r = 0; r < batch * n; ++r) {
        ranked_edges(head_mean.data() + r * n, n, r % n, nullptr, ranked);
        const std::size_t take = std::min(inputs.edge_budget, ranked.size());
        for (std::size_t t = 0; t < take; ++t) keep[r * n + ranked[t]] = 1.0;
      }
      return keep;

    case Strategy::RandomK:
      if (inputs.sample_ids.size() != batch) {
        throw ShapeError("ablation_mask: randomk needs one sample id per batch item");
      }
      for (std::size_t r = 0; r < batch * n; ++r) {
        ranked_edges(head_mean.data() + r * n, n, r % n, nullptr, ranked);
        std::sort(ranked.begin(), ranked.end());
        Rng rng(mix_keys({inputs.seed, inputs.stream, inputs.sample_ids[r / n], r % n,
                          0x72616e646bULL}));
        const std::size_t take = std::min(inputs.edge_budget, ranked.size());
        for (std::size_t t = 0; t < take; ++t) {
          std::swap(ranked[t], ranked[t + rng.below(ranked.size() - t)]);
          keep[r * n + ranked[t]] = 1.0;
        }
      }
      return keep;

    case Strategy::RegionTopK: {
      std::vector<std::vector<bool>> allowed(kFilterCount, std::vector<bool>(n));
      for (std::size_t r = 0; r < batch * n; ++r) {
        const std::size_t i = r % n;
        for (std::size_t f = 0; f < kFilterCount; ++f) {
          for (std::size_t j = 0; j < n; ++j) {
            allowed[f][j] = static_cast<std::size_t>(masks.region(i, j)) == f;
          }
          ranked_edges(head_mean.data() + r * n, n, i, &allowed[f], ranked);
          const std::size_t take = std::min(inputs.edge_budget, ranked.size());
          for (std::size_t t = 0; t < take; ++t) keep[r * n + ranked[t]] = 1.0;
        }
      }
      return keep;
    }

    case Strategy::RegionThre: {
      const Array* th = inputs.thresholds;
      if (th == nullptr || th->shape() != ndgrad::Shape{batch, n, kFilterCount}) {
        throw ShapeError("ablation_mask: region_thre needs [B, n, 3] thresholds");
      }
      for (std::size_t r = 0; r < batch * n; ++r) {
        const std::size_t i = r % n;
        const double* row = head_mean.data() + r * n;
        for (std::size_t j = 0; j < n; ++j) {
          const Region reg = masks.region(i, j);
          if (reg == Region::Self || row[j] == 0.0) continue;
          if (row[j] > (*th)[r * kFilterCount + static_cast<std::size_t>(reg)]) keep[r * n + j] = 1.0;
        }
      }
      return keep;
    }

    case Strategy::CFilter:
      if (inputs.channel_decision == nullptr) {
        throw std::invalid_argument("ablation_mask: cfilter needs a per-channel router decision");
      }
      return filtration_mask(*inputs.channel_decision, masks, batch, true);
  }
  return keep;
}

Array ablation_filter(Strategy strategy, const Array& adjacency, const EgoMasks& masks,
                      const AblationInputs& inputs) {
  const Array m = as_batched(adjacency);
  if (m.rank() != 4) {
    throw ShapeError("ablation_filter: expected [B, H, n, n], got " + shape_string(m.shape()));
  }
  const std::size_t batch = m.dim(0);
  const std::size_t heads = m.dim(1);
  const std::size_t n = m.dim(2);
  Array head_mean({batch, n, n}, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t e = 0; e < n * n; ++e) {
        head_mean[b * n * n + e] += m[(b * heads + h) * n * n + e] / static_cast<double>(heads);
      }
    }
  }
  Array out = apply_row_mask(m, ablation_mask(strategy, head_mean, masks, inputs));
  return adjacency.rank() == 2 ? out.reshaped(adjacency.shape()) : out;
}

Var dyn_loss(Var confidences) {
  const std::size_t last = confidences.shape().size() - 1;
  Var plogp = ndgrad::mul(confidences, ndgrad::log(confidences, 1e-12));
  return ndgrad::neg(ndgrad::mean(ndgrad::sum_axis(plogp, last)));
}

Var imp_loss(Var confidences, double eps) {
  const std::size_t last = confidences.shape().size() - 1;
  Var mean = ndgrad::mean_axis(confidences, last, true);
  Var variance = ndgrad::mean_axis(ndgrad::square(ndgrad::sub(confidences, mean)), last);
  Var cv = ndgrad::div(ndgrad::sqrt(variance),
                       ndgrad::add_scalar(ndgrad::mean_axis(confidences, last), eps));
  return ndgrad::mean(cv);
}

double dyn_loss(const Array& confidences) {
  ndgrad::Tape tape;
  return dyn_loss(tape.constant(confidences)).value().item();
}

double imp_loss(const Array& confidences, double eps) {
  ndgrad::Tape tape;
  return imp_loss(tape.constant(confidences), eps).value().item();
}

}  // namespace timefilter::psf
