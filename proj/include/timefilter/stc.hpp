#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "timefilter/ndgrad/ops.hpp"

// Spatial-temporal construction: patch tokens, multi-head projection
// distances, k-NN adjacency and the region decomposition of each ego graph.
namespace timefilter::stc {

using ndgrad::Array;
using ndgrad::Var;

/// N = ceil(L / P). Rejects P == 0 and P > L.
std::size_t patch_count(std::size_t lookback, std::size_t patch_len);

/// [..., L] -> [..., N, P]. When P does not divide L the last patch is
/// completed by repeating the final observed value.
Array patchify(const Array& series, std::size_t patch_len);

/// Linear map P -> D applied per patch, then channels and patches flattened:
/// [B, C, N, P] -> [B, C*N, D].
Var embed(Var patches, Var weight, Var bias);

/// floor(D / H); trailing model dimensions beyond H * width are dropped.
std::size_t head_width(std::size_t d_model, std::size_t heads);

/// [B, n, D] -> [B, H, n, floor(D/H)].
Var split_heads(Var tokens, std::size_t heads);

/// Dist[h] = Linear(X_h[h]) * Linear(X_h[h])^T with one shared map.
Var proj_distance(Var head_tokens, Var weight, Var bias);

/// k = floor(alpha * n); rejects alpha outside (0, 1] and k == 0.
std::size_t neighbor_count(std::size_t nodes, double alpha);

/// 0/1 mask over [..., n, n] keeping, per row, the min(k, n-1) largest
/// off-diagonal scores. Ties go to the lower column index.
Array knn_mask(const Array& scores, std::size_t k);

struct Adjacency {
  Var weights;  // GeLU(Dist) with non-neighbors zeroed, [B, H, n, n]
  Array mask;   // the k-NN selection, same shape
  std::size_t k = 0;
};

Adjacency knn_adjacency(Var distances, double alpha);
/// Value-only variant for inspection and tests.
Array knn_adjacency(const Array& distances, double alpha);

enum class Region : std::uint8_t { Temporal = 0, Spatial = 1, SpatialTemporal = 2, Self = 3 };
inline constexpr std::size_t kRegionCount = 3;

/// Region of every (i, j) pair on the C x N patch grid, node i <-> (i / N, i % N).
class EgoMasks {
 public:
  EgoMasks(std::size_t channels, std::size_t patches);

  std::size_t channels() const { return channels_; }
  std::size_t patches() const { return patches_; }
  std::size_t nodes() const { return channels_ * patches_; }
  std::size_t channel_of(std::size_t node) const { return node / patches_; }
  std::size_t patch_of(std::size_t node) const { return node % patches_; }

  Region region(std::size_t i, std::size_t j) const { return regions_[i * nodes() + j]; }
  /// 0/1 [n, n] mask of one region (Self is the diagonal).
  const Array& mask(Region region) const { return masks_[static_cast<std::size_t>(region)]; }

 private:
  std::size_t channels_;
  std::size_t patches_;
  std::vector<Region> regions_;
  std::vector<Array> masks_;
};

}  // namespace timefilter::stc
