#include "timefilter/stc.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace timefilter::stc {

using ndgrad::ShapeError;
using ndgrad::shape_string;

std::size_t patch_count(std::size_t lookback, std::size_t patch_len) {
  if (patch_len == 0 || patch_len > lookback) {
    throw std::invalid_argument("patch length " + std::to_string(patch_len) +
                                " must lie in [1, " + std::to_string(lookback) + "]");
  }
  return (lookback + patch_len - 1) / patch_len;
}

Array patchify(const Array& series, std::size_t patch_len) {
  if (series.rank() == 0) throw ShapeError("patchify: scalar input");
  const std::size_t L = series.shape().back();
  const std::size_t N = patch_count(L, patch_len);
  const std::size_t rows = series.size() / L;
  ndgrad::Shape out_shape(series.shape().begin(), series.shape().end() - 1);
  out_shape.push_back(N);
  out_shape.push_back(patch_len);
  Array out(out_shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = series.data() + r * L;
    double* dst = out.data() + r * N * patch_len;
    for (std::size_t i = 0; i < N * patch_len; ++i) dst[i] = src[std::min(i, L - 1)];
  }
  return out;
}

Var embed(Var patches, Var weight, Var bias) {
  const auto& s = patches.shape();
  if (s.size() != 4) throw ShapeError("embed: expected [B, C, N, P], got " + shape_string(s));
  if (weight.shape().size() != 2 || weight.shape()[0] != s[3]) {
    throw ShapeError("embed: weight " + shape_string(weight.shape()) + " does not map P=" +
                     std::to_string(s[3]));
  }
  const std::size_t D = weight.shape()[1];
  Var tokens = ndgrad::add(ndgrad::matmul(patches, weight), bias);
  return ndgrad::reshape(tokens, {s[0], s[1] * s[2], D});
}

std::size_t head_width(std::size_t d_model, std::size_t heads) {
  if (heads == 0 || heads > d_model) {
    throw std::invalid_argument("heads " + std::to_string(heads) + " must lie in [1, d_model=" +
                                std::to_string(d_model) + "]");
  }
  return d_model / heads;
}

Var split_heads(Var tokens, std::size_t heads) {
  const auto& s = tokens.shape();
  if (s.size() != 3) throw ShapeError("split_heads: expected [B, n, D], got " + shape_string(s));
  const std::size_t width = head_width(s[2], heads);
  Var used = width * heads == s[2] ? tokens : ndgrad::slice_last(tokens, 0, width * heads);
  Var split = ndgrad::reshape(used, {s[0], s[1], heads, width});
  return ndgrad::permute(split, {0, 2, 1, 3});
}

Var proj_distance(Var head_tokens, Var weight, Var bias) {
  Var projected = ndgrad::add(ndgrad::matmul(head_tokens, weight), bias);
  return ndgrad::matmul(projected, ndgrad::transpose(projected));
}

std::size_t neighbor_count(std::size_t nodes, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw std::invalid_argument("alpha " + std::to_string(alpha) + " must lie in (0, 1]");
  }
  const auto k = static_cast<std::size_t>(std::floor(alpha * static_cast<double>(nodes)));
  if (k == 0) {
    throw std::invalid_argument("alpha " + std::to_string(alpha) + " keeps no neighbors for n=" +
                                std::to_string(nodes));
  }
  return k;
}

Array knn_mask(const Array& scores, std::size_t k) {
  if (scores.rank() < 2 || scores.dim(scores.rank() - 1) != scores.dim(scores.rank() - 2)) {
    throw ShapeError("knn: expected [..., n, n], got " + shape_string(scores.shape()));
  }
  const std::size_t n = scores.shape().back();
  const std::size_t keep = std::min(k, n - 1);
  const std::size_t rows = scores.size() / n;
  Array mask(scores.shape(), 0.0);
  std::vector<std::size_t> cand;
  cand.reserve(n);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t self = r % n;
    const double* row = scores.data() + r * n;
    cand.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != self) cand.push_back(j);
    }
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end(),
                      [row](std::size_t a, std::size_t b) {
                        return row[a] > row[b] || (row[a] == row[b] && a < b);
                      });
    for (std::size_t i = 0; i < keep; ++i) mask[r * n + cand[i]] = 1.0;
  }
  return mask;
}

Adjacency knn_adjacency(Var distances, double alpha) {
  const std::size_t n = distances.shape().back();
  Adjacency adj;
  adj.k = neighbor_count(n, alpha);
  Var activated = ndgrad::gelu(distances);
  adj.mask = knn_mask(activated.value(), adj.k);
  adj.weights = ndgrad::masked(activated, adj.mask);
  return adj;
}

Array knn_adjacency(const Array& distances, double alpha) {
  ndgrad::Tape tape;
  return knn_adjacency(tape.constant(distances), alpha).weights.value();
}

EgoMasks::EgoMasks(std::size_t channels, std::size_t patches)
    : channels_(channels), patches_(patches) {
  if (channels == 0 || patches == 0) throw std::invalid_argument("ego masks: empty patch grid");
  const std::size_t n = nodes();
  regions_.resize(n * n);
  masks_.assign(kRegionCount + 1, Array({n, n}, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const bool same_channel = channel_of(i) == channel_of(j);
      const bool same_patch = patch_of(i) == patch_of(j);
      Region r = Region::SpatialTemporal;
      if (same_channel && same_patch) {
        r = Region::Self;
      } else if (same_channel) {
        r = Region::Temporal;
      } else if (same_patch) {
        r = Region::Spatial;
      }
      regions_[i * n + j] = r;
      masks_[static_cast<std::size_t>(r)][i * n + j] = 1.0;
    }
  }
}

}  // namespace timefilter::stc
