#include <gtest/gtest.h>

#include <random>

#include "timefilter/stc.hpp"

namespace stc = timefilter::stc;
namespace nd = timefilter::ndgrad;
using nd::Array;
using nd::Tape;

namespace {

Array random_array(nd::Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Array a(std::move(shape));
  for (double& v : a.values()) v = dist(rng);
  return a;
}

}  // namespace

TEST(StcPatchify, ReplicatesLastValueIntoFinalPatch) {
  Array series({10});
  for (std::size_t t = 0; t < 10; ++t) series[t] = static_cast<double>(t + 1);
  const Array p = stc::patchify(series, 4);
  ASSERT_EQ(p.shape(), (nd::Shape{3, 4}));
  EXPECT_DOUBLE_EQ(p.at({2, 0}), 9.0);
  EXPECT_DOUBLE_EQ(p.at({2, 1}), 10.0);
  EXPECT_DOUBLE_EQ(p.at({2, 2}), 10.0);
  EXPECT_DOUBLE_EQ(p.at({2, 3}), 10.0);
  EXPECT_DOUBLE_EQ(p.at({1, 0}), 5.0);
}

TEST(StcPatchify, PatchCountAndRejections) {
  EXPECT_EQ(stc::patch_count(96, 2), 48u);
  EXPECT_EQ(stc::patch_count(96, 96), 1u);
  EXPECT_EQ(stc::patch_count(10, 3), 4u);
  EXPECT_THROW(stc::patch_count(10, 0), std::invalid_argument);
  EXPECT_THROW(stc::patch_count(10, 11), std::invalid_argument);
}

TEST(StcEmbed, FlattensChannelsAndPatches) {
  Tape tape;
  std::mt19937_64 rng(1);
  auto patches = tape.constant(random_array({2, 3, 4, 5}, rng));
  auto w = tape.parameter("w", random_array({5, 6}, rng));
  auto b = tape.parameter("b", random_array({6}, rng));
  auto tokens = stc::embed(patches, w, b);
  ASSERT_EQ(tokens.shape(), (nd::Shape{2, 12, 6}));
  // Node 7 of batch 1 is channel 1, patch 3.
  double expect = b.value()[2];
  for (std::size_t k = 0; k < 5; ++k) {
    expect += patches.value().at({1, 1, 3, k}) * w.value().at({k, 2});
  }
  EXPECT_NEAR(tokens.value().at({1, 7, 2}), expect, 1e-14);
}

TEST(StcHeads, SplitDropsRemainderDimensions) {
  Tape tape;
  std::mt19937_64 rng(2);
  auto tokens = tape.constant(random_array({1, 3, 7}, rng));
  auto heads = stc::split_heads(tokens, 3);
  ASSERT_EQ(heads.shape(), (nd::Shape{1, 3, 3, 2}));
  EXPECT_DOUBLE_EQ(heads.value().at({0, 2, 1, 1}), tokens.value().at({0, 1, 5}));
  EXPECT_THROW(stc::split_heads(tokens, 8), std::invalid_argument);
}

TEST(StcDistance, MatchesLoopOracleAndIsSymmetric) {
  Tape tape;
  std::mt19937_64 rng(3);
  const Array x = random_array({1, 2, 4, 3}, rng);
  const Array w = random_array({3, 3}, rng);
  const Array b = random_array({3}, rng);
  const Array d = stc::proj_distance(tape.constant(x), tape.constant(w), tape.constant(b)).value();
  for (std::size_t h = 0; h < 2; ++h) {
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t j = 0; j < 4; ++j) {
        double expect = 0.0;
        for (std::size_t o = 0; o < 3; ++o) {
          double pi = b[o], pj = b[o];
          for (std::size_t k = 0; k < 3; ++k) {
            pi += x.at({0, h, i, k}) * w.at({k, o});
            pj += x.at({0, h, j, k}) * w.at({k, o});
          }
          expect += pi * pj;
        }
        EXPECT_NEAR(d.at({0, h, i, j}), expect, 1e-13);
        EXPECT_DOUBLE_EQ(d.at({0, h, i, j}), d.at({0, h, j, i}));
      }
    }
  }
}

TEST(StcKnn, KeepsLargestOffDiagonal) {
  Array scores({4, 4}, 0.0);
  const double row0[4] = {-10, 5, 3, 1};
  for (std::size_t j = 0; j < 4; ++j) scores[j] = row0[j];
  EXPECT_EQ(stc::neighbor_count(4, 0.5), 2u);
  const Array mask = stc::knn_mask(scores, 2);
  EXPECT_EQ(mask[0], 0.0);
  EXPECT_EQ(mask[1], 1.0);
  EXPECT_EQ(mask[2], 1.0);
  EXPECT_EQ(mask[3], 0.0);
}

TEST(StcKnn, SelfExcludedEvenWhenLargest) {
  Array scores({3, 3}, {9, 1, 2, 0, 9, 0, 5, 4, 9});
  const Array mask = stc::knn_mask(scores, 1);
  EXPECT_EQ(mask.at({0, 2}), 1.0);
  EXPECT_EQ(mask.at({1, 0}), 1.0);  // tie between columns 0 and 2 goes low
  EXPECT_EQ(mask.at({2, 0}), 1.0);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(mask.at({i, i}), 0.0);
}

TEST(StcKnn, RowCountPropertyOnRandomScores) {
  std::mt19937_64 rng(4);
  for (std::size_t n : {2, 3, 7, 12}) {
    for (std::size_t k : {1, 2, 5, 20}) {
      const Array mask = stc::knn_mask(random_array({2, n, n}, rng), k);
      for (std::size_t r = 0; r < 2 * n; ++r) {
        double count = 0.0;
        for (std::size_t j = 0; j < n; ++j) count += mask[r * n + j];
        EXPECT_EQ(count, static_cast<double>(std::min(k, n - 1)));
        EXPECT_EQ(mask[r * n + r % n], 0.0);
      }
    }
  }
}

TEST(StcKnn, AdjacencyIsGeluOfDistanceOnKeptEdges) {
  Array dist({3, 3}, {0, 2, -1, 1, 0, 3, -2, -3, 0});
  const Array adj = stc::knn_adjacency(dist, 0.34);  // k = 1
  EXPECT_NEAR(adj.at({0, 1}), nd::gelu_value(2.0), 1e-15);
  EXPECT_EQ(adj.at({0, 2}), 0.0);
  EXPECT_NEAR(adj.at({1, 2}), nd::gelu_value(3.0), 1e-15);
  // GeLU dips below zero, so gelu(-3) outranks gelu(-2).
  EXPECT_NEAR(adj.at({2, 1}), nd::gelu_value(-3.0), 1e-15);
  EXPECT_EQ(adj.at({2, 0}), 0.0);
  EXPECT_THROW(stc::neighbor_count(3, 0.2), std::invalid_argument);
  EXPECT_THROW(stc::neighbor_count(3, 1.5), std::invalid_argument);
}

TEST(StcRegions, TwoChannelTwoPatchEnumeration) {
  stc::EgoMasks masks(2, 2);
  EXPECT_EQ(masks.region(0, 1), stc::Region::Temporal);
  EXPECT_EQ(masks.region(0, 2), stc::Region::Spatial);
  EXPECT_EQ(masks.region(0, 3), stc::Region::SpatialTemporal);
  EXPECT_EQ(masks.region(0, 0), stc::Region::Self);
  EXPECT_EQ(masks.region(3, 2), stc::Region::Temporal);
  EXPECT_EQ(masks.region(3, 1), stc::Region::Spatial);
  EXPECT_EQ(masks.mask(stc::Region::Spatial).at({1, 3}), 1.0);
}

TEST(StcRegions, SingleChannelHasNoSpatialEdges) {
  stc::EgoMasks masks(1, 5);
  for (std::size_t e = 0; e < 25; ++e) {
    EXPECT_EQ(masks.mask(stc::Region::Spatial)[e], 0.0);
    EXPECT_EQ(masks.mask(stc::Region::SpatialTemporal)[e], 0.0);
  }
}
