#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "timefilter/ndgrad/array.hpp"

namespace timefilter::data {

using ndgrad::Array;

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Split { Train, Val, Test };
std::string_view split_name(Split split);

struct SplitSizes {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
  std::size_t total() const { return train + val + test; }
};

/// Multichannel series stored channel-major: values is [C, timesteps].
struct TimeSeriesDataset {
  std::vector<std::string> channel_names;
  Array values;
  SplitSizes splits;

  std::size_t channels() const { return values.dim(0); }
  std::size_t timesteps() const { return values.dim(1); }
  std::size_t split_begin(Split split) const;
  std::size_t split_length(Split split) const;
  double at(std::size_t channel, std::size_t t) const { return values[channel * timesteps() + t]; }
};

/// Header row required; one channel per column; the first column is dropped
/// when `date_column_present`. Errors name the 1-based data row and column.
TimeSeriesDataset load_csv(const std::filesystem::path& path, bool date_column_present);

/// Published split counts for known benchmarks (matched on file stem),
/// otherwise a chronological 70/10/20 split.
SplitSizes default_splits(std::string_view dataset_name, std::size_t timesteps);
void assign_splits(TimeSeriesDataset& dataset, SplitSizes splits);

/// Per-channel z-score fitted on the training split only.
struct ChannelScaler {
  std::vector<double> mean;
  std::vector<double> std;

  static ChannelScaler fit(const TimeSeriesDataset& dataset);
  TimeSeriesDataset apply(const TimeSeriesDataset& dataset) const;
  /// Maps [..., C, T] arrays from the scaled space back to raw units.
  Array invert(const Array& scaled) const;
};

inline constexpr double kStdFloor = 1e-5;

struct Window {
  std::size_t start = 0;  // absolute index of the first look-back step
};

/// Chronological windows lying fully inside one split:
/// count = (length - L - T) / stride + 1.
std::vector<Window> make_windows(const TimeSeriesDataset& dataset, Split split,
                                 std::size_t lookback, std::size_t horizon,
                                 std::size_t stride = 1);

struct WindowStats {
  Array mean;  // [B, C]
  Array std;   // [B, C], floored at kStdFloor
};

struct WindowBatch {
  Array inputs;   // [B, C, L], dataset scale
  Array targets;  // [B, C, T], dataset scale
  std::vector<std::size_t> starts;
};

WindowBatch assemble_batch(const TimeSeriesDataset& dataset, std::span<const Window> windows,
                           std::size_t lookback, std::size_t horizon);

struct NormalizedInputs {
  Array values;  // same shape as the look-back
  WindowStats stats;
};

/// Instance normalization of [C, L] or [B, C, L] look-backs with population
/// statistics computed on the look-back only.
NormalizedInputs normalize(const Array& lookback);
/// Inverse of normalize for [C, T] or [B, C, T] predictions.
Array denormalize(const Array& normalized, const WindowStats& stats);

/// Five-channel series with planted structure: channels 0-2 are phase-lagged
/// copies of one amplitude-modulated sinusoid, channels 3-4 are independent.
TimeSeriesDataset generate_planted_dataset(std::size_t timesteps, std::uint64_t seed);
void write_csv(const std::filesystem::path& path, const TimeSeriesDataset& dataset);

}  // namespace timefilter::data
