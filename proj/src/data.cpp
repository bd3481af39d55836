#include "timefilter/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <sstream>

#include "timefilter/random.hpp"

namespace timefilter::data {

std::string_view split_name(Split split) {
  switch (split) {
    case Split::Train:
      return "train";
    case Split::Val:
      return "val";
    case Split::Test:
      return "test";
  }
  return "?";
}

std::size_t TimeSeriesDataset::split_begin(Split split) const {
  switch (split) {
    case Split::Train:
      return 0;
    case Split::Val:
      return splits.train;
    case Split::Test:
      return splits.train + splits.val;
  }
  return 0;
}

std::size_t TimeSeriesDataset::split_length(Split split) const {
  switch (split) {
    case Split::Train:
      return splits.train;
    case Split::Val:
      return splits.val;
    case Split::Test:
      return splits.test;
  }
  return 0;
}

namespace {

std::vector<std::string_view> split_cells(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t begin = 0;
  while (true) {
    const auto comma = line.find(',', begin);
    cells.push_back(line.substr(begin, comma == std::string_view::npos ? comma : comma - begin));
    if (comma == std::string_view::npos) break;
    begin = comma + 1;
  }
  return cells;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '"')) {
    s.remove_suffix(1);
  }
  return s;
}

bool parse_real(std::string_view cell, double& out) {
  cell = trim(cell);
  if (cell.empty()) return false;
  if (cell.front() == '+') cell.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), out);
  return ec == std::errc() && ptr == cell.data() + cell.size() && std::isfinite(out);
}

}  // namespace

TimeSeriesDataset load_csv(const std::filesystem::path& path, bool date_column_present) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file '" + path.string() + "'");

  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) break;
  }
  if (trim(line).empty()) throw DataError("dataset file '" + path.string() + "' is empty");
  for (auto cell : split_cells(line)) header.emplace_back(trim(cell));

  const std::size_t skip = date_column_present ? 1 : 0;
  if (header.size() <= skip) {
    throw DataError("dataset file '" + path.string() + "' has no channel columns");
  }

  TimeSeriesDataset ds;
  ds.channel_names.assign(header.begin() + static_cast<std::ptrdiff_t>(skip), header.end());
  const std::size_t channels = ds.channel_names.size();
  std::vector<std::vector<double>> columns(channels);

  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    ++row;
    const auto cells = split_cells(line);
    if (cells.size() != header.size()) {
      throw DataError("row " + std::to_string(row) + " (line " + std::to_string(line_no) + "): " +
                      std::to_string(cells.size()) + " cells, header has " +
                      std::to_string(header.size()));
    }
    for (std::size_t c = 0; c < channels; ++c) {
      double v = 0.0;
      if (!parse_real(cells[c + skip], v)) {
        throw DataError("row " + std::to_string(row) + ", column " + std::to_string(c + skip + 1) +
                        " ('" + header[c + skip] + "', line " + std::to_string(line_no) +
                        "): cannot parse '" + std::string(trim(cells[c + skip])) + "' as a number");
      }
      columns[c].push_back(v);
    }
  }
  if (row == 0) throw DataError("dataset file '" + path.string() + "' has no data rows");

  std::vector<double> values;
  values.reserve(channels * row);
  for (const auto& col : columns) values.insert(values.end(), col.begin(), col.end());
  ds.values = Array({channels, row}, std::move(values));
  ds.splits = default_splits(path.stem().string(), row);
  return ds;
}

SplitSizes default_splits(std::string_view dataset_name, std::size_t timesteps) {
  static const std::map<std::string, SplitSizes, std::less<>> known = {
      {"ETTh1", {8545, 2881, 2881}},        {"ETTh2", {8545, 2881, 2881}},
      {"ETTm1", {34465, 11521, 11521}},     {"ETTm2", {34465, 11521, 11521}},
      {"weather", {36792, 5271, 10540}},    {"electricity", {18317, 2633, 5261}},
      {"traffic", {12185, 1757, 3509}},     {"solar_AL", {36601, 5161, 10417}},
  };
  if (auto it = known.find(dataset_name); it != known.end() && it->second.total() <= timesteps) {
    return it->second;
  }
  SplitSizes s;
  s.train = timesteps * 7 / 10;
  s.test = timesteps * 2 / 10;
  s.val = timesteps - s.train - s.test;
  return s;
}

void assign_splits(TimeSeriesDataset& dataset, SplitSizes splits) {
  if (splits.total() > dataset.timesteps()) {
    throw DataError("split sizes (" + std::to_string(splits.train) + ", " +
                    std::to_string(splits.val) + ", " + std::to_string(splits.test) +
                    ") exceed the " + std::to_string(dataset.timesteps()) + " available timesteps");
  }
  dataset.splits = splits;
}

ChannelScaler ChannelScaler::fit(const TimeSeriesDataset& dataset) {
  const std::size_t n = dataset.splits.train;
  if (n == 0) throw DataError("cannot fit scaler: empty training split");
  ChannelScaler s;
  for (std::size_t c = 0; c < dataset.channels(); ++c) {
    double mean = 0.0;
    for (std::size_t t = 0; t < n; ++t) mean += dataset.at(c, t);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t t = 0; t < n; ++t) var += (dataset.at(c, t) - mean) * (dataset.at(c, t) - mean);
    s.mean.push_back(mean);
    s.std.push_back(std::max(std::sqrt(var / static_cast<double>(n)), kStdFloor));
  }
  return s;
}

TimeSeriesDataset ChannelScaler::apply(const TimeSeriesDataset& dataset) const {
  TimeSeriesDataset out = dataset;
  const std::size_t T = dataset.timesteps();
  for (std::size_t c = 0; c < dataset.channels(); ++c) {
    for (std::size_t t = 0; t < T; ++t) {
      out.values[c * T + t] = (dataset.values[c * T + t] - mean[c]) / std[c];
    }
  }
  return out;
}

Array ChannelScaler::invert(const Array& scaled) const {
  if (scaled.rank() < 2 || scaled.dim(scaled.rank() - 2) != mean.size()) {
    throw ndgrad::ShapeError("scaler.invert: shape " + ndgrad::shape_string(scaled.shape()) +
                             " does not carry " + std::to_string(mean.size()) + " channels");
  }
  const std::size_t C = mean.size();
  const std::size_t T = scaled.shape().back();
  Array out = scaled;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t c = (i / T) % C;
    out[i] = scaled[i] * std[c] + mean[c];
  }
  return out;
}

std::vector<Window> make_windows(const TimeSeriesDataset& dataset, Split split,
                                 std::size_t lookback, std::size_t horizon, std::size_t stride) {
  if (lookback == 0 || horizon == 0) throw DataError("look-back and horizon must be positive");
  if (stride == 0) throw DataError("window stride must be positive");
  const std::size_t length = dataset.split_length(split);
  if (lookback + horizon > length) {
    throw DataError("look-back " + std::to_string(lookback) + " + horizon " +
                    std::to_string(horizon) + " exceeds the " + std::string(split_name(split)) +
                    " split length " + std::to_string(length));
  }
  const std::size_t begin = dataset.split_begin(split);
  std::vector<Window> windows;
  for (std::size_t s = 0; s + lookback + horizon <= length; s += stride) {
    windows.push_back({begin + s});
  }
  return windows;
}

WindowBatch assemble_batch(const TimeSeriesDataset& dataset, std::span<const Window> windows,
                           std::size_t lookback, std::size_t horizon) {
  if (windows.empty()) throw DataError("assemble_batch: no windows");
  const std::size_t B = windows.size();
  const std::size_t C = dataset.channels();
  WindowBatch batch;
  batch.inputs = Array({B, C, lookback});
  batch.targets = Array({B, C, horizon});
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t s = windows[b].start;
    if (s + lookback + horizon > dataset.timesteps()) {
      throw DataError("assemble_batch: window at " + std::to_string(s) + " runs past the series");
    }
    batch.starts.push_back(s);
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t t = 0; t < lookback; ++t) {
        batch.inputs[(b * C + c) * lookback + t] = dataset.at(c, s + t);
      }
      for (std::size_t t = 0; t < horizon; ++t) {
        batch.targets[(b * C + c) * horizon + t] = dataset.at(c, s + lookback + t);
      }
    }
  }
  return batch;
}

NormalizedInputs normalize(const Array& lookback) {
  if (lookback.rank() != 2 && lookback.rank() != 3) {
    throw ndgrad::ShapeError("normalize: expected [C, L] or [B, C, L], got " +
                             ndgrad::shape_string(lookback.shape()));
  }
  const std::size_t L = lookback.shape().back();
  const std::size_t rows = lookback.size() / L;
  ndgrad::Shape stat_shape(lookback.shape().begin(), lookback.shape().end() - 1);
  NormalizedInputs out{Array(lookback.shape()), {Array(stat_shape), Array(stat_shape)}};
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = lookback.data() + r * L;
    double mean = 0.0;
    for (std::size_t t = 0; t < L; ++t) mean += x[t];
    mean /= static_cast<double>(L);
    double var = 0.0;
    for (std::size_t t = 0; t < L; ++t) var += (x[t] - mean) * (x[t] - mean);
    const double sd = std::max(std::sqrt(var / static_cast<double>(L)), kStdFloor);
    out.stats.mean[r] = mean;
    out.stats.std[r] = sd;
    for (std::size_t t = 0; t < L; ++t) out.values[r * L + t] = (x[t] - mean) / sd;
  }
  return out;
}

Array denormalize(const Array& normalized, const WindowStats& stats) {
  const std::size_t T = normalized.shape().back();
  if (normalized.size() / T != stats.mean.size()) {
    throw ndgrad::ShapeError("denormalize: " + ndgrad::shape_string(normalized.shape()) +
                             " does not match statistics " +
                             ndgrad::shape_string(stats.mean.shape()));
  }
  Array out(normalized.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t r = i / T;
    out[i] = normalized[i] * stats.std[r] + stats.mean[r];
  }
  return out;
}

TimeSeriesDataset generate_planted_dataset(std::size_t timesteps, std::uint64_t seed) {
  constexpr std::size_t kChannels = 5;
  constexpr double kPeriod = 24.0;
  constexpr std::size_t kLags[3] = {0, 5, 11};
  constexpr std::size_t kMaxLag = 11;

  Rng rng(seed);
  const double two_pi = 2.0 * std::numbers::pi;

  // Shared driver with a slowly drifting amplitude so that a leading channel
  // carries information the lagging ones cannot infer from their own past.
  std::vector<double> driver(timesteps + kMaxLag);
  double amp = 1.0;
  for (std::size_t t = 0; t < driver.size(); ++t) {
    amp = 1.0 + 0.97 * (amp - 1.0) + 0.08 * rng.normal();
    driver[t] = amp * std::sin(two_pi * static_cast<double>(t) / kPeriod);
  }

  TimeSeriesDataset ds;
  ds.values = Array({kChannels, timesteps});
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t t = 0; t < timesteps; ++t) {
      ds.values[c * timesteps + t] = driver[t + kMaxLag - kLags[c]] + 0.05 * rng.normal();
    }
  }
  const double periods[2] = {17.0, 31.0};
  for (std::size_t c = 3; c < kChannels; ++c) {
    double ar = 0.0;
    const double phase = rng.uniform(0.0, two_pi);
    for (std::size_t t = 0; t < timesteps; ++t) {
      ar = 0.8 * ar + 0.2 * rng.normal();
      ds.values[c * timesteps + t] =
          0.8 * std::sin(two_pi * static_cast<double>(t) / periods[c - 3] + phase) + ar;
    }
  }
  for (std::size_t c = 0; c < kChannels; ++c) ds.channel_names.push_back("ch" + std::to_string(c));
  ds.splits = default_splits("", timesteps);
  return ds;
}

void write_csv(const std::filesystem::path& path, const TimeSeriesDataset& dataset) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << "date";
  for (const auto& name : dataset.channel_names) out << ',' << name;
  out << '\n';
  out << std::setprecision(17);
  for (std::size_t t = 0; t < dataset.timesteps(); ++t) {
    out << t;
    for (std::size_t c = 0; c < dataset.channels(); ++c) out << ',' << dataset.at(c, t);
    out << '\n';
  }
}

}  // namespace timefilter::data
