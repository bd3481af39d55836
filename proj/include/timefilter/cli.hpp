#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "timefilter/config.hpp"
#include "timefilter/data.hpp"
#include "timefilter/train.hpp"

namespace timefilter::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 1;
inline constexpr int kExitRuntime = 2;

struct PreparedData {
  data::TimeSeriesDataset raw;
  data::TimeSeriesDataset scaled;
  data::ChannelScaler scaler;
};

/// Loads the configured CSV, applies split overrides and fits the scaler.
PreparedData prepare_data(const RunConfig& config);

struct TrainOutcome {
  TrainResult result;
  EvalReport test;
  std::string model_hash;
};

/// Trains one model and evaluates the best parameters on the test split.
TrainOutcome train_and_test(const RunConfig& config, const PreparedData& data,
                            const EpochCallback& on_epoch = {});

/// "# config: {...}" line written at the top of every CSV artifact.
std::string provenance_line(const RunConfig& config);

/// Entry point shared by the executable and the tests.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace timefilter::cli
