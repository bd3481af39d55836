#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "timefilter/config.hpp"
#include "timefilter/data.hpp"
#include "timefilter/model.hpp"

namespace timefilter {

struct LossWeights {
  double lambda_dyn = 0.01;
  double lambda_imp = 0.01;
  int dyn_sign = 1;
  double imp_eps = 1e-10;
};

struct TotalLoss {
  Var total;
  Var prediction;  // mean squared error over channels and steps
  Var dynamic;     // routing entropy, zero without a router
  Var importance;  // routing coefficient of variation, zero without a router
};

/// L = L_pred + sign * lambda_dyn * L_dyn + lambda_imp * L_imp.
TotalLoss total_loss(Var prediction, Var target, const std::optional<Var>& routing,
                     const LossWeights& weights);

struct MetricsReport {
  double mse = 0.0;
  double mae = 0.0;
  std::vector<double> mse_per_step;  // one per horizon step
  std::vector<double> mae_per_step;
  std::size_t series = 0;  // windows x channels averaged over
};

/// Running sums over [B, C, T] batches.
class MetricsAccumulator {
 public:
  void add(const Array& prediction, const Array& target);
  MetricsReport report() const;

 private:
  std::vector<double> squared_;
  std::vector<double> absolute_;
  std::size_t series_ = 0;
};

MetricsReport metrics(const Array& prediction, const Array& target);

struct EvalReport {
  MetricsReport normalized;  // train-split z-scored units
  MetricsReport raw;         // original units
  std::size_t windows = 0;
};

/// Evaluates every window of `split` with noise off. `scaled` is the
/// z-scored dataset and `scaler` maps back to raw units.
EvalReport evaluate(const TimeFilterModel& model, const ParameterStore& params,
                    const data::TimeSeriesDataset& scaled, const data::ChannelScaler& scaler,
                    data::Split split, std::size_t stride, std::size_t batch_size);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double pred_loss = 0.0;
  double dyn_loss = 0.0;
  double imp_loss = 0.0;
  double val_mse = 0.0;
  double val_mae = 0.0;
};

struct TrainResult {
  ParameterStore best;
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // 0 when no epoch ran
  bool stopped_early = false;
  std::size_t steps = 0;
};

/// Raised when a non-finite loss or gradient appears; the message carries
/// the epoch, batch and per-parameter norms.
class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

TrainResult train_loop(const TimeFilterModel& model, ParameterStore params,
                       const data::TimeSeriesDataset& scaled, const data::ChannelScaler& scaler,
                       const RunConfig& config, const EpochCallback& on_epoch = {});

LossWeights loss_weights(const RunConfig& config);

std::string epoch_log_header();
std::string epoch_log_row(const EpochRecord& record);

}  // namespace timefilter
