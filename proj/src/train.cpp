#include "timefilter/train.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "timefilter/ndgrad/adam.hpp"
#include "timefilter/random.hpp"

namespace timefilter {

TotalLoss total_loss(Var prediction, Var target, const std::optional<Var>& routing,
                     const LossWeights& weights) {
  if (prediction.shape() != target.shape()) {
    throw ndgrad::ShapeError("total_loss: prediction " + ndgrad::shape_string(prediction.shape()) +
                             " does not match target " + ndgrad::shape_string(target.shape()));
  }
  Tape& tape = prediction.tape();
  TotalLoss loss;
  loss.prediction = ndgrad::mean(ndgrad::square(ndgrad::sub(prediction, target)));
  if (routing) {
    loss.dynamic = psf::dyn_loss(*routing);
    loss.importance = psf::imp_loss(*routing, weights.imp_eps);
  } else {
    loss.dynamic = tape.constant(Array::scalar(0.0), "no_routing");
    loss.importance = loss.dynamic;
  }
  const double dyn_scale = weights.dyn_sign * weights.lambda_dyn;
  loss.total = ndgrad::add(
      ndgrad::add(loss.prediction, ndgrad::scale(loss.dynamic, dyn_scale)),
      ndgrad::scale(loss.importance, weights.lambda_imp));
  return loss;
}

void MetricsAccumulator::add(const Array& prediction, const Array& target) {
  if (prediction.shape() != target.shape() || prediction.rank() < 1) {
    throw ndgrad::ShapeError("metrics: prediction " + ndgrad::shape_string(prediction.shape()) +
                             " does not match target " + ndgrad::shape_string(target.shape()));
  }
  const std::size_t steps = prediction.shape().back();
  if (squared_.empty()) {
    squared_.assign(steps, 0.0);
    absolute_.assign(steps, 0.0);
  } else if (squared_.size() != steps) {
    throw ndgrad::ShapeError("metrics: horizon changed between batches");
  }
  const std::size_t rows = prediction.size() / steps;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t t = 0; t < steps; ++t) {
      const double e = prediction[r * steps + t] - target[r * steps + t];
      squared_[t] += e * e;
      absolute_[t] += std::fabs(e);
    }
  }
  series_ += rows;
}

MetricsReport MetricsAccumulator::report() const {
  MetricsReport m;
  m.series = series_;
  if (series_ == 0) return m;
  const double count = static_cast<double>(series_);
  for (std::size_t t = 0; t < squared_.size(); ++t) {
    m.mse_per_step.push_back(squared_[t] / count);
    m.mae_per_step.push_back(absolute_[t] / count);
  }
  const double steps = static_cast<double>(squared_.size());
  m.mse = std::accumulate(squared_.begin(), squared_.end(), 0.0) / (count * steps);
  m.mae = std::accumulate(absolute_.begin(), absolute_.end(), 0.0) / (count * steps);
  return m;
}

MetricsReport metrics(const Array& prediction, const Array& target) {
  MetricsAccumulator acc;
  acc.add(prediction, target);
  return acc.report();
}

EvalReport evaluate(const TimeFilterModel& model, const ParameterStore& params,
                    const data::TimeSeriesDataset& scaled, const data::ChannelScaler& scaler,
                    data::Split split, std::size_t stride, std::size_t batch_size) {
  const auto& mc = model.config();
  const auto windows = data::make_windows(scaled, split, mc.lookback, mc.horizon, stride);
  MetricsAccumulator normalized;
  MetricsAccumulator raw;
  for (std::size_t begin = 0; begin < windows.size(); begin += batch_size) {
    const std::size_t count = std::min(batch_size, windows.size() - begin);
    const auto batch = data::assemble_batch(
        scaled, std::span(windows).subspan(begin, count), mc.lookback, mc.horizon);
    Tape tape;
    ForwardOptions opts;
    opts.sample_ids = batch.starts;
    const Array pred = model.forward(tape, params, batch.inputs, opts).prediction.value();
    normalized.add(pred, batch.targets);
    raw.add(scaler.invert(pred), scaler.invert(batch.targets));
  }
  return {normalized.report(), raw.report(), windows.size()};
}

LossWeights loss_weights(const RunConfig& c) {
  return {c.loss.lambda_dyn, c.loss.lambda_imp, c.loss.dyn_sign, c.loss.imp_eps};
}

namespace {

std::string snapshot(std::size_t epoch, std::size_t batch, const ParameterStore& params,
                     const std::string& cause) {
  std::ostringstream out;
  out << "training aborted at epoch " << epoch << ", batch " << batch << ": " << cause
      << "; parameter norms:";
  for (const auto& name : params.names()) {
    double sq = 0.0;
    for (double v : params.at(name).values()) sq += v * v;
    out << ' ' << name << '=' << std::sqrt(sq);
  }
  return out.str();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

TrainResult train_loop(const TimeFilterModel& model, ParameterStore params,
                       const data::TimeSeriesDataset& scaled, const data::ChannelScaler& scaler,
                       const RunConfig& config, const EpochCallback& on_epoch) {
  const auto& mc = model.config();
  const auto& tc = config.train;
  TrainResult result;
  result.best = params;
  if (tc.epochs == 0) return result;

  auto windows =
      data::make_windows(scaled, data::Split::Train, mc.lookback, mc.horizon, config.window.stride);
  ndgrad::AdamOptions adam_opts;
  adam_opts.lr = tc.lr;
  ndgrad::Adam adam(adam_opts);
  const LossWeights weights = loss_weights(config);
  double best_mse = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;

  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    Rng shuffle(mix_keys({tc.seed, epoch, 0x73687566ULL}));
    for (std::size_t i = windows.size(); i > 1; --i) {
      std::swap(windows[i - 1], windows[shuffle.below(i)]);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < windows.size(); begin += tc.batch_size) {
      const std::size_t count = std::min(tc.batch_size, windows.size() - begin);
      ++result.steps;
      ndgrad::GradientMap grads;
      const std::size_t chunk = chunk_size(tc);
      try {
        for (std::size_t part = 0; part < count; part += chunk) {
          const std::size_t size = std::min(chunk, count - part);
          const double share = static_cast<double>(size) / static_cast<double>(count);
          const auto piece = data::assemble_batch(
              scaled, std::span(windows).subspan(begin + part, size), mc.lookback, mc.horizon);
          Tape tape;
          ForwardOptions opts;
          opts.training = true;
          opts.step = result.steps;
          opts.sample_ids = piece.starts;
          ForwardResult fwd = model.forward(tape, params, piece.inputs, opts);
          TotalLoss loss = total_loss(fwd.prediction, tape.constant(piece.targets, "targets"),
                                      fwd.routing, weights);
          ndgrad::GradientMap piece_grads = tape.gradient(loss.total);
          if (part == 0) {
            grads = std::move(piece_grads);
            if (size != count) {
              for (auto& [name, g] : grads) {
                for (double& v : g.values()) v *= share;
              }
            }
          } else {
            for (auto& [name, g] : grads) {
              const Array& add = piece_grads.at(name);
              for (std::size_t i = 0; i < g.size(); ++i) g[i] += share * add[i];
            }
          }
          rec.train_loss += share * loss.total.value().item();
          rec.pred_loss += share * loss.prediction.value().item();
          rec.dyn_loss += share * loss.dynamic.value().item();
          rec.imp_loss += share * loss.importance.value().item();
        }
      } catch (const ndgrad::NonFiniteError& e) {
        throw TrainingAborted(snapshot(epoch, batches + 1, params, e.what()));
      }
      const double norm = ndgrad::clip_global_norm(grads, tc.clip_norm);
      if (!std::isfinite(norm)) {
        throw TrainingAborted(snapshot(epoch, batches + 1, params, "non-finite gradient norm"));
      }
      adam.step(params, grads);
      ++batches;
    }
    const double denom = static_cast<double>(std::max<std::size_t>(batches, 1));
    rec.train_loss /= denom;
    rec.pred_loss /= denom;
    rec.dyn_loss /= denom;
    rec.imp_loss /= denom;

    const EvalReport val = evaluate(model, params, scaled, scaler, data::Split::Val,
                                    config.window.eval_stride, chunk_size(tc));
    rec.val_mse = val.normalized.mse;
    rec.val_mae = val.normalized.mae;
    result.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (rec.val_mse < best_mse) {
      best_mse = rec.val_mse;
      result.best = params;
      result.best_epoch = epoch;
      stale = 0;
    } else if (++stale >= tc.patience) {
      result.stopped_early = epoch < tc.epochs;
      break;
    }
  }
  return result;
}

std::string epoch_log_header() { return "epoch,train_loss,L_pred,L_dyn,L_imp,val_MSE,val_MAE"; }

std::string epoch_log_row(const EpochRecord& r) {
  return std::to_string(r.epoch) + "," + fmt(r.train_loss) + "," + fmt(r.pred_loss) + "," +
         fmt(r.dyn_loss) + "," + fmt(r.imp_loss) + "," + fmt(r.val_mse) + "," + fmt(r.val_mae);
}

}  // namespace timefilter
