#include "timefilter/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "CLI11.hpp"
#include "timefilter/ndgrad/checkpoint.hpp"

namespace timefilter::cli {

namespace fs = std::filesystem;

namespace {

/// Input the user can fix: bad flags, mismatched checkpoints.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  return out;
}

void write_metrics_csv(const fs::path& path, const RunConfig& config, const EvalReport& report) {
  auto out = open_output(path);
  out << provenance_line(config) << "\n";
  out << "split,scale,step,MSE,MAE\n";
  auto rows = [&](const char* scale, const MetricsReport& m) {
    out << "test," << scale << ",all," << fmt(m.mse) << ',' << fmt(m.mae) << "\n";
    for (std::size_t t = 0; t < m.mse_per_step.size(); ++t) {
      out << "test," << scale << ',' << t + 1 << ',' << fmt(m.mse_per_step[t]) << ','
          << fmt(m.mae_per_step[t]) << "\n";
    }
  };
  rows("normalized", report.normalized);
  rows("raw", report.raw);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> items;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) items.push_back(item);
  }
  return items;
}

// Minimal line chart: look-back and actual horizon in grey, forecast in blue.
void write_plot(const fs::path& path, const std::string& title, const std::vector<double>& history,
                const std::vector<double>& actual, const std::vector<double>& predicted) {
  const double width = 800, height = 300, pad = 30;
  std::vector<double> all = history;
  all.insert(all.end(), actual.begin(), actual.end());
  all.insert(all.end(), predicted.begin(), predicted.end());
  double lo = *std::min_element(all.begin(), all.end());
  double hi = *std::max_element(all.begin(), all.end());
  if (hi - lo < 1e-12) hi = lo + 1.0;
  const std::size_t steps = history.size() + actual.size();
  auto x = [&](std::size_t i) { return pad + (width - 2 * pad) * i / double(std::max<std::size_t>(steps - 1, 1)); };
  auto y = [&](double v) { return height - pad - (height - 2 * pad) * (v - lo) / (hi - lo); };
  auto polyline = [&](std::size_t offset, const std::vector<double>& v, const char* color) {
    std::ostringstream s;
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < v.size(); ++i) s << x(offset + i) << ',' << y(v[i]) << ' ';
    s << "\"/>\n";
    return s.str();
  };
  std::vector<double> truth = history;
  truth.insert(truth.end(), actual.begin(), actual.end());
  auto out = open_output(path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << pad << "\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">" << title
      << "</text>\n"
      << "<line x1=\"" << x(history.size()) << "\" y1=\"" << pad << "\" x2=\"" << x(history.size())
      << "\" y2=\"" << height - pad << "\" stroke=\"#ccc\" stroke-dasharray=\"4\"/>\n"
      << polyline(0, truth, "#666") << polyline(history.size(), predicted, "#1f77b4") << "</svg>\n";
}

ndgrad::Checkpoint load_compatible(const fs::path& path, const RunConfig& config,
                                   std::size_t channels) {
  ndgrad::Checkpoint ckpt = ndgrad::load_checkpoint(path);
  const std::string expected = model_hash(config, channels);
  if (ckpt.model_hash != expected) {
    throw UsageError("checkpoint '" + path.string() + "' has model hash " + ckpt.model_hash +
                     " but the config hashes to " + expected);
  }
  return ckpt;
}

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string checkpoint;
  std::string out;
  std::string strategies;
  bool plot = false;
  std::size_t window = 0;
  std::string channels;
  std::size_t steps = 4000;
};

RunConfig resolve(const Flags& f) {
  RunConfig config = load_config(f.config);
  if (f.seed) override_seed(config, *f.seed);
  return config;
}

fs::path out_dir(const Flags& f, const char* fallback) {
  return f.out.empty() ? fs::path(fallback) : fs::path(f.out);
}

int cmd_train(const Flags& f, std::ostream& out) {
  const RunConfig config = resolve(f);
  const PreparedData data = prepare_data(config);
  const fs::path dir = out_dir(f, "run");
  fs::create_directories(dir);
  auto log = open_output(dir / "epochs.csv");
  log << provenance_line(config) << "\n" << epoch_log_header() << "\n";
  const TrainOutcome outcome = train_and_test(config, data, [&](const EpochRecord& r) {
    log << epoch_log_row(r) << "\n" << std::flush;
    out << "epoch " << r.epoch << " train_loss " << r.train_loss << " val_MSE " << r.val_mse
        << "\n";
  });
  ndgrad::Checkpoint ckpt;
  ckpt.model_hash = outcome.model_hash;
  ckpt.config_json = config_to_json(config);
  ckpt.params = outcome.result.best;
  ndgrad::save_checkpoint(dir / "checkpoint.tfc", ckpt);
  write_metrics_csv(dir / "metrics.csv", config, outcome.test);
  open_output(dir / "config.json") << config_to_json(config) << "\n";
  out << "best epoch " << outcome.result.best_epoch << " test MSE " << fmt(outcome.test.normalized.mse)
      << " MAE " << fmt(outcome.test.normalized.mae) << "\n";
  return kExitOk;
}

int cmd_eval(const Flags& f, std::ostream& out) {
  const RunConfig config = resolve(f);
  const PreparedData data = prepare_data(config);
  const auto ckpt = load_compatible(f.checkpoint, config, data.scaled.channels());
  const TimeFilterModel model(model_config(config, data.scaled.channels()));
  const EvalReport report = evaluate(model, ckpt.params, data.scaled, data.scaler, data::Split::Test,
                                     config.window.eval_stride, chunk_size(config.train));
  write_metrics_csv(out_dir(f, "eval") / "metrics.csv", config, report);
  out << "test MSE " << fmt(report.normalized.mse) << " MAE " << fmt(report.normalized.mae) << "\n";
  return kExitOk;
}

int cmd_forecast(const Flags& f, std::ostream& out) {
  const RunConfig config = resolve(f);
  const PreparedData data = prepare_data(config);
  const std::size_t C = data.scaled.channels();
  const auto ckpt = load_compatible(f.checkpoint, config, C);
  const TimeFilterModel model(model_config(config, C));
  const std::size_t L = config.window.lookback;
  const std::size_t T = config.window.horizon;
  const auto windows = data::make_windows(data.scaled, data::Split::Test, L, T, 1);
  if (f.window >= windows.size()) {
    throw UsageError("--window " + std::to_string(f.window) + " is out of range; the test split has " +
                     std::to_string(windows.size()) + " windows");
  }
  std::vector<std::size_t> channels;
  if (f.channels.empty()) {
    for (std::size_t c = 0; c < C; ++c) channels.push_back(c);
  } else {
    for (const auto& item : split_list(f.channels)) {
      std::size_t c = 0;
      try {
        c = std::stoul(item);
      } catch (const std::exception&) {
        throw UsageError("--channels: '" + item + "' is not a channel index");
      }
      if (c >= C) throw UsageError("--channels: channel " + item + " does not exist");
      channels.push_back(c);
    }
  }
  const auto batch =
      data::assemble_batch(data.scaled, std::span(windows).subspan(f.window, 1), L, T);
  Tape tape;
  ForwardOptions opts;
  opts.sample_ids = batch.starts;
  const Array pred = data.scaler.invert(model.forward(tape, ckpt.params, batch.inputs, opts).prediction.value());
  const Array actual = data.scaler.invert(batch.targets);
  const Array history = data.scaler.invert(batch.inputs);

  const fs::path dir = out_dir(f, "forecast");
  auto csv = open_output(dir / "forecast.csv");
  csv << provenance_line(config) << "\n" << "channel,step,predicted,actual\n";
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t t = 0; t < T; ++t) {
      csv << data.raw.channel_names[c] << ',' << t + 1 << ',' << fmt(pred[c * T + t]) << ','
          << fmt(actual[c * T + t]) << "\n";
    }
  }
  if (f.plot) {
    for (std::size_t c : channels) {
      std::vector<double> h(history.data() + c * L, history.data() + (c + 1) * L);
      std::vector<double> a(actual.data() + c * T, actual.data() + (c + 1) * T);
      std::vector<double> p(pred.data() + c * T, pred.data() + (c + 1) * T);
      write_plot(dir / ("forecast_channel_" + std::to_string(c) + ".svg"),
                 data.raw.channel_names[c] + " (test window " + std::to_string(f.window) + ")", h, a, p);
    }
  }
  out << "wrote " << C * T << " forecast rows to " << (dir / "forecast.csv").string() << "\n";
  return kExitOk;
}

int cmd_ablate(const Flags& f, std::ostream& out) {
  const RunConfig base = resolve(f);
  std::vector<psf::Strategy> strategies;
  for (const auto& name : split_list(f.strategies)) {
    try {
      strategies.push_back(psf::parse_strategy(name));
    } catch (const std::invalid_argument& e) {
      throw UsageError(std::string("--strategies: ") + e.what());
    }
  }
  if (strategies.empty()) throw UsageError("--strategies: at least one strategy is required");
  const PreparedData data = prepare_data(base);
  const fs::path dir = out_dir(f, "ablation");
  auto csv = open_output(dir / "ablation.csv");
  csv << provenance_line(base) << "\n" << "strategy,MSE,MAE,raw_MSE,raw_MAE,best_epoch\n";
  for (psf::Strategy s : strategies) {
    RunConfig config = base;
    config.psf.strategy = s;
    const TrainOutcome outcome = train_and_test(config, data);
    const auto& m = outcome.test;
    csv << psf::strategy_name(s) << ',' << fmt(m.normalized.mse) << ',' << fmt(m.normalized.mae)
        << ',' << fmt(m.raw.mse) << ',' << fmt(m.raw.mae) << ',' << outcome.result.best_epoch
        << "\n";
    out << psf::strategy_name(s) << " test MSE " << fmt(m.normalized.mse) << "\n";
  }
  return kExitOk;
}

int cmd_synth(const Flags& f, std::ostream& out) {
  if (f.out.empty()) throw UsageError("synth: --out FILE is required");
  if (f.steps < 2) throw UsageError("synth: --steps must be at least 2");
  const auto ds = data::generate_planted_dataset(f.steps, f.seed.value_or(0));
  if (fs::path(f.out).has_parent_path()) fs::create_directories(fs::path(f.out).parent_path());
  data::write_csv(f.out, ds);
  out << "wrote " << ds.channels() << " channels x " << ds.timesteps() << " steps to " << f.out
      << "\n";
  return kExitOk;
}

}  // namespace

PreparedData prepare_data(const RunConfig& config) {
  if (config.dataset.path.empty()) throw ConfigError("dataset.path: required");
  PreparedData d;
  d.raw = data::load_csv(config.dataset.path, config.dataset.date_column);
  if (config.dataset.splits) data::assign_splits(d.raw, *config.dataset.splits);
  d.scaler = data::ChannelScaler::fit(d.raw);
  d.scaled = d.scaler.apply(d.raw);
  return d;
}

TrainOutcome train_and_test(const RunConfig& config, const PreparedData& data,
                            const EpochCallback& on_epoch) {
  const std::size_t C = data.scaled.channels();
  const TimeFilterModel model(model_config(config, C));
  TrainOutcome o;
  o.model_hash = model_hash(config, C);
  o.result = train_loop(model, model.initialize(config.train.seed), data.scaled, data.scaler,
                        config, on_epoch);
  o.test = evaluate(model, o.result.best, data.scaled, data.scaler, data::Split::Test,
                    config.window.eval_stride, chunk_size(config.train));
  return o;
}

std::string provenance_line(const RunConfig& config) {
  return "# config: " + config_to_json(config) + " seed: " + std::to_string(config.train.seed);
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"TimeFilter patch-graph forecaster", "timefilter"};
  app.require_subcommand(1);
  Flags f;
  auto with_config = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "run config (JSON)")->required();
    sub->add_option("--seed", f.seed, "overrides train.seed and psf.seed");
    sub->add_option("--out", f.out, "output directory");
  };
  auto* train = app.add_subcommand("train", "train a model and report test metrics");
  with_config(train);
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  with_config(eval);
  eval->add_option("--checkpoint", f.checkpoint, "checkpoint file")->required();
  auto* forecast = app.add_subcommand("forecast", "forecast one test window");
  with_config(forecast);
  forecast->add_option("--checkpoint", f.checkpoint, "checkpoint file")->required();
  forecast->add_option("--window", f.window, "test window index");
  forecast->add_flag("--plot", f.plot, "write one SVG per channel");
  forecast->add_option("--channels", f.channels, "channels to plot, e.g. 0,2");
  auto* ablate = app.add_subcommand("ablate", "compare filter strategies");
  with_config(ablate);
  ablate->add_option("--strategies", f.strategies, "comma-separated strategy names")->required();
  auto* synth = app.add_subcommand("synth", "write the planted-structure dataset");
  synth->add_option("--out", f.out, "CSV file to write")->required();
  synth->add_option("--steps", f.steps, "number of timesteps");
  synth->add_option("--seed", f.seed, "generator seed");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  }

  try {
    if (train->parsed()) return cmd_train(f, out);
    if (eval->parsed()) return cmd_eval(f, out);
    if (forecast->parsed()) return cmd_forecast(f, out);
    if (ablate->parsed()) return cmd_ablate(f, out);
    return cmd_synth(f, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const data::DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::invalid_argument& e) {
    err << "invalid setting: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::exception& e) {
    err << "failed: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace timefilter::cli
