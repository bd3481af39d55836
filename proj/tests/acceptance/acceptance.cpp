// Acceptance gate: one PASS/FAIL/SKIP line per criterion. Run with criterion
// numbers as arguments, or with none to run them all.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

#include "support/gradcheck.hpp"
#include "timefilter/cli.hpp"
#include "timefilter/model.hpp"
#include "timefilter/psf.hpp"
#include "timefilter/stc.hpp"
#include "timefilter/train.hpp"

namespace fs = std::filesystem;
namespace tf = timefilter;
namespace nd = timefilter::ndgrad;
using nd::Array;

namespace {

// Tolerances and budgets.
constexpr double kMaskBudgetSeconds = 10.0;
constexpr double kAllocationBudgetSeconds = 10.0;
constexpr double kGradientTolerance = 1e-4;
constexpr double kGradientStep = 1e-5;
constexpr double kGradientBudgetSeconds = 60.0;
constexpr double kEntropyTolerance = 1e-12;
constexpr double kImportanceTolerance = 1e-9;
constexpr double kRequiredImprovement = 0.5;
constexpr double kConvergenceBudgetSeconds = 300.0;
constexpr double kEtth1TargetMse = 0.444;
constexpr double kEtth1BudgetSeconds = 1800.0;
constexpr double kZeroGraphTolerance = 1e-12;

constexpr int kSkipCode = 77;

enum class Outcome { Pass, Fail, Skip };

struct Verdict {
  Outcome outcome;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string num(double v, int precision = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", precision, v);
  return buf;
}

Verdict check(bool ok, std::string detail) {
  return {ok ? Outcome::Pass : Outcome::Fail, std::move(detail)};
}

// ---------------------------------------------------------------- 1
bool masks_partition(std::size_t C, std::size_t N, std::string& why) {
  tf::stc::EgoMasks masks(C, N);
  const std::size_t n = C * N;
  const Array& t = masks.mask(tf::stc::Region::Temporal);
  const Array& s = masks.mask(tf::stc::Region::Spatial);
  const Array& st = masks.mask(tf::stc::Region::SpatialTemporal);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t e = i * n + j;
      const double diag = i == j ? 1.0 : 0.0;
      if (t[e] + s[e] + st[e] + diag != 1.0) {
        why = "C=" + std::to_string(C) + " N=" + std::to_string(N) + " position (" +
              std::to_string(i) + "," + std::to_string(j) + ") covered " +
              std::to_string(t[e] + s[e] + st[e] + diag) + " times";
        return false;
      }
      const bool same_channel = i / N == j / N;
      const bool same_patch = i % N == j % N;
      const bool ok = (t[e] == 1.0) == (same_channel && !same_patch) &&
                      (s[e] == 1.0) == (!same_channel && same_patch) &&
                      (st[e] == 1.0) == (!same_channel && !same_patch);
      if (!ok) {
        why = "C=" + std::to_string(C) + " N=" + std::to_string(N) + " mislabels (" +
              std::to_string(i) + "," + std::to_string(j) + ")";
        return false;
      }
    }
  }
  return true;
}

Verdict criterion_mask_partition() {
  const auto start = Clock::now();
  std::size_t cases = 0;
  std::string why;
  for (std::size_t C = 1; C <= 64; ++C) {
    for (std::size_t N = 1; C * N <= 64; ++N) {
      ++cases;
      if (!masks_partition(C, N, why)) return {Outcome::Fail, why};
    }
  }
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> dim(1, 40);
  std::size_t random_cases = 0;
  while (random_cases < 1000) {
    const std::size_t C = dim(rng), N = dim(rng);
    if (C * N <= 64 || C * N > 400) continue;
    ++random_cases;
    if (!masks_partition(C, N, why)) return {Outcome::Fail, why};
  }
  const double secs = seconds_since(start);
  return check(secs < kMaskBudgetSeconds, std::to_string(cases) + " exhaustive + " +
                                              std::to_string(random_cases) + " random grids, " +
                                              num(secs, 3) + " s");
}

// ---------------------------------------------------------------- 2
std::size_t brute_force_prefix(const std::array<double, 3>& r, double top_p) {
  std::array<double, 3> v = r;
  std::sort(v.begin(), v.end(), std::greater<>());
  double sum = 0.0;
  for (std::size_t q = 1; q <= 3; ++q) {
    sum += v[q - 1];
    if (sum >= top_p) return q;
  }
  return 3;
}

Verdict criterion_allocation() {
  const auto start = Clock::now();
  std::size_t cases = 0, mismatches = 0;
  std::string first;
  for (int a = 0; a <= 100; ++a) {
    for (int b = 0; a + b <= 100; ++b) {
      const std::array<double, 3> r = {a / 100.0, b / 100.0, (100 - a - b) / 100.0};
      for (double p : {0.0, 0.25, 0.5, 0.9}) {
        ++cases;
        const auto alloc = tf::psf::dynamic_allocation(r, p);
        const std::size_t q = brute_force_prefix(r, p);
        bool ok = alloc.count == q;
        // The selected filters must be q of the largest confidences.
        double smallest_selected = 2.0, largest_dropped = -1.0;
        for (std::size_t f = 0; f < 3; ++f) {
          if (alloc.selected[f]) smallest_selected = std::min(smallest_selected, r[f]);
          else largest_dropped = std::max(largest_dropped, r[f]);
        }
        ok = ok && smallest_selected >= largest_dropped;
        if (!ok && mismatches++ == 0) {
          first = "r=[" + num(r[0]) + "," + num(r[1]) + "," + num(r[2]) + "] top_p=" + num(p) +
                  " q=" + std::to_string(alloc.count) + " oracle=" + std::to_string(q);
        }
      }
    }
  }
  const double secs = seconds_since(start);
  if (mismatches) return {Outcome::Fail, std::to_string(mismatches) + " mismatches, first " + first};
  return check(secs < kAllocationBudgetSeconds,
               std::to_string(cases) + " grid cases match, " + num(secs, 3) + " s");
}

// ---------------------------------------------------------------- 3
Verdict criterion_gradients() {
  const auto start = Clock::now();
  tf::ModelConfig c;
  c.channels = 2;
  c.lookback = 6;
  c.patch_len = 2;  // N = 3
  c.horizon = 3;
  c.d_model = 8;
  c.heads = 2;
  c.e_layers = 1;
  c.d_ff = 4;
  c.alpha = 0.5;
  c.top_p = 0.5;
  const tf::TimeFilterModel model(c);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal(0.0, 1.0);
  Array x({2, 2, 6}), y({2, 2, 3});
  for (double& v : x.values()) v = normal(rng);
  for (double& v : y.values()) v = normal(rng);
  const tf::LossWeights weights{0.1, 0.1, 1, 1e-10};
  auto loss = [&](const nd::ParameterStore& p, nd::GradientMap* grads) {
    nd::Tape tape;
    auto fwd = model.forward(tape, p, x, {});
    auto l = tf::total_loss(fwd.prediction, tape.constant(y), fwd.routing, weights);
    if (grads) *grads = tape.gradient(l.total);
    return l.total.value().item();
  };
  double worst = 0.0;
  std::string where;
  std::size_t checked = 0;
  for (int variant = 0; variant < 2; ++variant) {
    nd::ParameterStore p = model.initialize(7);
    if (variant == 1) {
      // Combine output maps start at zero; also check away from that point.
      for (const auto& name : p.names()) {
        if (name.find(".down.") != std::string::npos) {
          for (double& v : p.at(name).values()) v = 0.3 * normal(rng);
        }
      }
    }
    nd::GradientMap grads;
    loss(p, &grads);
    const auto report = tf::testing::finite_difference_check(
        p, [&](const nd::ParameterStore& q) { return loss(q, nullptr); }, grads, kGradientStep);
    checked += report.checked;
    if (report.max_relative_error >= worst) {
      worst = report.max_relative_error;
      where = report.worst_parameter + "[" + std::to_string(report.worst_index) + "]";
    }
  }
  const double secs = seconds_since(start);
  return check(worst < kGradientTolerance && secs < kGradientBudgetSeconds,
               std::to_string(checked) + " entries, max relative error " + num(worst, 3) + " at " +
                   where + ", " + num(secs, 3) + " s");
}

// ---------------------------------------------------------------- 4
Verdict criterion_losses() {
  const double dyn = tf::psf::dyn_loss(Array({5, 3}, 1.0 / 3.0));
  const double imp = tf::psf::imp_loss(Array({5, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1, 1, 0, 0, 0, 0, 1}));
  const double cv = (std::numbers::sqrt2 / 3.0) / (1.0 / 3.0);
  const double dyn_err = std::abs(dyn - std::log(3.0));
  const double imp_err = std::abs(imp - cv);
  return check(dyn_err <= kEntropyTolerance && imp_err <= kImportanceTolerance,
               "|dyn - ln 3| = " + num(dyn_err, 3) + ", |imp - sqrt2| = " + num(imp_err, 3));
}

// ---------------------------------------------------------------- 5
tf::RunConfig planted_config(const fs::path& csv) {
  tf::RunConfig c;
  c.dataset.path = csv.string();
  c.window = {96, 24, 2, 2};
  c.model = {16, 16, 2, 0.3, 1, 32};
  c.psf.top_p = 0.5;
  c.psf.weight_edges_by_gate = true;
  c.psf.seed = 1;
  c.train.lr = 3e-3;
  c.train.epochs = 30;
  c.train.batch_size = 32;
  c.train.seed = 1;
  return c;
}

fs::path planted_csv() {
  const fs::path dir = fs::temp_directory_path() / "timefilter_acceptance";
  fs::create_directories(dir);
  const fs::path csv = dir / "planted.csv";
  tf::data::write_csv(csv, tf::data::generate_planted_dataset(4000, 1));
  return csv;
}

Verdict criterion_convergence() {
  const auto start = Clock::now();
  tf::RunConfig config = planted_config(planted_csv());
  const auto data = tf::cli::prepare_data(config);
  const std::size_t C = data.scaled.channels();

  const tf::TimeFilterModel untrained(tf::model_config(config, C));
  const auto baseline = tf::evaluate(untrained, untrained.initialize(config.train.seed), data.scaled,
                                     data.scaler, tf::data::Split::Val, config.window.eval_stride,
                                     config.train.batch_size);
  const auto full = tf::cli::train_and_test(config, data);
  double best_val = full.result.epochs.front().val_mse;
  for (const auto& e : full.result.epochs) best_val = std::min(best_val, e.val_mse);
  const double improvement = 1.0 - best_val / baseline.normalized.mse;

  auto plain_config = config;
  plain_config.psf.strategy = tf::psf::Strategy::NoFilter;
  const auto plain = tf::cli::train_and_test(plain_config, data);

  auto binary_config = config;
  binary_config.psf.weight_edges_by_gate = false;
  const auto binary = tf::cli::train_and_test(binary_config, data);
  std::printf("  info: binary keep/drop filtration without gate weighting: test MSE %s vs none %s\n",
              num(binary.test.normalized.mse, 8).c_str(), num(plain.test.normalized.mse, 8).c_str());

  const double secs = seconds_since(start);
  const bool ok = improvement >= kRequiredImprovement &&
                  full.test.normalized.mse <= plain.test.normalized.mse &&
                  secs < kConvergenceBudgetSeconds;
  return check(ok, "val MSE " + num(baseline.normalized.mse, 5) + " -> " + num(best_val, 5) + " (" +
                       num(100 * improvement, 4) + "% better, " +
                       std::to_string(full.result.epochs.size()) + " epochs); test MSE timefilter " +
                       num(full.test.normalized.mse, 8) + " vs none " +
                       num(plain.test.normalized.mse, 8) + "; " + num(secs, 3) + " s");
}

// ---------------------------------------------------------------- 6
Verdict criterion_etth1(const fs::path& source_dir) {
  fs::path csv;
  if (const char* env = std::getenv("TIMEFILTER_ETTH1")) csv = env;
  if (csv.empty()) csv = source_dir / "data" / "ETTh1.csv";
  if (!fs::exists(csv)) {
    return {Outcome::Skip, "ETTh1.csv not found (set TIMEFILTER_ETTH1 or place it at " +
                               (source_dir / "data" / "ETTh1.csv").string() + ")"};
  }
  const auto start = Clock::now();
  tf::RunConfig config = tf::load_config(source_dir / "configs" / "etth1.json");
  config.dataset.path = csv.string();
  const auto data = tf::cli::prepare_data(config);
  const auto out = tf::cli::train_and_test(config, data);
  const double secs = seconds_since(start);
  return check(out.test.normalized.mse <= kEtth1TargetMse && secs < kEtth1BudgetSeconds,
               "test MSE " + num(out.test.normalized.mse, 5) + " (target <= " +
                   num(kEtth1TargetMse) + "), MAE " + num(out.test.normalized.mae, 5) + ", " +
                   num(secs, 4) + " s");
}

// ---------------------------------------------------------------- 7
std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

Verdict criterion_determinism() {
  const fs::path dir = fs::temp_directory_path() / "timefilter_acceptance" / "determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  tf::data::write_csv(dir / "planted.csv", tf::data::generate_planted_dataset(1500, 2));
  std::ofstream(dir / "config.json") << R"({"dataset": {"path": "planted.csv"},
    "window": {"lookback": 48, "horizon": 12, "stride": 3, "eval_stride": 3},
    "model": {"patch_len": 8, "d_model": 16, "heads": 2, "alpha": 0.3, "e_layers": 2, "d_ff": 16},
    "psf": {"top_p": 0.5, "strategy": "timefilter"},
    "train": {"epochs": 4, "batch_size": 16, "lr": 0.003}})";
  std::ostringstream sink;
  for (const char* run : {"a", "b"}) {
    const int code = tf::cli::run({"train", "--config", (dir / "config.json").string(), "--seed", "7",
                                   "--out", (dir / run).string()},
                                  sink, sink);
    if (code != 0) return {Outcome::Fail, std::string("run ") + run + " exited " + std::to_string(code)};
  }
  const bool logs = slurp(dir / "a" / "epochs.csv") == slurp(dir / "b" / "epochs.csv");
  const bool metrics = slurp(dir / "a" / "metrics.csv") == slurp(dir / "b" / "metrics.csv");
  const bool ckpt = slurp(dir / "a" / "checkpoint.tfc") == slurp(dir / "b" / "checkpoint.tfc");
  return check(logs && metrics && ckpt, std::string("epoch logs ") + (logs ? "identical" : "differ") +
                                            ", metrics " + (metrics ? "identical" : "differ") +
                                            ", checkpoints " + (ckpt ? "identical" : "differ"));
}

// ---------------------------------------------------------------- 8
// Test-side oracle for the graph-free forecast: patch, embed, split heads,
// flatten per channel, apply the head to X_h + X_h and undo the instance
// normalization, all with plain loops.
Array linear_head_oracle(const tf::ModelConfig& c, const nd::ParameterStore& p, const Array& x) {
  const std::size_t B = x.dim(0), C = c.channels, L = c.lookback, P = c.patch_len,
                    D = c.d_model, H = c.heads, dh = D / H, N = (L + P - 1) / P, T = c.horizon;
  const Array& we = p.at("embed.weight");
  const Array& be = p.at("embed.bias");
  const Array& wh = p.at("head.weight");
  const Array& bh = p.at("head.bias");
  Array y({B, C, T});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t ch = 0; ch < C; ++ch) {
      const double* s = x.data() + (b * C + ch) * L;
      double mean = 0.0, var = 0.0;
      for (std::size_t t = 0; t < L; ++t) mean += s[t];
      mean /= L;
      for (std::size_t t = 0; t < L; ++t) var += (s[t] - mean) * (s[t] - mean);
      const double sd = std::max(std::sqrt(var / L), 1e-5);
      std::vector<double> features(N * H * dh);
      for (std::size_t pt = 0; pt < N; ++pt) {
        for (std::size_t d = 0; d < H * dh; ++d) {
          double e = be[d];
          for (std::size_t k = 0; k < P; ++k) {
            const double v = (s[std::min(pt * P + k, L - 1)] - mean) / sd;
            e += v * we[k * D + d];
          }
          features[pt * H * dh + d] = 2.0 * e;  // (head, dim) order equals d
        }
      }
      for (std::size_t t = 0; t < T; ++t) {
        double acc = bh[t];
        for (std::size_t f = 0; f < features.size(); ++f) acc += features[f] * wh[f * T + t];
        y[(b * C + ch) * T + t] = acc * sd + mean;
      }
    }
  }
  return y;
}

Verdict criterion_zero_graph() {
  tf::ModelConfig c;
  c.channels = 3;
  c.lookback = 24;
  c.horizon = 6;
  c.patch_len = 5;  // N = 5 with a padded last patch
  c.d_model = 12;
  c.heads = 3;
  c.e_layers = 2;
  c.d_ff = 8;
  c.strategy = tf::psf::Strategy::TopK;
  c.ablation_k = 0;
  const tf::TimeFilterModel model(c);
  std::mt19937_64 rng(8);
  std::normal_distribution<double> normal(0.0, 2.0);
  double worst = 0.0;
  double edges = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    Array x({4, 3, 24});
    for (double& v : x.values()) v = normal(rng) + 5.0;
    const auto params = model.initialize(100 + trial);
    nd::Tape tape;
    const auto out = model.forward(tape, params, x, {});
    for (double v : out.filtered.values()) edges += std::abs(v);
    worst = std::max(worst, nd::max_abs_difference(out.prediction.value(),
                                                   linear_head_oracle(c, params, x)));
  }
  return check(edges == 0.0 && worst <= kZeroGraphTolerance,
               "retained edge mass " + num(edges) + ", max |model - linear head| " + num(worst, 3));
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path source_dir = TIMEFILTER_SOURCE_DIR;
  const std::map<int, std::pair<std::string, std::function<Verdict()>>> criteria = {
      {1, {"mask partition", criterion_mask_partition}},
      {2, {"dynamic allocation oracle", criterion_allocation}},
      {3, {"gradient fidelity", criterion_gradients}},
      {4, {"closed-form losses", criterion_losses}},
      {5, {"synthetic convergence", criterion_convergence}},
      {6, {"ETTh1 reproduction", [&] { return criterion_etth1(source_dir); }}},
      {7, {"determinism", criterion_determinism}},
      {8, {"zero-graph equivalence", criterion_zero_graph}},
  };
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
  if (selected.empty()) {
    for (const auto& [id, _] : criteria) selected.push_back(id);
  }
  bool failed = false, skipped = false;
  for (int id : selected) {
    auto it = criteria.find(id);
    if (it == criteria.end()) {
      std::printf("FAIL criterion %d: unknown criterion\n", id);
      failed = true;
      continue;
    }
    Verdict v;
    try {
      v = it->second.second();
    } catch (const std::exception& e) {
      v = {Outcome::Fail, std::string("exception: ") + e.what()};
    }
    const char* tag = v.outcome == Outcome::Pass ? "PASS" : v.outcome == Outcome::Skip ? "SKIP" : "FAIL";
    std::printf("%s criterion %d (%s): %s\n", tag, id, it->second.first.c_str(), v.detail.c_str());
    std::fflush(stdout);
    failed |= v.outcome == Outcome::Fail;
    skipped |= v.outcome == Outcome::Skip;
  }
  if (failed) return 1;
  return skipped ? kSkipCode : 0;
}
