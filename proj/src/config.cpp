#include "timefilter/config.hpp"

#include <cstdio>
#include <fstream>
#include <algorithm>
#include <functional>
#include <set>
#include <sstream>

#include "json.hpp"

namespace timefilter {

using nlohmann::json;

namespace {

class Reader {
 public:
  Reader(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) fail(path_.empty() ? "config" : path_, "expected an object");
  }

  template <typename Fn>
  void field(const std::string& key, Fn&& read) {
    known_.insert(key);
    auto it = node_.find(key);
    if (it != node_.end()) read(*it, key_path(key));
  }

  void finish() const {
    for (auto it = node_.begin(); it != node_.end(); ++it) {
      if (!known_.count(it.key())) fail(key_path(it.key()), "unknown key");
    }
  }

  [[noreturn]] static void fail(const std::string& path, const std::string& what) {
    throw ConfigError(path + ": " + what);
  }

 private:
  std::string key_path(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  const json& node_;
  std::string path_;
  std::set<std::string> known_;
};

std::size_t read_count(const json& v, const std::string& path, bool allow_zero) {
  if (!v.is_number_integer() || v.get<long long>() < (allow_zero ? 0 : 1)) {
    Reader::fail(path, allow_zero ? "expected a non-negative integer"
                                  : "expected a positive integer");
  }
  return v.get<std::size_t>();
}

double read_number(const json& v, const std::string& path) {
  if (!v.is_number()) Reader::fail(path, "expected a number");
  return v.get<double>();
}

bool read_bool(const json& v, const std::string& path) {
  if (!v.is_boolean()) Reader::fail(path, "expected true or false");
  return v.get<bool>();
}

std::uint64_t read_seed(const json& v, const std::string& path) {
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
    Reader::fail(path, "expected a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

auto count(std::size_t& out, bool allow_zero = false) {
  return [&out, allow_zero](const json& v, const std::string& p) {
    out = read_count(v, p, allow_zero);
  };
}
auto number(double& out) {
  return [&out](const json& v, const std::string& p) { out = read_number(v, p); };
}
auto boolean(bool& out) {
  return [&out](const json& v, const std::string& p) { out = read_bool(v, p); };
}
auto seed(std::uint64_t& out) {
  return [&out](const json& v, const std::string& p) { out = read_seed(v, p); };
}

void check(bool ok, const std::string& path, const std::string& what) {
  if (!ok) Reader::fail(path, what);
}

void validate(const RunConfig& c) {
  check(c.window.lookback >= 1, "window.lookback", "must be positive");
  check(c.model.patch_len <= c.window.lookback, "model.patch_len",
        "must not exceed window.lookback");
  check(c.model.heads <= c.model.d_model, "model.heads", "must not exceed model.d_model");
  check(c.model.alpha > 0.0 && c.model.alpha <= 1.0, "model.alpha", "must lie in (0, 1]");
  check(c.psf.top_p >= 0.0 && c.psf.top_p < 1.0, "psf.top_p", "must lie in [0, 1)");
  check(c.loss.lambda_dyn >= 0.0, "loss.lambda_dyn", "must be non-negative");
  check(c.loss.lambda_imp >= 0.0, "loss.lambda_imp", "must be non-negative");
  check(c.loss.imp_eps >= 0.0, "loss.imp_eps", "must be non-negative");
  check(c.train.lr > 0.0, "train.lr", "must be positive");
  check(c.train.clip_norm > 0.0, "train.clip_norm", "must be positive");
}

}  // namespace

RunConfig parse_config(const std::string& json_text, const std::filesystem::path& base_dir) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: not valid JSON (") + e.what() + ")");
  }
  RunConfig c;
  Reader top(root, "");
  top.field("dataset", [&](const json& v, const std::string& p) {
    Reader r(v, p);
    r.field("path", [&](const json& x, const std::string& q) {
      if (!x.is_string()) Reader::fail(q, "expected a string");
      std::filesystem::path path = x.get<std::string>();
      if (path.is_relative() && !base_dir.empty()) path = base_dir / path;
      c.dataset.path = path.string();
    });
    r.field("date_column", boolean(c.dataset.date_column));
    r.field("splits", [&](const json& x, const std::string& q) {
      if (x.is_null()) return;
      if (!x.is_array() || x.size() != 3) Reader::fail(q, "expected [train, val, test] counts");
      c.dataset.splits = data::SplitSizes{read_count(x[0], q + "[0]", false),
                                          read_count(x[1], q + "[1]", false),
                                          read_count(x[2], q + "[2]", false)};
    });
    r.finish();
  });
  top.field("window", [&](const json& v, const std::string& p) {
    Reader r(v, p);
    r.field("lookback", count(c.window.lookback));
    r.field("horizon", count(c.window.horizon));
    r.field("stride", count(c.window.stride));
    r.field("eval_stride", count(c.window.eval_stride));
    r.finish();
  });
  top.field("model", [&](const json& v, const std::string& p) {
    Reader r(v, p);
    r.field("patch_len", count(c.model.patch_len));
    r.field("d_model", count(c.model.d_model));
    r.field("heads", count(c.model.heads));
    r.field("alpha", number(c.model.alpha));
    r.field("e_layers", count(c.model.e_layers));
    r.field("d_ff", count(c.model.d_ff));
    r.finish();
  });
  top.field("psf", [&](const json& v, const std::string& p) {
    Reader r(v, p);
    r.field("top_p", number(c.psf.top_p));
    r.field("strategy", [&](const json& x, const std::string& q) {
      if (!x.is_string()) Reader::fail(q, "expected a string");
      try {
        c.psf.strategy = psf::parse_strategy(x.get<std::string>());
      } catch (const std::invalid_argument& e) {
        Reader::fail(q, e.what());
      }
    });
    r.field("weight_edges_by_gate", boolean(c.psf.weight_edges_by_gate));
    r.field("seed", seed(c.psf.seed));
    r.field("ablation_k", [&](const json& x, const std::string& q) {
      if (x.is_null()) {
        c.psf.ablation_k.reset();
      } else {
        c.psf.ablation_k = read_count(x, q, true);
      }
    });
    r.finish();
  });
  top.field("loss", [&](const json& v, const std::string& p) {
    Reader r(v, p);
    r.field("lambda_dyn", number(c.loss.lambda_dyn));
    r.field("lambda_imp", number(c.loss.lambda_imp));
    r.field("dyn_sign", [&](const json& x, const std::string& q) {
      if (!x.is_number_integer() || (x.get<int>() != 1 && x.get<int>() != -1)) {
        Reader::fail(q, "expected 1 or -1");
      }
      c.loss.dyn_sign = x.get<int>();
    });
    r.field("imp_eps", number(c.loss.imp_eps));
    r.finish();
  });
  top.field("train", [&](const json& v, const std::string& p) {
    Reader r(v, p);
    r.field("lr", number(c.train.lr));
    r.field("epochs", count(c.train.epochs, true));
    r.field("batch_size", count(c.train.batch_size));
    r.field("micro_batch", [&](const json& x, const std::string& q) {
      if (x.is_null()) {
        c.train.micro_batch.reset();
      } else {
        c.train.micro_batch = read_count(x, q, false);
      }
    });
    r.field("seed", seed(c.train.seed));
    r.field("patience", count(c.train.patience));
    r.field("clip_norm", number(c.train.clip_norm));
    r.finish();
  });
  top.finish();
  validate(c);
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str(), path.parent_path());
}

namespace {

json to_json(const RunConfig& c) {
  json j;
  j["dataset"] = {{"path", c.dataset.path}, {"date_column", c.dataset.date_column}};
  j["dataset"]["splits"] =
      c.dataset.splits ? json::array({c.dataset.splits->train, c.dataset.splits->val,
                                      c.dataset.splits->test})
                       : json(nullptr);
  j["window"] = {{"lookback", c.window.lookback},
                 {"horizon", c.window.horizon},
                 {"stride", c.window.stride},
                 {"eval_stride", c.window.eval_stride}};
  j["model"] = {{"patch_len", c.model.patch_len}, {"d_model", c.model.d_model},
                {"heads", c.model.heads},         {"alpha", c.model.alpha},
                {"e_layers", c.model.e_layers},   {"d_ff", c.model.d_ff}};
  j["psf"] = {{"top_p", c.psf.top_p},
              {"strategy", std::string(psf::strategy_name(c.psf.strategy))},
              {"weight_edges_by_gate", c.psf.weight_edges_by_gate},
              {"seed", c.psf.seed}};
  j["psf"]["ablation_k"] = c.psf.ablation_k ? json(*c.psf.ablation_k) : json(nullptr);
  j["loss"] = {{"lambda_dyn", c.loss.lambda_dyn},
               {"lambda_imp", c.loss.lambda_imp},
               {"dyn_sign", c.loss.dyn_sign},
               {"imp_eps", c.loss.imp_eps}};
  j["train"] = {{"lr", c.train.lr},       {"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size}, {"seed", c.train.seed},
                {"patience", c.train.patience},     {"clip_norm", c.train.clip_norm}};
  j["train"]["micro_batch"] = c.train.micro_batch ? json(*c.train.micro_batch) : json(nullptr);
  return j;
}

}  // namespace

std::size_t chunk_size(const TrainSection& train) {
  return std::min(train.micro_batch.value_or(train.batch_size), train.batch_size);
}

std::string config_to_json(const RunConfig& config) { return to_json(config).dump(); }

void override_seed(RunConfig& config, std::uint64_t seed) {
  config.train.seed = seed;
  config.psf.seed = seed;
}

ModelConfig model_config(const RunConfig& c, std::size_t channels) {
  ModelConfig m;
  m.channels = channels;
  m.lookback = c.window.lookback;
  m.horizon = c.window.horizon;
  m.patch_len = c.model.patch_len;
  m.d_model = c.model.d_model;
  m.heads = c.model.heads;
  m.alpha = c.model.alpha;
  m.e_layers = c.model.e_layers;
  m.d_ff = c.model.d_ff;
  m.top_p = c.psf.top_p;
  m.strategy = c.psf.strategy;
  m.weight_edges_by_gate = c.psf.weight_edges_by_gate;
  m.ablation_k = c.psf.ablation_k;
  m.psf_seed = c.psf.seed;
  return m;
}

std::string model_hash(const RunConfig& config, std::size_t channels) {
  json j = to_json(config);
  json key = {{"channels", channels},
              {"model", j["model"]},
              {"lookback", config.window.lookback},
              {"horizon", config.window.horizon},
              {"psf", j["psf"]}};
  key["psf"].erase("seed");
  const std::string text = key.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char out[17];
  std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
  return out;
}

}  // namespace timefilter
