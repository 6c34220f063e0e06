#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "nblora/completion.hpp"
#include "nblora/dp_merge.hpp"
#include "nblora/errors.hpp"
#include "nblora/optimizer.hpp"

namespace nblora {

/// Typed access to one JSON object that remembers which keys were read, so
/// leftovers can be reported as unknown.
class JsonFields {
 public:
  JsonFields(const nlohmann::json& j, std::string where)
      : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  double number(const std::string& key, double def) {
    if (!take(key)) return def;
    return as_number(j_.at(key), key);
  }

  double number(const std::string& key) {
    require(key);
    return number(key, 0.0);
  }

  std::size_t count(const std::string& key, std::size_t def) {
    if (!take(key)) return def;
    const auto& v = j_.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) {
      throw ConfigError(path(key) + ": expected a non-negative integer");
    }
    return v.get<std::size_t>();
  }

  std::uint64_t seed(const std::string& key, std::uint64_t def) {
    if (!take(key)) return def;
    const auto& v = j_.at(key);
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<long long>() >= 0) {
      return static_cast<std::uint64_t>(v.get<long long>());
    }
    throw ConfigError(path(key) + ": expected a non-negative integer");
  }

  bool flag(const std::string& key, bool def) {
    if (!take(key)) return def;
    const auto& v = j_.at(key);
    if (!v.is_boolean()) throw ConfigError(path(key) + ": expected a boolean");
    return v.get<bool>();
  }

  std::string text(const std::string& key, std::string def) {
    if (!take(key)) return def;
    const auto& v = j_.at(key);
    if (!v.is_string()) throw ConfigError(path(key) + ": expected a string");
    return v.get<std::string>();
  }

  /// Accepts 1, 2, "1", "2", "inf".
  SchattenP schatten(const std::string& key, SchattenP def) {
    if (!take(key)) return def;
    const auto& v = j_.at(key);
    std::string s;
    if (v.is_string()) {
      s = v.get<std::string>();
    } else if (v.is_number_integer()) {
      s = std::to_string(v.get<long long>());
    } else {
      throw ConfigError(path(key) + ": expected 1, 2 or \"inf\"");
    }
    const auto p = parse_schatten_p(s);
    if (!p) throw ConfigError(path(key) + ": p must be one of 1, 2, inf");
    return *p;
  }

  std::vector<double> numbers(const std::string& key,
                              std::vector<double> def) {
    if (!take(key)) return def;
    const auto& v = j_.at(key);
    if (!v.is_array()) throw ConfigError(path(key) + ": expected an array");
    std::vector<double> out;
    for (const auto& x : v) out.push_back(as_number(x, key));
    return out;
  }

  JsonFields object(const std::string& key) {
    take(key);
    return JsonFields(j_.at(key), path(key));
  }

  void require(const std::string& key) const {
    if (!has(key)) throw ConfigError(path(key) + ": required key missing");
  }

  /// Throws on any key that was never read.
  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError(path(k) + ": unknown key");
    }
  }

 private:
  bool take(const std::string& key) {
    if (!j_.contains(key)) return false;
    seen_.insert(key);
    return true;
  }

  double as_number(const nlohmann::json& v, const std::string& key) const {
    if (!v.is_number()) throw ConfigError(path(key) + ": expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw ConfigError(path(key) + ": not finite");
    return d;
  }

  std::string path(const std::string& key) const { return where_ + "." + key; }

  const nlohmann::json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

inline nlohmann::json load_json(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file '" + path.string() + "'");
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file '" + path.string() + "': " + e.what());
  }
}

inline void read_optim(JsonFields f, OptimConfig& c) {
  c.lr_peak = f.number("lr", c.lr_peak);
  c.weight_decay = f.number("weight_decay", c.weight_decay);
  c.total_steps = f.count("steps", c.total_steps);
  c.warmup_frac = f.number("warmup_frac", c.warmup_frac);
  c.beta1 = f.number("beta1", c.beta1);
  c.beta2 = f.number("beta2", c.beta2);
  c.eps = f.number("eps", c.eps);
  const std::string sched = f.text("schedule", "one_cycle");
  const auto s = parse_lr_schedule(sched);
  if (!s) throw ConfigError("optimizer.schedule: unknown '" + sched + "'");
  c.schedule = *s;
  f.finish();
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

struct CompletionJob {
  CompletionSetup setup;
  CompletionMode mode = CompletionMode::kPenalty;
  double gamma = 0.9;
  double bound_delta = 0.0;
  std::size_t param_rank = 0;  // 0 = 2·true_rank
  SolveConfig solve;
};

/// Penalty mode unless "bound_delta" is given; "gamma" and "bound_delta"
/// are mutually exclusive.
inline CompletionJob parse_completion_config(const nlohmann::json& j) {
  JsonFields f(j, "config");
  CompletionJob job;
  CompletionSetup& s = job.setup;
  s.seed = f.seed("seed", s.seed);
  s.m = f.count("m", s.m);
  s.n = f.count("n", s.n);
  s.true_rank = f.count("true_rank", s.true_rank);
  s.noise_std = f.number("noise_std", s.noise_std);
  s.drop_frac = f.number("drop_frac", s.drop_frac);
  if (f.has("gamma") && f.has("bound_delta")) {
    throw ConfigError("config: give either gamma or bound_delta, not both");
  }
  if (f.has("bound_delta")) {
    job.mode = CompletionMode::kBound;
    job.bound_delta = f.number("bound_delta");
    if (!(job.bound_delta > 0.0)) {
      throw ConfigError("config.bound_delta: must be > 0");
    }
  } else {
    job.gamma = f.number("gamma", job.gamma);
    if (!(job.gamma >= 0.0)) throw ConfigError("config.gamma: must be >= 0");
  }
  job.param_rank = f.count("param_rank", 2 * s.true_rank);
  if (job.param_rank == 0) throw ConfigError("config.param_rank: must be > 0");
  if (s.m == 0 || s.n == 0) throw ConfigError("config: m and n must be > 0");
  if (s.true_rank == 0 || s.true_rank > std::min(s.m, s.n)) {
    throw ConfigError("config.true_rank: must lie in [1, min(m, n)]");
  }
  if (!(s.noise_std >= 0.0)) throw ConfigError("config.noise_std: must be >= 0");
  if (!(s.drop_frac > 0.0 && s.drop_frac < 1.0)) {
    throw ConfigError("config.drop_frac: must lie in (0, 1)");
  }

  SolveConfig& c = job.solve;
  const std::string variant = f.text("variant", "II");
  const auto v = parse_variant(variant);
  if (!v) throw ConfigError("config.variant: must be \"I\" or \"II\"");
  c.variant = *v;
  if (c.variant == Variant::kI && job.param_rank > std::min(s.m, s.n)) {
    throw ConfigError("config.param_rank: variant I needs param_rank <= min(m, n)");
  }
  if (c.variant == Variant::kII && job.param_rank > std::max(s.m, s.n)) {
    throw ConfigError("config.param_rank: variant II needs param_rank <= max(m, n)");
  }
  c.seed = f.seed("init_seed", SplitMix64(s.seed + 1).next());
  c.init_std = f.number("init_std", c.init_std);
  if (!(c.init_std >= 0.0)) throw ConfigError("config.init_std: must be >= 0");
  c.cap_p = f.schatten("cap_p", c.cap_p);
  c.cap_delta = f.number("cap_delta", c.cap_delta);
  if (!(c.cap_delta >= 0.0)) throw ConfigError("config.cap_delta: must be >= 0");
  c.cap_scale = f.number("cap_scale", c.cap_scale);
  if (!(c.cap_scale > 0.0)) throw ConfigError("config.cap_scale: must be > 0");
  c.scaled_blocks = f.flag("scaled_blocks", c.scaled_blocks);
  if (f.has("optimizer")) read_optim(f.object("optimizer"), c.optim);
  f.finish();
  return job;
}

inline MergeConfig parse_merge_config(const nlohmann::json& j) {
  JsonFields f(j, "config");
  MergeConfig c;
  c.seed = f.seed("seed", c.seed);
  c.K = f.count("K", c.K);
  c.num_classes = f.count("num_classes", c.num_classes);
  c.input_dim = f.count("input_dim", c.input_dim);
  c.feature_dim = f.count("feature_dim", c.feature_dim);
  c.samples_per_class = f.count("samples_per_class", c.samples_per_class);
  c.test_per_class = f.count("test_per_class", c.test_per_class);
  c.cluster_sep = f.number("cluster_sep", c.cluster_sep);
  c.head_leak = f.number("head_leak", c.head_leak);
  c.adapter_rank = f.count("adapter_rank", c.adapter_rank);
  c.bound_ratio = f.number("bound_ratio", c.bound_ratio);
  c.sigma_list = f.numbers("sigma_list", c.sigma_list);
  c.noise_seeds = f.count("noise_seeds", c.noise_seeds);
  if (f.has("train")) {
    JsonFields t = f.object("train");
    c.train.steps = t.count("steps", c.train.steps);
    c.train.init_std = t.number("init_std", c.train.init_std);
    c.train.optim.lr_peak = t.number("lr", c.train.optim.lr_peak);
    c.train.optim.weight_decay =
        t.number("weight_decay", c.train.optim.weight_decay);
    c.train.optim.warmup_frac =
        t.number("warmup_frac", c.train.optim.warmup_frac);
    const std::string sched = t.text("schedule", "one_cycle");
    const auto s = parse_lr_schedule(sched);
    if (!s) throw ConfigError("train.schedule: unknown '" + sched + "'");
    c.train.optim.schedule = *s;
    t.finish();
  }
  f.finish();
  if (c.num_classes > c.feature_dim) {
    throw ConfigError("config: num_classes must be <= feature_dim");
  }
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

}  // namespace nblora
