#pragma once

// Training hyperparameters and the flat `key = value` text format they are
// stored in.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "pint/errors.hpp"
#include "pint/model.hpp"
#include "pint/noise.hpp"

namespace pint {

enum class Strategy { baseline_ce, pnt, int_, pint };

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::baseline_ce: return "baseline-ce";
    case Strategy::pnt: return "pnt";
    case Strategy::int_: return "int";
    case Strategy::pint: return "pint";
  }
  return "?";
}

inline Strategy parse_strategy(const std::string& s) {
  if (s == "baseline-ce" || s == "baseline") return Strategy::baseline_ce;
  if (s == "pnt") return Strategy::pnt;
  if (s == "int") return Strategy::int_;
  if (s == "pint") return Strategy::pint;
  throw ContractError("unknown strategy '" + s + "' (expected baseline-ce, pnt, int or pint)");
}

struct TrainConfig {
  Strategy strategy = Strategy::pint;
  std::int64_t phase1_iters = 1500;
  std::int64_t phase2_iters = 500;
  double lr_phase1 = 0.01;
  std::int64_t lr_decay_every = 625;
  double lr_decay_factor = 10.0;
  double lr_phase2 = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::int64_t batch_size = 4;
  double ema_decay = 0.99;
  PerturbationSpec perturbation{};
  bool normalize_entropy = true;
  bool hard_pseudo_labels = false;
  NetConfig net{};
  std::uint64_t seed = 1;
  std::int64_t eval_every = 100;
  bool log_wall_time = false;

  std::int64_t total_iters() const { return phase1_iters + phase2_iters; }

  void validate() const {
    if (phase1_iters < 0 || phase2_iters < 0) throw ContractError("iteration counts must be >= 0");
    if (!(lr_phase1 > 0.0) || !(lr_phase2 > 0.0)) throw ContractError("learning rates must be positive");
    if (lr_decay_every < 1) throw ContractError("lr_decay_every must be >= 1");
    if (!(lr_decay_factor >= 1.0)) throw ContractError("lr_decay_factor must be >= 1");
    if (batch_size < 1) throw ContractError("batch_size must be >= 1");
    if (!(ema_decay > 0.0 && ema_decay <= 1.0)) throw ContractError("ema_decay must lie in (0,1]");
    if (eval_every < 1) throw ContractError("eval_every must be >= 1");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ContractError("momentum must lie in [0,1)");
    if (!(weight_decay >= 0.0)) throw ContractError("weight_decay must be >= 0");
    perturbation.validate();
    if (net.widths.empty() || net.num_classes < 2) throw ContractError("invalid network shape");
  }
};

namespace detail {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ContractError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

inline double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double d = 0;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw ContractError("config key '" + key + "': bad number '" + v + "'");
  return d;
}

inline std::int64_t parse_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long i = 0;
  try {
    i = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw ContractError("config key '" + key + "': bad integer '" + v + "'");
  return i;
}

}  // namespace detail

// Applies one key; throws ContractError for unknown keys or bad values.
inline void set_config_key(TrainConfig& c, const std::string& key, const std::string& value) {
  using namespace detail;
  if (key == "strategy") c.strategy = parse_strategy(value);
  else if (key == "phase1_iters") c.phase1_iters = parse_int(key, value);
  else if (key == "phase2_iters") c.phase2_iters = parse_int(key, value);
  else if (key == "lr_phase1") c.lr_phase1 = parse_double(key, value);
  else if (key == "lr_decay_every") c.lr_decay_every = parse_int(key, value);
  else if (key == "lr_decay_factor") c.lr_decay_factor = parse_double(key, value);
  else if (key == "lr_phase2") c.lr_phase2 = parse_double(key, value);
  else if (key == "momentum") c.momentum = parse_double(key, value);
  else if (key == "weight_decay") c.weight_decay = parse_double(key, value);
  else if (key == "batch_size") c.batch_size = parse_int(key, value);
  else if (key == "ema_decay") c.ema_decay = parse_double(key, value);
  else if (key == "mc_passes") c.perturbation.passes = static_cast<int>(parse_int(key, value));
  else if (key == "gaussian_sigma") c.perturbation.gaussian_sigma = parse_double(key, value);
  else if (key == "teacher_dropout") c.perturbation.teacher_dropout_active = parse_bool(key, value);
  else if (key == "normalize_entropy") c.normalize_entropy = parse_bool(key, value);
  else if (key == "pseudo_label") {
    if (value == "soft") c.hard_pseudo_labels = false;
    else if (value == "hard") c.hard_pseudo_labels = true;
    else throw ContractError("config key 'pseudo_label': expected soft or hard, got '" + value + "'");
  } else if (key == "widths") {
    std::vector<std::size_t> ws;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const auto w = parse_int(key, trim(item));
      if (w < 1) throw ContractError("config key 'widths': widths must be positive");
      ws.push_back(static_cast<std::size_t>(w));
    }
    if (ws.empty()) throw ContractError("config key 'widths': empty list");
    c.net.widths = ws;
  } else if (key == "num_classes") c.net.num_classes = static_cast<std::size_t>(parse_int(key, value));
  else if (key == "dropout_rate") c.net.dropout_rate = parse_double(key, value);
  else if (key == "seed") c.seed = static_cast<std::uint64_t>(parse_int(key, value));
  else if (key == "eval_every") c.eval_every = parse_int(key, value);
  else if (key == "log_wall_time") c.log_wall_time = parse_bool(key, value);
  else throw ContractError("unknown config key '" + key + "'");
}

inline std::string serialize_config(const TrainConfig& c) {
  using detail::format_double;
  std::ostringstream os;
  std::string widths;
  for (std::size_t i = 0; i < c.net.widths.size(); ++i) widths += (i ? "," : "") + std::to_string(c.net.widths[i]);
  os << "strategy = " << to_string(c.strategy) << '\n'
     << "phase1_iters = " << c.phase1_iters << '\n'
     << "phase2_iters = " << c.phase2_iters << '\n'
     << "lr_phase1 = " << format_double(c.lr_phase1) << '\n'
     << "lr_decay_every = " << c.lr_decay_every << '\n'
     << "lr_decay_factor = " << format_double(c.lr_decay_factor) << '\n'
     << "lr_phase2 = " << format_double(c.lr_phase2) << '\n'
     << "momentum = " << format_double(c.momentum) << '\n'
     << "weight_decay = " << format_double(c.weight_decay) << '\n'
     << "batch_size = " << c.batch_size << '\n'
     << "ema_decay = " << format_double(c.ema_decay) << '\n'
     << "mc_passes = " << c.perturbation.passes << '\n'
     << "gaussian_sigma = " << format_double(c.perturbation.gaussian_sigma) << '\n'
     << "teacher_dropout = " << (c.perturbation.teacher_dropout_active ? "true" : "false") << '\n'
     << "normalize_entropy = " << (c.normalize_entropy ? "true" : "false") << '\n'
     << "pseudo_label = " << (c.hard_pseudo_labels ? "hard" : "soft") << '\n'
     << "widths = " << widths << '\n'
     << "num_classes = " << c.net.num_classes << '\n'
     << "dropout_rate = " << format_double(c.net.dropout_rate) << '\n'
     << "seed = " << c.seed << '\n'
     << "eval_every = " << c.eval_every << '\n'
     << "log_wall_time = " << (c.log_wall_time ? "true" : "false") << '\n';
  return os.str();
}

// Every recognized key, in serialization order.
inline std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  std::istringstream is(serialize_config(TrainConfig{}));
  std::string line;
  while (std::getline(is, line)) keys.push_back(detail::trim(line.substr(0, line.find('='))));
  return keys;
}

// Parses `key = value` lines on top of `base`. Blank lines and `#` comments
// are ignored.
inline TrainConfig parse_config(const std::string& text, TrainConfig base = {}) {
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ContractError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    set_config_key(base, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
  return base;
}

inline TrainConfig load_config(const std::string& path, TrainConfig base = {}) {
  std::ifstream is(path);
  if (!is) throw FileNotFoundError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

inline bool operator==(const TrainConfig& a, const TrainConfig& b) {
  return serialize_config(a) == serialize_config(b);
}

// 64-bit FNV-1a of the serialized config, as 16 hex digits.
inline std::string config_hash(const TrainConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : serialize_config(c)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace pint
