#pragma once

// Strategy x noise-rate grids over repeated seeds on synthetic data, reported
// as mean +- std per cell.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <tuple>
#include <vector>

#include "pint/trainer.hpp"

namespace pint {

struct SyntheticSpec {
  int n_train = 80;
  int n_test = 20;
  std::size_t size = 32;
  int radius_min = 2;
  int radius_max = 5;
  NoiseMode mode = NoiseMode::random_per_sample;
};

struct SyntheticSplit {
  Dataset train, test;
};

// Seeds for repeat `seed`: train shapes 1000+seed, label noise 2000+seed,
// test shapes 3000+seed. The clean training images do not depend on the rate.
inline SyntheticSplit make_split(const SyntheticSpec& spec, double noise_rate, std::uint64_t seed) {
  SyntheticSplit s{generate_shapes(spec.n_train, spec.size, spec.size, 1000 + seed),
                   generate_shapes(spec.n_test, spec.size, spec.size, 3000 + seed)};
  corrupt_labels(s.train, NoiseSpec{noise_rate, spec.radius_min, spec.radius_max, spec.mode, 2000 + seed});
  return s;
}

struct RunOutcome {
  Strategy strategy = Strategy::pint;
  double noise_rate = 0.0;
  std::uint64_t seed = 0;
  bool ok = false;
  double dice = 0.0;
  double asd = 0.0;
  std::string error;
  std::vector<MetricsRecord> log;
};

struct CellSummary {
  Strategy strategy = Strategy::pint;
  double noise_rate = 0.0;
  std::size_t runs_ok = 0;
  std::size_t runs_failed = 0;
  double dice_mean = 0.0, dice_std = 0.0;
  double asd_mean = 0.0, asd_std = 0.0;
};

struct SweepSpec {
  TrainConfig base;
  std::vector<Strategy> strategies{Strategy::baseline_ce, Strategy::pnt, Strategy::int_, Strategy::pint};
  std::vector<double> noise_rates{0.25, 0.5, 0.75};
  int repeats = 3;
  std::uint64_t first_seed = 1;
  SyntheticSpec data;

  void validate() const {
    if (repeats < 1) throw ContractError("sweep: repeats must be >= 1");
    if (strategies.empty() || noise_rates.empty()) throw ContractError("sweep: empty grid");
    base.validate();
  }
};

// Mean and population standard deviation.
inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / static_cast<double>(v.size()))};
}

inline CellSummary summarize(Strategy s, double rate, const std::vector<RunOutcome>& runs) {
  CellSummary c;
  c.strategy = s;
  c.noise_rate = rate;
  std::vector<double> d, a;
  for (const auto& r : runs) {
    if (r.strategy != s || r.noise_rate != rate) continue;
    if (!r.ok) {
      ++c.runs_failed;
      continue;
    }
    ++c.runs_ok;
    d.push_back(r.dice);
    a.push_back(r.asd);
  }
  std::tie(c.dice_mean, c.dice_std) = mean_std(d);
  std::tie(c.asd_mean, c.asd_std) = mean_std(a);
  return c;
}

struct SweepResult {
  std::vector<RunOutcome> runs;
  std::vector<CellSummary> cells;
};

// Hooks: `prepare` sees each trainer before it runs (e.g. to attach a
// phase-1 callback); `on_run` sees each finished run. A failing run is
// recorded in its cell and the sweep moves on.
struct SweepHooks {
  std::function<void(Trainer&, const RunOutcome&, const SyntheticSplit&)> prepare;
  std::function<void(const RunOutcome&)> on_run;
};

inline RunOutcome run_one(const SweepSpec& spec, Strategy s, double rate, std::uint64_t seed, const SweepHooks& hooks = {}) {
  RunOutcome r;
  r.strategy = s;
  r.noise_rate = rate;
  r.seed = seed;
  try {
    const SyntheticSplit split = make_split(spec.data, rate, seed);
    TrainConfig c = spec.base;
    c.strategy = s;
    c.seed = seed;
    Trainer t(c, split.train, split.test);
    if (hooks.prepare) hooks.prepare(t, r, split);
    const TrainResult res = t.run();
    const EvalResult ev = evaluate(res.student, split.test);
    r.ok = true;
    r.dice = ev.dice;
    r.asd = ev.asd;
    r.log = res.log;
  } catch (const Error& e) {
    r.ok = false;
    r.error = e.what();
  }
  return r;
}

inline SweepResult run_sweep(const SweepSpec& spec, const SweepHooks& hooks = {}) {
  spec.validate();
  SweepResult out;
  for (double rate : spec.noise_rates)
    for (Strategy s : spec.strategies)
      for (int k = 0; k < spec.repeats; ++k) {
        out.runs.push_back(run_one(spec, s, rate, spec.first_seed + static_cast<std::uint64_t>(k), hooks));
        if (hooks.on_run) hooks.on_run(out.runs.back());
      }
  for (Strategy s : spec.strategies)
    for (double rate : spec.noise_rates) out.cells.push_back(summarize(s, rate, out.runs));
  return out;
}

inline std::string runs_csv(const std::vector<RunOutcome>& runs) {
  std::string out = "strategy,noise_rate,seed,status,dice,asd,error\n";
  char buf[128];
  for (const auto& r : runs) {
    std::string err = r.error;
    for (char& ch : err)
      if (ch == ',' || ch == '\n') ch = ';';
    std::snprintf(buf, sizeof buf, "%s,%g,%llu,%s,", to_string(r.strategy).c_str(), r.noise_rate,
                  static_cast<unsigned long long>(r.seed), r.ok ? "ok" : "failed");
    out += buf;
    out += r.ok ? detail::format_double(r.dice) + "," + detail::format_double(r.asd) : std::string(",");
    out += "," + err + "\n";
  }
  return out;
}

inline std::string cells_csv(const std::vector<CellSummary>& cells) {
  std::string out = "strategy,noise_rate,runs_ok,runs_failed,dice_mean,dice_std,asd_mean,asd_std\n";
  char buf[256];
  for (const auto& c : cells) {
    std::snprintf(buf, sizeof buf, "%s,%g,%zu,%zu,%.6f,%.6f,%.6f,%.6f\n", to_string(c.strategy).c_str(), c.noise_rate,
                  c.runs_ok, c.runs_failed, c.dice_mean, c.dice_std, c.asd_mean, c.asd_std);
    out += buf;
  }
  return out;
}

// One row per strategy, one column pair (Dice, ASD) per noise rate. Dice is
// printed in percent.
inline std::string cells_table(const std::vector<CellSummary>& cells) {
  std::vector<Strategy> strategies;
  std::vector<double> rates;
  for (const auto& c : cells) {
    if (std::find(strategies.begin(), strategies.end(), c.strategy) == strategies.end()) strategies.push_back(c.strategy);
    if (std::find(rates.begin(), rates.end(), c.noise_rate) == rates.end()) rates.push_back(c.noise_rate);
  }
  auto cell = [&](Strategy s, double r) -> const CellSummary* {
    for (const auto& c : cells)
      if (c.strategy == s && c.noise_rate == r) return &c;
    return nullptr;
  };
  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> header{"strategy"};
  char buf[96];
  for (double r : rates) {
    std::snprintf(buf, sizeof buf, "%g%% Dice", 100 * r);
    header.push_back(buf);
    std::snprintf(buf, sizeof buf, "%g%% ASD", 100 * r);
    header.push_back(buf);
  }
  grid.push_back(header);
  for (Strategy s : strategies) {
    std::vector<std::string> row{to_string(s)};
    for (double r : rates) {
      const CellSummary* c = cell(s, r);
      if (!c || c->runs_ok == 0) {
        row.push_back(c && c->runs_failed ? "failed" : "-");
        row.push_back(row.back());
        continue;
      }
      std::snprintf(buf, sizeof buf, "%.2f ± %.2f%s", 100 * c->dice_mean, 100 * c->dice_std,
                    c->runs_failed ? " *" : "");
      row.push_back(buf);
      std::snprintf(buf, sizeof buf, "%.2f ± %.2f", c->asd_mean, c->asd_std);
      row.push_back(buf);
    }
    grid.push_back(row);
  }
  // Column widths count code points so "±" aligns.
  auto width = [](const std::string& s) {
    std::size_t n = 0;
    for (unsigned char ch : s) n += (ch & 0xC0) != 0x80;
    return n;
  };
  std::vector<std::size_t> w(header.size(), 0);
  for (const auto& row : grid)
    for (std::size_t i = 0; i < row.size(); ++i) w[i] = std::max(w[i], width(row[i]));
  std::string out;
  for (const auto& row : grid) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      out += row[i] + std::string(w[i] - width(row[i]) + (i + 1 < row.size() ? 2 : 0), ' ');
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    out += '\n';
  }
  return out;
}

}  // namespace pint
