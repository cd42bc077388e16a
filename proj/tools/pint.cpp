// pint: generate-data | train | eval | render | sweep
//
// Exit codes: 0 ok, 1 usage / invalid input, 2 I/O, 3 numeric divergence,
// 4 file format.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pint/render.hpp"
#include "pint/sweep.hpp"
#include "pint/trainer.hpp"
#include "run_manifest.hpp"

namespace fs = std::filesystem;
using namespace pint;
using pint::cli::RunManifest;

namespace {

enum Exit { kOk = 0, kUsage = 1, kIo = 2, kDivergence = 3, kFormat = 4 };

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write '" + path.string() + "'");
  os << text;
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

// One `--some-key` option per config key; values are applied over the
// config file after parsing.
struct ConfigFlags {
  std::string config_path;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "flat key = value config file")->check(CLI::ExistingFile);
    for (const std::string& key : config_keys()) {
      std::string flag = key;
      for (char& ch : flag)
        if (ch == '_') ch = '-';
      options[key] = app->add_option("--" + flag, values[key], "config key '" + key + "'")
                       ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    }
  }

  TrainConfig resolve() const {
    TrainConfig c = config_path.empty() ? TrainConfig{} : load_config(config_path);
    for (const auto& [key, opt] : options)
      if (opt->count() > 0) set_config_key(c, key, values.at(key));
    c.validate();
    return c;
  }
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = detail::trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// ---- generate-data ----

struct GenerateArgs {
  int n = 80;
  std::size_t size = 32;
  std::uint64_t seed = 1;
  std::int64_t noise_seed = -1;
  double noise_rate = 0.0;
  int radius_min = 2, radius_max = 5;
  std::string mode = "random";
  std::string out;
};

int cmd_generate(const GenerateArgs& a) {
  Dataset ds = generate_shapes(a.n, a.size, a.size, a.seed);
  const std::uint64_t noise_seed = a.noise_seed >= 0 ? static_cast<std::uint64_t>(a.noise_seed) : a.seed + 1;
  corrupt_labels(ds, NoiseSpec{a.noise_rate, a.radius_min, a.radius_max, parse_noise_mode(a.mode), noise_seed});
  write_dataset(ds, a.out);
  std::printf("wrote %zu samples (%zu corrupted) of %zux%zu to %s\n", ds.size(), ds.corrupted_count(), ds.height,
              ds.width, a.out.c_str());
  return kOk;
}

// ---- train ----

struct TrainArgs {
  std::string data, test, out;
  std::int64_t checkpoint_every = 0;
  std::int64_t stop_at = -1;
  bool resume = false;
  ConfigFlags cfg;
};

int cmd_train(const TrainArgs& a) {
  const TrainConfig config = a.cfg.resolve();
  const Dataset train = read_dataset(a.data);
  const Dataset test = read_dataset(a.test);
  const fs::path dir = a.out;
  make_dir(dir);
  write_text(dir / "config.txt", serialize_config(config));
  save_weights(MiniSegNet::init(config.seed, config.net).parameters(), (dir / "init.pntw").string());

  const fs::path ckpt = dir / "checkpoint";
  Trainer trainer = a.resume && fs::exists(ckpt / "state.txt") ? Trainer::resume(ckpt, config, train, test)
                                                                 : Trainer(config, train, test);
  RunManifest manifest("train", dir);
  manifest.set_config(config);
  manifest.add_input("train", a.data);
  manifest.add_input("test", a.test);
  manifest.set("seed", config.seed);

  const std::int64_t stop = a.stop_at >= 0 ? std::min(a.stop_at, config.total_iters()) : config.total_iters();
  int code = kOk;
  try {
    while (trainer.iteration() < stop) {
      const std::int64_t next = a.checkpoint_every > 0
                                    ? (trainer.iteration() / a.checkpoint_every + 1) * a.checkpoint_every
                                    : stop;
      trainer.run_until(std::min(next, stop));
      if (a.checkpoint_every > 0 && trainer.iteration() < stop) trainer.save_checkpoint(ckpt);
    }
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "pint train: %s; last good state saved in %s\n", e.what(), ckpt.string().c_str());
    manifest.set("status", "diverged");
    manifest.set("error", e.what());
    code = kDivergence;
  }
  trainer.save_checkpoint(ckpt);
  write_text(dir / "metrics.csv", metrics_csv(trainer.log()));
  const TrainResult r = trainer.result();
  if (code == kOk && !trainer.done()) {
    manifest.set("status", "paused");
    std::printf("stopped at iteration %lld; continue with --resume\n", static_cast<long long>(trainer.iteration()));
  } else if (code == kOk) {
    save_weights(r.student.parameters(), (dir / "student.pntw").string());
    save_weights(r.final_student.parameters(), (dir / "final.pntw").string());
    save_weights(r.teacher.net.parameters(), (dir / "teacher.pntw").string());
    const EvalResult ev = evaluate(r.student, test);
    manifest.set("status", "ok");
    manifest.set("test_dice", ev.dice);
    manifest.set("test_asd", ev.asd);
    manifest.set("best_iteration", r.best_iteration);
    std::printf("%s: %lld iterations, test dice %.4f asd %.4f", to_string(config.strategy).c_str(),
                static_cast<long long>(trainer.iteration()), ev.dice, ev.asd);
    if (r.best_dice) std::printf(" (best checkpoint from iteration %lld)", static_cast<long long>(r.best_iteration));
    std::printf("\n");
  }
  manifest.write();
  return code;
}

// ---- eval ----

struct EvalArgs {
  std::string checkpoint, data, csv;
};

int cmd_eval(const EvalArgs& a) {
  const MiniSegNet net = MiniSegNet::from_parameters(load_weights(a.checkpoint));
  const Dataset ds = read_dataset(a.data);
  const auto scores = evaluate_per_sample(net, ds);
  const EvalResult ev = evaluate(net, ds);
  std::printf("samples %zu dice %.6f asd %.6f asd_sentinels %zu\n", ds.size(), ev.dice, ev.asd, ev.asd_sentinels);
  if (!a.csv.empty()) {
    std::string text = "sample,dice,asd,asd_sentinel\n";
    for (std::size_t i = 0; i < scores.size(); ++i)
      text += std::to_string(i) + "," + detail::format_double(scores[i].dice) + "," +
              detail::format_double(scores[i].asd) + "," + (scores[i].asd_sentinel ? "1" : "0") + "\n";
    text += "mean," + detail::format_double(ev.dice) + "," + detail::format_double(ev.asd) + "," +
            std::to_string(ev.asd_sentinels) + "\n";
    write_text(a.csv, text);
  }
  return kOk;
}

// ---- render ----

struct RenderArgs {
  std::string checkpoint, data, out, samples;
  int count = 4;
  std::uint64_t seed = 1;
  int mc_passes = 4;
  double sigma = 0.1;
  bool no_teacher_dropout = false;
};

int cmd_render(const RenderArgs& a) {
  const MiniSegNet net = MiniSegNet::from_parameters(load_weights(a.checkpoint));
  const Dataset ds = read_dataset(a.data);
  std::vector<std::size_t> idx;
  if (!a.samples.empty()) {
    for (const auto& s : split_list(a.samples)) {
      const auto i = static_cast<std::size_t>(detail::parse_int("--samples", s));
      if (i >= ds.size()) throw ContractError("--samples: index " + s + " out of range");
      idx.push_back(i);
    }
  } else {
    for (std::size_t i = 0; i < std::min<std::size_t>(static_cast<std::size_t>(a.count), ds.size()); ++i)
      idx.push_back(i);
  }
  const PerturbationSpec spec{a.mc_passes, a.sigma, !a.no_teacher_dropout};
  const fs::path dir = a.out;
  make_dir(dir);
  const CounterRng root(a.seed);
  std::size_t written = 0;
  for (std::size_t i : idx) written += write_render(render_sample(net, ds.samples[i], spec, root.split(i)), i, dir).size();
  RunManifest manifest("render", dir);
  manifest.add_input("checkpoint", a.checkpoint);
  manifest.add_input("data", a.data);
  manifest.set("seed", a.seed);
  manifest.write();
  std::printf("wrote %zu images for %zu samples to %s\n", written, idx.size(), a.out.c_str());
  return kOk;
}

// ---- sweep ----

struct SweepArgs {
  std::string out;
  std::string rates = "0.25,0.5,0.75";
  std::string strategies = "baseline-ce,pnt,int,pint";
  int repeats = 3;
  SyntheticSpec data;
  ConfigFlags cfg;
};

int cmd_sweep(const SweepArgs& a) {
  SweepSpec spec;
  spec.base = a.cfg.resolve();
  spec.first_seed = spec.base.seed;
  spec.repeats = a.repeats;
  spec.data = a.data;
  spec.strategies.clear();
  for (const auto& s : split_list(a.strategies)) spec.strategies.push_back(parse_strategy(s));
  spec.noise_rates.clear();
  for (const auto& r : split_list(a.rates)) spec.noise_rates.push_back(detail::parse_double("--rates", r));
  spec.validate();

  const fs::path dir = a.out;
  make_dir(dir / "runs");
  write_text(dir / "config.txt", serialize_config(spec.base));
  SweepHooks hooks;
  hooks.on_run = [&](const RunOutcome& r) {
    char name[96];
    std::snprintf(name, sizeof name, "%s_rate%g_seed%llu.csv", to_string(r.strategy).c_str(), r.noise_rate,
                  static_cast<unsigned long long>(r.seed));
    if (r.ok) {
      write_text(dir / "runs" / name, metrics_csv(r.log));
      std::fprintf(stderr, "%-12s rate %-5g seed %-3llu dice %.4f asd %.4f\n", to_string(r.strategy).c_str(),
                   r.noise_rate, static_cast<unsigned long long>(r.seed), r.dice, r.asd);
    } else {
      std::fprintf(stderr, "%-12s rate %-5g seed %-3llu FAILED: %s\n", to_string(r.strategy).c_str(), r.noise_rate,
                   static_cast<unsigned long long>(r.seed), r.error.c_str());
    }
  };
  const SweepResult res = run_sweep(spec, hooks);
  const std::string table = cells_table(res.cells);
  write_text(dir / "runs.csv", runs_csv(res.runs));
  write_text(dir / "results.csv", cells_csv(res.cells));
  write_text(dir / "results.txt", table);
  RunManifest manifest("sweep", dir);
  manifest.set_config(spec.base);
  manifest.set("repeats", spec.repeats);
  manifest.set("first_seed", spec.first_seed);
  manifest.write();
  std::printf("%s", table.c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"noise-tolerant segmentation training lab"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate-data", "write a synthetic shapes dataset");
  g->add_option("--n", gen.n, "number of samples")->check(CLI::PositiveNumber);
  g->add_option("--size", gen.size, "image height and width")->check(CLI::Range(16, 4096));
  g->add_option("--seed", gen.seed, "shape seed");
  g->add_option("--noise-seed", gen.noise_seed, "label-noise seed (default: seed + 1)");
  g->add_option("--noise-rate", gen.noise_rate, "fraction of samples with corrupted labels")->check(CLI::Range(0.0, 1.0));
  g->add_option("--radius-min", gen.radius_min)->check(CLI::PositiveNumber);
  g->add_option("--radius-max", gen.radius_max)->check(CLI::PositiveNumber);
  g->add_option("--mode", gen.mode, "erode | dilate | random");
  g->add_option("--out", gen.out, "output .pntd file")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train one model into a run directory");
  t->add_option("--data", tr.data, "training dataset")->required();
  t->add_option("--test", tr.test, "test dataset (clean masks used for evaluation)")->required();
  t->add_option("--out", tr.out, "run directory")->required();
  t->add_option("--checkpoint-every", tr.checkpoint_every, "save a resumable checkpoint every N iterations");
  t->add_flag("--resume", tr.resume, "continue from <out>/checkpoint if present");
  t->add_option("--stop-at", tr.stop_at, "pause after this many total iterations (resumable)");
  tr.cfg.attach(t);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Dice / ASD of a weights file on a dataset");
  e->add_option("--checkpoint", ev.checkpoint, ".pntw weights")->required();
  e->add_option("--data", ev.data, "dataset")->required();
  e->add_option("--csv", ev.csv, "per-sample CSV output");

  RenderArgs rd;
  auto* r = app.add_subcommand("render", "PGM renders of predictions and uncertainty");
  r->add_option("--checkpoint", rd.checkpoint, ".pntw weights")->required();
  r->add_option("--data", rd.data, "dataset")->required();
  r->add_option("--out", rd.out, "output directory")->required();
  r->add_option("--samples", rd.samples, "comma-separated sample indices");
  r->add_option("--count", rd.count, "render the first N samples")->check(CLI::PositiveNumber);
  r->add_option("--seed", rd.seed, "perturbation seed");
  r->add_option("--mc-passes", rd.mc_passes)->check(CLI::PositiveNumber);
  r->add_option("--gaussian-sigma", rd.sigma)->check(CLI::NonNegativeNumber);
  r->add_flag("--no-teacher-dropout", rd.no_teacher_dropout);

  SweepArgs sw;
  auto* s = app.add_subcommand("sweep", "strategy x noise-rate grid over repeated seeds");
  s->add_option("--out", sw.out, "output directory")->required();
  s->add_option("--rates", sw.rates, "comma-separated noise rates");
  s->add_option("--strategies", sw.strategies, "comma-separated strategies");
  s->add_option("--repeats", sw.repeats)->check(CLI::PositiveNumber);
  s->add_option("--n", sw.data.n_train, "training samples per run")->check(CLI::PositiveNumber);
  s->add_option("--n-test", sw.data.n_test, "test samples per run")->check(CLI::PositiveNumber);
  s->add_option("--size", sw.data.size)->check(CLI::Range(16, 4096));
  s->add_option("--radius-min", sw.data.radius_min)->check(CLI::PositiveNumber);
  s->add_option("--radius-max", sw.data.radius_max)->check(CLI::PositiveNumber);
  sw.cfg.attach(s);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err) == 0 ? kOk : kUsage;
  }

  try {
    if (*g) return cmd_generate(gen);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_eval(ev);
    if (*r) return cmd_render(rd);
    if (*s) return cmd_sweep(sw);
  } catch (const FormatError& err) {
    std::fprintf(stderr, "pint: format error: %s\n", err.what());
    return kFormat;
  } catch (const IoError& err) {
    std::fprintf(stderr, "pint: I/O error: %s\n", err.what());
    return kIo;
  } catch (const NumericError& err) {
    std::fprintf(stderr, "pint: numeric error: %s\n", err.what());
    return kDivergence;
  } catch (const Error& err) {
    std::fprintf(stderr, "pint: %s\n", err.what());
    return kUsage;
  } catch (const fs::filesystem_error& err) {
    std::fprintf(stderr, "pint: I/O error: %s\n", err.what());
    return kIo;
  }
  return kUsage;
}
