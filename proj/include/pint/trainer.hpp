#pragma once

// Two-phase noise-tolerant training (pixel-level, then image-level with a
// short high-learning-rate phase and best-checkpoint selection) together with
// the single-loss ablations and the plain cross-entropy baseline.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pint/checkpoint.hpp"
#include "pint/config.hpp"
#include "pint/data.hpp"
#include "pint/metrics.hpp"
#include "pint/model.hpp"
#include "pint/noise.hpp"
#include "pint/optim.hpp"

namespace pint {

struct EvalResult {
  double dice = 0.0;
  double asd = 0.0;
  std::size_t asd_sentinels = 0;  // samples whose ASD was undefined
};

// Stacks the (normalized) images of the selected samples into [B,1,H,W].
inline Tensor stack_images(const std::vector<Tensor>& images, std::span<const std::size_t> idx) {
  const Shape& s = images.at(idx[0]).shape();
  const std::size_t hw = s[1] * s[2];
  Tensor x(Shape{idx.size(), 1, s[1], s[2]});
  for (std::size_t b = 0; b < idx.size(); ++b)
    std::copy_n(images[idx[b]].data().data(), hw, x.data().data() + b * hw);
  return x;
}

// Foreground mask (class != 0) of the per-pixel argmax of image b.
inline BinaryMask argmax_foreground(const Tensor& logits, std::size_t b) {
  const std::size_t C = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
  BinaryMask m(H, W);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < C; ++c)
        if (logits.at(b, c, y, x) > logits.at(b, best, y, x)) best = c;
      m.fg[y * W + x] = best != 0;
    }
  return m;
}

struct SampleScore {
  double dice = 0.0;
  double asd = 0.0;
  bool asd_sentinel = false;  // one mask empty, ASD replaced by the image diagonal
};

// Per-sample Dice and ASD of eval-mode predictions against the clean masks.
// Images are normalized here, so pass the dataset as stored.
inline std::vector<SampleScore> evaluate_per_sample(const MiniSegNet& net, const Dataset& test) {
  std::vector<SampleScore> out;
  CounterRng unused(0);
  for (const auto& s : test.samples) {
    const Tensor x = normalize(s.image).reshaped(Shape{1, 1, test.height, test.width});
    const BinaryMask pred = argmax_foreground(net.logits(x, false, unused), 0);
    const BinaryMask gt = BinaryMask::from_labels(s.clean_mask);
    SampleScore sc;
    sc.dice = dice(pred, gt);
    if (pred.empty() && gt.empty()) {
      sc.asd = 0.0;
    } else if (pred.empty() || gt.empty()) {
      sc.asd = asd_sentinel(test.height, test.width);
      sc.asd_sentinel = true;
    } else {
      sc.asd = asd(pred, gt);
    }
    out.push_back(sc);
  }
  return out;
}

inline EvalResult evaluate(const MiniSegNet& net, const Dataset& test) {
  EvalResult r;
  if (test.size() == 0) return r;
  for (const SampleScore& sc : evaluate_per_sample(net, test)) {
    r.dice += sc.dice;
    r.asd += sc.asd;
    r.asd_sentinels += sc.asd_sentinel;
  }
  r.dice /= static_cast<double>(test.size());
  r.asd /= static_cast<double>(test.size());
  return r;
}

struct MetricsRecord {
  std::int64_t iteration = 0;
  int phase = 1;
  double train_loss = 0.0;
  double mean_pixel_uncertainty = 0.0;
  double mean_image_uncertainty = 0.0;
  double learning_rate = 0.0;
  std::optional<double> test_dice;
  std::optional<double> test_asd;
  double wall_time = 0.0;
};

inline constexpr const char* kMetricsHeader = "iter,phase,loss,mean_u,mean_U,dice,asd,seconds";

inline std::string format_metrics_row(const MetricsRecord& r) {
  char buf[256];
  auto opt = [](const std::optional<double>& v) { return v ? detail::format_double(*v) : std::string(); };
  std::snprintf(buf, sizeof buf, "%lld,%d,%s,%s,%s,%s,%s,%.3f", static_cast<long long>(r.iteration), r.phase,
                detail::format_double(r.train_loss).c_str(), detail::format_double(r.mean_pixel_uncertainty).c_str(),
                detail::format_double(r.mean_image_uncertainty).c_str(), opt(r.test_dice).c_str(),
                opt(r.test_asd).c_str(), r.wall_time);
  return buf;
}

inline std::string metrics_csv(const std::vector<MetricsRecord>& log) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& r : log) out += format_metrics_row(r) + "\n";
  return out;
}

struct TrainResult {
  MiniSegNet student;  // best-evaluated checkpoint when early stopping applied, else final
  MiniSegNet final_student;
  TeacherState teacher;
  std::vector<MetricsRecord> log;
  std::optional<double> best_dice;
  std::int64_t best_iteration = -1;
};

class Trainer {
 public:
  // Raw datasets as stored on disk; training images are normalized here.
  Trainer(TrainConfig config, Dataset train, Dataset test)
      : config_(std::move(config)), train_(std::move(train)), test_(std::move(test)),
        root_(config_.seed), optimizer_(config_.lr_phase1, config_.momentum, config_.weight_decay) {
    config_.validate();
    if (train_.size() == 0) throw ContractError("trainer: empty training set");
    if (train_.num_classes != config_.net.num_classes)
      throw ContractError("trainer: dataset has " + std::to_string(train_.num_classes) +
                          " classes, network expects " + std::to_string(config_.net.num_classes));
    for (const auto& s : train_.samples) images_.push_back(normalize(s.image));
    student_ = MiniSegNet::init(config_.seed, config_.net);
    teacher_ = TeacherState::from_student(student_, config_.ema_decay);
  }

  const TrainConfig& config() const { return config_; }
  std::int64_t iteration() const { return step_; }
  bool done() const { return step_ >= config_.total_iters(); }
  const MiniSegNet& student() const { return student_; }
  const TeacherState& teacher() const { return teacher_; }
  const std::vector<MetricsRecord>& log() const { return log_; }
  std::optional<double> best_dice() const { return best_dice_; }

  // Called once after the last phase-1 iteration of strategies that have one.
  std::function<void(const Trainer&)> on_phase1_end;

  int phase_at(std::int64_t g) const {
    switch (config_.strategy) {
      case Strategy::pint:
      case Strategy::baseline_ce: return g < config_.phase1_iters ? 1 : 2;
      case Strategy::pnt: return 1;
      case Strategy::int_: return 2;
    }
    return 1;
  }

  double lr_at(std::int64_t g) const {
    const bool decayed_schedule = config_.strategy == Strategy::pnt ||
                                  ((config_.strategy == Strategy::pint || config_.strategy == Strategy::baseline_ce) &&
                                   g < config_.phase1_iters);
    if (!decayed_schedule) return config_.lr_phase2;
    return config_.lr_phase1 * std::pow(config_.lr_decay_factor, -static_cast<double>(g / config_.lr_decay_every));
  }

  // Best-checkpoint selection covers the last phase2_iters iterations.
  std::int64_t selection_start() const { return config_.phase1_iters; }

  // Batch indices of iteration g: a uniform draw without replacement.
  std::vector<std::size_t> batch_indices(std::int64_t g) const {
    CounterRng rng = root_.split(1).split(static_cast<std::uint64_t>(g));
    const std::size_t n = train_.size();
    const std::size_t B = std::min<std::size_t>(static_cast<std::size_t>(config_.batch_size), n);
    std::vector<std::size_t> pool(n);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (std::size_t i = 0; i < B; ++i) std::swap(pool[i], pool[i + rng.below(n - i)]);
    pool.resize(B);
    return pool;
  }

  void step() {
    if (done()) return;
    const auto t0 = std::chrono::steady_clock::now();
    const std::int64_t g = step_;
    const int phase = phase_at(g);
    const auto idx = batch_indices(g);
    const Tensor x = stack_images(images_, idx);
    std::vector<std::uint8_t> labels;
    for (std::size_t i : idx)
      labels.insert(labels.end(), train_.samples[i].noisy_mask.ids.begin(), train_.samples[i].noisy_mask.ids.end());

    MetricsRecord rec;
    rec.iteration = g;
    rec.phase = phase;
    rec.learning_rate = lr_at(g);
    try {
      const UncertaintyBundle unc =
          estimate_uncertainty(teacher_.net, x, config_.perturbation, root_.split(2).split(static_cast<std::uint64_t>(g)),
                               config_.normalize_entropy, config_.hard_pseudo_labels);
      rec.mean_pixel_uncertainty = mean_of(unc.pixel_uncertainty);
      rec.mean_image_uncertainty = mean_of(unc.image_uncertainty);

      Tape tape;
      const auto bound = student_.parameters().bind(tape, true);
      CounterRng dropout_rng = root_.split(3).split(static_cast<std::uint64_t>(g));
      Var logits = student_.forward(tape, bound, tape.constant(x), true, dropout_rng);
      Var loss;
      if (config_.strategy == Strategy::baseline_ce)
        loss = cross_entropy_loss(logits, labels);
      else if (phase == 1)
        loss = pixel_rectified_loss(logits, labels, unc.pseudo_label, unc.pixel_uncertainty);
      else
        loss = image_rectified_loss(logits, labels, unc.pseudo_label, unc.image_uncertainty);
      rec.train_loss = loss.value().item();
      tape.backward(loss);
      student_.parameters().collect_grads(tape, bound);
    } catch (const NumericError& e) {
      throw DivergenceError("iteration " + std::to_string(g) + ": " + e.what());
    }
    optimizer_.set_learning_rate(rec.learning_rate);
    optimizer_.step(student_.parameters());
    ema_update(teacher_, student_.parameters());
    ++step_;

    const std::int64_t start = selection_start();
    if (config_.phase2_iters > 0 && step_ > start &&
        ((step_ - start) % config_.eval_every == 0 || step_ == config_.total_iters())) {
      const EvalResult ev = evaluate(student_, test_);
      rec.test_dice = ev.dice;
      rec.test_asd = ev.asd;
      if (!best_dice_ || ev.dice > *best_dice_) {
        best_dice_ = ev.dice;
        best_iteration_ = g;
        best_ = student_.parameters();
      }
    }
    elapsed_ += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rec.wall_time = config_.log_wall_time ? elapsed_ : 0.0;
    log_.push_back(rec);

    if (on_phase1_end && step_ == config_.phase1_iters &&
        (config_.strategy == Strategy::pint || config_.strategy == Strategy::baseline_ce))
      on_phase1_end(*this);
  }

  // Runs until `until` iterations have completed (or to the end).
  void run_until(std::int64_t until) {
    while (!done() && step_ < until) step();
  }

  TrainResult run() {
    run_until(config_.total_iters());
    return result();
  }

  TrainResult result() const {
    TrainResult r{student_, student_, teacher_, log_, best_dice_, best_iteration_};
    if (best_) r.student.set_parameters(*best_);
    return r;
  }

  // Student, teacher, optimizer velocity, best-so-far weights and a text
  // sidecar with iteration, phase, RNG state and config hash.
  void save_checkpoint(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    save_weights(student_.parameters(), (dir / "student.pntw").string());
    save_weights(teacher_.net.parameters(), (dir / "teacher.pntw").string());
    if (!optimizer_.velocity().empty()) save_weights(optimizer_.velocity(), (dir / "velocity.pntw").string());
    if (best_) save_weights(*best_, (dir / "best.pntw").string());
    std::ofstream os(dir / "state.txt", std::ios::trunc);
    if (!os) throw IoError("cannot write checkpoint sidecar in '" + dir.string() + "'");
    os << "iteration = " << step_ << '\n'
       << "phase = " << (step_ < config_.total_iters() ? phase_at(step_) : phase_at(std::max<std::int64_t>(0, step_ - 1)))
       << '\n'
       << "rng = " << CounterRng(root_.key(), static_cast<std::uint64_t>(step_)).to_hex() << '\n'
       << "config_hash = " << config_hash(config_) << '\n'
       << "teacher_step = " << teacher_.step << '\n'
       << "best_iteration = " << best_iteration_ << '\n'
       << "best_dice = " << (best_dice_ ? detail::format_double(*best_dice_) : std::string("none")) << '\n';
    std::ofstream log(dir / "log.csv", std::ios::trunc);
    log << metrics_csv(log_);
  }

  // Restores a trainer saved by save_checkpoint(); the config must hash to
  // the recorded value.
  static Trainer resume(const std::filesystem::path& dir, TrainConfig config, Dataset train, Dataset test) {
    Trainer t(std::move(config), std::move(train), std::move(test));
    std::ifstream is(dir / "state.txt");
    if (!is) throw FileNotFoundError("missing checkpoint sidecar in '" + dir.string() + "'");
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(is, line)) {
      const auto eq = line.find('=');
      if (eq != std::string::npos) kv[detail::trim(line.substr(0, eq))] = detail::trim(line.substr(eq + 1));
    }
    if (kv["config_hash"] != config_hash(t.config_))
      throw ContractError("resume: checkpoint was written with a different config");
    const CounterRng rng = CounterRng::from_hex(kv["rng"]);
    if (rng.key() != t.root_.key()) throw ContractError("resume: RNG key does not match seed");
    t.step_ = static_cast<std::int64_t>(rng.counter());
    t.student_.set_parameters(load_weights((dir / "student.pntw").string()));
    t.teacher_.net.set_parameters(load_weights((dir / "teacher.pntw").string()));
    t.teacher_.step = std::stoull(kv["teacher_step"]);
    if (std::filesystem::exists(dir / "velocity.pntw")) t.optimizer_.set_velocity(load_weights((dir / "velocity.pntw").string()));
    if (std::filesystem::exists(dir / "best.pntw")) {
      t.best_ = load_weights((dir / "best.pntw").string());
      t.best_dice_ = detail::parse_double("best_dice", kv["best_dice"]);
      t.best_iteration_ = detail::parse_int("best_iteration", kv["best_iteration"]);
    }
    t.log_ = read_metrics_csv(dir / "log.csv");
    return t;
  }

  static std::vector<MetricsRecord> read_metrics_csv(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw FileNotFoundError("cannot open metrics log '" + path.string() + "'");
    std::vector<MetricsRecord> out;
    std::string line;
    std::getline(is, line);
    if (line != kMetricsHeader) throw FormatError(path.string() + ": unexpected metrics header");
    while (std::getline(is, line)) {
      std::vector<std::string> f;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) f.push_back(cell);
      while (f.size() < 8) f.emplace_back();
      MetricsRecord r;
      r.iteration = detail::parse_int("iter", f[0]);
      r.phase = static_cast<int>(detail::parse_int("phase", f[1]));
      r.train_loss = detail::parse_double("loss", f[2]);
      r.mean_pixel_uncertainty = detail::parse_double("mean_u", f[3]);
      r.mean_image_uncertainty = detail::parse_double("mean_U", f[4]);
      if (!f[5].empty()) r.test_dice = detail::parse_double("dice", f[5]);
      if (!f[6].empty()) r.test_asd = detail::parse_double("asd", f[6]);
      r.wall_time = detail::parse_double("seconds", f[7]);
      out.push_back(r);
    }
    return out;
  }

 private:
  static double mean_of(const Tensor& t) {
    double acc = 0.0;
    for (double v : t.data()) acc += v;
    return acc / static_cast<double>(t.size());
  }

  TrainConfig config_;
  Dataset train_;
  Dataset test_;
  std::vector<Tensor> images_;
  CounterRng root_;
  MiniSegNet student_;
  TeacherState teacher_;
  SgdOptimizer optimizer_;
  std::int64_t step_ = 0;
  std::vector<MetricsRecord> log_;
  std::optional<ParameterSet> best_;
  std::optional<double> best_dice_;
  std::int64_t best_iteration_ = -1;
  double elapsed_ = 0.0;
};

inline TrainResult train_pint(Dataset train, Dataset test, TrainConfig config) {
  return Trainer(std::move(config), std::move(train), std::move(test)).run();
}

// pnt / int single-loss ablations; same contract as train_pint.
inline TrainResult train_ablation(Dataset train, Dataset test, TrainConfig config) {
  if (config.strategy != Strategy::pnt && config.strategy != Strategy::int_)
    throw ContractError("train_ablation: strategy must be pnt or int");
  return train_pint(std::move(train), std::move(test), std::move(config));
}

}  // namespace pint
