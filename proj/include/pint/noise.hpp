#pragma once

// Noise-tolerant learning core: EMA teacher, Monte-Carlo perturbed pseudo
// labels, entropy uncertainty at pixel and image level, and the
// uncertainty-rectified losses that blend the noisy-label cross-entropy with
// an MSE towards the pseudo label.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pint/autodiff.hpp"
#include "pint/model.hpp"
#include "pint/parameters.hpp"
#include "pint/rng.hpp"
#include "pint/tensor.hpp"

namespace pint {

struct TeacherState {
  MiniSegNet net;
  double decay = 0.99;
  std::uint64_t step = 0;

  static TeacherState from_student(const MiniSegNet& student, double decay = 0.99) {
    if (!(decay > 0.0 && decay <= 1.0)) throw ContractError("teacher: decay must lie in (0,1]");
    return TeacherState{student, decay, 0};
  }
};

// teacher <- decay * teacher + (1 - decay) * student, elementwise.
inline void ema_update(ParameterSet& teacher, const ParameterSet& student, double decay) {
  if (!teacher.aligned_with(student))
    throw ContractError("ema_update: teacher and student parameter sets differ");
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    Tensor& t = teacher[i].value;
    const Tensor& s = student[i].value;
    for (std::size_t j = 0; j < t.size(); ++j) t[j] = decay * t[j] + (1.0 - decay) * s[j];
  }
}

inline void ema_update(TeacherState& teacher, const ParameterSet& student) {
  ema_update(teacher.net.parameters(), student, teacher.decay);
  ++teacher.step;
}

struct PerturbationSpec {
  int passes = 4;
  double gaussian_sigma = 0.1;
  bool teacher_dropout_active = true;

  void validate() const {
    if (passes < 1) throw ContractError("perturbation: need at least one pass");
    if (!(gaussian_sigma >= 0.0)) throw ContractError("perturbation: sigma must be nonnegative");
  }
};

// Mean teacher softmax over perturbed copies x + N(0, sigma^2), one pass per
// supplied stream. Nothing is differentiated through the teacher.
inline Tensor mc_pseudo_labels(const MiniSegNet& teacher, const Tensor& images, const PerturbationSpec& spec,
                               std::span<const CounterRng> pass_streams) {
  spec.validate();
  if (pass_streams.size() != static_cast<std::size_t>(spec.passes))
    throw ContractError("mc_pseudo_labels: expected one stream per pass");
  Tensor mean;
  for (std::size_t m = 0; m < pass_streams.size(); ++m) {
    CounterRng rng = pass_streams[m];
    Tensor noisy = images;
    if (spec.gaussian_sigma > 0.0)
      for (double& v : noisy.data()) v += spec.gaussian_sigma * rng.normal();
    Tape tape;
    const auto bound = teacher.parameters().bind(tape, false);
    Tensor prob;
    try {
      Var logits = teacher.forward(tape, bound, tape.constant(std::move(noisy)), spec.teacher_dropout_active, rng);
      prob = ops::softmax_channel(logits).value();
    } catch (const NumericError& e) {
      throw NumericError("teacher pass " + std::to_string(m) + ": " + e.what());
    }
    if (m == 0)
      mean = std::move(prob);
    else
      for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += prob[j];
  }
  const double inv = 1.0 / static_cast<double>(pass_streams.size());
  for (double& v : mean.data()) v *= inv;
  return mean;
}

// Pass m uses stream m of `rng`.
inline Tensor mc_pseudo_labels(const MiniSegNet& teacher, const Tensor& images, const PerturbationSpec& spec,
                               const CounterRng& rng) {
  spec.validate();
  std::vector<CounterRng> streams;
  for (int m = 0; m < spec.passes; ++m) streams.push_back(rng.split(static_cast<std::uint64_t>(m)));
  return mc_pseudo_labels(teacher, images, spec, streams);
}

// One-hot argmax over channels (first maximum wins).
inline Tensor hard_pseudo_labels(const Tensor& prob) {
  Tensor out(prob.shape());
  ops::detail::for_each_channel_fiber(prob.shape(), [&](std::size_t base, std::size_t st, std::size_t C) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < C; ++c)
      if (prob[base + c * st] > prob[base + best * st]) best = c;
    out[base + best * st] = 1.0;
  });
  return out;
}

// Shannon entropy of each pixel's class distribution, -sum_c p ln p with
// 0 ln 0 = 0; divided by ln C when `normalize` is set. [B,C,H,W] -> [B,H,W].
inline Tensor pixel_uncertainty(const Tensor& prob, bool normalize = true) {
  if (prob.rank() != 4) throw ShapeError("pixel_uncertainty: expected [B,C,H,W], got " + to_string(prob.shape()));
  const std::size_t B = prob.dim(0), C = prob.dim(1), S = prob.dim(2) * prob.dim(3);
  Tensor u(Shape{prob.dim(0), prob.dim(2), prob.dim(3)});
  const double scale = normalize ? 1.0 / std::log(static_cast<double>(C)) : 1.0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t s = 0; s < S; ++s) {
      double total = 0.0, h = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        const double p = prob[(b * C + c) * S + s];
        if (!(p >= 0.0 && p <= 1.0))
          throw ContractError("pixel_uncertainty: probability " + std::to_string(p) + " outside [0,1]");
        total += p;
        if (p > 0.0) h -= p * std::log(p);
      }
      if (std::abs(total - 1.0) > 1e-6)
        throw ContractError("pixel_uncertainty: channel sum " + std::to_string(total) + " != 1");
      u[b * S + s] = h * scale;
    }
  return u;
}

// Per-image mean of pixel uncertainties: [B,...] -> [B].
inline Tensor image_uncertainty(const Tensor& u) {
  if (u.rank() < 1) throw ShapeError("image_uncertainty: scalar input");
  const std::size_t B = u.dim(0), N = u.size() / B;
  Tensor U(Shape{B});
  for (std::size_t b = 0; b < B; ++b) {
    double acc = 0.0;
    for (std::size_t j = 0; j < N; ++j) acc += u[b * N + j];
    U[b] = acc / static_cast<double>(N);
  }
  return U;
}

// exp(-u), elementwise.
inline Tensor uncertainty_weight(const Tensor& u) {
  Tensor a = u;
  for (double& v : a.data()) v = std::exp(-v);
  return a;
}

namespace detail {

struct LossTerms {
  Var ce;   // [B,H,W] cross-entropy against the noisy label
  Var mse;  // [B,H,W] squared distance between softmax and pseudo label
};

inline LossTerms loss_terms(Var logits, std::span<const std::uint8_t> labels, const Tensor& pseudo) {
  require_same_shape(logits.value(), pseudo, "rectified loss (logits vs pseudo label)");
  Tape& tape = *logits.tape;
  Var ce = ops::scale(ops::pick_channel(ops::log_softmax_channel(logits), labels), -1.0);
  Var diff = ops::sub(ops::softmax_channel(logits), tape.constant(pseudo));
  Var mse = ops::sum_channel(ops::square(diff));
  return {ce, mse};
}

// alpha * a + (1 - alpha) * b with alpha a constant tensor.
inline Var blend(Var a, Var b, const Tensor& alpha) {
  Tape& tape = *a.tape;
  Tensor rest = alpha;
  for (double& v : rest.data()) v = 1.0 - v;
  return ops::add(ops::mul(a, tape.constant(alpha)), ops::mul(b, tape.constant(std::move(rest))));
}

}  // namespace detail

// mean over pixels of exp(-u) * CE + (1 - exp(-u)) * MSE. u: [B,H,W], held
// constant; gradients flow only into `logits`.
inline Var pixel_rectified_loss(Var logits, std::span<const std::uint8_t> labels, const Tensor& pseudo,
                                const Tensor& u) {
  auto [ce, mse] = detail::loss_terms(logits, labels, pseudo);
  require_same_shape(ce.value(), u, "pixel_rectified_loss (uncertainty map)");
  return ops::mean(detail::blend(ce, mse, uncertainty_weight(u)));
}

// mean over images of exp(-U) * mean CE + (1 - exp(-U)) * mean MSE. U: [B].
inline Var image_rectified_loss(Var logits, std::span<const std::uint8_t> labels, const Tensor& pseudo,
                                const Tensor& U) {
  auto [ce, mse] = detail::loss_terms(logits, labels, pseudo);
  Var ce_i = ops::mean_per_image(ce);
  Var mse_i = ops::mean_per_image(mse);
  require_same_shape(ce_i.value(), U, "image_rectified_loss (image uncertainty)");
  return ops::mean(detail::blend(ce_i, mse_i, uncertainty_weight(U)));
}

// Plain mean cross-entropy.
inline Var cross_entropy_loss(Var logits, std::span<const std::uint8_t> labels) {
  return ops::mean(ops::scale(ops::pick_channel(ops::log_softmax_channel(logits), labels), -1.0));
}

struct UncertaintyBundle {
  Tensor pseudo_prob;   // [B,C,H,W]
  Tensor pseudo_label;  // soft (= pseudo_prob) or one-hot
  Tensor pixel_uncertainty;  // [B,H,W]
  Tensor pixel_alpha;
  Tensor image_uncertainty;  // [B]
  Tensor image_alpha;
};

inline UncertaintyBundle estimate_uncertainty(const MiniSegNet& teacher, const Tensor& images,
                                              const PerturbationSpec& spec, const CounterRng& rng,
                                              bool normalize_entropy = true, bool hard_labels = false) {
  UncertaintyBundle u;
  u.pseudo_prob = mc_pseudo_labels(teacher, images, spec, rng);
  u.pseudo_label = hard_labels ? hard_pseudo_labels(u.pseudo_prob) : u.pseudo_prob;
  u.pixel_uncertainty = pixel_uncertainty(u.pseudo_prob, normalize_entropy);
  u.pixel_alpha = uncertainty_weight(u.pixel_uncertainty);
  u.image_uncertainty = image_uncertainty(u.pixel_uncertainty);
  u.image_alpha = uncertainty_weight(u.image_uncertainty);
  return u;
}

}  // namespace pint
