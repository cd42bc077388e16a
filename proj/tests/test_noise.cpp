#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "gradcheck.hpp"
#include "pint/noise.hpp"

using namespace pint;
using pint::testing::check_gradients;
using pint::testing::random_tensor;

namespace {

// Independent per-image loss composition: explicit loops, long double.
long double brute_force_image_loss(const Tensor& logits, const std::vector<std::uint8_t>& y, const Tensor& pseudo,
                                   const std::vector<double>& U) {
  const std::size_t B = logits.dim(0), C = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
  long double total = 0;
  for (std::size_t b = 0; b < B; ++b) {
    long double ce = 0, mse = 0;
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w) {
        long double z = 0;
        for (std::size_t c = 0; c < C; ++c) z += std::exp(static_cast<long double>(logits.at(b, c, h, w)));
        const std::uint8_t lab = y[(b * H + h) * W + w];
        ce += -std::log(std::exp(static_cast<long double>(logits.at(b, lab, h, w))) / z);
        for (std::size_t c = 0; c < C; ++c) {
          const long double p = std::exp(static_cast<long double>(logits.at(b, c, h, w))) / z;
          mse += (p - pseudo.at(b, c, h, w)) * (p - pseudo.at(b, c, h, w));
        }
      }
    ce /= static_cast<long double>(H * W);
    mse /= static_cast<long double>(H * W);
    const long double a = std::exp(-static_cast<long double>(U[b]));
    total += a * ce + (1 - a) * mse;
  }
  return total / static_cast<long double>(B);
}

Tensor random_simplex(Shape shape, CounterRng& rng) {
  Tensor p(shape);
  ops::detail::for_each_channel_fiber(shape, [&](std::size_t base, std::size_t st, std::size_t C) {
    double s = 0;
    for (std::size_t c = 0; c < C; ++c) s += (p[base + c * st] = -std::log(1.0 - rng.uniform()));
    for (std::size_t c = 0; c < C; ++c) p[base + c * st] /= s;
  });
  return p;
}

std::vector<std::uint8_t> random_labels(std::size_t n, std::size_t C, CounterRng& rng) {
  std::vector<std::uint8_t> y(n);
  for (auto& v : y) v = static_cast<std::uint8_t>(rng.below(C));
  return y;
}

}  // namespace

TEST(Ema, Arithmetic) {
  ParameterSet t, s;
  t.add("w", Tensor(Shape{1}, 0.0));
  s.add("w", Tensor(Shape{1}, 1.0));
  ema_update(t, s, 0.99);
  EXPECT_NEAR(t[0].value[0], 0.01, 1e-15);
  ema_update(t, s, 1.0);
  EXPECT_NEAR(t[0].value[0], 0.01, 1e-15);
  EXPECT_EQ(s[0].value[0], 1.0);
}

TEST(Ema, GeometricConvergence) {
  ParameterSet t, s;
  t.add("w", Tensor(Shape{3}, {0.0, 2.0, -1.0}));
  s.add("w", Tensor(Shape{3}, {1.0, 1.0, 1.0}));
  const ParameterSet t0 = t;
  for (int k = 1; k <= 500; ++k) {
    ema_update(t, s, 0.99);
    for (std::size_t j = 0; j < 3; ++j)
      ASSERT_NEAR(t[0].value[j] - 1.0, std::pow(0.99, k) * (t0[0].value[j] - 1.0), 1e-9);
  }
  EXPECT_NEAR(t[0].value[0], 1.0 - std::pow(0.99, 500), 1e-9);
}

TEST(Ema, MismatchedSetsRejected) {
  ParameterSet t, s;
  t.add("w", Tensor(Shape{1}));
  s.add("v", Tensor(Shape{1}));
  EXPECT_THROW(ema_update(t, s, 0.9), ContractError);
}

TEST(Uncertainty, Examples) {
  const Tensor uniform(Shape{1, 2, 1, 1}, {0.5, 0.5});
  EXPECT_NEAR(pixel_uncertainty(uniform, false)[0], std::numbers::ln2, 1e-15);
  EXPECT_NEAR(pixel_uncertainty(uniform, true)[0], 1.0, 1e-15);
  EXPECT_EQ(pixel_uncertainty(Tensor(Shape{1, 2, 1, 1}, {1.0, 0.0}), false)[0], 0.0);
  // -(0.9 ln 0.9 + 0.1 ln 0.1) = 0.325082973391448...
  EXPECT_NEAR(pixel_uncertainty(Tensor(Shape{1, 2, 1, 1}, {0.9, 0.1}), false)[0], 0.32508297339144826, 1e-12);
}

TEST(Uncertainty, InvalidProbabilitiesRejected) {
  EXPECT_THROW(pixel_uncertainty(Tensor(Shape{1, 2, 1, 1}, {0.7, 0.7})), ContractError);
  EXPECT_THROW(pixel_uncertainty(Tensor(Shape{1, 2, 1, 1}, {1.5, -0.5})), ContractError);
}

TEST(Uncertainty, BoundsAndAlphaMonotone) {
  CounterRng rng(17);
  const Tensor p = random_simplex(Shape{3, 4, 5, 5}, rng);
  const Tensor u = pixel_uncertainty(p, false);
  const Tensor a = uncertainty_weight(u);
  for (std::size_t j = 0; j < u.size(); ++j) {
    EXPECT_GE(u[j], 0.0);
    EXPECT_LE(u[j], std::log(4.0) + 1e-12);
    EXPECT_NEAR(a[j], std::exp(-u[j]), 0.0);
    for (std::size_t k = 0; k < u.size(); ++k)
      if (u[j] < u[k]) {
        EXPECT_GT(a[j], a[k]);
      }
  }
}

TEST(ImageUncertainty, MeanOfPixels) {
  EXPECT_EQ(image_uncertainty(Tensor(Shape{1, 2, 2}, 0.3))[0], 0.3);
  const double l2 = std::numbers::ln2;
  EXPECT_DOUBLE_EQ(image_uncertainty(Tensor(Shape{1, 2, 2}, {0, 0, l2, l2}))[0], l2 / 2);
  CounterRng rng(2);
  Tensor u(Shape{3, 7, 5});
  for (double& v : u.data()) v = rng.uniform();
  const Tensor U = image_uncertainty(u);
  for (std::size_t b = 0; b < 3; ++b) {
    double s = 0;
    for (std::size_t j = 0; j < 35; ++j) s += u[b * 35 + j];
    EXPECT_NEAR(U[b], s / 35.0, 1e-12);
  }
}

TEST(PixelLoss, HandExample) {
  Tape t;
  Var logits = t.leaf(Tensor(Shape{1, 2, 1, 1}, {0.0, 0.0}), true);
  const std::vector<std::uint8_t> y{1};
  const Tensor pseudo(Shape{1, 2, 1, 1}, {0.5, 0.5});
  const Tensor u(Shape{1, 1, 1}, std::numbers::ln2);
  // 0.5 * ln 2 + 0.5 * 0
  EXPECT_NEAR(pixel_rectified_loss(logits, y, pseudo, u).value().item(), 0.34657359027997264, 1e-12);
}

TEST(PixelLoss, ZeroUncertaintyIsCrossEntropy) {
  CounterRng rng(3);
  Tape t;
  Var logits = t.leaf(random_tensor(Shape{2, 3, 4, 4}, rng), true);
  const auto y = random_labels(32, 3, rng);
  const Tensor pseudo = random_simplex(Shape{2, 3, 4, 4}, rng);
  const double ce = cross_entropy_loss(logits, y).value().item();
  EXPECT_EQ(pixel_rectified_loss(logits, y, pseudo, Tensor(Shape{2, 4, 4})).value().item(), ce);
  EXPECT_NEAR(image_rectified_loss(logits, y, pseudo, Tensor(Shape{2})).value().item(), ce, 1e-12);
}

TEST(PixelLoss, SelfConsistentPseudoLabelAndHugeUncertaintyVanishes) {
  CounterRng rng(4);
  Tape t;
  Var logits = t.leaf(random_tensor(Shape{1, 2, 3, 3}, rng), true);
  const Tensor pseudo = ops::softmax_channel(logits).value();
  const auto y = random_labels(9, 2, rng);
  EXPECT_NEAR(pixel_rectified_loss(logits, y, pseudo, Tensor(Shape{1, 3, 3}, 800.0)).value().item(), 0.0, 1e-15);
}

TEST(PixelLoss, LabelOutOfRange) {
  Tape t;
  Var logits = t.leaf(Tensor(Shape{1, 2, 1, 1}), true);
  const std::vector<std::uint8_t> y{2};
  EXPECT_THROW(pixel_rectified_loss(logits, y, Tensor(Shape{1, 2, 1, 1}, 0.5), Tensor(Shape{1, 1, 1})), ContractError);
}

TEST(PixelLoss, InterpolatesBetweenTerms) {
  CounterRng rng(6);
  for (int i = 0; i < 50; ++i) {
    Tape t;
    Var logits = t.leaf(random_tensor(Shape{1, 3, 1, 1}, rng, 2.0), true);
    const auto y = random_labels(1, 3, rng);
    const Tensor pseudo = random_simplex(Shape{1, 3, 1, 1}, rng);
    const double u = 2.0 * rng.uniform();
    const double seg = pixel_rectified_loss(logits, y, pseudo, Tensor(Shape{1, 1, 1}, 0.0)).value().item();
    const double pse = pixel_rectified_loss(logits, y, pseudo, Tensor(Shape{1, 1, 1}, 1e4)).value().item();
    const double mix = pixel_rectified_loss(logits, y, pseudo, Tensor(Shape{1, 1, 1}, u)).value().item();
    EXPECT_LE(std::min(seg, pse) - 1e-12, mix);
    EXPECT_GE(std::max(seg, pse) + 1e-12, mix);
  }
}

TEST(ImageLoss, ReducesToPixelLossForSingleConstantImage) {
  CounterRng rng(8);
  for (int i = 0; i < 20; ++i) {
    Tape t;
    Var logits = t.leaf(random_tensor(Shape{1, 2, 4, 4}, rng), true);
    const auto y = random_labels(16, 2, rng);
    const Tensor pseudo = random_simplex(Shape{1, 2, 4, 4}, rng);
    const double c = rng.uniform();
    const double pix = pixel_rectified_loss(logits, y, pseudo, Tensor(Shape{1, 4, 4}, c)).value().item();
    const double img = image_rectified_loss(logits, y, pseudo, Tensor(Shape{1}, c)).value().item();
    EXPECT_NEAR(pix, img, 1e-12);
  }
}

TEST(ImageLoss, MatchesPerImageComposition) {
  CounterRng rng(9);
  Tape t;
  const Tensor lg = random_tensor(Shape{2, 2, 2, 2}, rng);
  Var logits = t.leaf(lg, true);
  const auto y = random_labels(8, 2, rng);
  const Tensor pseudo = random_simplex(Shape{2, 2, 2, 2}, rng);
  const std::vector<double> U{0.0, std::numbers::ln2};
  const double got = image_rectified_loss(logits, y, pseudo, Tensor(Shape{2}, {U[0], U[1]})).value().item();
  EXPECT_NEAR(got, static_cast<double>(brute_force_image_loss(lg, y, pseudo, U)), 1e-12);
}

TEST(Losses, GradientsMatchFiniteDifferences) {
  CounterRng rng(10);
  for (int i = 0; i < 5; ++i) {
    const auto y = random_labels(18, 3, rng);
    const Tensor pseudo = random_simplex(Shape{2, 3, 3, 3}, rng);
    Tensor u(Shape{2, 3, 3});
    for (double& v : u.data()) v = rng.uniform();
    const Tensor U = image_uncertainty(u);
    auto pix = [&](Tape&, const std::vector<Var>& v) { return pixel_rectified_loss(v[0], y, pseudo, u); };
    auto img = [&](Tape&, const std::vector<Var>& v) { return image_rectified_loss(v[0], y, pseudo, U); };
    const std::vector<Tensor> in{random_tensor(Shape{2, 3, 3, 3}, rng, 2.0)};
    auto r1 = check_gradients(pix, in);
    auto r2 = check_gradients(img, in);
    EXPECT_TRUE(r1.ok) << r1.detail;
    EXPECT_TRUE(r2.ok) << r2.detail;
  }
}

TEST(McPseudoLabels, DegenerateSpecEqualsTeacherSoftmax) {
  const MiniSegNet net = MiniSegNet::init(3, NetConfig{{4, 8}, 2, 0.5});
  CounterRng rng(1);
  const Tensor x = random_tensor(Shape{2, 1, 8, 8}, rng);
  PerturbationSpec spec{1, 0.0, false};
  const Tensor p = mc_pseudo_labels(net, x, spec, CounterRng(5));
  Tape t;
  const auto bound = net.parameters().bind(t, false);
  CounterRng unused(0);
  const Tensor direct = ops::softmax_channel(net.forward(t, bound, t.constant(x), false, unused)).value();
  EXPECT_EQ(p, direct);
}

TEST(McPseudoLabels, SimplexDeterminismAndOrderInvariance) {
  const MiniSegNet net = MiniSegNet::init(4, NetConfig{{4, 8}, 2, 0.5});
  CounterRng rng(2);
  const Tensor x = random_tensor(Shape{2, 1, 8, 8}, rng);
  const PerturbationSpec spec{};
  const Tensor p = mc_pseudo_labels(net, x, spec, CounterRng(9));
  EXPECT_EQ(p, mc_pseudo_labels(net, x, spec, CounterRng(9)));
  ops::detail::for_each_channel_fiber(p.shape(), [&](std::size_t base, std::size_t st, std::size_t C) {
    double s = 0;
    for (std::size_t c = 0; c < C; ++c) {
      EXPECT_GE(p[base + c * st], 0.0);
      EXPECT_LE(p[base + c * st], 1.0);
      s += p[base + c * st];
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  });
  std::vector<CounterRng> streams, reversed;
  for (int m = 0; m < 4; ++m) streams.push_back(CounterRng(9).split(m));
  reversed.assign(streams.rbegin(), streams.rend());
  const Tensor a = mc_pseudo_labels(net, x, spec, streams), b = mc_pseudo_labels(net, x, spec, reversed);
  for (std::size_t j = 0; j < a.size(); ++j) EXPECT_NEAR(a[j], b[j], 1e-12);
}

TEST(Losses, TeacherReceivesNoGradient) {
  MiniSegNet student = MiniSegNet::init(5, NetConfig{{4, 8}, 2, 0.5});
  MiniSegNet teacher = MiniSegNet::init(6, NetConfig{{4, 8}, 2, 0.5});
  CounterRng rng(3);
  const Tensor x = random_tensor(Shape{1, 1, 8, 8}, rng);
  const auto y = random_labels(64, 2, rng);
  auto loss_with = [&](const MiniSegNet& tch) {
    const Tensor p = mc_pseudo_labels(tch, x, PerturbationSpec{}, CounterRng(1));
    Tape t;
    const auto bound = student.parameters().bind(t, true);
    CounterRng d(2);
    Var loss = pixel_rectified_loss(student.forward(t, bound, t.constant(x), true, d), y, p, pixel_uncertainty(p));
    t.backward(loss);
    return loss.value().item();
  };
  const double before = loss_with(teacher);
  teacher.parameters()[0].value[0] += 0.5;
  EXPECT_NE(before, loss_with(teacher));
  for (const auto& p : teacher.parameters()) EXPECT_TRUE(p.grad.empty());
}
