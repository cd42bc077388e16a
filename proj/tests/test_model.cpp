#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "pint/checkpoint.hpp"
#include "pint/model.hpp"

using namespace pint;
using pint::testing::random_tensor;

TEST(MiniSegNet, InitIsDeterministic) {
  const MiniSegNet a = MiniSegNet::init(1, {}), b = MiniSegNet::init(1, {}), c = MiniSegNet::init(2, {});
  EXPECT_TRUE(a.parameters().values_equal(b.parameters()));
  EXPECT_FALSE(a.parameters().values_equal(c.parameters()));
}

TEST(MiniSegNet, ParameterNamingAndInitStatistics) {
  const MiniSegNet net = MiniSegNet::init(3, {});
  ASSERT_NE(net.parameters().find("enc1.0.weight"), nullptr);
  ASSERT_NE(net.parameters().find("bottleneck.0.bias"), nullptr);
  ASSERT_NE(net.parameters().find("dec1.0.weight"), nullptr);
  ASSERT_NE(net.parameters().find("head.0.weight"), nullptr);
  for (const auto& p : net.parameters()) {
    if (p.name.ends_with(".bias")) {
      for (double v : p.value.data()) EXPECT_EQ(v, 0.0);
    }
  }
  // He-normal: empirical variance of the largest kernel near 2/fan_in.
  const Parameter* w = net.parameters().find("dec1.0.weight");
  const double fan_in = double(w->value.dim(1) * 9);
  double ss = 0;
  for (double v : w->value.data()) ss += v * v;
  EXPECT_NEAR(ss / double(w->value.size()), 2.0 / fan_in, 0.25 * 2.0 / fan_in);
  EXPECT_THROW(MiniSegNet::init(1, NetConfig{{}, 2, 0.5}), ContractError);
  EXPECT_THROW(MiniSegNet::init(1, NetConfig{{8}, 1, 0.5}), ContractError);
}

TEST(MiniSegNet, ZeroInputGivesUniformSoftmax) {
  const MiniSegNet net = MiniSegNet::init(4, {});
  CounterRng rng(0);
  const Tensor logits = net.logits(Tensor(Shape{1, 1, 16, 16}), false, rng);
  for (double v : logits.data()) EXPECT_EQ(v, logits[0]);
  Tape t;
  const Tensor p = ops::softmax_channel(t.constant(logits)).value();
  for (double v : p.data()) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(MiniSegNet, ShapeContract) {
  const MiniSegNet net = MiniSegNet::init(5, {});
  CounterRng rng(1);
  const Tensor x = random_tensor(Shape{2, 1, 32, 32}, rng);
  EXPECT_EQ(net.logits(x, false, rng).shape(), (Shape{2, 2, 32, 32}));
  EXPECT_EQ(net.logits(random_tensor(Shape{1, 1, 12, 20}, rng), true, rng).shape(), (Shape{1, 2, 12, 20}));
  EXPECT_THROW(net.logits(Tensor(Shape{1, 1, 30, 32}), false, rng), ShapeError);
  EXPECT_THROW(net.logits(Tensor(Shape{1, 2, 32, 32}), false, rng), ShapeError);
}

TEST(MiniSegNet, DropoutOnlyInTrainMode) {
  const MiniSegNet net = MiniSegNet::init(6, {});
  CounterRng rng(2);
  const Tensor x = random_tensor(Shape{1, 1, 16, 16}, rng);
  CounterRng a(10), b(11);
  EXPECT_EQ(net.logits(x, false, a), net.logits(x, false, b));
  EXPECT_NE(net.logits(x, true, a), net.logits(x, true, b));
}

TEST(MiniSegNet, GradientReachesEveryParameter) {
  MiniSegNet net = MiniSegNet::init(7, {});
  CounterRng rng(3);
  const Tensor x = random_tensor(Shape{2, 1, 16, 16}, rng);
  Tape t;
  const auto bound = net.parameters().bind(t, true);
  CounterRng drop(4);
  Var logits = net.forward(t, bound, t.constant(x), true, drop);
  std::vector<std::uint8_t> y(2 * 16 * 16);
  for (auto& v : y) v = static_cast<std::uint8_t>(rng.below(2));
  Var loss = ops::mean(ops::scale(ops::pick_channel(ops::log_softmax_channel(logits), y), -1.0));
  t.backward(loss);
  net.parameters().collect_grads(t, bound);
  for (const auto& p : net.parameters()) {
    bool nonzero = false;
    for (double v : p.grad.data()) nonzero = nonzero || v != 0.0;
    EXPECT_TRUE(nonzero) << p.name;
  }
}

TEST(MiniSegNet, GradientsMatchFiniteDifferencesOnSmallNet) {
  MiniSegNet net = MiniSegNet::init(8, NetConfig{{2, 3}, 2, 0.5});
  CounterRng rng(5);
  const Tensor x = random_tensor(Shape{1, 1, 4, 4}, rng);
  std::vector<Tensor> in;
  for (const auto& p : net.parameters()) in.push_back(p.value);
  auto f = [&](Tape& t, const std::vector<Var>& v) {
    CounterRng drop(6);
    return ops::sum(ops::square(net.forward(t, v, t.constant(x), true, drop)));
  };
  auto r = pint::testing::check_gradients(f, in);
  EXPECT_TRUE(r.ok) << r.detail;
}

TEST(MiniSegNet, CheckpointRoundTrip) {
  MiniSegNet net = MiniSegNet::init(9, {});
  const auto bytes = encode_weights(net.parameters());
  MiniSegNet other = MiniSegNet::init(10, {});
  other.set_parameters(decode_weights(bytes, "mem"));
  EXPECT_TRUE(other.parameters().values_equal(net.parameters()));
  EXPECT_THROW(other.set_parameters(MiniSegNet::init(1, NetConfig{{4, 8}, 2, 0.5}).parameters()), ContractError);
}
