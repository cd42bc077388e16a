#pragma once

// Small 2-D encoder/decoder segmentation network with skip connections.
//
// With widths (w1..wL):
//   enc1: conv3x3 1->w1, relu                          (full resolution)
//   enci: maxpool, conv3x3 w(i-1)->wi, relu            (i = 2..L)
//   dropout                                            (after deepest encoder stage)
//   bottleneck: conv3x3 wL->wL, relu
//   decL: conv3x3 wL->w(L-1), relu
//   deci: upsample, concat enci, conv3x3 2wi->w(i-1), relu   (i = L-1..1, w0 := w1)
//   dropout                                            (after last decoder stage)
//   head: conv1x1 w1->C
// Parameters are named "stage.index.kind", e.g. "enc2.0.weight".

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pint/autodiff.hpp"
#include "pint/parameters.hpp"
#include "pint/rng.hpp"

namespace pint {

struct NetConfig {
  std::vector<std::size_t> widths{8, 16, 32};
  std::size_t num_classes = 2;
  double dropout_rate = 0.5;

  std::size_t divisor() const { return std::size_t{1} << (widths.size() - 1); }
};

class MiniSegNet {
 public:
  MiniSegNet() = default;

  // He-normal kernels (variance 2/fan_in), zero biases.
  static MiniSegNet init(std::uint64_t seed, NetConfig config) {
    if (config.widths.empty()) throw ContractError("MiniSegNet: widths must be nonempty");
    for (std::size_t w : config.widths)
      if (w == 0) throw ContractError("MiniSegNet: zero channel width");
    if (config.num_classes < 2) throw ContractError("MiniSegNet: num_classes must be >= 2");
    if (!(config.dropout_rate >= 0.0 && config.dropout_rate < 1.0))
      throw ContractError("MiniSegNet: dropout rate must lie in [0,1)");

    MiniSegNet net;
    net.config_ = config;
    const CounterRng root(seed);
    std::uint64_t stream = 0;
    auto conv = [&](const std::string& stage, std::size_t in, std::size_t out, std::size_t k) {
      CounterRng rng = root.split(stream++);
      Tensor w(Shape{out, in, k, k});
      const double sd = std::sqrt(2.0 / static_cast<double>(in * k * k));
      for (double& v : w.data()) v = sd * rng.normal();
      net.params_.add(stage + ".0.weight", std::move(w));
      net.params_.add(stage + ".0.bias", Tensor(Shape{out}));
    };
    const auto& ws = config.widths;
    const std::size_t L = ws.size();
    for (std::size_t i = 0; i < L; ++i) conv("enc" + std::to_string(i + 1), i == 0 ? 1 : ws[i - 1], ws[i], 3);
    conv("bottleneck", ws[L - 1], ws[L - 1], 3);
    conv("dec" + std::to_string(L), ws[L - 1], L >= 2 ? ws[L - 2] : ws[0], 3);
    for (std::size_t i = L - 1; i-- > 0;) conv("dec" + std::to_string(i + 1), 2 * ws[i], i >= 1 ? ws[i - 1] : ws[0], 3);
    conv("head", ws[0], config.num_classes, 1);
    return net;
  }

  // Rebuilds a network from saved weights; widths and class count are read
  // off the kernel shapes.
  static MiniSegNet from_parameters(ParameterSet params, double dropout_rate = 0.5) {
    NetConfig cfg;
    cfg.widths.clear();
    cfg.dropout_rate = dropout_rate;
    for (std::size_t i = 1;; ++i) {
      const Parameter* w = params.find("enc" + std::to_string(i) + ".0.weight");
      if (!w) break;
      if (w->value.rank() != 4) throw FormatError("weights: '" + w->name + "' is not a 4-d kernel");
      cfg.widths.push_back(w->value.dim(0));
    }
    const Parameter* head = params.find("head.0.weight");
    if (cfg.widths.empty() || !head || head->value.rank() != 4)
      throw FormatError("weights: not a segmentation network checkpoint");
    cfg.num_classes = head->value.dim(0);
    MiniSegNet net = init(0, cfg);
    if (!params.aligned_with(net.params_)) throw FormatError("weights: tensor names or shapes do not match the network");
    net.params_ = std::move(params);
    return net;
  }

  const NetConfig& config() const { return config_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }
  void set_parameters(ParameterSet params) {
    if (!params.aligned_with(params_))
      throw ContractError("MiniSegNet: parameter set does not match architecture");
    params_ = std::move(params);
  }

  // Logits [B,C,H,W] for input [B,1,H,W]. `params` are the bound leaves of
  // parameters(), in order. Dropout is active iff `train`.
  Var forward(Tape& tape, std::span<const Var> params, Var x, bool train, CounterRng& rng) const {
    const Shape& sh = x.shape();
    if (sh.size() != 4 || sh[1] != 1)
      throw ShapeError("MiniSegNet: expected input [B,1,H,W], got " + to_string(sh));
    const std::size_t div = config_.divisor();
    if (sh[2] % div != 0 || sh[3] % div != 0 || sh[2] == 0 || sh[3] == 0)
      throw ShapeError("MiniSegNet: H and W must be positive multiples of " + std::to_string(div) +
                       ", got " + to_string(sh));
    if (params.size() != params_.size())
      throw ContractError("MiniSegNet: expected " + std::to_string(params_.size()) + " bound parameters");
    (void)tape;

    std::size_t next = 0;
    auto conv = [&](Var in, std::size_t pad) {
      Var w = params[next++];
      Var b = params[next++];
      return ops::conv2d(in, w, b, 1, pad);
    };
    const std::size_t L = config_.widths.size();
    std::vector<Var> skips;
    Var h = x;
    for (std::size_t i = 0; i < L; ++i) {
      if (i > 0) h = ops::max_pool2x2(h);
      h = ops::relu(conv(h, 1));
      skips.push_back(h);
    }
    h = ops::dropout(h, config_.dropout_rate, train, rng);
    h = ops::relu(conv(h, 1));  // bottleneck
    h = ops::relu(conv(h, 1));  // decL
    for (std::size_t i = L - 1; i-- > 0;) {
      h = ops::concat_channels(ops::upsample2x(h), skips[i]);
      h = ops::relu(conv(h, 1));
    }
    h = ops::dropout(h, config_.dropout_rate, train, rng);
    return conv(h, 0);
  }

  // Gradient-free convenience forward returning logits.
  Tensor logits(const Tensor& x, bool train, CounterRng& rng) const {
    Tape tape;
    const auto bound = params_.bind(tape, false);
    return forward(tape, bound, tape.constant(x), train, rng).value();
  }

 private:
  NetConfig config_;
  ParameterSet params_;
};

}  // namespace pint
