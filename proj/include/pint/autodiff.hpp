#pragma once

// Reverse-mode automatic differentiation over Tensor values.
//
// A Tape records every operation applied to Vars created from it. Each
// recorded node owns its output value and, if any input requires a gradient,
// a backward rule that scatters the node's output gradient into its inputs.
// Nodes are appended in creation order, so the tape is topologically sorted
// and backward() is a single reverse sweep.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pint/errors.hpp"
#include "pint/rng.hpp"
#include "pint/tensor.hpp"

namespace pint {

class Tape;

// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, {}});
    return Var{this, nodes_.size() - 1};
  }
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Appends an operation node. The backward rule is kept only when some
  // input participates in differentiation.
  Var record(const char* op, Tensor value, std::span<const Var> inputs, Backward backward) {
    if (!value.all_finite()) throw NumericError(std::string(op) + ": non-finite output");
    bool rg = false;
    for (const Var& in : inputs) {
      if (in.tape != this) throw ContractError(std::string(op) + ": input from another tape");
      rg = rg || nodes_[in.id].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), Tensor{}, rg, rg ? std::move(backward) : Backward{}});
    return Var{this, nodes_.size() - 1};
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient of the last backward() target with respect to v; zeros when v
  // was not reached.
  Tensor grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.grad.empty() ? Tensor::zeros_like(n.value) : n.grad;
  }

  // Accumulation slot for a node's gradient, or nullptr when the node does
  // not require one.
  Tensor* grad_slot(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return nullptr;
    if (n.grad.empty()) n.grad = Tensor::zeros_like(n.value);
    return &n.grad;
  }
  const Tensor& out_grad(std::size_t id) const { return nodes_[id].grad; }

  void backward(Var loss) {
    if (loss.tape != this) throw ContractError("backward: loss from another tape");
    if (nodes_.empty()) throw ContractError("backward: empty tape");
    if (nodes_[loss.id].value.size() != 1)
      throw ContractError("backward: loss must be scalar, got shape " +
                          to_string(nodes_[loss.id].value.shape()));
    for (Node& n : nodes_) n.grad = Tensor{};
    if (!nodes_[loss.id].requires_grad) return;
    grad_slot(loss.id)->fill(1.0);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && !n.grad.empty()) n.backward(*this, i);
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape->value(id); }
inline bool Var::requires_grad() const { return tape->requires_grad(id); }

namespace ops {

namespace detail {

inline void require_rank(const Var& v, std::size_t rank, const char* op) {
  if (v.value().rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     to_string(v.shape()));
}

inline std::ptrdiff_t floor_div(std::ptrdiff_t a, std::ptrdiff_t b) {
  std::ptrdiff_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

// Output positions o in [lo, hi) whose input tap o*stride + k - pad lies
// inside [0, in).
inline std::pair<std::ptrdiff_t, std::ptrdiff_t> valid_range(std::ptrdiff_t k, std::ptrdiff_t pad,
                                                             std::ptrdiff_t stride,
                                                             std::ptrdiff_t in,
                                                             std::ptrdiff_t out) {
  const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -floor_div(k - pad, stride));
  const std::ptrdiff_t hi = std::min(out, floor_div(in - 1 + pad - k, stride) + 1);
  return {lo, std::max(lo, hi)};
}

}  // namespace detail

// 2-D cross-correlation. x: [B,Ci,H,W], weight: [Co,Ci,K,K], bias: [Co].
inline Var conv2d(Var x, Var weight, Var bias, std::size_t stride = 1, std::size_t pad = 0) {
  detail::require_rank(x, 4, "conv2d");
  detail::require_rank(weight, 4, "conv2d");
  detail::require_rank(bias, 1, "conv2d");
  const Tensor& X = x.value();
  const Tensor& Wt = weight.value();
  const std::size_t B = X.dim(0), Ci = X.dim(1), H = X.dim(2), W = X.dim(3);
  const std::size_t Co = Wt.dim(0), K = Wt.dim(2);
  if (Wt.dim(1) != Ci || Wt.dim(3) != K)
    throw ShapeError("conv2d: kernel " + to_string(Wt.shape()) + " incompatible with input " +
                     to_string(X.shape()));
  if (bias.value().dim(0) != Co)
    throw ShapeError("conv2d: bias " + to_string(bias.shape()) + " for " + std::to_string(Co) +
                     " output channels");
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  if (H + 2 * pad < K || W + 2 * pad < K)
    throw ShapeError("conv2d: kernel larger than padded input " + to_string(X.shape()));
  const std::size_t OH = (H + 2 * pad - K) / stride + 1;
  const std::size_t OW = (W + 2 * pad - K) / stride + 1;
  const auto s = static_cast<std::ptrdiff_t>(stride);
  const auto p = static_cast<std::ptrdiff_t>(pad);

  // Visits every (batch, out-channel, in-channel, kernel tap, output row) and
  // hands the matching contiguous output/input row segments to fn.
  auto sweep = [=](auto&& fn) {
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t o = 0; o < Co; ++o)
        for (std::size_t i = 0; i < Ci; ++i)
          for (std::size_t kh = 0; kh < K; ++kh) {
            const auto [oh0, oh1] = detail::valid_range(static_cast<std::ptrdiff_t>(kh), p, s,
                                                        static_cast<std::ptrdiff_t>(H),
                                                        static_cast<std::ptrdiff_t>(OH));
            for (std::size_t kw = 0; kw < K; ++kw) {
              const auto [ow0, ow1] = detail::valid_range(static_cast<std::ptrdiff_t>(kw), p, s,
                                                          static_cast<std::ptrdiff_t>(W),
                                                          static_cast<std::ptrdiff_t>(OW));
              if (ow0 >= ow1) continue;
              const std::size_t widx = ((o * Ci + i) * K + kh) * K + kw;
              for (std::ptrdiff_t oh = oh0; oh < oh1; ++oh) {
                const std::size_t ih = static_cast<std::size_t>(oh * s + static_cast<std::ptrdiff_t>(kh) - p);
                const std::size_t out_row = ((b * Co + o) * OH + static_cast<std::size_t>(oh)) * OW;
                const std::size_t in_row = ((b * Ci + i) * H + ih) * W;
                const std::ptrdiff_t in_col0 = ow0 * s + static_cast<std::ptrdiff_t>(kw) - p;
                fn(widx, out_row + static_cast<std::size_t>(ow0), in_row + static_cast<std::size_t>(in_col0),
                   static_cast<std::size_t>(ow1 - ow0));
              }
            }
          }
  };

  Tensor out(Shape{B, Co, OH, OW});
  {
    const double* bd = bias.value().data().data();
    double* od = out.data().data();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t o = 0; o < Co; ++o)
        std::fill_n(od + (b * Co + o) * OH * OW, OH * OW, bd[o]);
    const double* xd = X.data().data();
    const double* wd = Wt.data().data();
    if (stride == 1) {
      sweep([&](std::size_t widx, std::size_t oo, std::size_t io, std::size_t n) {
        const double wv = wd[widx];
        double* __restrict dst = od + oo;
        const double* __restrict src = xd + io;
        for (std::size_t j = 0; j < n; ++j) dst[j] += wv * src[j];
      });
    } else {
      sweep([&](std::size_t widx, std::size_t oo, std::size_t io, std::size_t n) {
        const double wv = wd[widx];
        for (std::size_t j = 0; j < n; ++j) od[oo + j] += wv * xd[io + j * stride];
      });
    }
  }

  const Var inputs[] = {x, weight, bias};
  return x.tape->record(
      "conv2d", std::move(out), inputs,
      [xi = x.id, wi = weight.id, bi = bias.id, sweep, stride, B, Co, OH, OW](Tape& t,
                                                                               std::size_t self) {
        const double* g = t.out_grad(self).data().data();
        if (Tensor* gb = t.grad_slot(bi)) {
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t o = 0; o < Co; ++o) {
              const double* row = g + (b * Co + o) * OH * OW;
              double acc = 0.0;
              for (std::size_t j = 0; j < OH * OW; ++j) acc += row[j];
              (*gb)[o] += acc;
            }
        }
        const double* xd = t.value(xi).data().data();
        const double* wd = t.value(wi).data().data();
        Tensor* gw = t.grad_slot(wi);
        Tensor* gx = t.grad_slot(xi);
        double* gwd = gw ? gw->data().data() : nullptr;
        double* gxd = gx ? gx->data().data() : nullptr;
        sweep([&](std::size_t widx, std::size_t oo, std::size_t io, std::size_t n) {
          const double* __restrict go = g + oo;
          if (gwd) {
            const double* __restrict src = xd + io;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += go[j] * src[j * stride];
            gwd[widx] += acc;
          }
          if (gxd) {
            const double wv = wd[widx];
            double* __restrict dst = gxd + io;
            for (std::size_t j = 0; j < n; ++j) dst[j * stride] += wv * go[j];
          }
        });
      });
}

// Nearest-neighbour 2x spatial upsampling of [B,C,H,W].
inline Var upsample2x(Var x) {
  detail::require_rank(x, 4, "upsample2x");
  const Tensor& X = x.value();
  const std::size_t B = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
  Tensor out(Shape{B, C, 2 * H, 2 * W});
  for (std::size_t p = 0; p < B * C; ++p)
    for (std::size_t h = 0; h < 2 * H; ++h)
      for (std::size_t w = 0; w < 2 * W; ++w)
        out[(p * 2 * H + h) * 2 * W + w] = X[(p * H + h / 2) * W + w / 2];
  const Var inputs[] = {x};
  return x.tape->record("upsample2x", std::move(out), inputs,
                        [xi = x.id, B, C, H, W](Tape& t, std::size_t self) {
                          Tensor* gx = t.grad_slot(xi);
                          const Tensor& g = t.out_grad(self);
                          for (std::size_t p = 0; p < B * C; ++p)
                            for (std::size_t h = 0; h < 2 * H; ++h)
                              for (std::size_t w = 0; w < 2 * W; ++w)
                                (*gx)[(p * H + h / 2) * W + w / 2] += g[(p * 2 * H + h) * 2 * W + w];
                        });
}

inline Var relu(Var x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  const Var inputs[] = {x};
  return x.tape->record("relu", std::move(out), inputs, [xi = x.id](Tape& t, std::size_t self) {
    Tensor* gx = t.grad_slot(xi);
    const Tensor& xv = t.value(xi);
    const Tensor& g = t.out_grad(self);
    for (std::size_t j = 0; j < g.size(); ++j)
      if (xv[j] > 0.0) (*gx)[j] += g[j];
  });
}

// 2x2 max pooling with stride 2; ties resolve to the first element in
// row-major window order.
inline Var max_pool2x2(Var x) {
  detail::require_rank(x, 4, "max_pool2x2");
  const Tensor& X = x.value();
  const std::size_t B = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
  if (H % 2 != 0 || W % 2 != 0)
    throw ShapeError("max_pool2x2: spatial dims must be even, got " + to_string(X.shape()));
  const std::size_t OH = H / 2, OW = W / 2;
  Tensor out(Shape{B, C, OH, OW});
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t p = 0; p < B * C; ++p)
    for (std::size_t oh = 0; oh < OH; ++oh)
      for (std::size_t ow = 0; ow < OW; ++ow) {
        std::size_t best = (p * H + 2 * oh) * W + 2 * ow;
        for (std::size_t dh = 0; dh < 2; ++dh)
          for (std::size_t dw = 0; dw < 2; ++dw) {
            const std::size_t idx = (p * H + 2 * oh + dh) * W + 2 * ow + dw;
            if (X[idx] > X[best]) best = idx;
          }
        const std::size_t o = (p * OH + oh) * OW + ow;
        out[o] = X[best];
        argmax[o] = best;
      }
  const Var inputs[] = {x};
  return x.tape->record("max_pool2x2", std::move(out), inputs,
                        [xi = x.id, argmax = std::move(argmax)](Tape& t, std::size_t self) {
                          Tensor* gx = t.grad_slot(xi);
                          const Tensor& g = t.out_grad(self);
                          for (std::size_t o = 0; o < g.size(); ++o) (*gx)[argmax[o]] += g[o];
                        });
}

// Inverted dropout: in train mode each element is zeroed with probability
// `rate` and survivors are scaled by 1/(1-rate). Identity otherwise.
inline Var dropout(Var x, double rate, bool train, CounterRng& rng) {
  if (!(rate >= 0.0 && rate < 1.0))
    throw ContractError("dropout: rate must lie in [0,1), got " + std::to_string(rate));
  if (!train || rate == 0.0) return x;
  const double keep = 1.0 / (1.0 - rate);
  Tensor mask(x.shape());
  for (double& m : mask.data()) m = rng.uniform() < rate ? 0.0 : keep;
  Tensor out = x.value();
  for (std::size_t j = 0; j < out.size(); ++j) out[j] *= mask[j];
  const Var inputs[] = {x};
  return x.tape->record("dropout", std::move(out), inputs,
                        [xi = x.id, mask = std::move(mask)](Tape& t, std::size_t self) {
                          Tensor* gx = t.grad_slot(xi);
                          const Tensor& g = t.out_grad(self);
                          for (std::size_t j = 0; j < g.size(); ++j) (*gx)[j] += g[j] * mask[j];
                        });
}

namespace detail {

// Calls fn(base, stride) for every (b, spatial) position of a [B,C,...]
// tensor; channel c of that position lives at base + c*stride.
template <class Fn>
void for_each_channel_fiber(const Shape& shape, Fn&& fn) {
  const std::size_t B = shape.at(0), C = shape.at(1);
  const std::size_t S = numel(shape) / (B * C);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t s = 0; s < S; ++s) fn(b * C * S + s, S, C);
}

}  // namespace detail

inline Var softmax_channel(Var x) {
  if (x.value().rank() < 2) throw ShapeError("softmax_channel: rank < 2");
  Tensor out(x.shape());
  const Tensor& X = x.value();
  detail::for_each_channel_fiber(X.shape(), [&](std::size_t base, std::size_t st, std::size_t C) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < C; ++c) m = std::max(m, X[base + c * st]);
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) z += (out[base + c * st] = std::exp(X[base + c * st] - m));
    for (std::size_t c = 0; c < C; ++c) out[base + c * st] /= z;
  });
  const Var inputs[] = {x};
  return x.tape->record("softmax_channel", std::move(out), inputs,
                        [xi = x.id](Tape& t, std::size_t self) {
                          Tensor* gx = t.grad_slot(xi);
                          const Tensor& y = t.value(self);
                          const Tensor& g = t.out_grad(self);
                          detail::for_each_channel_fiber(
                              y.shape(), [&](std::size_t base, std::size_t st, std::size_t C) {
                                double dot = 0.0;
                                for (std::size_t c = 0; c < C; ++c)
                                  dot += g[base + c * st] * y[base + c * st];
                                for (std::size_t c = 0; c < C; ++c)
                                  (*gx)[base + c * st] += y[base + c * st] * (g[base + c * st] - dot);
                              });
                        });
}

inline Var log_softmax_channel(Var x) {
  if (x.value().rank() < 2) throw ShapeError("log_softmax_channel: rank < 2");
  Tensor out(x.shape());
  const Tensor& X = x.value();
  detail::for_each_channel_fiber(X.shape(), [&](std::size_t base, std::size_t st, std::size_t C) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < C; ++c) m = std::max(m, X[base + c * st]);
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) z += std::exp(X[base + c * st] - m);
    const double lz = m + std::log(z);
    for (std::size_t c = 0; c < C; ++c) out[base + c * st] = X[base + c * st] - lz;
  });
  const Var inputs[] = {x};
  return x.tape->record("log_softmax_channel", std::move(out), inputs,
                        [xi = x.id](Tape& t, std::size_t self) {
                          Tensor* gx = t.grad_slot(xi);
                          const Tensor& y = t.value(self);
                          const Tensor& g = t.out_grad(self);
                          detail::for_each_channel_fiber(
                              y.shape(), [&](std::size_t base, std::size_t st, std::size_t C) {
                                double gs = 0.0;
                                for (std::size_t c = 0; c < C; ++c) gs += g[base + c * st];
                                for (std::size_t c = 0; c < C; ++c)
                                  (*gx)[base + c * st] += g[base + c * st] - std::exp(y[base + c * st]) * gs;
                              });
                        });
}

// Concatenates two [B,*,H,W] tensors along the channel axis.
inline Var concat_channels(Var a, Var b) {
  detail::require_rank(a, 4, "concat_channels");
  detail::require_rank(b, 4, "concat_channels");
  const Tensor& A = a.value();
  const Tensor& Bv = b.value();
  if (A.dim(0) != Bv.dim(0) || A.dim(2) != Bv.dim(2) || A.dim(3) != Bv.dim(3))
    throw ShapeError("concat_channels: " + to_string(A.shape()) + " vs " + to_string(Bv.shape()));
  const std::size_t N = A.dim(0), Ca = A.dim(1), Cb = Bv.dim(1), S = A.dim(2) * A.dim(3);
  Tensor out(Shape{N, Ca + Cb, A.dim(2), A.dim(3)});
  for (std::size_t n = 0; n < N; ++n) {
    std::copy_n(A.data().data() + n * Ca * S, Ca * S, out.data().data() + n * (Ca + Cb) * S);
    std::copy_n(Bv.data().data() + n * Cb * S, Cb * S, out.data().data() + (n * (Ca + Cb) + Ca) * S);
  }
  const Var inputs[] = {a, b};
  return a.tape->record("concat_channels", std::move(out), inputs,
                        [ai = a.id, bi = b.id, N, Ca, Cb, S](Tape& t, std::size_t self) {
                          const Tensor& g = t.out_grad(self);
                          if (Tensor* ga = t.grad_slot(ai))
                            for (std::size_t n = 0; n < N; ++n)
                              for (std::size_t j = 0; j < Ca * S; ++j)
                                (*ga)[n * Ca * S + j] += g[n * (Ca + Cb) * S + j];
                          if (Tensor* gb = t.grad_slot(bi))
                            for (std::size_t n = 0; n < N; ++n)
                              for (std::size_t j = 0; j < Cb * S; ++j)
                                (*gb)[n * Cb * S + j] += g[(n * (Ca + Cb) + Ca) * S + j];
                        });
}

inline Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t j = 0; j < out.size(); ++j) out[j] += b.value()[j];
  const Var inputs[] = {a, b};
  return a.tape->record("add", std::move(out), inputs, [ai = a.id, bi = b.id](Tape& t, std::size_t self) {
    const Tensor& g = t.out_grad(self);
    for (std::size_t in : {ai, bi})
      if (Tensor* gi = t.grad_slot(in))
        for (std::size_t j = 0; j < g.size(); ++j) (*gi)[j] += g[j];
  });
}

inline Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t j = 0; j < out.size(); ++j) out[j] -= b.value()[j];
  const Var inputs[] = {a, b};
  return a.tape->record("sub", std::move(out), inputs, [ai = a.id, bi = b.id](Tape& t, std::size_t self) {
    const Tensor& g = t.out_grad(self);
    if (Tensor* ga = t.grad_slot(ai))
      for (std::size_t j = 0; j < g.size(); ++j) (*ga)[j] += g[j];
    if (Tensor* gb = t.grad_slot(bi))
      for (std::size_t j = 0; j < g.size(); ++j) (*gb)[j] -= g[j];
  });
}

// Elementwise product.
inline Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t j = 0; j < out.size(); ++j) out[j] *= b.value()[j];
  const Var inputs[] = {a, b};
  return a.tape->record("mul", std::move(out), inputs, [ai = a.id, bi = b.id](Tape& t, std::size_t self) {
    const Tensor& g = t.out_grad(self);
    if (Tensor* ga = t.grad_slot(ai)) {
      const Tensor& bv = t.value(bi);
      for (std::size_t j = 0; j < g.size(); ++j) (*ga)[j] += g[j] * bv[j];
    }
    if (Tensor* gb = t.grad_slot(bi)) {
      const Tensor& av = t.value(ai);
      for (std::size_t j = 0; j < g.size(); ++j) (*gb)[j] += g[j] * av[j];
    }
  });
}

inline Var scale(Var x, double s) {
  Tensor out = x.value();
  for (double& v : out.data()) v *= s;
  const Var inputs[] = {x};
  return x.tape->record("scale", std::move(out), inputs, [xi = x.id, s](Tape& t, std::size_t self) {
    Tensor* gx = t.grad_slot(xi);
    const Tensor& g = t.out_grad(self);
    for (std::size_t j = 0; j < g.size(); ++j) (*gx)[j] += s * g[j];
  });
}

inline Var add_scalar(Var x, double s) {
  Tensor out = x.value();
  for (double& v : out.data()) v += s;
  const Var inputs[] = {x};
  return x.tape->record("add_scalar", std::move(out), inputs, [xi = x.id](Tape& t, std::size_t self) {
    Tensor* gx = t.grad_slot(xi);
    const Tensor& g = t.out_grad(self);
    for (std::size_t j = 0; j < g.size(); ++j) (*gx)[j] += g[j];
  });
}

inline Var square(Var x) {
  Tensor out = x.value();
  for (double& v : out.data()) v *= v;
  const Var inputs[] = {x};
  return x.tape->record("square", std::move(out), inputs, [xi = x.id](Tape& t, std::size_t self) {
    Tensor* gx = t.grad_slot(xi);
    const Tensor& xv = t.value(xi);
    const Tensor& g = t.out_grad(self);
    for (std::size_t j = 0; j < g.size(); ++j) (*gx)[j] += 2.0 * xv[j] * g[j];
  });
}

inline Var sum(Var x) {
  double acc = 0.0;
  for (double v : x.value().data()) acc += v;
  const Var inputs[] = {x};
  return x.tape->record("sum", Tensor::scalar(acc), inputs, [xi = x.id](Tape& t, std::size_t self) {
    Tensor* gx = t.grad_slot(xi);
    const double g = t.out_grad(self)[0];
    for (double& v : gx->data()) v += g;
  });
}

inline Var mean(Var x) {
  if (x.value().size() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.value().size()));
}

// Sum over the channel axis: [B,C,...] -> [B,...].
inline Var sum_channel(Var x) {
  const Shape& sh = x.shape();
  if (sh.size() < 2) throw ShapeError("sum_channel: rank < 2");
  Shape out_shape{sh[0]};
  out_shape.insert(out_shape.end(), sh.begin() + 2, sh.end());
  Tensor out(out_shape);
  const Tensor& X = x.value();
  detail::for_each_channel_fiber(sh, [&](std::size_t base, std::size_t st, std::size_t C) {
    const std::size_t b = base / (C * st), s = base % st;
    double acc = 0.0;
    for (std::size_t c = 0; c < C; ++c) acc += X[base + c * st];
    out[b * st + s] = acc;
  });
  const Var inputs[] = {x};
  return x.tape->record("sum_channel", std::move(out), inputs, [xi = x.id](Tape& t, std::size_t self) {
    Tensor* gx = t.grad_slot(xi);
    const Tensor& g = t.out_grad(self);
    detail::for_each_channel_fiber(t.value(xi).shape(),
                                   [&](std::size_t base, std::size_t st, std::size_t C) {
                                     const std::size_t b = base / (C * st), s = base % st;
                                     for (std::size_t c = 0; c < C; ++c) (*gx)[base + c * st] += g[b * st + s];
                                   });
  });
}

// Per-position value of the labelled channel: [B,C,H,W] -> [B,H,W].
inline Var pick_channel(Var x, std::span<const std::uint8_t> labels) {
  detail::require_rank(x, 4, "pick_channel");
  const Tensor& X = x.value();
  const std::size_t B = X.dim(0), C = X.dim(1), S = X.dim(2) * X.dim(3);
  if (labels.size() != B * S)
    throw ShapeError("pick_channel: " + std::to_string(labels.size()) + " labels for " +
                     to_string(X.shape()));
  std::vector<std::uint8_t> lab(labels.begin(), labels.end());
  for (std::uint8_t l : lab)
    if (l >= C)
      throw ContractError("label id " + std::to_string(l) + " >= num classes " + std::to_string(C));
  Tensor out(Shape{B, X.dim(2), X.dim(3)});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t s = 0; s < S; ++s) out[b * S + s] = X[(b * C + lab[b * S + s]) * S + s];
  const Var inputs[] = {x};
  return x.tape->record("pick_channel", std::move(out), inputs,
                        [xi = x.id, lab = std::move(lab), B, C, S](Tape& t, std::size_t self) {
                          Tensor* gx = t.grad_slot(xi);
                          const Tensor& g = t.out_grad(self);
                          for (std::size_t b = 0; b < B; ++b)
                            for (std::size_t s = 0; s < S; ++s)
                              (*gx)[(b * C + lab[b * S + s]) * S + s] += g[b * S + s];
                        });
}

// Mean over all non-batch axes: [B,...] -> [B].
inline Var mean_per_image(Var x) {
  const Shape& sh = x.shape();
  if (sh.empty()) throw ShapeError("mean_per_image: scalar input");
  const std::size_t B = sh[0], N = x.value().size() / B;
  Tensor out(Shape{B});
  for (std::size_t b = 0; b < B; ++b) {
    double acc = 0.0;
    for (std::size_t j = 0; j < N; ++j) acc += x.value()[b * N + j];
    out[b] = acc / static_cast<double>(N);
  }
  const Var inputs[] = {x};
  return x.tape->record("mean_per_image", std::move(out), inputs,
                        [xi = x.id, B, N](Tape& t, std::size_t self) {
                          Tensor* gx = t.grad_slot(xi);
                          const Tensor& g = t.out_grad(self);
                          for (std::size_t b = 0; b < B; ++b)
                            for (std::size_t j = 0; j < N; ++j)
                              (*gx)[b * N + j] += g[b] / static_cast<double>(N);
                        });
}

}  // namespace ops
}  // namespace pint
