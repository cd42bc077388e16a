#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "pint/errors.hpp"
#include "pint/parameters.hpp"

namespace pint {

// SGD with heavy-ball momentum and L2 weight decay folded into the gradient:
//   v <- momentum * v + grad + weight_decay * theta
//   theta <- theta - lr * v
class SgdOptimizer {
 public:
  SgdOptimizer(double learning_rate, double momentum, double weight_decay)
      : lr_(learning_rate), momentum_(momentum), weight_decay_(weight_decay) {
    if (!(learning_rate > 0.0)) throw ContractError("sgd: learning rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ContractError("sgd: momentum must lie in [0,1)");
    if (!(weight_decay >= 0.0)) throw ContractError("sgd: weight decay must be nonnegative");
  }

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) {
    if (!(lr > 0.0)) throw ContractError("sgd: learning rate must be positive");
    lr_ = lr;
  }
  double momentum() const { return momentum_; }
  double weight_decay() const { return weight_decay_; }

  // Applies one update and zeroes the gradients.
  void step(ParameterSet& params) {
    if (velocity_.empty()) {
      for (const auto& p : params) velocity_.add(p.name, Tensor::zeros_like(p.value));
    } else if (!velocity_.aligned_with(params)) {
      throw ContractError("sgd: parameter set does not match velocity buffers");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter& p = params[i];
      if (p.grad.shape() != p.value.shape())
        throw ContractError("sgd: missing gradient for '" + p.name + "'");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter& p = params[i];
      Tensor& v = velocity_[i].value;
      for (std::size_t j = 0; j < v.size(); ++j) {
        v[j] = momentum_ * v[j] + p.grad[j] + weight_decay_ * p.value[j];
        p.value[j] -= lr_ * v[j];
      }
      p.grad.fill(0.0);
    }
  }

  // Velocity buffers, named after their parameters; empty before the first step.
  const ParameterSet& velocity() const { return velocity_; }
  void set_velocity(ParameterSet v) { velocity_ = std::move(v); }

 private:
  double lr_;
  double momentum_;
  double weight_decay_;
  ParameterSet velocity_;
};

}  // namespace pint
