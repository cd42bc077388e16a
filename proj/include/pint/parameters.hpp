#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pint/autodiff.hpp"
#include "pint/errors.hpp"
#include "pint/tensor.hpp"

namespace pint {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;  // empty until populated by a backward pass
};

// Ordered, name-addressable collection of trainable tensors.
class ParameterSet {
 public:
  Parameter& add(std::string name, Tensor value) {
    if (find(name)) throw ContractError("duplicate parameter '" + name + "'");
    params_.push_back(Parameter{std::move(name), std::move(value), Tensor{}});
    return params_.back();
  }

  std::size_t size() const { return params_.size(); }
  bool empty() const { return params_.empty(); }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  const Parameter* find(std::string_view name) const {
    for (const auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }
  Parameter* find(std::string_view name) {
    for (auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  // Places every parameter on the tape as a leaf.
  std::vector<Var> bind(Tape& tape, bool requires_grad) const {
    std::vector<Var> vars;
    vars.reserve(params_.size());
    for (const auto& p : params_) vars.push_back(tape.leaf(p.value, requires_grad));
    return vars;
  }

  // Copies tape gradients of previously bound leaves into the grad fields.
  void collect_grads(const Tape& tape, const std::vector<Var>& vars) {
    if (vars.size() != params_.size()) throw ContractError("collect_grads: binding size mismatch");
    for (std::size_t i = 0; i < params_.size(); ++i) params_[i].grad = tape.grad(vars[i]);
  }

  void zero_grads() {
    for (auto& p : params_) p.grad = Tensor::zeros_like(p.value);
  }

  // Same names in the same order with the same shapes.
  bool aligned_with(const ParameterSet& other) const {
    if (other.size() != size()) return false;
    for (std::size_t i = 0; i < size(); ++i)
      if (params_[i].name != other[i].name || params_[i].value.shape() != other[i].value.shape())
        return false;
    return true;
  }

  bool values_equal(const ParameterSet& other) const {
    if (!aligned_with(other)) return false;
    for (std::size_t i = 0; i < size(); ++i)
      if (params_[i].value.storage() != other[i].value.storage()) return false;
    return true;
  }

 private:
  std::vector<Parameter> params_;
};

}  // namespace pint
