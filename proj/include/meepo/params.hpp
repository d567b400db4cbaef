#pragma once
// Named parameter registry shared by the model builder and the optimizer.
// Values persist across steps; tape leaves are rebound every forward pass.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "meepo/errors.hpp"
#include "meepo/tape.hpp"
#include "meepo/tensor.hpp"

namespace meepo::model {

struct Param {
  num::Tensor<double> value;
  num::Tensor<double> grad;  // accumulated across scenes within a step
  num::Tensor<double> m, v;  // Adam moments, sized on first optimizer step
  bool block_scaled = false; // subject to the block learning-rate scaler
};

class ParamStore {
 public:
  Param& add(const std::string& name, num::Tensor<double> value, bool block_scaled = false) {
    if (items_.count(name)) throw ParameterError("duplicate parameter name: " + name);
    auto& p = items_[name];
    p.grad = num::Tensor<double>::zeros(value.shape);
    p.value = std::move(value);
    p.block_scaled = block_scaled;
    return p;
  }

  Param& at(const std::string& name) {
    auto it = items_.find(name);
    if (it == items_.end()) throw ParameterError("unknown parameter: " + name);
    return it->second;
  }
  const Param& at(const std::string& name) const {
    auto it = items_.find(name);
    if (it == items_.end()) throw ParameterError("unknown parameter: " + name);
    return it->second;
  }
  bool has(const std::string& name) const { return items_.count(name) != 0; }

  std::map<std::string, Param>& items() { return items_; }
  const std::map<std::string, Param>& items() const { return items_; }

  void zero_grad() {
    for (auto& [name, p] : items_) std::fill(p.grad.data.begin(), p.grad.data.end(), 0.0);
  }

  std::int64_t parameter_count() const {
    std::int64_t n = 0;
    for (const auto& [name, p] : items_) n += p.value.numel();
    return n;
  }

 private:
  std::map<std::string, Param> items_;
};

// Binds store parameters as tape leaves for one forward pass and harvests the
// resulting gradients back into the store afterwards.
class Binder {
 public:
  Binder(num::Tape<double>& tape, ParamStore& store, bool requires_grad)
      : tape_(&tape), store_(&store), requires_grad_(requires_grad) {}

  num::Var<double> operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    auto var = num::make_leaf(*tape_, store_->at(name).value, requires_grad_);
    bound_.emplace(name, var);
    return var;
  }

  // Accumulates (+=) tape gradients into store.grad. Call after backward().
  void harvest() {
    for (auto& [name, var] : bound_) {
      const auto& g = tape_->grad(var.id);
      auto& dst = store_->at(name).grad;
      for (std::int64_t i = 0; i < dst.numel(); ++i) dst[i] += g[i];
    }
  }

 private:
  num::Tape<double>* tape_;
  ParamStore* store_;
  bool requires_grad_;
  std::map<std::string, num::Var<double>> bound_;
};

}  // namespace meepo::model
