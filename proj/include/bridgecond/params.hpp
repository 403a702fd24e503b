#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "bridgecond/rng.hpp"
#include "bridgecond/tensor.hpp"

namespace bridgecond {

// Owns all model weights; iteration order is registration order, which is
// deterministic per config and defines the checkpoint record order.
class ParameterStore {
 public:
  Parameter* create(const std::string& name, Tensor t, bool frozen = false) {
    if (by_name_.count(name))
      throw std::invalid_argument("ParameterStore: duplicate parameter '" + name + "'");
    owned_.push_back(std::make_unique<Parameter>(name, std::move(t), frozen));
    Parameter* p = owned_.back().get();
    by_name_[name] = p;
    return p;
  }

  Parameter* find(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
  }

  const std::vector<std::unique_ptr<Parameter>>& all() const { return owned_; }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& p : owned_) n += p->tensor.size();
    return n;
  }

  void zero_grads() {
    for (auto& p : owned_) p->tensor.zero_grad();
  }

 private:
  std::vector<std::unique_ptr<Parameter>> owned_;
  std::unordered_map<std::string, Parameter*> by_name_;
};

inline Tensor uniform_init(std::vector<int> shape, Rng& rng, double scale) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-scale, scale);
  return t;
}

// uniform +-1/sqrt(fan_in)
inline Tensor linear_init(int d_out, int d_in, Rng& rng) {
  return uniform_init({d_out, d_in}, rng, 1.0 / std::sqrt(static_cast<double>(d_in)));
}

inline Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

inline Tensor ones(std::vector<int> shape) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = 1.0;
  return t;
}

}  // namespace bridgecond
