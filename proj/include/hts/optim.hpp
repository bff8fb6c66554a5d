#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "hts/params.hpp"

namespace hts {

// Adam with L2 weight decay folded into the gradient. Only parameters that
// received a gradient in the last backward pass are updated; each keeps its
// own step count.
class Adam {
 public:
  struct Slot {
    std::vector<double> m;
    std::vector<double> v;
    std::size_t steps = 0;
  };

  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;

  // `group` namespaces parameter names so several stores can share one
  // optimizer.
  void step(const std::string& group, ParamStore& store, double lr) {
    for (auto& [name, param] : store.params()) {
      if (!param.reached() || !param.has_grad()) continue;
      Slot& slot = slots_[group + "/" + name];
      if (slot.m.empty()) {
        slot.m.assign(param.numel(), 0.0);
        slot.v.assign(param.numel(), 0.0);
      }
      ++slot.steps;
      const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(slot.steps));
      const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(slot.steps));
      auto value = param.mutable_data();
      const auto grad = param.grad();
      for (std::size_t i = 0; i < value.size(); ++i) {
        const double g = grad[i] + weight_decay * value[i];
        slot.m[i] = beta1 * slot.m[i] + (1.0 - beta1) * g;
        slot.v[i] = beta2 * slot.v[i] + (1.0 - beta2) * g * g;
        const double m_hat = slot.m[i] / bc1;
        const double v_hat = slot.v[i] / bc2;
        value[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
      }
    }
  }

  const std::map<std::string, Slot>& slots() const { return slots_; }
  std::map<std::string, Slot>& slots() { return slots_; }

 private:
  std::map<std::string, Slot> slots_;
};

}  // namespace hts
