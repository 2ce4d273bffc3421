#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "amcseg/network.hpp"

namespace amcseg {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam update for a single parameter array. `t` is the
// 1-based step count including this step.
template <class T>
void adam_step(std::span<T> param, std::span<const T> grad, std::span<T> m,
               std::span<T> v, long t, const AdamConfig& cfg);

// Moment state for a whole parameter list.
template <class T>
class Adam {
 public:
  Adam(const std::vector<NamedParam<T>>& params, AdamConfig cfg);

  // Applies one update from the gradients currently stored on the parameters.
  void step(std::vector<NamedParam<T>>& params);
  long steps_taken() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::vector<std::vector<T>> m_, v_;
  long t_ = 0;
};

}  // namespace amcseg
