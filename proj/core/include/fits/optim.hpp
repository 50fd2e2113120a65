#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>

#include "fits/autograd.hpp"

namespace fits {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard Adam with bias correction over a ParamStore.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(ParamStore& params);

  std::int64_t step_count() const { return step_; }
  const AdamConfig& config() const { return cfg_; }

  // exposed for checkpointing
  std::unordered_map<std::string, Tensor>& first_moments() { return m_; }
  std::unordered_map<std::string, Tensor>& second_moments() { return v_; }
  void set_step_count(std::int64_t s) { step_ = s; }

 private:
  AdamConfig cfg_;
  std::int64_t step_ = 0;
  std::unordered_map<std::string, Tensor> m_;
  std::unordered_map<std::string, Tensor> v_;
};

}  // namespace fits
