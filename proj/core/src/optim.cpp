#include "fits/optim.hpp"

#include <cmath>

namespace fits {

void Adam::step(ParamStore& params) {
  ++step_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (const auto& name : params.names()) {
    auto& e = params.at(name);
    Tensor& m = m_.try_emplace(name, Tensor(e.value.shape)).first->second;
    Tensor& v = v_.try_emplace(name, Tensor(e.value.shape)).first->second;
    for (std::size_t i = 0; i < e.value.data.size(); ++i) {
      double g = e.grad.data[i];
      m.data[i] = cfg_.beta1 * m.data[i] + (1.0 - cfg_.beta1) * g;
      v.data[i] = cfg_.beta2 * v.data[i] + (1.0 - cfg_.beta2) * g * g;
      double mhat = m.data[i] / bc1;
      double vhat = v.data[i] / bc2;
      e.value.data[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

}  // namespace fits
