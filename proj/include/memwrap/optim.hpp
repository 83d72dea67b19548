#pragma once

#include <vector>

#include "memwrap/tensor.hpp"

namespace memwrap {

// SGD with heavy-ball momentum: b <- momentum*b + g; p <- p - lr*b.
// Grads are zeroed after every step.
class Sgd {
 public:
  explicit Sgd(double momentum = 0.5);

  void step(ParameterSet& params, double lr);
  double momentum() const { return momentum_; }

 private:
  double momentum_;
  std::vector<std::vector<double>> buffers_;
};

// One-shot form; momentum buffers live in `state`.
void sgd_step(ParameterSet& params, double lr, double momentum, Sgd& state);

}  // namespace memwrap
