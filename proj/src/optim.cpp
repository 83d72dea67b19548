#include "memwrap/optim.hpp"

#include <string>

#include "memwrap/errors.hpp"

namespace memwrap {

Sgd::Sgd(double momentum) : momentum_(momentum) {
  if (momentum < 0.0 || momentum >= 1.0) {
    throw ConfigError("sgd momentum must lie in [0, 1), got " + std::to_string(momentum));
  }
}

void Sgd::step(ParameterSet& params, double lr) {
  if (!(lr > 0.0)) throw ConfigError("sgd learning rate must be > 0, got " + std::to_string(lr));
  if (buffers_.empty()) {
    for (const auto& [name, t] : params) buffers_.emplace_back(t.size(), 0.0);
  }
  if (buffers_.size() != params.size()) throw ContractError("sgd: parameter set changed shape");
  std::size_t k = 0;
  for (auto& [name, t] : params) {
    auto& buf = buffers_[k++];
    auto g = t.mutable_grad();
    auto p = t.mutable_values();
    for (std::size_t i = 0; i < p.size(); ++i) {
      buf[i] = momentum_ * buf[i] + g[i];
      p[i] -= lr * buf[i];
      g[i] = 0.0;
    }
  }
}

void sgd_step(ParameterSet& params, double lr, double momentum, Sgd& state) {
  if (state.momentum() != momentum) throw ContractError("sgd: momentum differs from state");
  state.step(params, lr);
}

}  // namespace memwrap
