#include "customkd/optim.hpp"

#include "customkd/errors.hpp"

namespace customkd {

Sgd::Sgd(std::vector<Tensor> params, double learning_rate, double momentum) : params_(std::move(params)) {
  if (!(learning_rate >= 0.0)) throw ContractViolation("learning rate must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ContractViolation("momentum must lie in [0, 1)");
  state_.learning_rate = learning_rate;
  state_.momentum = momentum;
  for (const auto& p : params_) {
    if (!p.is_leaf()) throw ContractViolation("optimizer parameters must be leaf tensors");
    state_.velocity.emplace_back(p.size(), 0.0);
  }
}

void Sgd::step() {
  for (const auto& p : params_) {
    if (!p.has_grad()) throw ContractViolation("sgd step: tracked parameter has no gradient");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& v = state_.velocity[i];
    auto values = params_[i].mutable_values();
    auto g = params_[i].grad();
    for (std::size_t j = 0; j < values.size(); ++j) {
      v[j] = state_.momentum * v[j] + g[j];
      values[j] -= state_.learning_rate * v[j];
    }
  }
  zero_grad();
}

void Sgd::zero_grad() {
  for (auto& p : params_) p.clear_grad();
}

}  // namespace customkd
