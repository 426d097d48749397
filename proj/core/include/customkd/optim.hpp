#pragma once

#include <cstddef>
#include <vector>

#include "customkd/tensor.hpp"

namespace customkd {

struct SgdState {
  double learning_rate = 0.05;
  double momentum = 0.9;
  std::vector<std::vector<double>> velocity;  // one buffer per tracked parameter
};

/// SGD with heavy-ball momentum: v <- m v + g; p <- p - lr v.
class Sgd {
 public:
  Sgd(std::vector<Tensor> params, double learning_rate, double momentum = 0.9);

  /// Applies one update and clears the gradients. Every tracked parameter
  /// must carry a gradient (ContractViolation otherwise).
  void step();
  void zero_grad();

  const SgdState& state() const { return state_; }
  const std::vector<Tensor>& params() const { return params_; }
  void set_learning_rate(double lr) { state_.learning_rate = lr; }

 private:
  std::vector<Tensor> params_;
  SgdState state_;
};

}  // namespace customkd
