#pragma once

#include <cstddef>
#include <vector>

#include "customkd/tensor.hpp"

namespace customkd {

/// Topologically ordered view of the graph that produced a tensor.
class ComputeGraph {
 public:
  struct Record {
    OpKind op;
    std::vector<std::size_t> inputs;  // indices into records(), always < own index
    Tensor output;
  };

  /// Collects every ancestor of `root` (detached tensors are cut points).
  static ComputeGraph trace(const Tensor& root);

  const std::vector<Record>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  std::vector<OpKind> op_sequence() const;
  bool contains(OpKind op) const;

 private:
  std::vector<Record> records_;
};

/// Reverse-mode pass: accumulates d(loss)/d(t) into every requires_grad leaf
/// reachable from `loss`. Gradients add up across fan-out and across calls
/// until cleared.
void backward(const Tensor& loss, const ComputeGraph& graph);
void backward(const Tensor& loss);

}  // namespace customkd
