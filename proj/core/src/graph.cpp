#include "customkd/graph.hpp"

#include <algorithm>
#include <unordered_map>
#include <utility>

#include "customkd/errors.hpp"

namespace customkd {

ComputeGraph ComputeGraph::trace(const Tensor& root) {
  ComputeGraph g;
  if (!root.defined()) return g;
  std::unordered_map<const detail::Node*, std::size_t> index;
  // Iterative post-order DFS; inputs are emitted before the node that uses them.
  std::vector<std::pair<std::shared_ptr<detail::Node>, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (index.count(node.get())) {
      stack.pop_back();
      continue;
    }
    if (next < node->inputs.size()) {
      auto child = node->inputs[next++];
      if (!index.count(child.get())) stack.emplace_back(std::move(child), 0);
      continue;
    }
    Record rec{node->op, {}, Tensor(node)};
    for (const auto& in : node->inputs) rec.inputs.push_back(index.at(in.get()));
    index.emplace(node.get(), g.records_.size());
    g.records_.push_back(std::move(rec));
    stack.pop_back();
  }
  return g;
}

std::vector<OpKind> ComputeGraph::op_sequence() const {
  std::vector<OpKind> ops;
  ops.reserve(records_.size());
  for (const auto& r : records_) ops.push_back(r.op);
  return ops;
}

bool ComputeGraph::contains(OpKind op) const {
  return std::any_of(records_.begin(), records_.end(), [op](const Record& r) { return r.op == op; });
}

void backward(const Tensor& loss, const ComputeGraph& graph) {
  if (loss.size() != 1) throw ContractViolation("backward needs a scalar loss, got " + shape_string(loss.shape()));
  if (graph.size() == 0 || !graph.records().back().output.same_storage(loss)) {
    throw ContractViolation("graph was not traced from this loss");
  }
  if (!loss.requires_grad()) return;
  const auto& recs = graph.records();
  // Interior gradients are scratch space for this pass only.
  for (const auto& r : recs) {
    if (!r.output.is_leaf()) r.output.node()->grad.clear();
  }
  loss.node()->accumulate(0, 1.0);
  for (auto it = recs.rbegin(); it != recs.rend(); ++it) {
    auto& node = *it->output.node();
    if (node.backward && !node.grad.empty()) node.backward(node);
  }
  for (const auto& r : recs) {
    if (!r.output.is_leaf()) r.output.node()->grad.clear();
  }
}

void backward(const Tensor& loss) { backward(loss, ComputeGraph::trace(loss)); }

}  // namespace customkd
