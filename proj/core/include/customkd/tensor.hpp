#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace customkd {

using Shape = std::vector<std::size_t>;

enum class OpKind {
  kLeaf,
  kDetach,
  kMatMul,
  kAdd,
  kSub,
  kMul,
  kRelu,
  kLog,
  kExp,
  kSquare,
  kScale,
  kSum,
  kMean,
  kSoftmax,
  kLogSoftmax,
  kPick,
  kConcatRows,
  kBatchNorm,
};

std::string_view op_name(OpKind kind);

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty means "no gradient recorded"
  bool requires_grad = false;
  OpKind op = OpKind::kLeaf;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward;

  void accumulate(std::size_t i, double g) {
    if (grad.empty()) grad.assign(values.size(), 0.0);
    grad[i] += g;
  }
};

}  // namespace detail

/// Handle to a node of the dense autodiff graph.
///
/// Copies share storage: copying a parameter tensor yields a second handle onto
/// the same values, which is how a classifier head is shared between two
/// pipelines. Use `clone()` for an independent copy. Values of non-leaf tensors
/// are never modified after construction; leaves are mutated only by optimizers
/// and initializers between graph constructions.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value);
  /// Row vector literal, shape [n].
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  /// Row-major matrix literal.
  static Tensor matrix(const std::vector<std::vector<double>>& rows, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const;
  /// Writable view of a leaf's storage. Throws on non-leaf tensors.
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t i) const { return values()[i]; }
  double at(std::size_t r, std::size_t c) const { return values()[r * cols() + c]; }

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const double> grad() const;
  void clear_grad();

  OpKind op() const;
  bool is_leaf() const { return op() == OpKind::kLeaf; }

  /// Stop-gradient: a leaf copy with no ancestry and no gradient tracking.
  Tensor detach() const;
  /// Deep copy of a leaf, keeping its requires_grad flag.
  Tensor clone() const;

  /// Identity of the underlying node.
  const void* id() const { return node_.get(); }
  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  std::shared_ptr<detail::Node> node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Bitwise equality of shapes and values.
bool bitwise_equal(const Tensor& a, const Tensor& b);

}  // namespace customkd
