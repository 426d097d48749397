#include "customkd/tensor.hpp"

#include <cstring>
#include <numeric>
#include <sstream>

#include "customkd/errors.hpp"

namespace customkd {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kDetach: return "detach";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kRelu: return "relu";
    case OpKind::kLog: return "log";
    case OpKind::kExp: return "exp";
    case OpKind::kSquare: return "square";
    case OpKind::kScale: return "scale";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLogSoftmax: return "log_softmax";
    case OpKind::kPick: return "pick";
    case OpKind::kConcatRows: return "concat_rows";
    case OpKind::kBatchNorm: return "batch_norm";
  }
  return "unknown";
}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape));
  }
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  check_shape(shape);
  auto n = shape_size(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  check_shape(shape);
  if (shape_size(shape) != values.size()) {
    throw DimensionError("shape " + shape_string(shape) + " does not match " + std::to_string(values.size()) +
                         " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) { return from({}, {value}); }

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  auto n = values.size();
  return from({n}, std::move(values), requires_grad);
}

Tensor Tensor::matrix(const std::vector<std::vector<double>>& rows, bool requires_grad) {
  if (rows.empty()) throw DimensionError("matrix literal needs at least one row");
  std::vector<double> flat;
  for (const auto& r : rows) {
    if (r.size() != rows.front().size()) throw DimensionError("ragged matrix literal");
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return from({rows.size(), rows.front().size()}, std::move(flat), requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->values.size(); }

std::size_t Tensor::rows() const {
  if (rank() != 2) throw DimensionError("expected a matrix, got " + shape_string(shape()));
  return shape()[0];
}

std::size_t Tensor::cols() const {
  if (rank() == 1) return shape()[0];
  if (rank() != 2) throw DimensionError("expected a matrix, got " + shape_string(shape()));
  return shape()[1];
}

std::span<const double> Tensor::values() const { return node_->values; }

std::span<double> Tensor::mutable_values() {
  if (node_->op != OpKind::kLeaf) throw ContractViolation("only leaf tensors are writable");
  return node_->values;
}

double Tensor::item() const {
  if (size() != 1) throw ContractViolation("item() on tensor of shape " + shape_string(shape()));
  return node_->values[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (node_->op != OpKind::kLeaf) throw ContractViolation("requires_grad can only be toggled on leaves");
  node_->requires_grad = on;
}

bool Tensor::has_grad() const { return !node_->grad.empty(); }
std::span<const double> Tensor::grad() const { return node_->grad; }
void Tensor::clear_grad() { node_->grad.clear(); }
OpKind Tensor::op() const { return node_->op; }

Tensor Tensor::detach() const {
  auto node = std::make_shared<detail::Node>();
  node->shape = node_->shape;
  node->values = node_->values;
  node->op = OpKind::kDetach;
  return Tensor(std::move(node));
}

Tensor Tensor::clone() const {
  auto node = std::make_shared<detail::Node>();
  node->shape = node_->shape;
  node->values = node_->values;
  node->requires_grad = node_->requires_grad;
  return Tensor(std::move(node));
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  auto va = a.values();
  auto vb = b.values();
  return std::memcmp(va.data(), vb.data(), va.size() * sizeof(double)) == 0;
}

}  // namespace customkd
