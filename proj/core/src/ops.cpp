#include "customkd/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "customkd/errors.hpp"

namespace customkd {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

namespace {

Tensor make_result(OpKind op, Shape shape, std::vector<double> values, std::vector<NodePtr> inputs,
                   std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->op = op;
  node->requires_grad = std::any_of(inputs.begin(), inputs.end(), [](const NodePtr& n) { return n->requires_grad; });
  node->inputs = std::move(inputs);
  if (node->requires_grad) node->backward = std::move(backward);
  return Tensor(std::move(node));
}

std::vector<double>& grad_buffer(Node& n) {
  if (n.grad.empty()) n.grad.assign(n.values.size(), 0.0);
  return n.grad;
}

void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw DimensionError(std::string(what) + " expects a matrix, got " + shape_string(t.shape()));
}

enum class Broadcast { kNone, kRows };

Broadcast binary_layout(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() == b.shape()) return Broadcast::kNone;
  bool b_is_row = (b.rank() == 1) || (b.rank() == 2 && b.shape()[0] == 1);
  if (a.rank() == 2 && b_is_row && b.size() == a.shape()[1]) return Broadcast::kRows;
  throw DimensionError(std::string(what) + ": incompatible shapes " + shape_string(a.shape()) + " and " +
                       shape_string(b.shape()));
}

template <typename Fwd, typename DA, typename DB>
Tensor binary(OpKind op, const Tensor& a, const Tensor& b, const char* what, Fwd fwd, DA da, DB db) {
  auto layout = binary_layout(a, b, what);
  auto av = a.values();
  auto bv = b.values();
  const std::size_t n = av.size();
  const std::size_t width = layout == Broadcast::kRows ? bv.size() : n;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i], bv[i % width]);
  return make_result(op, a.shape(), std::move(out), {a.node(), b.node()}, [width, da, db](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    const std::size_t n = self.values.size();
    if (na.requires_grad) {
      auto& g = grad_buffer(na);
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * da(na.values[i], nb.values[i % width]);
    }
    if (nb.requires_grad) {
      auto& g = grad_buffer(nb);
      for (std::size_t i = 0; i < n; ++i) g[i % width] += self.grad[i] * db(na.values[i], nb.values[i % width]);
    }
  });
}

template <typename Fwd, typename Deriv>
Tensor unary(OpKind op, const Tensor& a, Fwd fwd, Deriv deriv) {
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  return make_result(op, a.shape(), std::move(out), {a.node()}, [deriv](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = grad_buffer(in);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * deriv(in.values[i], self.values[i]);
  });
}

void check_rows_for_softmax(const Tensor& logits, const char* what) {
  require_matrix(logits, what);
  if (logits.cols() < 2) throw DimensionError(std::string(what) + " needs at least 2 classes");
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = av[i * k + p];
      const double* brow = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += s * brow[j];
    }
  }
  return make_result(OpKind::kMatMul, {m, n}, std::move(out), {a.node(), b.node()}, [m, k, n](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    const double* dc = self.grad.data();
    if (na.requires_grad) {
      auto& ga = grad_buffer(na);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = nb.values.data() + p * n;
          const double* dcrow = dc + i * n;
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += dcrow[j] * brow[j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (nb.requires_grad) {
      auto& gb = grad_buffer(nb);
      for (std::size_t i = 0; i < m; ++i) {
        const double* dcrow = dc + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double s = na.values[i * k + p];
          double* grow = gb.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) grow[j] += s * dcrow[j];
        }
      }
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      OpKind::kAdd, a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      OpKind::kSub, a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      OpKind::kMul, a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor relu(const Tensor& a) {
  return unary(
      OpKind::kRelu, a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor log(const Tensor& a) {
  for (double v : a.values()) {
    if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
  }
  return unary(
      OpKind::kLog, a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor exp(const Tensor& a) {
  return unary(
      OpKind::kExp, a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor square(const Tensor& a) {
  return unary(
      OpKind::kSquare, a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      OpKind::kScale, a, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return make_result(OpKind::kSum, {}, {s}, {a.node()}, [](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = grad_buffer(in);
    for (auto& x : g) x += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  const double n = static_cast<double>(a.size());
  double s = 0.0;
  for (double v : a.values()) s += v;
  return make_result(OpKind::kMean, {}, {s / n}, {a.node()}, [n](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = grad_buffer(in);
    for (auto& x : g) x += self.grad[0] / n;
  });
}

Tensor softmax(const Tensor& logits) {
  check_rows_for_softmax(logits, "softmax");
  const std::size_t rows = logits.rows(), cols = logits.cols();
  auto lv = logits.values();
  std::vector<double> out(lv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = lv.data() + r * cols;
    double* o = out.data() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += (o[c] = std::exp(in[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) o[c] /= z;
  }
  return make_result(OpKind::kSoftmax, logits.shape(), std::move(out), {logits.node()}, [rows, cols](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = grad_buffer(in);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* p = self.values.data() + r * cols;
      const double* dy = self.grad.data() + r * cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += dy[c] * p[c];
      for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += p[c] * (dy[c] - dot);
    }
  });
}

Tensor log_softmax(const Tensor& logits) {
  check_rows_for_softmax(logits, "log_softmax");
  const std::size_t rows = logits.rows(), cols = logits.cols();
  auto lv = logits.values();
  std::vector<double> out(lv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = lv.data() + r * cols;
    double* o = out.data() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(in[c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) o[c] = in[c] - lse;
  }
  return make_result(OpKind::kLogSoftmax, logits.shape(), std::move(out), {logits.node()},
                     [rows, cols](Node& self) {
                       Node& in = *self.inputs[0];
                       if (!in.requires_grad) return;
                       auto& g = grad_buffer(in);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* ls = self.values.data() + r * cols;
                         const double* dy = self.grad.data() + r * cols;
                         double total = 0.0;
                         for (std::size_t c = 0; c < cols; ++c) total += dy[c];
                         for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += dy[c] - std::exp(ls[c]) * total;
                       }
                     });
}

Tensor pick(const Tensor& a, std::span<const int> index) {
  require_matrix(a, "pick");
  const std::size_t rows = a.rows(), cols = a.cols();
  if (index.size() != rows) {
    throw DimensionError("pick: " + std::to_string(index.size()) + " indices for " + std::to_string(rows) + " rows");
  }
  std::vector<std::size_t> flat(rows);
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    if (index[r] < 0 || static_cast<std::size_t>(index[r]) >= cols) {
      throw DomainError("pick: index " + std::to_string(index[r]) + " outside [0, " + std::to_string(cols) + ")");
    }
    flat[r] = r * cols + static_cast<std::size_t>(index[r]);
    out[r] = a.values()[flat[r]];
  }
  return make_result(OpKind::kPick, {rows}, std::move(out), {a.node()}, [flat = std::move(flat)](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = grad_buffer(in);
    for (std::size_t r = 0; r < flat.size(); ++r) g[flat[r]] += self.grad[r];
  });
}

Tensor concat_rows(const Tensor& top, const Tensor& bottom) {
  require_matrix(top, "concat_rows");
  require_matrix(bottom, "concat_rows");
  if (top.cols() != bottom.cols()) {
    throw DimensionError("concat_rows: column mismatch " + shape_string(top.shape()) + " and " +
                         shape_string(bottom.shape()));
  }
  std::vector<double> out(top.values().begin(), top.values().end());
  out.insert(out.end(), bottom.values().begin(), bottom.values().end());
  const std::size_t split = top.size();
  return make_result(OpKind::kConcatRows, {top.rows() + bottom.rows(), top.cols()}, std::move(out),
                     {top.node(), bottom.node()}, [split](Node& self) {
                       Node& a = *self.inputs[0];
                       Node& b = *self.inputs[1];
                       if (a.requires_grad) {
                         auto& g = grad_buffer(a);
                         for (std::size_t i = 0; i < split; ++i) g[i] += self.grad[i];
                       }
                       if (b.requires_grad) {
                         auto& g = grad_buffer(b);
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[split + i];
                       }
                     });
}

BatchNormState BatchNormState::create(std::size_t dim) {
  BatchNormState s;
  s.gamma = Tensor::full({dim}, 1.0, true);
  s.beta = Tensor::zeros({dim}, true);
  s.running_mean.assign(dim, 0.0);
  s.running_var.assign(dim, 1.0);
  return s;
}

BatchNormState BatchNormState::clone() const {
  BatchNormState s = *this;
  s.gamma = gamma.clone();
  s.beta = beta.clone();
  return s;
}

Tensor batch_norm(const Tensor& x, BatchNormState& state, NormMode mode) {
  require_matrix(x, "batch_norm");
  const std::size_t n = x.rows(), d = x.cols();
  if (d != state.dim() || state.gamma.size() != d || state.beta.size() != d) {
    throw DimensionError("batch_norm: input " + shape_string(x.shape()) + " vs state of width " +
                         std::to_string(state.dim()));
  }
  const bool batch_stats = mode != NormMode::kEval;
  if (batch_stats && n < 2) throw DegenerateInput("batch_norm: training mode needs a batch of at least 2 rows");

  auto xv = x.values();
  std::vector<double> mu(d, 0.0), var(d, 0.0);
  if (batch_stats) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) mu[j] += xv[i * d + j];
    for (auto& m : mu) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const double c = xv[i * d + j] - mu[j];
        var[j] += c * c;
      }
    for (auto& v : var) v /= static_cast<double>(n);
    if (mode == NormMode::kTrain) {
      for (std::size_t j = 0; j < d; ++j) {
        state.running_mean[j] = (1.0 - state.momentum) * state.running_mean[j] + state.momentum * mu[j];
        state.running_var[j] = (1.0 - state.momentum) * state.running_var[j] + state.momentum * var[j];
      }
    }
  } else {
    mu = state.running_mean;
    var = state.running_var;
  }

  std::vector<double> inv_std(d), xhat(n * d), out(n * d);
  auto gv = state.gamma.values();
  auto bv = state.beta.values();
  for (std::size_t j = 0; j < d; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + state.eps);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const std::size_t k = i * d + j;
      xhat[k] = (xv[k] - mu[j]) * inv_std[j];
      out[k] = gv[j] * xhat[k] + bv[j];
    }

  return make_result(
      OpKind::kBatchNorm, {n, d}, std::move(out), {x.node(), state.gamma.node(), state.beta.node()},
      [n, d, batch_stats, inv_std = std::move(inv_std), xhat = std::move(xhat)](Node& self) {
        Node& nx = *self.inputs[0];
        Node& ng = *self.inputs[1];
        Node& nb = *self.inputs[2];
        const double* dy = self.grad.data();
        std::vector<double> sum_dy(d, 0.0), sum_dy_xhat(d, 0.0);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j) {
            sum_dy[j] += dy[i * d + j];
            sum_dy_xhat[j] += dy[i * d + j] * xhat[i * d + j];
          }
        if (ng.requires_grad) {
          auto& g = grad_buffer(ng);
          for (std::size_t j = 0; j < d; ++j) g[j] += sum_dy_xhat[j];
        }
        if (nb.requires_grad) {
          auto& g = grad_buffer(nb);
          for (std::size_t j = 0; j < d; ++j) g[j] += sum_dy[j];
        }
        if (nx.requires_grad) {
          auto& g = grad_buffer(nx);
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) {
              const std::size_t k = i * d + j;
              const double scale_j = ng.values[j] * inv_std[j];
              if (batch_stats) {
                g[k] += scale_j * (dy[k] - inv_n * sum_dy[j] - inv_n * xhat[k] * sum_dy_xhat[j]);
              } else {
                g[k] += scale_j * dy[k];
              }
            }
        }
      });
}

}  // namespace customkd
