#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "customkd/tensor.hpp"

namespace customkd {

// Differentiable operations. Every result records its inputs so that
// `backward` can walk the graph; results require a gradient iff at least
// one input does.

/// [m x k] * [k x n] -> [m x n].
Tensor matmul(const Tensor& a, const Tensor& b);

// Binary ops accept equal shapes, or a 2-D `a` with a `b` of `a.cols()`
// elements broadcast over rows (bias vectors).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor relu(const Tensor& a);
/// Throws DomainError on any non-positive entry.
Tensor log(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor square(const Tensor& a);
Tensor scale(const Tensor& a, double factor);

/// Sum of all entries, scalar result.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// Row-wise softmax over a [batch x C] matrix, C >= 2.
Tensor softmax(const Tensor& logits);
Tensor log_softmax(const Tensor& logits);

/// out[i] = a[i, index[i]], shape [batch].
Tensor pick(const Tensor& a, std::span<const int> index);

/// Vertical concatenation of two matrices with equal column counts.
Tensor concat_rows(const Tensor& top, const Tensor& bottom);

struct BatchNormState {
  Tensor gamma;  // [d], trainable
  Tensor beta;   // [d], trainable
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double eps = 1e-5;
  double momentum = 0.1;

  static BatchNormState create(std::size_t dim);
  BatchNormState clone() const;
  std::size_t dim() const { return running_mean.size(); }
};

enum class NormMode {
  kTrain,       // batch statistics, running stats updated
  kBatchStats,  // batch statistics, running stats left untouched
  kEval,        // running statistics
};

/// gamma * (x - mu) / sqrt(var + eps) + beta over the rows of x.
/// Variance is the biased (population) batch variance; the running stats
/// follow r <- (1 - momentum) r + momentum * batch_stat.
Tensor batch_norm(const Tensor& x, BatchNormState& state, NormMode mode);
inline Tensor batch_norm(const Tensor& x, BatchNormState& state, bool training) {
  return batch_norm(x, state, training ? NormMode::kTrain : NormMode::kEval);
}

}  // namespace customkd
