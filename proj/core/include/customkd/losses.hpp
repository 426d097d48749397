#pragma once

#include <span>

#include "customkd/tensor.hpp"

namespace customkd {

/// Weights of the student objective L_L + λ_U L_U + λ_ft L_ft + λ_f̃t L_f̃t.
struct LossWeights {
  double lambda_u = 0.1;
  double lambda_ft = 10.0;
  double lambda_ftilde = 10.0;

  /// Throws ContractViolation unless all weights are finite and non-negative.
  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

// Every loss reduces by the mean over the batch.

/// Mean of -log softmax(logits)[label]. Labels must lie in [0, C).
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Mean over rows of ||a_i - b_i||^2. Pass a detached tensor for the
/// stop-gradient side; it then receives no gradient.
Tensor feature_mse(const Tensor& a, const Tensor& b);

/// Mean Shannon entropy -Σ p ln p of softmax(logits).
Tensor entropy_min(const Tensor& logits);

/// T^2 · mean KL(softmax(teacher/T) || softmax(student/T)). The teacher side is
/// detached internally. Throws ContractViolation for T <= 0.
Tensor soft_target_loss(const Tensor& student_logits, const Tensor& teacher_logits, double temperature = 4.0);

/// Mean over batch and classes of the squared logit difference; teacher detached.
Tensor logit_mse_loss(const Tensor& student_logits, const Tensor& teacher_logits);

struct LossParts {
  Tensor labeled;          // L_L
  Tensor unlabeled;        // L_U
  Tensor general_feature;  // L_ft  = ||f̃_s - f_t||²
  Tensor custom_feature;   // L_f̃t = ||f_s - f̃_t||²
};

/// Weighted sum of the parts. Undefined parts count as zero; non-finite parts
/// throw ContractViolation.
Tensor composite_loss(const LossParts& parts, const LossWeights& w);

}  // namespace customkd
