#include "customkd/losses.hpp"

#include <cmath>

#include "customkd/errors.hpp"
#include "customkd/ops.hpp"

namespace customkd {

void LossWeights::validate() const {
  for (double v : {lambda_u, lambda_ft, lambda_ftilde}) {
    if (!std::isfinite(v) || v < 0.0) throw ContractViolation("loss weights must be finite and non-negative");
  }
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  const auto classes = static_cast<int>(logits.cols());
  for (int y : labels) {
    if (y < 0 || y >= classes) {
      throw DomainError("cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
  return scale(mean(pick(log_softmax(logits), labels)), -1.0);
}

Tensor feature_mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("feature_mse: shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
  const double batch = a.rank() == 2 ? static_cast<double>(a.rows()) : 1.0;
  return scale(sum(square(sub(a, b))), 1.0 / batch);
}

Tensor entropy_min(const Tensor& logits) {
  const double batch = static_cast<double>(logits.rows());
  Tensor plogp = mul(softmax(logits), log_softmax(logits));
  return scale(sum(plogp), -1.0 / batch);
}

Tensor soft_target_loss(const Tensor& student_logits, const Tensor& teacher_logits, double temperature) {
  if (!(temperature > 0.0)) throw ContractViolation("soft_target_loss: temperature must be positive");
  if (student_logits.shape() != teacher_logits.shape()) {
    throw DimensionError("soft_target_loss: shapes " + shape_string(student_logits.shape()) + " and " +
                         shape_string(teacher_logits.shape()));
  }
  const double inv_t = 1.0 / temperature;
  Tensor teacher_log_p = log_softmax(scale(teacher_logits.detach(), inv_t));
  Tensor teacher_p = softmax(scale(teacher_logits.detach(), inv_t));
  Tensor student_log_p = log_softmax(scale(student_logits, inv_t));
  Tensor kl = sum(mul(teacher_p, sub(teacher_log_p, student_log_p)));
  const double batch = static_cast<double>(student_logits.rows());
  return scale(kl, temperature * temperature / batch);
}

Tensor logit_mse_loss(const Tensor& student_logits, const Tensor& teacher_logits) {
  if (student_logits.shape() != teacher_logits.shape()) {
    throw DimensionError("logit_mse_loss: shapes " + shape_string(student_logits.shape()) + " and " +
                         shape_string(teacher_logits.shape()));
  }
  return mean(square(sub(student_logits, teacher_logits.detach())));
}

Tensor composite_loss(const LossParts& parts, const LossWeights& w) {
  w.validate();
  if (!parts.labeled.defined()) throw ContractViolation("composite_loss: labeled term is required");
  Tensor total = parts.labeled;
  auto term = [&](const Tensor& part, double lambda) {
    if (!part.defined()) return;
    if (part.size() != 1) throw ContractViolation("composite_loss: parts must be scalars");
    if (!std::isfinite(part.item())) throw ContractViolation("composite_loss: non-finite loss part");
    total = add(total, scale(part, lambda));
  };
  if (parts.labeled.size() != 1 || !std::isfinite(parts.labeled.item())) {
    throw ContractViolation("composite_loss: labeled term must be a finite scalar");
  }
  term(parts.unlabeled, w.lambda_u);
  term(parts.general_feature, w.lambda_ft);
  term(parts.custom_feature, w.lambda_ftilde);
  return total;
}

}  // namespace customkd
