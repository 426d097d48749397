#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "customkd/ops.hpp"
#include "customkd/tensor.hpp"

namespace customkd {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using ParameterList = std::vector<NamedTensor>;

/// Affine map x W + b with W of shape [d_in x d_out].
struct Linear {
  Tensor weight;
  Tensor bias;

  std::size_t in_dim() const { return weight.shape()[0]; }
  std::size_t out_dim() const { return weight.shape()[1]; }
  Tensor forward(const Tensor& x) const;
  Linear clone() const { return {weight.clone(), bias.clone()}; }
  void append_parameters(const std::string& prefix, ParameterList& out) const;
};

/// Stack of Linear layers, each followed by ReLU (including the last).
struct Encoder {
  std::vector<Linear> layers;

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  Tensor forward(const Tensor& x) const;
  Encoder clone() const;
  ParameterList parameters(const std::string& prefix) const;
  void validate() const;
};

struct HeadClassifier {
  Linear linear;

  std::size_t embed_dim() const { return linear.in_dim(); }
  std::size_t num_classes() const { return linear.out_dim(); }
  /// Logits; no softmax.
  Tensor forward(const Tensor& f) const;
  HeadClassifier clone() const { return {linear.clone()}; }
  ParameterList parameters(const std::string& prefix) const;
};

/// ReLU(BN(x W + b)), or ReLU(x W + b) without batch norm.
struct ProjectionHead {
  Linear linear;
  BatchNormState bn;
  bool use_bn = true;

  std::size_t in_dim() const { return linear.in_dim(); }
  std::size_t out_dim() const { return linear.out_dim(); }
  Tensor forward(const Tensor& f, NormMode mode);
  Tensor forward(const Tensor& f, bool training) { return forward(f, training ? NormMode::kTrain : NormMode::kEval); }
  ProjectionHead clone() const { return {linear.clone(), bn.clone(), use_bn}; }
  ParameterList parameters(const std::string& prefix) const;
};

/// Encoder + head classifier, used for both the student and the teacher.
struct Model {
  Encoder encoder;
  HeadClassifier head;

  Tensor features(const Tensor& x) const { return encoder.forward(x); }
  Tensor logits(const Tensor& x) const { return head.forward(encoder.forward(x)); }
  Model clone() const { return {encoder.clone(), head.clone()}; }
  ParameterList parameters(const std::string& prefix) const;
};

/// Per-parameter trainable/frozen flags, keyed by parameter name.
class FreezeMask {
 public:
  void set(const std::string& name, bool trainable) { trainable_[name] = trainable; }
  void freeze_all(const ParameterList& params);
  void train_all(const ParameterList& params);
  bool trainable(const std::string& name) const;

  /// Sets requires_grad on every listed parameter according to the mask and
  /// returns the trainable ones, which are what an optimizer should track.
  std::vector<Tensor> apply(const ParameterList& params) const;

 private:
  std::map<std::string, bool> trainable_;
};

/// θ^c ∘ θ^h_t ∘ θ^e_t: the teacher pipeline used during feature customization.
/// `head` is a live handle; with share_student_head it aliases the student's
/// classifier storage.
struct CustomizationPipeline {
  Encoder teacher_encoder;
  ProjectionHead* projector = nullptr;
  HeadClassifier head;

  /// Logits from precomputed (detached) teacher features.
  Tensor logits_from_features(const Tensor& teacher_features, NormMode mode) const;
  Tensor logits(const Tensor& x, NormMode mode) const;
  ParameterList parameters() const;
  /// Teacher encoder and head frozen, projector trainable.
  FreezeMask freeze_mask() const;
};

/// Replaces the teacher's classifier with the student's. Throws DimensionError
/// unless the projector maps teacher features onto the head's input width.
CustomizationPipeline share_student_head(const Encoder& teacher_encoder, ProjectionHead& projector,
                                         const HeadClassifier& student_head);

// Initialization: weights ~ N(0, 2 / fan_in), biases 0, deterministic per seed.
Linear init_linear(std::size_t in_dim, std::size_t out_dim, std::uint64_t seed);
/// `dims` = {input, hidden..., embedding}; needs at least two entries.
Encoder init_encoder(const std::vector<std::size_t>& dims, std::uint64_t seed);
HeadClassifier init_head(std::size_t embed_dim, std::size_t classes, std::uint64_t seed);
ProjectionHead init_projection(std::size_t in_dim, std::size_t out_dim, bool use_bn, std::uint64_t seed);
Model init_model(const std::vector<std::size_t>& encoder_dims, std::size_t classes, std::uint64_t seed);

/// Names of parameters whose values differ bitwise between two snapshots.
std::vector<std::string> changed_parameters(const ParameterList& before, const ParameterList& after);
/// Deep copy of every tensor in the list.
ParameterList snapshot(const ParameterList& params);

}  // namespace customkd
