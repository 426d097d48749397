#include "customkd/model.hpp"

#include <cmath>
#include <cstring>

#include "customkd/errors.hpp"
#include "customkd/random.hpp"

namespace customkd {

Tensor Linear::forward(const Tensor& x) const {
  if (x.rank() != 2 || x.cols() != in_dim()) {
    throw DimensionError("linear layer expects [batch x " + std::to_string(in_dim()) + "], got " +
                         shape_string(x.shape()));
  }
  return add(matmul(x, weight), bias);
}

void Linear::append_parameters(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

std::size_t Encoder::input_dim() const { return layers.front().in_dim(); }
std::size_t Encoder::output_dim() const { return layers.back().out_dim(); }

Tensor Encoder::forward(const Tensor& x) const {
  Tensor h = x;
  for (const auto& layer : layers) h = relu(layer.forward(h));
  return h;
}

Encoder Encoder::clone() const {
  Encoder e;
  for (const auto& l : layers) e.layers.push_back(l.clone());
  return e;
}

ParameterList Encoder::parameters(const std::string& prefix) const {
  ParameterList out;
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].append_parameters(prefix + ".layer" + std::to_string(i), out);
  return out;
}

void Encoder::validate() const {
  if (layers.empty()) throw DimensionError("encoder needs at least one layer");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.weight.rank() != 2 || l.bias.size() != l.out_dim()) {
      throw DimensionError("encoder layer " + std::to_string(i) + " has inconsistent weight/bias shapes");
    }
    if (i > 0 && layers[i - 1].out_dim() != l.in_dim()) {
      throw DimensionError("encoder layer " + std::to_string(i) + " input " + std::to_string(l.in_dim()) +
                           " does not chain with previous output " + std::to_string(layers[i - 1].out_dim()));
    }
  }
}

Tensor HeadClassifier::forward(const Tensor& f) const { return linear.forward(f); }

ParameterList HeadClassifier::parameters(const std::string& prefix) const {
  ParameterList out;
  linear.append_parameters(prefix, out);
  return out;
}

Tensor ProjectionHead::forward(const Tensor& f, NormMode mode) {
  Tensor h = linear.forward(f);
  if (use_bn) h = batch_norm(h, bn, mode);
  return relu(h);
}

ParameterList ProjectionHead::parameters(const std::string& prefix) const {
  ParameterList out;
  linear.append_parameters(prefix + ".linear", out);
  if (use_bn) {
    out.push_back({prefix + ".bn.gamma", bn.gamma});
    out.push_back({prefix + ".bn.beta", bn.beta});
  }
  return out;
}

ParameterList Model::parameters(const std::string& prefix) const {
  auto out = encoder.parameters(prefix + ".encoder");
  auto h = head.parameters(prefix + ".head");
  out.insert(out.end(), h.begin(), h.end());
  return out;
}

void FreezeMask::freeze_all(const ParameterList& params) {
  for (const auto& p : params) trainable_[p.name] = false;
}

void FreezeMask::train_all(const ParameterList& params) {
  for (const auto& p : params) trainable_[p.name] = true;
}

bool FreezeMask::trainable(const std::string& name) const {
  auto it = trainable_.find(name);
  return it != trainable_.end() && it->second;
}

std::vector<Tensor> FreezeMask::apply(const ParameterList& params) const {
  std::vector<Tensor> out;
  for (const auto& p : params) {
    Tensor t = p.tensor;
    const bool on = trainable(p.name);
    t.set_requires_grad(on);
    if (on) out.push_back(t);
  }
  return out;
}

Tensor CustomizationPipeline::logits_from_features(const Tensor& teacher_features, NormMode mode) const {
  return head.forward(projector->forward(teacher_features, mode));
}

Tensor CustomizationPipeline::logits(const Tensor& x, NormMode mode) const {
  return logits_from_features(teacher_encoder.forward(x).detach(), mode);
}

ParameterList CustomizationPipeline::parameters() const {
  auto out = teacher_encoder.parameters("teacher.encoder");
  auto p = projector->parameters("proj_t");
  auto h = head.parameters("fc.head");
  out.insert(out.end(), p.begin(), p.end());
  out.insert(out.end(), h.begin(), h.end());
  return out;
}

FreezeMask CustomizationPipeline::freeze_mask() const {
  FreezeMask mask;
  mask.freeze_all(teacher_encoder.parameters("teacher.encoder"));
  mask.freeze_all(head.parameters("fc.head"));
  mask.train_all(projector->parameters("proj_t"));
  return mask;
}

CustomizationPipeline share_student_head(const Encoder& teacher_encoder, ProjectionHead& projector,
                                         const HeadClassifier& student_head) {
  if (projector.in_dim() != teacher_encoder.output_dim()) {
    throw DimensionError("projector input " + std::to_string(projector.in_dim()) + " != teacher embedding " +
                         std::to_string(teacher_encoder.output_dim()));
  }
  if (student_head.embed_dim() != projector.out_dim()) {
    throw DimensionError("student head input " + std::to_string(student_head.embed_dim()) +
                         " != projector output " + std::to_string(projector.out_dim()));
  }
  return CustomizationPipeline{teacher_encoder, &projector, student_head};
}

Linear init_linear(std::size_t in_dim, std::size_t out_dim, std::uint64_t seed) {
  if (in_dim == 0 || out_dim == 0) throw DimensionError("layer dimensions must be positive");
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(in_dim)));
  std::vector<double> w(in_dim * out_dim);
  for (auto& v : w) v = normal(rng);
  return {Tensor::from({in_dim, out_dim}, std::move(w), true), Tensor::zeros({out_dim}, true)};
}

Encoder init_encoder(const std::vector<std::size_t>& dims, std::uint64_t seed) {
  if (dims.size() < 2) throw DimensionError("encoder spec needs an input and at least one layer width");
  Encoder e;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    e.layers.push_back(init_linear(dims[i], dims[i + 1], derive_seed(seed, "layer" + std::to_string(i))));
  }
  return e;
}

HeadClassifier init_head(std::size_t embed_dim, std::size_t classes, std::uint64_t seed) {
  return {init_linear(embed_dim, classes, derive_seed(seed, "head"))};
}

ProjectionHead init_projection(std::size_t in_dim, std::size_t out_dim, bool use_bn, std::uint64_t seed) {
  return {init_linear(in_dim, out_dim, derive_seed(seed, "projection")), BatchNormState::create(out_dim), use_bn};
}

Model init_model(const std::vector<std::size_t>& encoder_dims, std::size_t classes, std::uint64_t seed) {
  Model m;
  m.encoder = init_encoder(encoder_dims, derive_seed(seed, "encoder"));
  m.head = init_head(m.encoder.output_dim(), classes, seed);
  return m;
}

std::vector<std::string> changed_parameters(const ParameterList& before, const ParameterList& after) {
  if (before.size() != after.size()) throw ContractViolation("snapshots cover different parameter sets");
  std::vector<std::string> changed;
  for (std::size_t i = 0; i < before.size(); ++i) {
    if (before[i].name != after[i].name) throw ContractViolation("snapshots list parameters in different order");
    if (!bitwise_equal(before[i].tensor, after[i].tensor)) changed.push_back(before[i].name);
  }
  return changed;
}

ParameterList snapshot(const ParameterList& params) {
  ParameterList out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back({p.name, p.tensor.clone()});
  return out;
}

}  // namespace customkd
