#include "customkd/distill.hpp"

#include <algorithm>
#include <set>

#include "customkd/errors.hpp"
#include "customkd/graph.hpp"
#include "customkd/metrics.hpp"
#include "customkd/ops.hpp"

namespace customkd {

std::size_t StagePlan::kd_epochs() const {
  return static_cast<std::size_t>(std::count(sequence.begin(), sequence.end(), Stage::kDistillation));
}

std::size_t StagePlan::fc_epochs() const {
  return static_cast<std::size_t>(std::count(sequence.begin(), sequence.end(), Stage::kCustomization));
}

StagePlan make_stage_plan(std::size_t total_kd_epochs, std::size_t ratio_k) {
  if (total_kd_epochs == 0 || ratio_k == 0) throw ContractViolation("stage plan needs positive epochs and ratio");
  StagePlan plan{total_kd_epochs, ratio_k, {}};
  for (std::size_t e = 1; e <= total_kd_epochs; ++e) {
    if ((e - 1) % ratio_k == 0) plan.sequence.push_back(Stage::kCustomization);
    plan.sequence.push_back(Stage::kDistillation);
  }
  return plan;
}

StagePlan make_kd_only_plan(std::size_t total_kd_epochs) {
  StagePlan plan{total_kd_epochs, 0, {}};
  plan.sequence.assign(total_kd_epochs, Stage::kDistillation);
  return plan;
}

std::string_view method_name(Method m) {
  switch (m) {
    case Method::kCustomKd: return "customkd";
    case Method::kFitNet: return "fitnet";
    case Method::kSoftTarget: return "soft_target";
    case Method::kLogits: return "logits";
    case Method::kNone: return "none";
  }
  return "?";
}

std::optional<Method> parse_method(std::string_view s) {
  for (auto m : {Method::kCustomKd, Method::kFitNet, Method::kSoftTarget, Method::kLogits, Method::kNone}) {
    if (method_name(m) == s) return m;
  }
  return std::nullopt;
}

std::string_view cka_split_name(CkaSplit s) {
  switch (s) {
    case CkaSplit::kEval:
      return "eval";
    case CkaSplit::kLabeled:
      return "labeled";
    case CkaSplit::kUnlabeled:
      return "unlabeled";
  }
  return "eval";
}

std::optional<CkaSplit> parse_cka_split(std::string_view s) {
  for (auto k : {CkaSplit::kEval, CkaSplit::kLabeled, CkaSplit::kUnlabeled}) {
    if (cka_split_name(k) == s) return k;
  }
  return std::nullopt;
}

bool is_prediction_level(Method m) { return m == Method::kSoftTarget || m == Method::kLogits; }

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, Rng& rng,
                                                   std::size_t steps) {
  if (n == 0) return {};
  if (batch_size == 0) throw ContractViolation("batch size must be positive");
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  const std::size_t b = std::min(batch_size, n);
  if (steps == 0) steps = (n + batch_size - 1) / batch_size;
  std::vector<std::vector<std::size_t>> out(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    out[s].reserve(b);
    for (std::size_t j = 0; j < b; ++j) out[s].push_back(perm[(s * b + j) % n]);
  }
  return out;
}

std::vector<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> make_paired_batches(
    std::size_t n_labeled, std::size_t n_unlabeled, std::size_t batch_size, Rng& rng) {
  if (batch_size == 0) throw ContractViolation("batch size must be positive");
  const std::size_t steps =
      std::max((n_labeled + batch_size - 1) / batch_size, (n_unlabeled + batch_size - 1) / batch_size);
  auto lab = make_batches(n_labeled, batch_size, rng, steps);
  auto unl = make_batches(n_unlabeled, batch_size, rng, steps);
  std::vector<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> out;
  out.reserve(steps);
  for (std::size_t s = 0; s < steps; ++s) out.emplace_back(std::move(lab[s]), std::move(unl[s]));
  return out;
}

Tensor gather_rows(const Tensor& m, std::span<const std::size_t> index) {
  const std::size_t cols = m.cols();
  std::vector<double> out;
  out.reserve(index.size() * cols);
  auto v = m.values();
  for (auto i : index) out.insert(out.end(), v.begin() + static_cast<std::ptrdiff_t>(i * cols),
                                  v.begin() + static_cast<std::ptrdiff_t>((i + 1) * cols));
  return Tensor::from({index.size(), cols}, std::move(out));
}

ParameterList TrainContext::student_parameters() const { return student.parameters("student"); }
ParameterList TrainContext::teacher_parameters() const { return teacher_encoder.parameters("teacher.encoder"); }
ParameterList TrainContext::proj_t_parameters() const { return proj_t.parameters("proj_t"); }
ParameterList TrainContext::proj_s_parameters() const { return proj_s.parameters("proj_s"); }

ParameterList TrainContext::kd_trainable() const {
  auto out = student_parameters();
  if (method == Method::kCustomKd || method == Method::kFitNet) {
    auto p = proj_s_parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

CustomizationPipeline TrainContext::customization_pipeline() {
  const HeadClassifier& head = options.head_init == HeadInit::kStudent ? student.head : random_head;
  return share_student_head(teacher_encoder, proj_t, head);
}

TrainContext make_train_context(Model student, Encoder teacher_encoder, const DataBundle& data, LossWeights weights,
                                TrainOptions options, Method method, std::uint64_t seed) {
  weights.validate();
  if (options.batch_size == 0) throw ContractViolation("batch size must be positive");
  if (data.labeled.empty()) throw ContractViolation("distillation needs a non-empty labeled set");
  if (data.unlabeled.empty()) throw ContractViolation("distillation needs a non-empty unlabeled set");
  if (data.labeled.dim != student.encoder.input_dim() || data.labeled.dim != teacher_encoder.input_dim()) {
    throw DimensionError("data width does not match the encoders' input width");
  }
  TrainContext ctx;
  const std::size_t ds = student.encoder.output_dim();
  const std::size_t dt = teacher_encoder.output_dim();
  ctx.proj_t = init_projection(dt, ds, true, derive_seed(seed, "proj_t"));
  ctx.proj_s = init_projection(ds, dt, true, derive_seed(seed, "proj_s"));
  ctx.random_head = init_head(ds, student.head.num_classes(), derive_seed(seed, "random_head"));
  ctx.student = std::move(student);
  ctx.teacher_encoder = std::move(teacher_encoder);
  ctx.weights = weights;
  ctx.options = options;
  ctx.data = &data;
  ctx.method = method;
  ctx.seed = seed;
  ctx.rng.seed(derive_seed(seed, "distill.batches"));

  FreezeMask frozen;
  frozen.freeze_all(ctx.teacher_parameters());
  frozen.apply(ctx.teacher_parameters());
  ctx.teacher_labeled = ctx.teacher_encoder.forward(data.labeled.all()).detach();
  ctx.teacher_unlabeled = ctx.teacher_encoder.forward(data.unlabeled.all()).detach();
  return ctx;
}

/// Sets every requires_grad flag for the given stage and returns the tensors
/// the stage's optimizer tracks.
namespace {

std::vector<Tensor> apply_stage_mask(TrainContext& ctx, const ParameterList& trainable) {
  FreezeMask mask;
  mask.freeze_all(ctx.teacher_parameters());
  mask.freeze_all(ctx.proj_t_parameters());
  mask.freeze_all(ctx.proj_s_parameters());
  mask.freeze_all(ctx.student_parameters());
  mask.freeze_all(ctx.random_head.parameters("random_head"));
  mask.train_all(trainable);
  mask.apply(ctx.teacher_parameters());
  mask.apply(ctx.proj_t_parameters());
  mask.apply(ctx.proj_s_parameters());
  mask.apply(ctx.student_parameters());
  mask.apply(ctx.random_head.parameters("random_head"));
  return mask.apply(trainable);
}

}  // namespace

double feature_customization_epoch(TrainContext& ctx) {
  const auto& labeled = ctx.data->labeled;
  if (labeled.empty()) throw ContractViolation("feature customization needs a non-empty labeled set");
  auto pipeline = ctx.customization_pipeline();
  ParameterList trainable = ctx.proj_t_parameters();
  if (ctx.options.head_init == HeadInit::kRandom) {
    auto h = ctx.random_head.parameters("random_head");
    trainable.insert(trainable.end(), h.begin(), h.end());
  }
  // Fresh momentum every customization stage.
  Sgd opt(apply_stage_mask(ctx, trainable), ctx.options.lr_proj_t, ctx.options.momentum);

  double total = 0.0;
  auto batches = make_batches(labeled.size(), ctx.options.batch_size, ctx.rng);
  for (const auto& b : batches) {
    Tensor f_t = gather_rows(ctx.teacher_labeled, b);
    Tensor loss = cross_entropy(pipeline.logits_from_features(f_t, NormMode::kTrain), labeled.batch_labels(b));
    backward(loss);
    opt.step();
    total += loss.item();
  }
  return total / static_cast<double>(batches.size());
}

KdLosses knowledge_distillation_epoch(TrainContext& ctx) {
  const auto& data = *ctx.data;
  if (data.labeled.empty() || data.unlabeled.empty()) {
    throw ContractViolation("knowledge distillation needs non-empty labeled and unlabeled sets");
  }
  const Method method = ctx.method;
  if (is_prediction_level(method) && !ctx.probe_head) {
    throw ContractViolation("prediction-level distillation needs a linear-probed teacher head");
  }
  auto trainable = apply_stage_mask(ctx, ctx.kd_trainable());
  if (!ctx.student_optimizer) ctx.student_optimizer.emplace(trainable, ctx.options.lr_student, ctx.options.momentum);
  Sgd& opt = *ctx.student_optimizer;

  const bool feature_level = method == Method::kCustomKd || method == Method::kFitNet;
  KdLosses sums;
  auto batches = make_paired_batches(data.labeled.size(), data.unlabeled.size(), ctx.options.batch_size, ctx.rng);
  for (const auto& [bl, bu] : batches) {
    Tensor f_s_l = ctx.student.encoder.forward(data.labeled.batch(bl));
    Tensor f_s_u = ctx.student.encoder.forward(data.unlabeled.batch(bu));
    Tensor logits_l = ctx.student.head.forward(f_s_l);
    Tensor logits_u = ctx.student.head.forward(f_s_u);

    LossParts parts;
    parts.labeled = cross_entropy(logits_l, data.labeled.batch_labels(bl));
    Tensor prediction;
    if (is_prediction_level(method)) {
      Tensor f_t = concat_rows(gather_rows(ctx.teacher_labeled, bl), gather_rows(ctx.teacher_unlabeled, bu));
      Tensor teacher_logits = ctx.probe_head->forward(f_t).detach();
      Tensor student_logits = concat_rows(logits_l, logits_u);
      prediction = method == Method::kSoftTarget
                       ? soft_target_loss(student_logits, teacher_logits, ctx.options.temperature)
                       : logit_mse_loss(student_logits, teacher_logits);
    } else {
      parts.unlabeled = entropy_min(logits_u);
    }
    if (feature_level) {
      Tensor f_t = concat_rows(gather_rows(ctx.teacher_labeled, bl), gather_rows(ctx.teacher_unlabeled, bu));
      Tensor f_s = concat_rows(f_s_l, f_s_u);
      parts.general_feature = feature_mse(ctx.proj_s.forward(f_s, NormMode::kTrain), f_t);
      if (method == Method::kCustomKd) {
        Tensor f_t_custom = ctx.proj_t.forward(f_t, NormMode::kEval).detach();
        parts.custom_feature = feature_mse(f_s, f_t_custom);
      }
    }

    Tensor total = composite_loss(parts, ctx.weights);
    if (prediction.defined()) total = add(total, scale(prediction, ctx.options.lambda_pred));
    backward(total);
    opt.step();

    sums.labeled += parts.labeled.item();
    if (parts.unlabeled.defined()) sums.unlabeled += parts.unlabeled.item();
    if (parts.general_feature.defined()) sums.general_feature += parts.general_feature.item();
    if (parts.custom_feature.defined()) sums.custom_feature += parts.custom_feature.item();
    if (prediction.defined()) sums.prediction += prediction.item();
    sums.total += total.item();
  }
  const double n = static_cast<double>(batches.size());
  return {sums.labeled / n,         sums.unlabeled / n,  sums.general_feature / n,
          sums.custom_feature / n,  sums.prediction / n, sums.total / n};
}

namespace {

bool should_eval(const TrainOptions& o, std::size_t epoch, std::size_t last) {
  return epoch == last || (o.eval_every > 0 && epoch % o.eval_every == 0);
}

const Dataset& cka_data(const TrainContext& ctx) {
  switch (ctx.options.cka_split) {
    case CkaSplit::kLabeled:
      return ctx.data->labeled;
    case CkaSplit::kUnlabeled:
      return ctx.data->unlabeled;
    case CkaSplit::kEval:
      break;
  }
  return ctx.data->eval;
}

void probe_cka(TrainContext& ctx, MetricsRow& row) {
  const auto& eval = cka_data(ctx);
  if (eval.size() < 2) return;
  auto fs = extract_features(ctx.student.encoder, nullptr, eval, FeatureSource::kStudent);
  auto ft = extract_features(ctx.teacher_encoder, nullptr, eval, FeatureSource::kTeacher);
  auto ftc = extract_features(ctx.teacher_encoder, &ctx.proj_t, eval, FeatureSource::kTeacherCustomized);
  try {
    row.cka_fs_ft = linear_cka(fs, ft);
    row.cka_fs_ftilde = linear_cka(fs, ftc);
  } catch (const DegenerateInput&) {
    // Dead (all-zero) features have no defined similarity; leave the cells empty.
  }
}

MetricsLog run_plan(TrainContext& ctx, const StagePlan& plan) {
  MetricsLog log;
  const std::size_t last = plan.kd_epochs();
  std::size_t kd_epoch = 0;
  std::size_t fc_stages = 0;
  for (Stage stage : plan.sequence) {
    if (stage == Stage::kCustomization) {
      if (ctx.options.reinit_proj_t && fc_stages > 0) {
        ctx.proj_t = init_projection(ctx.proj_t.in_dim(), ctx.proj_t.out_dim(), ctx.proj_t.use_bn,
                                     derive_seed(ctx.seed, "proj_t.reinit" + std::to_string(fc_stages)));
      }
      ++fc_stages;
      MetricsRow row;
      row.epoch = kd_epoch + 1;
      row.stage = Stage::kCustomization;
      row.loss_t = feature_customization_epoch(ctx);
      row.total = row.loss_t;
      if (should_eval(ctx.options, kd_epoch + 1, last)) {
        auto pipeline = ctx.customization_pipeline();
        const auto& d = *ctx.data;
        row.train_acc = accuracy(pipeline.logits_from_features(ctx.teacher_labeled, NormMode::kEval), d.labeled.labels);
        if (!d.eval.empty()) row.eval_acc = accuracy(pipeline.logits(d.eval.all(), NormMode::kEval), d.eval.labels);
      }
      log.add(row);
    } else {
      ++kd_epoch;
      auto l = knowledge_distillation_epoch(ctx);
      MetricsRow row;
      row.epoch = kd_epoch;
      row.stage = Stage::kDistillation;
      row.loss_l = l.labeled;
      row.loss_u = l.unlabeled;
      row.loss_ft = l.general_feature;
      row.loss_ftilde = l.custom_feature;
      row.loss_pred = l.prediction;
      row.total = l.total;
      if (should_eval(ctx.options, kd_epoch, last)) {
        row.train_acc = accuracy(ctx.student, ctx.data->labeled);
        if (!ctx.data->eval.empty()) row.eval_acc = accuracy(ctx.student, ctx.data->eval);
        if (ctx.options.cka_probes) probe_cka(ctx, row);
      }
      log.add(row);
    }
  }
  if (!ctx.data->eval.empty()) {
    log.summary.final_eval_acc = accuracy(ctx.student, ctx.data->eval);
    log.summary.final_eval_error = error_rate(log.summary.final_eval_acc);
    MetricsRow probe;
    probe_cka(ctx, probe);
    log.summary.final_cka_fs_ft = probe.cka_fs_ft;
    log.summary.final_cka_fs_ftilde = probe.cka_fs_ftilde;
  }
  return log;
}

}  // namespace

MetricsLog train_customkd(TrainContext& ctx, const StagePlan& plan) { return run_plan(ctx, plan); }

MetricsLog run_baseline(Method kind, TrainContext& ctx, std::size_t epochs) {
  if (kind == Method::kCustomKd) throw ContractViolation("run_baseline: customkd is not a baseline");
  if (is_prediction_level(kind) && !ctx.probe_head) {
    throw ContractViolation("run_baseline: " + std::string(method_name(kind)) + " needs a linear-probed teacher head");
  }
  ctx.method = kind;
  return run_plan(ctx, make_kd_only_plan(epochs));
}

PretrainResult pretrain(const std::vector<std::size_t>& encoder_dims, std::size_t classes, const Dataset& data,
                        std::size_t epochs, double lr, std::uint64_t seed, std::size_t batch_size, double momentum,
                        const Dataset* eval) {
  if (data.empty()) throw ContractViolation("pretraining needs a non-empty labeled set");
  for (int y : data.labels) {
    if (y < 0) throw ContractViolation("pretraining data must be fully labeled");
  }
  PretrainResult result{init_model(encoder_dims, classes, derive_seed(seed, "init")), {}};
  Model& model = result.model;
  ParameterList params = model.parameters("model");
  FreezeMask mask;
  mask.train_all(params);
  Sgd opt(mask.apply(params), lr, momentum);
  Rng rng(derive_seed(seed, "pretrain.batches"));
  for (std::size_t e = 1; e <= epochs; ++e) {
    double total = 0.0;
    auto batches = make_batches(data.size(), batch_size, rng);
    for (const auto& b : batches) {
      Tensor loss = cross_entropy(model.logits(data.batch(b)), data.batch_labels(b));
      backward(loss);
      opt.step();
      total += loss.item();
    }
    MetricsRow row;
    row.epoch = e;
    row.stage = Stage::kPretrain;
    row.loss_l = total / static_cast<double>(batches.size());
    row.total = row.loss_l;
    row.train_acc = accuracy(model, data);
    if (eval != nullptr && !eval->empty()) row.eval_acc = accuracy(model, *eval);
    result.rows.push_back(row);
  }
  return result;
}

HeadClassifier linear_probe(const Encoder& frozen_encoder, const Dataset& data, std::size_t epochs, double lr,
                            std::uint64_t seed, std::size_t batch_size, double momentum) {
  std::vector<std::size_t> rows;
  std::set<int> classes_seen;
  int max_label = -1;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.labels[i] < 0) continue;
    rows.push_back(i);
    classes_seen.insert(data.labels[i]);
    max_label = std::max(max_label, data.labels[i]);
  }
  if (rows.empty()) throw ContractViolation("linear probing needs labeled data");
  if (classes_seen.size() < 2) throw DegenerateInput("linear probing needs at least two distinct labels");

  Tensor features = frozen_encoder.forward(data.batch(rows)).detach();
  std::vector<int> labels = data.batch_labels(rows);
  HeadClassifier head = init_head(frozen_encoder.output_dim(), static_cast<std::size_t>(max_label + 1), seed);
  ParameterList params = head.parameters("probe");
  FreezeMask mask;
  mask.train_all(params);
  Sgd opt(mask.apply(params), lr, momentum);
  Rng rng(derive_seed(seed, "probe.batches"));
  for (std::size_t e = 0; e < epochs; ++e) {
    for (const auto& b : make_batches(rows.size(), batch_size, rng)) {
      std::vector<int> y;
      y.reserve(b.size());
      for (auto i : b) y.push_back(labels[i]);
      Tensor loss = cross_entropy(head.forward(gather_rows(features, b)), y);
      backward(loss);
      opt.step();
    }
  }
  return head;
}

}  // namespace customkd
