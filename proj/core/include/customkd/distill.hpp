#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "customkd/data.hpp"
#include "customkd/losses.hpp"
#include "customkd/metrics_log.hpp"
#include "customkd/model.hpp"
#include "customkd/optim.hpp"
#include "customkd/random.hpp"

namespace customkd {

/// Interleaving of feature-customization (FC) and distillation (KD) epochs:
/// an FC epoch precedes KD epoch e (1-based) iff (e - 1) mod ratio == 0.
struct StagePlan {
  std::size_t total_kd_epochs = 0;
  std::size_t ratio = 1;
  std::vector<Stage> sequence;

  std::size_t kd_epochs() const;
  std::size_t fc_epochs() const;
};

StagePlan make_stage_plan(std::size_t total_kd_epochs, std::size_t ratio_k);
/// KD epochs only, for methods without a customization stage.
StagePlan make_kd_only_plan(std::size_t total_kd_epochs);

enum class Method { kCustomKd, kFitNet, kSoftTarget, kLogits, kNone };

std::string_view method_name(Method m);
std::optional<Method> parse_method(std::string_view s);
bool is_prediction_level(Method m);

/// Which classifier reads the customized teacher feature in the FC stage.
enum class HeadInit {
  kStudent,  // the student's current head, frozen (re-shared every FC stage)
  kRandom,   // an independently initialized head, trained with θ^h_t
};

/// Split the CKA probes read features from.
enum class CkaSplit { kEval, kLabeled, kUnlabeled };

std::string_view cka_split_name(CkaSplit s);
std::optional<CkaSplit> parse_cka_split(std::string_view s);

struct TrainOptions {
  std::size_t batch_size = 32;
  double lr_student = 0.0005;
  double lr_proj_t = 0.5;
  double momentum = 0.9;
  std::size_t eval_every = 1;
  bool cka_probes = false;
  CkaSplit cka_split = CkaSplit::kEval;
  bool reinit_proj_t = false;
  HeadInit head_init = HeadInit::kStudent;
  // Prediction-level baselines.
  double lambda_pred = 1.0;
  double temperature = 4.0;

  bool operator==(const TrainOptions&) const = default;
};

struct KdLosses {
  double labeled = 0.0;
  double unlabeled = 0.0;
  double general_feature = 0.0;
  double custom_feature = 0.0;
  double prediction = 0.0;
  double total = 0.0;
};

/// Everything one distillation run reads and writes.
///
/// The teacher encoder is frozen for the whole run; its features for D_L and
/// D_U are computed once under stop-gradient and cached.
struct TrainContext {
  Model student;
  Encoder teacher_encoder;
  ProjectionHead proj_t;
  ProjectionHead proj_s;
  HeadClassifier random_head;                // FC head when options.head_init == kRandom
  std::optional<HeadClassifier> probe_head;  // θ^c_t, needed by prediction-level baselines
  LossWeights weights;
  TrainOptions options;
  const DataBundle* data = nullptr;
  Method method = Method::kCustomKd;
  Rng rng;
  std::uint64_t seed = 0;

  Tensor teacher_labeled;    // cached f_t for D_L (detached)
  Tensor teacher_unlabeled;  // cached f_t for D_U (detached)
  std::optional<Sgd> student_optimizer;

  ParameterList student_parameters() const;
  ParameterList teacher_parameters() const;
  ParameterList proj_t_parameters() const;
  ParameterList proj_s_parameters() const;
  /// Parameters the KD stage updates for the current method.
  ParameterList kd_trainable() const;
  /// The FC pipeline for the current head-init mode.
  CustomizationPipeline customization_pipeline();
};

/// Builds a context around a pretrained student and a frozen teacher encoder.
/// Projection heads are initialized from `seed`.
TrainContext make_train_context(Model student, Encoder teacher_encoder, const DataBundle& data, LossWeights weights,
                                TrainOptions options, Method method, std::uint64_t seed);

/// One pass over D_L updating only θ^h_t (and the random head in kRandom mode);
/// returns the mean customization cross-entropy.
double feature_customization_epoch(TrainContext& ctx);

/// One pass over paired labeled/unlabeled minibatches updating the student and
/// θ^h_s according to ctx.method.
KdLosses knowledge_distillation_epoch(TrainContext& ctx);

/// Executes the plan, logging one row per stage epoch.
MetricsLog train_customkd(TrainContext& ctx, const StagePlan& plan);

/// Prediction- or feature-level baseline over `epochs` KD epochs (no FC stages).
MetricsLog run_baseline(Method kind, TrainContext& ctx, std::size_t epochs);

struct PretrainResult {
  Model model;
  std::vector<MetricsRow> rows;
};

/// Supervised cross-entropy training from a fresh initialization.
PretrainResult pretrain(const std::vector<std::size_t>& encoder_dims, std::size_t classes, const Dataset& data,
                        std::size_t epochs, double lr, std::uint64_t seed, std::size_t batch_size = 32,
                        double momentum = 0.9, const Dataset* eval = nullptr);

/// Trains a fresh head on the frozen encoder's features of `data` (labeled
/// rows only). The encoder is never modified.
HeadClassifier linear_probe(const Encoder& frozen_encoder, const Dataset& data, std::size_t epochs, double lr,
                            std::uint64_t seed, std::size_t batch_size = 32, double momentum = 0.9);

/// Minibatch index lists covering `n` samples once in shuffled order; the last
/// batch wraps around to stay full. Batches have min(batch_size, n) entries.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, Rng& rng,
                                                   std::size_t steps = 0);

/// Paired (labeled, unlabeled) batches for one KD epoch: max of the two
/// single-set step counts, the shorter set cycling.
std::vector<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> make_paired_batches(
    std::size_t n_labeled, std::size_t n_unlabeled, std::size_t batch_size, Rng& rng);

/// Rows of a matrix as a fresh, gradient-free tensor.
Tensor gather_rows(const Tensor& m, std::span<const std::size_t> index);

}  // namespace customkd
