#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace customkd {

enum class Stage { kPretrain, kCustomization, kDistillation };

/// "pretrain", "FC", "KD".
std::string_view stage_name(Stage s);

/// One epoch of one stage. Loss columns hold per-epoch means over steps.
///
/// KD rows: loss_l, loss_u, loss_ft, loss_ftilde and loss_pred are the
/// student objective's components and total their weighted sum.
/// FC rows: loss_t is the customization cross-entropy (also copied to total);
/// train_acc / eval_acc measure the customized teacher pipeline.
/// Pretrain rows: loss_l is the supervised cross-entropy.
struct MetricsRow {
  std::size_t epoch = 0;
  Stage stage = Stage::kDistillation;
  double loss_t = 0.0;
  double loss_l = 0.0;
  double loss_u = 0.0;
  double loss_ft = 0.0;
  double loss_ftilde = 0.0;
  double loss_pred = 0.0;
  double total = 0.0;
  std::optional<double> train_acc;
  std::optional<double> eval_acc;
  std::optional<double> cka_fs_ft;
  std::optional<double> cka_fs_ftilde;

  bool operator==(const MetricsRow&) const = default;
};

struct RunSummary {
  double final_eval_acc = 0.0;
  double final_eval_error = 1.0;
  double pretrained_eval_acc = 0.0;
  std::optional<double> teacher_eval_acc;
  std::optional<double> teacher_probe_acc;
  std::optional<double> final_cka_fs_ft;
  std::optional<double> final_cka_fs_ftilde;
  std::string cka_kernel = "linear";
  std::string config_hash;
  double wall_seconds = 0.0;
};

struct MetricsLog {
  std::vector<MetricsRow> rows;
  RunSummary summary;

  void add(MetricsRow row) { rows.push_back(std::move(row)); }
  std::vector<Stage> stage_sequence(bool include_pretrain = false) const;

  /// Stable CSV rendering; identical logs render to identical bytes.
  std::string csv() const;
  std::string summary_text() const;
};

/// Header of MetricsLog::csv().
std::string_view metrics_csv_header();

}  // namespace customkd
