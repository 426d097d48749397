#include "customkd/metrics_log.hpp"

#include <sstream>

#include "customkd/data.hpp"

namespace customkd {

std::string_view stage_name(Stage s) {
  switch (s) {
    case Stage::kPretrain: return "pretrain";
    case Stage::kCustomization: return "FC";
    case Stage::kDistillation: return "KD";
  }
  return "?";
}

std::vector<Stage> MetricsLog::stage_sequence(bool include_pretrain) const {
  std::vector<Stage> out;
  for (const auto& r : rows) {
    if (include_pretrain || r.stage != Stage::kPretrain) out.push_back(r.stage);
  }
  return out;
}

std::string_view metrics_csv_header() {
  return "epoch,stage,loss_t,loss_l,loss_u,loss_ft,loss_ftilde,loss_pred,total,train_acc,eval_acc,cka_fs_ft,"
         "cka_fs_ftilde";
}

namespace {

void put(std::ostringstream& os, const std::optional<double>& v) {
  os << ',';
  if (v) os << format_double(*v);
}

}  // namespace

std::string MetricsLog::csv() const {
  std::ostringstream os;
  os << metrics_csv_header() << '\n';
  for (const auto& r : rows) {
    os << r.epoch << ',' << stage_name(r.stage);
    for (double v : {r.loss_t, r.loss_l, r.loss_u, r.loss_ft, r.loss_ftilde, r.loss_pred, r.total}) {
      os << ',' << format_double(v);
    }
    put(os, r.train_acc);
    put(os, r.eval_acc);
    put(os, r.cka_fs_ft);
    put(os, r.cka_fs_ftilde);
    os << '\n';
  }
  return os.str();
}

std::string MetricsLog::summary_text() const {
  std::ostringstream os;
  auto opt = [&](const char* key, const std::optional<double>& v) {
    if (v) os << key << " = " << format_double(*v) << '\n';
  };
  os << "config_hash = " << summary.config_hash << '\n';
  os << "final_eval_acc = " << format_double(summary.final_eval_acc) << '\n';
  os << "final_eval_error = " << format_double(summary.final_eval_error) << '\n';
  os << "pretrained_eval_acc = " << format_double(summary.pretrained_eval_acc) << '\n';
  opt("teacher_eval_acc", summary.teacher_eval_acc);
  opt("teacher_probe_acc", summary.teacher_probe_acc);
  opt("final_cka_fs_ft", summary.final_cka_fs_ft);
  opt("final_cka_fs_ftilde", summary.final_cka_fs_ftilde);
  os << "cka_kernel = " << summary.cka_kernel << '\n';
  os << "wall_seconds = " << format_double(summary.wall_seconds) << '\n';
  return os.str();
}

}  // namespace customkd
