#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "customkd/config.hpp"
#include "customkd/data.hpp"
#include "customkd/metrics_log.hpp"
#include "customkd/model.hpp"

namespace customkd {

/// Memoizes the expensive, method-independent pieces of a run (data, the
/// pretrained teacher, the pretrained student) across runs that share them.
/// Entries are keyed by every config field they depend on, so a cached run is
/// bitwise identical to an uncached one.
class ExperimentCache {
 public:
  struct Teacher {
    Model model;  // encoder plus the pool-pretrained head
    double eval_acc = 0.0;
  };
  struct Student {
    Model model;
    std::vector<MetricsRow> rows;
    double eval_acc = 0.0;
  };

  const DataBundle& bundle(const ExperimentConfig& cfg);
  const Teacher& teacher(const ExperimentConfig& cfg);
  const Student& student(const ExperimentConfig& cfg);
  void clear();

 private:
  std::map<std::string, DataBundle> bundles_;
  std::map<std::string, Teacher> teachers_;
  std::map<std::string, Student> students_;
};

/// The generated or loaded data for a config; UDA/SSL generators are seeded
/// with cfg.seed and sized by the teacher's pool.
DataBundle make_bundle(const ExperimentConfig& cfg);

struct ExperimentResult {
  MetricsLog log;
  Model student;
  std::filesystem::path run_dir;  // empty when cfg.output_dir is empty
};

/// data -> teacher pretrain on the pool (frozen afterwards) -> student
/// pretrain on D_L -> linear probe (prediction-level methods) -> method ->
/// outputs. Failures raise StageError naming the stage; a run directory that
/// still holds an INCOMPLETE marker did not finish.
///
/// With a non-empty cfg.output_dir, writes <output_dir>/<hash>/ containing
/// config.json, metrics.csv, summary.txt, checkpoints/student.ckpt (inference
/// path only) and checkpoints/full.ckpt (student, teacher encoder, projectors).
ExperimentResult run_experiment(const ExperimentConfig& cfg, ExperimentCache* cache = nullptr);

struct SweepAxis {
  std::string name;  // teacher_scale, method, ratio, kd_epochs, lambda_u, lambda_ft, lambda_ftilde, head_init
  std::vector<std::string> values;
};

/// "ratio=30,10,5,1" -> {ratio, [30, 10, 5, 1]}.
SweepAxis parse_axis(std::string_view spec);

struct SweepRun {
  std::vector<std::string> cell;  // one value per axis
  std::uint64_t seed = 0;
  std::string config_hash;
  std::optional<MetricsLog> log;  // absent when the run failed
  std::string error;
};

struct SweepCell {
  std::vector<std::string> cell;
  std::size_t runs = 0;
  std::size_t failures = 0;
  double mean_acc = 0.0;
  double std_acc = 0.0;
  std::optional<double> mean_cka;  // CKA(f_s, f~_t), when every run reported it
  std::optional<double> std_cka;
};

struct SweepResult {
  std::vector<SweepAxis> axes;
  std::vector<SweepRun> runs;  // cell-major, seeds in the given order

  /// Aggregates in cell order. Means are plain left folds over the runs in
  /// seed order and the spread is the sample standard deviation (0 for n = 1).
  std::vector<SweepCell> aggregate() const;
  /// One row per run followed by one aggregate row per cell.
  std::string csv() const;
};

/// Cross product of all axes times seeds. A failing run is recorded in its
/// SweepRun and does not stop the others.
SweepResult run_sweep(const ExperimentConfig& base, const std::vector<SweepAxis>& axes,
                      const std::vector<std::uint64_t>& seeds, ExperimentCache* cache = nullptr);

}  // namespace customkd
