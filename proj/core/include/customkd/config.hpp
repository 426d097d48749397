#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "customkd/data.hpp"
#include "customkd/distill.hpp"
#include "customkd/losses.hpp"

namespace customkd {

enum class BenchmarkKind { kUda, kSsl, kCsv };

struct BenchmarkConfig {
  BenchmarkKind kind = BenchmarkKind::kUda;
  UdaSpec uda;
  SslSpec ssl;
  std::string csv_path;

  bool operator==(const BenchmarkConfig&) const = default;
};

/// Named teacher capacities standing in for small/base/large foundation models.
struct TeacherPreset {
  std::string_view name;
  std::vector<std::size_t> hidden;
  std::size_t pool_per_class;
};

/// tiny, small, large. Throws ConfigError for unknown names.
const TeacherPreset& teacher_preset(std::string_view name);
std::vector<std::string_view> teacher_preset_names();

struct TeacherConfig {
  std::string preset = "large";
  std::vector<std::size_t> hidden;  // encoder widths; last entry is the embedding size
  std::size_t pool_per_class = 0;
  std::size_t epochs = 60;
  double lr = 0.05;

  bool operator==(const TeacherConfig&) const = default;
};

struct StudentConfig {
  std::vector<std::size_t> hidden{32, 32};
  std::size_t epochs = 40;
  double lr = 0.05;

  bool operator==(const StudentConfig&) const = default;
};

struct ProbeConfig {
  std::size_t epochs = 20;
  double lr = 0.05;

  bool operator==(const ProbeConfig&) const = default;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  BenchmarkConfig benchmark;
  TeacherConfig teacher;
  StudentConfig student;
  Method method = Method::kCustomKd;
  LossWeights weights;
  std::size_t kd_epochs = 40;
  std::size_t ratio = 1;
  TrainOptions training;
  std::optional<double> temperature;  // required for soft_target
  ProbeConfig probe;
  std::string output_dir;  // not part of the config hash

  bool operator==(const ExperimentConfig&) const = default;
};

/// Parses and validates a JSON config document, filling defaults. Unknown keys,
/// missing required keys and type errors raise ConfigError with a JSON-pointer
/// style path to the offending field.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::string& path);

/// Canonical JSON with every field present; parse_config(serialize_config(c)) == c.
std::string serialize_config(const ExperimentConfig& cfg);

/// 16 hex digits over the canonical form without output_dir.
std::string config_hash(const ExperimentConfig& cfg);

/// Applies a single sweep-axis assignment ("ratio" = "5", "method" = "fitnet", ...).
void apply_override(ExperimentConfig& cfg, std::string_view key, std::string_view value);

}  // namespace customkd
