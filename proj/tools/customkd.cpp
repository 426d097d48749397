// customkd: run one experiment, sweep a grid, or probe CKA on a saved run.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "customkd/checkpoint.hpp"
#include "customkd/errors.hpp"
#include "customkd/experiment.hpp"
#include "customkd/metrics.hpp"

namespace fs = std::filesystem;
using namespace customkd;

namespace {

constexpr const char* kOutEnv = "CUSTOMKD_OUT_DIR";

// --out wins, then the environment, then the config file, then ./runs.
std::string resolve_out(const std::string& flag, const ExperimentConfig& cfg) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv(kOutEnv); env && *env) return env;
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  return "runs";
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto comma = text.find(',', pos);
    if (comma == std::string::npos) comma = text.size();
    const auto tok = text.substr(pos, comma - pos);
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (tok.empty() || used != tok.size()) throw ConfigError("/seeds", "bad seed '" + tok + "'");
    seeds.push_back(v);
    pos = comma + 1;
  }
  return seeds;
}

int cmd_run(const std::string& config, std::optional<std::uint64_t> seed, const std::string& out) {
  auto cfg = load_config(config);
  if (seed) cfg.seed = *seed;
  cfg.output_dir = resolve_out(out, cfg);
  auto r = run_experiment(cfg);
  std::cout << r.log.summary_text();
  std::cout << "run_dir: " << r.run_dir.string() << "\n";
  return 0;
}

int cmd_sweep(const std::string& config, const std::vector<std::string>& axis_specs, const std::string& seeds_text,
              const std::string& out, const std::string& csv_path) {
  auto cfg = load_config(config);
  cfg.output_dir = resolve_out(out, cfg);
  std::vector<SweepAxis> axes;
  for (const auto& a : axis_specs) axes.push_back(parse_axis(a));
  auto result = run_sweep(cfg, axes, parse_seeds(seeds_text));
  const auto table = result.csv();
  const fs::path path = csv_path.empty() ? fs::path(cfg.output_dir) / ("sweep-" + config_hash(cfg) + ".csv") : fs::path(csv_path);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream(path, std::ios::binary) << table;
  std::cout << table;
  std::cerr << "wrote " << path.string() << "\n";
  std::size_t failed = 0;
  for (const auto& run : result.runs) {
    if (!run.log) {
      ++failed;
      std::cerr << "failed cell (seed " << run.seed << "): " << run.error << "\n";
    }
  }
  return failed == 0 ? 0 : 1;
}

int cmd_probe(const std::string& checkpoint, const std::string& data_path, const std::string& split,
              std::size_t max_rows, const std::string& dump_dir) {
  const auto ckpt = Checkpoint::load(checkpoint);
  const auto bundle = load_csv(data_path);
  const Dataset* data = nullptr;
  if (split == "eval") data = &bundle.eval;
  if (split == "labeled") data = &bundle.labeled;
  if (split == "unlabeled") data = &bundle.unlabeled;
  if (split == "pool") data = &bundle.pool;
  if (!data) throw ConfigError("/split", "expected eval, labeled, unlabeled or pool");
  if (data->empty()) throw DegenerateInput("split '" + split + "' has no rows in " + data_path);

  const auto student = ckpt.model("student");
  const auto fs_m = extract_features(student.encoder, nullptr, *data, FeatureSource::kStudent, max_rows);
  std::cout << "rows: " << fs_m.rows << "\n";
  if (data->labels.front() != kUnlabeled) std::cout << "student_acc: " << format_double(accuracy(student, *data)) << "\n";

  if (!ckpt.has_prefix("teacher.encoder")) {
    std::cout << "no teacher in checkpoint; CKA skipped\n";
    return 0;
  }
  const auto teacher = ckpt.encoder("teacher.encoder");
  const auto ft = extract_features(teacher, nullptr, *data, FeatureSource::kTeacher, max_rows);
  std::cout << "cka_fs_ft: " << format_double(linear_cka(fs_m, ft)) << "\n";
  std::optional<FeatureMatrix> ftilde;
  if (ckpt.has_prefix("proj_t")) {
    auto proj = ckpt.projection("proj_t");
    ftilde = extract_features(teacher, &proj, *data, FeatureSource::kTeacherCustomized, max_rows);
    std::cout << "cka_fs_ftilde: " << format_double(linear_cka(fs_m, *ftilde)) << "\n";
  }
  if (!dump_dir.empty()) {
    fs::create_directories(dump_dir);
    save_features_csv(fs_m, fs::path(dump_dir) / "f_s.csv");
    save_features_csv(ft, fs::path(dump_dir) / "f_t.csv");
    if (ftilde) save_features_csv(*ftilde, fs::path(dump_dir) / "f_tilde_t.csv");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CustomKD experiments on synthetic or CSV benchmarks"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Run one experiment from a JSON config");
  std::string run_config, run_out;
  std::optional<std::uint64_t> run_seed;
  run->add_option("--config", run_config, "Config file")->required()->check(CLI::ExistingFile);
  run->add_option("--seed", run_seed, "Override the config seed");
  run->add_option("--out", run_out, std::string("Output directory (default: $") + kOutEnv + ", then ./runs)");

  auto* sweep = app.add_subcommand("sweep", "Cross product of axes times seeds");
  std::string sweep_config, sweep_seeds = "0", sweep_out, sweep_csv;
  std::vector<std::string> sweep_axes;
  sweep->add_option("--config", sweep_config, "Base config file")->required()->check(CLI::ExistingFile);
  sweep->add_option("--axis", sweep_axes, "name=v1,v2,... (repeatable)")->required();
  sweep->add_option("--seeds", sweep_seeds, "Comma-separated seeds");
  sweep->add_option("--out", sweep_out, "Output directory");
  sweep->add_option("--csv", sweep_csv, "Aggregated table path (default: <out>/sweep-<hash>.csv)");

  auto* probe = app.add_subcommand("probe-cka", "Linear CKA between student and teacher features of a saved run");
  std::string probe_ckpt, probe_data, probe_split = "eval", probe_dump;
  std::size_t probe_rows = kCkaMaxSamples;
  probe->add_option("--checkpoint", probe_ckpt, "full.ckpt or student.ckpt")->required()->check(CLI::ExistingFile);
  probe->add_option("--data", probe_data, "Benchmark CSV")->required()->check(CLI::ExistingFile);
  probe->add_option("--split", probe_split, "eval | labeled | unlabeled | pool");
  probe->add_option("--max-rows", probe_rows, "Row cap for the feature matrices");
  probe->add_option("--dump", probe_dump, "Write feature CSVs to this directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(run_config, run_seed, run_out);
    if (*sweep) return cmd_sweep(sweep_config, sweep_axes, sweep_seeds, sweep_out, sweep_csv);
    if (*probe) return cmd_probe(probe_ckpt, probe_data, probe_split, probe_rows, probe_dump);
  } catch (const ConfigError& e) {
    std::cerr << "config error at " << e.path() << ": " << e.what() << "\n";
    return 2;
  } catch (const StageError& e) {
    std::cerr << "stage " << e.stage() << " failed: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
