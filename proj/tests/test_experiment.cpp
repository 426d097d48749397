#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"

#include "customkd/checkpoint.hpp"
#include "customkd/config.hpp"
#include "customkd/errors.hpp"
#include "customkd/experiment.hpp"

using namespace customkd;
namespace fs = std::filesystem;

namespace {

/// A few-second config: tiny teacher, short schedules.
ExperimentConfig quick_config(const std::string& method = "customkd") {
  auto cfg = parse_config(R"({
    "benchmark": {"kind": "uda", "labeled_per_class": 10, "unlabeled_per_class": 20, "eval_per_class": 20},
    "teacher": {"preset": "tiny", "epochs": 8},
    "student": {"hidden": [16], "epochs": 5},
    "schedule": {"kd_epochs": 4},
    "method": "customkd",
    "baseline": {"temperature": 4}
  })");
  apply_override(cfg, "method", method);
  return cfg;
}

ExperimentCache& shared_cache() {
  static ExperimentCache cache;
  return cache;
}

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("customkd_experiment_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> parse_rows(const std::string& csv) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream is(csv);
  std::string line;
  while (std::getline(is, line)) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      auto pos = line.find(',', start);
      cells.push_back(line.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
      if (pos == std::string::npos) break;
      start = pos + 1;
    }
    rows.push_back(std::move(cells));
  }
  return rows;
}

}  // namespace

TEST_CASE("method none logs pretraining and plain distillation epochs") {
  auto cfg = quick_config("none");
  auto r = run_experiment(cfg, &shared_cache());
  std::vector<Stage> expected(cfg.student.epochs, Stage::kPretrain);
  expected.insert(expected.end(), cfg.kd_epochs, Stage::kDistillation);
  CHECK(r.log.stage_sequence(true) == expected);
  for (const auto& row : r.log.rows) {
    CHECK(row.loss_ft == 0.0);
    CHECK(row.loss_ftilde == 0.0);
  }
  CHECK(r.log.summary.config_hash == config_hash(cfg));
  CHECK(r.log.summary.teacher_eval_acc.has_value());
  CHECK_FALSE(r.log.summary.teacher_probe_acc.has_value());
}

TEST_CASE("customkd alternation matches the plan") {
  for (std::size_t ratio : {1, 2}) {
    auto cfg = quick_config();
    cfg.ratio = ratio;
    auto r = run_experiment(cfg, &shared_cache());
    CHECK(r.log.stage_sequence() == make_stage_plan(cfg.kd_epochs, ratio).sequence);
    for (const auto& row : r.log.rows) {
      if (row.stage != Stage::kDistillation) continue;
      const double expected = row.loss_l + cfg.weights.lambda_u * row.loss_u + cfg.weights.lambda_ft * row.loss_ft +
                              cfg.weights.lambda_ftilde * row.loss_ftilde;
      CHECK(std::abs(row.total - expected) < 1e-10);
    }
  }
}

TEST_CASE("prediction-level methods probe the teacher first") {
  auto r = run_experiment(quick_config("logits"), &shared_cache());
  CHECK(r.log.summary.teacher_probe_acc.has_value());
  bool any_pred = false;
  for (const auto& row : r.log.rows) any_pred = any_pred || row.loss_pred > 0.0;
  CHECK(any_pred);
}

TEST_CASE("identical configs give byte-identical metrics") {
  auto cfg = quick_config();
  auto a = run_experiment(cfg);
  auto b = run_experiment(cfg);
  CHECK(a.log.csv() == b.log.csv());
  // The cache only memoizes; it never changes results.
  auto cached = run_experiment(cfg, &shared_cache());
  CHECK(cached.log.csv() == a.log.csv());
}

TEST_CASE("artifacts on disk") {
  auto dir = scratch_dir("artifacts");
  auto cfg = quick_config();
  cfg.output_dir = dir.string();
  auto r = run_experiment(cfg, &shared_cache());
  CHECK(r.run_dir == dir / config_hash(cfg));
  CHECK(fs::exists(r.run_dir / "metrics.csv"));
  CHECK(fs::exists(r.run_dir / "summary.txt"));
  CHECK(fs::exists(r.run_dir / "config.json"));
  CHECK_FALSE(fs::exists(r.run_dir / "INCOMPLETE"));
  CHECK(read_file(r.run_dir / "metrics.csv") == r.log.csv());
  CHECK(parse_config(read_file(r.run_dir / "config.json")) == cfg);
  CHECK(read_file(r.run_dir / "summary.txt").find("config_hash = " + config_hash(cfg)) != std::string::npos);

  auto student = Checkpoint::load(r.run_dir / "checkpoints" / "student.ckpt");
  CHECK_FALSE(student.has_prefix("teacher"));
  CHECK_FALSE(student.has_prefix("proj_"));
  auto full = Checkpoint::load(r.run_dir / "checkpoints" / "full.ckpt");
  CHECK(full.has_prefix("teacher.encoder"));
  CHECK(full.has_prefix("proj_t"));
  CHECK(full.has_prefix("proj_s"));
  fs::remove_all(dir);
}

TEST_CASE("failures are stage-tagged and leave the run marked incomplete") {
  auto dir = scratch_dir("failure");
  auto cfg = parse_config(R"({"benchmark": {"kind": "csv", "path": "/nonexistent/data.csv"}, "method": "none"})");
  cfg.output_dir = dir.string();
  try {
    run_experiment(cfg);
    FAIL("expected StageError");
  } catch (const StageError& e) {
    CHECK(e.stage() == "data");
  }
  CHECK(fs::exists(dir / config_hash(cfg) / "INCOMPLETE"));
  fs::remove_all(dir);
}

TEST_CASE("final target accuracy does not fall below the pretrained student") {
  auto cfg = parse_config(R"({"benchmark": {"kind": "uda"}, "method": "customkd"})");
  auto r = run_experiment(cfg, &shared_cache());
  CHECK(r.log.summary.final_eval_acc >= r.log.summary.pretrained_eval_acc);
}

TEST_CASE("sweep axes") {
  auto axis = parse_axis("ratio=30,10,5,1");
  CHECK(axis.name == "ratio");
  CHECK(axis.values == std::vector<std::string>{"30", "10", "5", "1"});
  CHECK_THROWS_AS(parse_axis("ratio"), ConfigError);
  CHECK_THROWS_AS(parse_axis("ratio=1,,2"), ConfigError);
  CHECK_THROWS_AS(parse_axis("=1"), ConfigError);
}

TEST_CASE("sweeps") {
  auto base = quick_config();

  SUBCASE("cross product shape and cell order") {
    auto s = run_sweep(base, {parse_axis("teacher_scale=tiny,small"), parse_axis("method=fitnet,customkd")}, {1},
                       &shared_cache());
    auto cells = s.aggregate();
    REQUIRE(cells.size() == 4);
    CHECK(cells[0].cell == std::vector<std::string>{"tiny", "fitnet"});
    CHECK(cells[1].cell == std::vector<std::string>{"tiny", "customkd"});
    CHECK(cells[3].cell == std::vector<std::string>{"small", "customkd"});
  }
  SUBCASE("aggregate rows are recomputable from run rows") {
    auto s = run_sweep(base, {parse_axis("lambda_ftilde=0,10")}, {1, 2, 3}, &shared_cache());
    auto rows = parse_rows(s.csv());
    REQUIRE(rows.size() == 1 + 6 + 2);
    CHECK(rows[0][0] == "lambda_ftilde");
    for (std::size_t cell = 0; cell < 2; ++cell) {
      std::vector<double> acc;
      for (std::size_t r = 1; r <= 6; ++r) {
        if (rows[r][0] == rows[7 + cell][0]) acc.push_back(std::stod(rows[r][5]));
      }
      REQUIRE(acc.size() == 3);
      double sum = 0.0;
      for (double a : acc) sum += a;
      const double mean = sum / 3.0;
      double ss = 0.0;
      for (double a : acc) ss += (a - mean) * (a - mean);
      const auto& agg = rows[7 + cell];
      CHECK(agg[1] == "aggregate");
      CHECK(agg[3] == "3");
      CHECK(std::stod(agg[5]) == mean);
      CHECK(std::stod(agg[6]) == std::sqrt(ss / 2.0));
    }
  }
  SUBCASE("a single cell and seed reproduces run_experiment") {
    auto s = run_sweep(base, {parse_axis("ratio=2")}, {5}, &shared_cache());
    auto cfg = base;
    cfg.ratio = 2;
    cfg.seed = 5;
    REQUIRE(s.runs.size() == 1);
    REQUIRE(s.runs[0].log.has_value());
    CHECK(s.runs[0].log->csv() == run_experiment(cfg).log.csv());
    CHECK(s.runs[0].config_hash == config_hash(cfg));
  }
  SUBCASE("a failing cell is recorded without stopping its siblings") {
    auto no_temperature = base;
    no_temperature.temperature.reset();
    auto s = run_sweep(no_temperature, {parse_axis("method=soft_target,none")}, {1}, &shared_cache());
    auto cells = s.aggregate();
    REQUIRE(cells.size() == 2);
    CHECK(cells[0].failures == 1);
    CHECK(cells[1].failures == 0);
    CHECK_FALSE(s.runs[0].error.empty());
    CHECK(s.runs[1].log.has_value());
    CHECK(s.csv().find("/baseline/temperature") != std::string::npos);
  }
  SUBCASE("ratio grid realizes each schedule exactly") {
    auto grid = base;
    grid.kd_epochs = 30;
    grid.student.epochs = 1;
    auto s = run_sweep(grid, {parse_axis("ratio=30,10,5,1")}, {1}, &shared_cache());
    for (const auto& run : s.runs) {
      REQUIRE(run.log.has_value());
      CHECK(run.log->stage_sequence() == make_stage_plan(30, std::stoul(run.cell[0])).sequence);
    }
  }
  SUBCASE("invalid sweeps") {
    CHECK_THROWS_AS(run_sweep(base, {parse_axis("ratio=1")}, {}), ContractViolation);
    CHECK_THROWS_AS(run_sweep(base, {SweepAxis{"ratio", {}}}, {1}), ContractViolation);
  }
}
