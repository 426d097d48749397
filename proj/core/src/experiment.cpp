#include "customkd/experiment.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "customkd/checkpoint.hpp"
#include "customkd/distill.hpp"
#include "customkd/errors.hpp"
#include "customkd/metrics.hpp"
#include "customkd/random.hpp"

namespace customkd {

namespace {

std::vector<std::size_t> encoder_dims(std::size_t input, const std::vector<std::size_t>& hidden) {
  std::vector<std::size_t> dims{input};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  return dims;
}

// Cache keys are canonical serializations of the fields each stage reads.
std::string bundle_key(const ExperimentConfig& cfg) {
  ExperimentConfig k;
  k.seed = cfg.seed;
  k.benchmark = cfg.benchmark;
  k.teacher.pool_per_class = cfg.teacher.pool_per_class;
  return serialize_config(k);
}

std::string teacher_key(const ExperimentConfig& cfg) {
  ExperimentConfig k;
  k.seed = cfg.seed;
  k.benchmark = cfg.benchmark;
  k.teacher = cfg.teacher;
  k.teacher.preset.clear();
  k.training.batch_size = cfg.training.batch_size;
  k.training.momentum = cfg.training.momentum;
  return serialize_config(k);
}

std::string student_key(const ExperimentConfig& cfg) {
  ExperimentConfig k;
  k.seed = cfg.seed;
  k.benchmark = cfg.benchmark;
  k.teacher.pool_per_class = cfg.teacher.pool_per_class;
  k.student = cfg.student;
  k.training.batch_size = cfg.training.batch_size;
  k.training.momentum = cfg.training.momentum;
  return serialize_config(k);
}

ExperimentCache::Teacher train_teacher(const ExperimentConfig& cfg, const DataBundle& data) {
  const Dataset& pool = data.pool.empty() ? data.labeled : data.pool;
  auto r = pretrain(encoder_dims(data.meta.dim, cfg.teacher.hidden), data.meta.classes, pool, cfg.teacher.epochs,
                    cfg.teacher.lr, derive_seed(cfg.seed, "teacher"), cfg.training.batch_size, cfg.training.momentum);
  ExperimentCache::Teacher t{std::move(r.model), 0.0};
  if (!data.eval.empty()) t.eval_acc = accuracy(t.model, data.eval);
  return t;
}

ExperimentCache::Student train_student(const ExperimentConfig& cfg, const DataBundle& data) {
  auto r = pretrain(encoder_dims(data.meta.dim, cfg.student.hidden), data.meta.classes, data.labeled,
                    cfg.student.epochs, cfg.student.lr, derive_seed(cfg.seed, "student"), cfg.training.batch_size,
                    cfg.training.momentum, data.eval.empty() ? nullptr : &data.eval);
  ExperimentCache::Student s{std::move(r.model), std::move(r.rows), 0.0};
  if (!data.eval.empty()) s.eval_acc = accuracy(s.model, data.eval);
  return s;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

// Runs `fn`, rethrowing anything it raises as a StageError tagged `stage`.
template <typename F>
auto in_stage(const char* stage, F&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

}  // namespace

DataBundle make_bundle(const ExperimentConfig& cfg) {
  switch (cfg.benchmark.kind) {
    case BenchmarkKind::kUda: {
      UdaSpec s = cfg.benchmark.uda;
      s.seed = cfg.seed;
      s.pool_per_class = cfg.teacher.pool_per_class;
      return gen_uda_benchmark(s);
    }
    case BenchmarkKind::kSsl: {
      SslSpec s = cfg.benchmark.ssl;
      s.seed = cfg.seed;
      s.pool_per_class = cfg.teacher.pool_per_class;
      return gen_ssl_benchmark(s);
    }
    case BenchmarkKind::kCsv:
      return load_csv(cfg.benchmark.csv_path);
  }
  throw ConfigError("/benchmark/kind", "unsupported benchmark");
}

const DataBundle& ExperimentCache::bundle(const ExperimentConfig& cfg) {
  const auto key = bundle_key(cfg);
  auto it = bundles_.find(key);
  if (it == bundles_.end()) it = bundles_.emplace(key, make_bundle(cfg)).first;
  return it->second;
}

const ExperimentCache::Teacher& ExperimentCache::teacher(const ExperimentConfig& cfg) {
  const auto key = teacher_key(cfg);
  auto it = teachers_.find(key);
  if (it == teachers_.end()) it = teachers_.emplace(key, train_teacher(cfg, bundle(cfg))).first;
  return it->second;
}

const ExperimentCache::Student& ExperimentCache::student(const ExperimentConfig& cfg) {
  const auto key = student_key(cfg);
  auto it = students_.find(key);
  if (it == students_.end()) it = students_.emplace(key, train_student(cfg, bundle(cfg))).first;
  return it->second;
}

void ExperimentCache::clear() {
  bundles_.clear();
  teachers_.clear();
  students_.clear();
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, ExperimentCache* cache) {
  const auto start = std::chrono::steady_clock::now();
  ExperimentCache local;
  ExperimentCache& c = cache ? *cache : local;
  const std::string hash = config_hash(cfg);

  ExperimentResult result;
  if (!cfg.output_dir.empty()) {
    in_stage("output", [&] {
      result.run_dir = std::filesystem::path(cfg.output_dir) / hash;
      std::filesystem::create_directories(result.run_dir / "checkpoints");
      write_file(result.run_dir / "INCOMPLETE", "run did not finish\n");
      write_file(result.run_dir / "config.json", serialize_config(cfg) + "\n");
    });
  }

  const DataBundle& data = in_stage("data", [&]() -> const DataBundle& {
    const auto& b = c.bundle(cfg);
    if (b.labeled.empty()) throw DegenerateInput("labeled set is empty");
    if (b.meta.classes < 2) throw DegenerateInput("need at least two classes");
    return b;
  });
  const auto& teacher = in_stage("teacher_pretrain", [&]() -> const ExperimentCache::Teacher& { return c.teacher(cfg); });
  const auto& student = in_stage("student_pretrain", [&]() -> const ExperimentCache::Student& { return c.student(cfg); });

  TrainOptions options = cfg.training;
  if (cfg.temperature) options.temperature = *cfg.temperature;
  auto ctx = in_stage("setup", [&] {
    return make_train_context(student.model.clone(), teacher.model.encoder.clone(), data, cfg.weights, options,
                              cfg.method, derive_seed(cfg.seed, "method"));
  });

  std::optional<double> probe_acc;
  if (is_prediction_level(cfg.method)) {
    in_stage("probe", [&] {
      ctx.probe_head = linear_probe(ctx.teacher_encoder, data.labeled, cfg.probe.epochs, cfg.probe.lr,
                                    derive_seed(cfg.seed, "probe"), cfg.training.batch_size, cfg.training.momentum);
      if (!data.eval.empty()) {
        probe_acc = accuracy(ctx.probe_head->forward(ctx.teacher_encoder.forward(data.eval.all()).detach()),
                             data.eval.labels);
      }
    });
  }

  MetricsLog method_log = in_stage("method", [&] {
    if (cfg.method == Method::kCustomKd) return train_customkd(ctx, make_stage_plan(cfg.kd_epochs, cfg.ratio));
    return run_baseline(cfg.method, ctx, cfg.kd_epochs);
  });

  MetricsLog& log = result.log;
  log.rows = student.rows;
  log.rows.insert(log.rows.end(), method_log.rows.begin(), method_log.rows.end());
  log.summary = method_log.summary;
  log.summary.pretrained_eval_acc = student.eval_acc;
  log.summary.teacher_eval_acc = teacher.eval_acc;
  log.summary.teacher_probe_acc = probe_acc;
  log.summary.config_hash = hash;
  result.student = ctx.student.clone();

  if (!cfg.output_dir.empty()) {
    in_stage("output", [&] {
      log.summary.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      write_file(result.run_dir / "metrics.csv", log.csv());
      write_file(result.run_dir / "summary.txt", log.summary_text());
      Checkpoint inference;
      inference.add_model("student", ctx.student);
      inference.save(result.run_dir / "checkpoints" / "student.ckpt");
      Checkpoint full;
      full.add_model("student", ctx.student);
      full.add_encoder("teacher.encoder", ctx.teacher_encoder);
      full.add_projection("proj_t", ctx.proj_t);
      full.add_projection("proj_s", ctx.proj_s);
      if (ctx.probe_head) full.add_head("teacher.probe", *ctx.probe_head);
      full.save(result.run_dir / "checkpoints" / "full.ckpt");
      std::filesystem::remove(result.run_dir / "INCOMPLETE");
    });
  } else {
    log.summary.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
  return result;
}

SweepAxis parse_axis(std::string_view spec) {
  const auto eq = spec.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("/axis", "expected name=v1,v2,... but got '" + std::string(spec) + "'");
  }
  SweepAxis axis{std::string(spec.substr(0, eq)), {}};
  std::string_view rest = spec.substr(eq + 1);
  while (true) {
    const auto comma = rest.find(',');
    auto v = rest.substr(0, comma);
    if (v.empty()) throw ConfigError("/axis/" + axis.name, "empty value");
    axis.values.emplace_back(v);
    if (comma == std::string_view::npos) break;
    rest = rest.substr(comma + 1);
  }
  return axis;
}

SweepResult run_sweep(const ExperimentConfig& base, const std::vector<SweepAxis>& axes,
                      const std::vector<std::uint64_t>& seeds, ExperimentCache* cache) {
  if (seeds.empty()) throw ContractViolation("run_sweep: no seeds");
  for (const auto& a : axes) {
    if (a.values.empty()) throw ContractViolation("run_sweep: axis '" + a.name + "' has no values");
  }
  ExperimentCache local;
  ExperimentCache& c = cache ? *cache : local;
  SweepResult result;
  result.axes = axes;

  std::vector<std::size_t> index(axes.size(), 0);
  while (true) {
    std::vector<std::string> cell;
    for (std::size_t a = 0; a < axes.size(); ++a) cell.push_back(axes[a].values[index[a]]);
    for (auto seed : seeds) {
      SweepRun run{cell, seed, {}, std::nullopt, {}};
      try {
        ExperimentConfig cfg = base;
        for (std::size_t a = 0; a < axes.size(); ++a) apply_override(cfg, axes[a].name, cell[a]);
        cfg.seed = seed;
        run.config_hash = config_hash(cfg);
        run.log = run_experiment(cfg, &c).log;
      } catch (const std::exception& e) {
        run.error = e.what();
      }
      result.runs.push_back(std::move(run));
    }
    // Odometer over the axes, last axis fastest.
    std::size_t a = axes.size();
    while (a > 0) {
      --a;
      if (++index[a] < axes[a].values.size()) break;
      index[a] = 0;
      if (a == 0) return result;
    }
    if (axes.empty()) return result;
  }
}

std::vector<SweepCell> SweepResult::aggregate() const {
  std::vector<SweepCell> cells;
  for (const auto& run : runs) {
    if (cells.empty() || cells.back().cell != run.cell) {
      SweepCell c;
      c.cell = run.cell;
      cells.push_back(std::move(c));
    }
  }
  for (auto& cell : cells) {
    std::vector<double> acc;
    std::vector<double> cka;
    bool all_cka = true;
    for (const auto& run : runs) {
      if (run.cell != cell.cell) continue;
      ++cell.runs;
      if (!run.log) {
        ++cell.failures;
        continue;
      }
      acc.push_back(run.log->summary.final_eval_acc);
      if (run.log->summary.final_cka_fs_ftilde) {
        cka.push_back(*run.log->summary.final_cka_fs_ftilde);
      } else {
        all_cka = false;
      }
    }
    auto mean_std = [](const std::vector<double>& v) {
      double sum = 0.0;
      for (double x : v) sum += x;
      const double mean = sum / static_cast<double>(v.size());
      double ss = 0.0;
      for (double x : v) ss += (x - mean) * (x - mean);
      const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
      return std::pair{mean, sd};
    };
    if (!acc.empty()) std::tie(cell.mean_acc, cell.std_acc) = mean_std(acc);
    if (!cka.empty() && all_cka) {
      auto [m, s] = mean_std(cka);
      cell.mean_cka = m;
      cell.std_cka = s;
    }
  }
  return cells;
}

std::string SweepResult::csv() const {
  std::ostringstream os;
  for (const auto& a : axes) os << a.name << ',';
  os << "row,seed,n,failures,final_eval_acc,final_eval_acc_std,cka_fs_ftilde,cka_fs_ftilde_std,config_hash,error\n";
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  auto clean = [](std::string s) {
    for (char& ch : s) {
      if (ch == ',' || ch == '\n' || ch == '\r') ch = ';';
    }
    return s;
  };
  for (const auto& run : runs) {
    for (const auto& v : run.cell) os << v << ',';
    os << "run," << run.seed << ",1," << (run.log ? 0 : 1) << ',';
    if (run.log) {
      os << format_double(run.log->summary.final_eval_acc) << ",," << opt(run.log->summary.final_cka_fs_ftilde) << ",,";
    } else {
      os << ",,,,";
    }
    os << run.config_hash << ',' << clean(run.error) << '\n';
  }
  for (const auto& cell : aggregate()) {
    for (const auto& v : cell.cell) os << v << ',';
    os << "aggregate,," << cell.runs << ',' << cell.failures << ',';
    if (cell.failures < cell.runs) {
      os << format_double(cell.mean_acc) << ',' << format_double(cell.std_acc) << ',';
    } else {
      os << ",,";
    }
    os << opt(cell.mean_cka) << ',' << opt(cell.std_cka) << ",,\n";
  }
  return os.str();
}

}  // namespace customkd
