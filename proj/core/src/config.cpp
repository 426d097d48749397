#include "customkd/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "customkd/errors.hpp"
#include "customkd/random.hpp"
#include "json.hpp"

namespace customkd {

using nlohmann::json;

namespace {

// Teacher widths are the hidden layers; the final entry is the embedding size.
const std::vector<TeacherPreset>& presets() {
  static const std::vector<TeacherPreset> table = {
      {"tiny", {16}, 25},
      {"small", {32, 32}, 60},
      {"large", {64, 64, 32}, 200},
  };
  return table;
}

/// Walks one JSON object, remembering which keys were read so the rest can be
/// rejected as unknown.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "/" : path_, "expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  std::string child(const std::string& key) const { return path_ + "/" + key; }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!has(key)) return;
    read(raw(key), child(key), out);
  }

  template <typename T>
  void require(const std::string& key, T& out) {
    if (!has(key)) throw ConfigError(child(key), "missing required key");
    get(key, out);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(child(it.key()), "unknown key");
    }
  }

  static void read(const json& v, const std::string& path, double& out) {
    if (!v.is_number()) throw ConfigError(path, "expected a number");
    out = v.get<double>();
    if (!std::isfinite(out)) throw ConfigError(path, "expected a finite number");
  }
  static void read(const json& v, const std::string& path, std::size_t& out) {
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0) throw ConfigError(path, "expected a non-negative integer");
    out = v.get<std::size_t>();
  }
  static void read(const json& v, const std::string& path, bool& out) {
    if (!v.is_boolean()) throw ConfigError(path, "expected a boolean");
    out = v.get<bool>();
  }
  static void read(const json& v, const std::string& path, std::string& out) {
    if (!v.is_string()) throw ConfigError(path, "expected a string");
    out = v.get<std::string>();
  }
  static void read(const json& v, const std::string& path, std::vector<std::size_t>& out) {
    if (!v.is_array()) throw ConfigError(path, "expected an array of positive integers");
    out.clear();
    for (std::size_t i = 0; i < v.size(); ++i) {
      std::size_t x = 0;
      read(v[i], path + "/" + std::to_string(i), x);
      if (x == 0) throw ConfigError(path + "/" + std::to_string(i), "layer widths must be positive");
      out.push_back(x);
    }
  }
  static void read(const json& v, const std::string& path, std::optional<double>& out) {
    double x = 0.0;
    read(v, path, x);
    out = x;
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void positive(const std::string& path, double v) {
  if (!(v > 0.0)) throw ConfigError(path, "must be positive");
}
void non_negative(const std::string& path, double v) {
  if (!(v >= 0.0)) throw ConfigError(path, "must be non-negative");
}
void positive(const std::string& path, std::size_t v) {
  if (v == 0) throw ConfigError(path, "must be positive");
}

void parse_benchmark(const json& j, BenchmarkConfig& b) {
  ObjectReader r(j, "/benchmark");
  std::string kind;
  r.require("kind", kind);
  if (kind == "uda") {
    b.kind = BenchmarkKind::kUda;
    auto& s = b.uda;
    r.get("classes", s.classes);
    r.get("dim", s.dim);
    r.get("labeled_per_class", s.labeled_per_class);
    r.get("unlabeled_per_class", s.unlabeled_per_class);
    r.get("eval_per_class", s.eval_per_class);
    r.get("radius", s.radius);
    r.get("angle_deg", s.angle_deg);
    r.get("translation", s.translation);
    r.get("sigma_source", s.sigma_source);
    r.get("sigma_target", s.sigma_target);
    if (s.classes < 2) throw ConfigError("/benchmark/classes", "needs at least 2 classes");
    if (s.dim < 2) throw ConfigError("/benchmark/dim", "needs at least 2 dimensions");
    positive("/benchmark/labeled_per_class", s.labeled_per_class);
    positive("/benchmark/unlabeled_per_class", s.unlabeled_per_class);
    positive("/benchmark/eval_per_class", s.eval_per_class);
    positive("/benchmark/radius", s.radius);
    non_negative("/benchmark/sigma_source", s.sigma_source);
    non_negative("/benchmark/sigma_target", s.sigma_target);
  } else if (kind == "ssl") {
    b.kind = BenchmarkKind::kSsl;
    auto& s = b.ssl;
    r.get("classes", s.classes);
    r.get("dim", s.dim);
    r.get("labels_per_class", s.labels_per_class);
    r.get("unlabeled", s.unlabeled);
    r.get("eval_per_class", s.eval_per_class);
    r.get("radius", s.radius);
    r.get("sigma", s.sigma);
    if (s.classes < 2) throw ConfigError("/benchmark/classes", "needs at least 2 classes");
    if (s.dim < 2) throw ConfigError("/benchmark/dim", "needs at least 2 dimensions");
    positive("/benchmark/labels_per_class", s.labels_per_class);
    positive("/benchmark/unlabeled", s.unlabeled);
    positive("/benchmark/eval_per_class", s.eval_per_class);
    positive("/benchmark/radius", s.radius);
    non_negative("/benchmark/sigma", s.sigma);
  } else if (kind == "csv") {
    b.kind = BenchmarkKind::kCsv;
    r.require("path", b.csv_path);
  } else {
    throw ConfigError("/benchmark/kind", "expected one of uda, ssl, csv");
  }
  r.finish();
}

void parse_teacher(const json& j, TeacherConfig& t) {
  ObjectReader r(j, "/teacher");
  r.get("preset", t.preset);
  try {
    const auto& p = teacher_preset(t.preset);
    t.hidden = p.hidden;
    t.pool_per_class = p.pool_per_class;
  } catch (const ConfigError&) {
    throw ConfigError("/teacher/preset", "unknown preset '" + t.preset + "'");
  }
  r.get("hidden", t.hidden);
  r.get("pool_per_class", t.pool_per_class);
  r.get("epochs", t.epochs);
  r.get("lr", t.lr);
  if (t.hidden.empty()) throw ConfigError("/teacher/hidden", "needs at least one layer");
  non_negative("/teacher/lr", t.lr);
  r.finish();
}

void parse_student(const json& j, StudentConfig& s) {
  ObjectReader r(j, "/student");
  r.get("hidden", s.hidden);
  r.get("epochs", s.epochs);
  r.get("lr", s.lr);
  if (s.hidden.empty()) throw ConfigError("/student/hidden", "needs at least one layer");
  non_negative("/student/lr", s.lr);
  r.finish();
}

void parse_weights(const json& j, LossWeights& w) {
  ObjectReader r(j, "/weights");
  r.get("lambda_u", w.lambda_u);
  r.get("lambda_ft", w.lambda_ft);
  r.get("lambda_ftilde", w.lambda_ftilde);
  non_negative("/weights/lambda_u", w.lambda_u);
  non_negative("/weights/lambda_ft", w.lambda_ft);
  non_negative("/weights/lambda_ftilde", w.lambda_ftilde);
  r.finish();
}

void parse_schedule(const json& j, ExperimentConfig& c) {
  ObjectReader r(j, "/schedule");
  r.get("kd_epochs", c.kd_epochs);
  r.get("ratio", c.ratio);
  r.get("reinit_proj_t", c.training.reinit_proj_t);
  std::string head = c.training.head_init == HeadInit::kStudent ? "student" : "random";
  r.get("head_init", head);
  if (head == "student") {
    c.training.head_init = HeadInit::kStudent;
  } else if (head == "random") {
    c.training.head_init = HeadInit::kRandom;
  } else {
    throw ConfigError("/schedule/head_init", "expected student or random");
  }
  positive("/schedule/ratio", c.ratio);
  r.finish();
}

void parse_training(const json& j, TrainOptions& t) {
  ObjectReader r(j, "/training");
  r.get("batch_size", t.batch_size);
  r.get("lr_student", t.lr_student);
  r.get("lr_proj_t", t.lr_proj_t);
  r.get("momentum", t.momentum);
  positive("/training/batch_size", t.batch_size);
  non_negative("/training/lr_student", t.lr_student);
  non_negative("/training/lr_proj_t", t.lr_proj_t);
  if (!(t.momentum >= 0.0 && t.momentum < 1.0)) throw ConfigError("/training/momentum", "must lie in [0, 1)");
  r.finish();
}

void parse_baseline(const json& j, ExperimentConfig& c, bool& lambda_given) {
  ObjectReader r(j, "/baseline");
  r.get("temperature", c.temperature);
  if (r.has("lambda")) {
    r.get("lambda", c.training.lambda_pred);
    lambda_given = true;
  }
  if (c.temperature) positive("/baseline/temperature", *c.temperature);
  non_negative("/baseline/lambda", c.training.lambda_pred);
  r.finish();
}

void parse_probe(const json& j, ProbeConfig& p) {
  ObjectReader r(j, "/probe");
  r.get("epochs", p.epochs);
  r.get("lr", p.lr);
  non_negative("/probe/lr", p.lr);
  r.finish();
}

void parse_eval(const json& j, TrainOptions& t) {
  ObjectReader r(j, "/eval");
  r.get("every", t.eval_every);
  r.get("cka", t.cka_probes);
  std::string split(cka_split_name(t.cka_split));
  r.get("cka_split", split);
  auto k = parse_cka_split(split);
  if (!k) throw ConfigError("/eval/cka_split", "expected eval, labeled or unlabeled");
  t.cka_split = *k;
  r.finish();
}

/// Prediction-loss weights used when the config does not set one.
double default_lambda_pred(Method m) { return m == Method::kSoftTarget ? 0.1 : 1.0; }

json to_json(const ExperimentConfig& c, bool for_hash) {
  json j;
  j["seed"] = c.seed;
  json b;
  switch (c.benchmark.kind) {
    case BenchmarkKind::kUda: {
      const auto& s = c.benchmark.uda;
      b = {{"kind", "uda"},
           {"classes", s.classes},
           {"dim", s.dim},
           {"labeled_per_class", s.labeled_per_class},
           {"unlabeled_per_class", s.unlabeled_per_class},
           {"eval_per_class", s.eval_per_class},
           {"radius", s.radius},
           {"angle_deg", s.angle_deg},
           {"translation", s.translation},
           {"sigma_source", s.sigma_source},
           {"sigma_target", s.sigma_target}};
      break;
    }
    case BenchmarkKind::kSsl: {
      const auto& s = c.benchmark.ssl;
      b = {{"kind", "ssl"},
           {"classes", s.classes},
           {"dim", s.dim},
           {"labels_per_class", s.labels_per_class},
           {"unlabeled", s.unlabeled},
           {"eval_per_class", s.eval_per_class},
           {"radius", s.radius},
           {"sigma", s.sigma}};
      break;
    }
    case BenchmarkKind::kCsv:
      b = {{"kind", "csv"}, {"path", c.benchmark.csv_path}};
      break;
  }
  j["benchmark"] = b;
  json t = {{"hidden", c.teacher.hidden},
            {"pool_per_class", c.teacher.pool_per_class},
            {"epochs", c.teacher.epochs},
            {"lr", c.teacher.lr}};
  if (!for_hash) t["preset"] = c.teacher.preset;
  j["teacher"] = t;
  j["student"] = {{"hidden", c.student.hidden}, {"epochs", c.student.epochs}, {"lr", c.student.lr}};
  j["method"] = std::string(method_name(c.method));
  j["weights"] = {{"lambda_u", c.weights.lambda_u},
                  {"lambda_ft", c.weights.lambda_ft},
                  {"lambda_ftilde", c.weights.lambda_ftilde}};
  j["schedule"] = {{"kd_epochs", c.kd_epochs},
                   {"ratio", c.ratio},
                   {"reinit_proj_t", c.training.reinit_proj_t},
                   {"head_init", c.training.head_init == HeadInit::kStudent ? "student" : "random"}};
  j["training"] = {{"batch_size", c.training.batch_size},
                   {"lr_student", c.training.lr_student},
                   {"lr_proj_t", c.training.lr_proj_t},
                   {"momentum", c.training.momentum}};
  json base = {{"lambda", c.training.lambda_pred}};
  if (c.temperature) base["temperature"] = *c.temperature;
  j["baseline"] = base;
  j["probe"] = {{"epochs", c.probe.epochs}, {"lr", c.probe.lr}};
  j["eval"] = {{"every", c.training.eval_every},
               {"cka", c.training.cka_probes},
               {"cka_split", std::string(cka_split_name(c.training.cka_split))}};
  if (!for_hash) j["output_dir"] = c.output_dir;
  return j;
}

}  // namespace

const TeacherPreset& teacher_preset(std::string_view name) {
  for (const auto& p : presets()) {
    if (p.name == name) return p;
  }
  throw ConfigError("/teacher/preset", "unknown preset '" + std::string(name) + "'");
}

std::vector<std::string_view> teacher_preset_names() {
  std::vector<std::string_view> out;
  for (const auto& p : presets()) out.push_back(p.name);
  return out;
}

ExperimentConfig parse_config(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("/", std::string("malformed JSON: ") + e.what());
  }
  ExperimentConfig c;
  c.teacher.hidden = teacher_preset(c.teacher.preset).hidden;
  c.teacher.pool_per_class = teacher_preset(c.teacher.preset).pool_per_class;

  ObjectReader r(j, "");
  r.get("seed", c.seed);
  if (!r.has("benchmark")) throw ConfigError("/benchmark", "missing required key");
  parse_benchmark(r.raw("benchmark"), c.benchmark);
  std::string method;
  r.require("method", method);
  auto m = parse_method(method);
  if (!m) throw ConfigError("/method", "expected one of customkd, fitnet, soft_target, logits, none");
  c.method = *m;
  if (r.has("teacher")) parse_teacher(r.raw("teacher"), c.teacher);
  if (r.has("student")) parse_student(r.raw("student"), c.student);
  if (r.has("weights")) parse_weights(r.raw("weights"), c.weights);
  if (r.has("schedule")) parse_schedule(r.raw("schedule"), c);
  if (r.has("training")) parse_training(r.raw("training"), c.training);
  bool lambda_given = false;
  if (r.has("baseline")) parse_baseline(r.raw("baseline"), c, lambda_given);
  if (!lambda_given) c.training.lambda_pred = default_lambda_pred(c.method);
  if (r.has("probe")) parse_probe(r.raw("probe"), c.probe);
  if (r.has("eval")) parse_eval(r.raw("eval"), c.training);
  r.get("output_dir", c.output_dir);
  r.finish();

  if (c.method == Method::kSoftTarget && !c.temperature) {
    throw ConfigError("/baseline/temperature", "required for method soft_target");
  }
  if (c.temperature) c.training.temperature = *c.temperature;
  positive("/schedule/kd_epochs", c.kd_epochs);
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("/", "cannot open config file " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const ExperimentConfig& cfg) { return to_json(cfg, false).dump(2); }

std::string config_hash(const ExperimentConfig& cfg) {
  const auto h = fnv1a(to_json(cfg, true).dump());
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

template <typename T>
T parse_number(std::string_view key, std::string_view v) {
  T out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("/" + std::string(key), "cannot parse '" + std::string(v) + "'");
  }
  return out;
}

}  // namespace

void apply_override(ExperimentConfig& cfg, std::string_view key, std::string_view value) {
  if (key == "method") {
    auto m = parse_method(value);
    if (!m) throw ConfigError("/method", "unknown method '" + std::string(value) + "'");
    const bool had_default_lambda = cfg.training.lambda_pred == default_lambda_pred(cfg.method);
    cfg.method = *m;
    if (had_default_lambda) cfg.training.lambda_pred = default_lambda_pred(cfg.method);
    if (cfg.method == Method::kSoftTarget && !cfg.temperature) {
      throw ConfigError("/baseline/temperature", "required for method soft_target");
    }
  } else if (key == "teacher_scale") {
    const auto& p = teacher_preset(value);
    cfg.teacher.preset = std::string(p.name);
    cfg.teacher.hidden = p.hidden;
    cfg.teacher.pool_per_class = p.pool_per_class;
  } else if (key == "ratio") {
    cfg.ratio = parse_number<std::size_t>(key, value);
    positive("/schedule/ratio", cfg.ratio);
  } else if (key == "kd_epochs") {
    cfg.kd_epochs = parse_number<std::size_t>(key, value);
    positive("/schedule/kd_epochs", cfg.kd_epochs);
  } else if (key == "lambda_u") {
    cfg.weights.lambda_u = parse_number<double>(key, value);
  } else if (key == "lambda_ft") {
    cfg.weights.lambda_ft = parse_number<double>(key, value);
  } else if (key == "lambda_ftilde") {
    cfg.weights.lambda_ftilde = parse_number<double>(key, value);
  } else if (key == "head_init") {
    if (value == "student") {
      cfg.training.head_init = HeadInit::kStudent;
    } else if (value == "random") {
      cfg.training.head_init = HeadInit::kRandom;
    } else {
      throw ConfigError("/schedule/head_init", "expected student or random");
    }
  } else if (key == "seed") {
    cfg.seed = parse_number<std::uint64_t>(key, value);
  } else {
    throw ConfigError("/" + std::string(key), "unknown sweep axis");
  }
  for (double v : {cfg.weights.lambda_u, cfg.weights.lambda_ft, cfg.weights.lambda_ftilde}) {
    non_negative("/weights", v);
  }
}

}  // namespace customkd
