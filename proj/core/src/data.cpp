#include "customkd/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "customkd/errors.hpp"
#include "customkd/random.hpp"

namespace customkd {

void Dataset::push(std::span<const double> x, int label) {
  if (dim == 0 && empty()) dim = x.size();
  if (x.size() != dim) {
    throw SchemaError("sample of width " + std::to_string(x.size()) + " in dataset of width " + std::to_string(dim));
  }
  features.insert(features.end(), x.begin(), x.end());
  labels.push_back(label);
}

Tensor Dataset::batch(std::span<const std::size_t> index) const {
  std::vector<double> out;
  out.reserve(index.size() * dim);
  for (auto i : index) {
    auto r = row(i);
    out.insert(out.end(), r.begin(), r.end());
  }
  return Tensor::from({index.size(), dim}, std::move(out));
}

std::vector<int> Dataset::batch_labels(std::span<const std::size_t> index) const {
  std::vector<int> out;
  out.reserve(index.size());
  for (auto i : index) out.push_back(labels[i]);
  return out;
}

Tensor Dataset::all() const { return Tensor::from({size(), dim}, features); }

std::vector<std::size_t> Dataset::class_histogram(std::size_t classes) const {
  std::vector<std::size_t> h(classes, 0);
  for (int y : labels) {
    if (y >= 0 && static_cast<std::size_t>(y) < classes) ++h[static_cast<std::size_t>(y)];
  }
  return h;
}

namespace {

void check_geometry(std::size_t classes, std::size_t dim, double radius) {
  if (classes < 2) throw ContractViolation("benchmark needs at least 2 classes");
  if (dim < 2) throw ContractViolation("benchmark needs at least 2 feature dimensions");
  if (!(radius > 0.0) || !std::isfinite(radius)) throw ContractViolation("cluster radius must be positive");
}

std::vector<double> class_mean(std::size_t classes, std::size_t dim, double radius, int label) {
  std::vector<double> m(dim, 0.0);
  const double phi = 2.0 * std::numbers::pi * label / static_cast<double>(classes);
  m[0] = radius * std::cos(phi);
  m[1] = radius * std::sin(phi);
  return m;
}

/// Applies the source->target transform to a point.
void shift_to_target(std::vector<double>& x, double angle_deg, double translation) {
  const double a = angle_deg * std::numbers::pi / 180.0;
  const double u = x[0], v = x[1];
  x[0] = std::cos(a) * u - std::sin(a) * v;
  x[1] = std::sin(a) * u + std::cos(a) * v;
  if (x.size() == 2) {
    x[0] += translation / std::numbers::sqrt2;
    x[1] += translation / std::numbers::sqrt2;
  } else {
    for (std::size_t j = 2; j < x.size(); ++j) x[j] += translation;
  }
}

void shuffle_rows(Dataset& ds, Rng& rng) {
  std::vector<std::size_t> perm(ds.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  Dataset out;
  out.dim = ds.dim;
  for (auto i : perm) out.push(ds.row(i), ds.labels[i]);
  ds = std::move(out);
}

Dataset strip_labels(Dataset ds) {
  std::fill(ds.labels.begin(), ds.labels.end(), kUnlabeled);
  return ds;
}

void append(Dataset& dst, const Dataset& src) {
  if (dst.empty()) dst.dim = src.dim;
  for (std::size_t i = 0; i < src.size(); ++i) dst.push(src.row(i), src.labels[i]);
}

}  // namespace

Dataset sample_uda_domain(const UdaSpec& spec, int domain, std::size_t per_class, std::uint64_t seed) {
  check_geometry(spec.classes, spec.dim, spec.radius);
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double sigma = domain == 0 ? spec.sigma_source : spec.sigma_target;
  Dataset ds;
  ds.dim = spec.dim;
  for (std::size_t k = 0; k < spec.classes; ++k) {
    for (std::size_t i = 0; i < per_class; ++i) {
      auto x = class_mean(spec.classes, spec.dim, spec.radius, static_cast<int>(k));
      for (auto& v : x) v += sigma * normal(rng);
      if (domain == 1) shift_to_target(x, spec.angle_deg, spec.translation);
      ds.push(x, static_cast<int>(k));
    }
  }
  shuffle_rows(ds, rng);
  return ds;
}

DataBundle gen_uda_benchmark(const UdaSpec& spec) {
  check_geometry(spec.classes, spec.dim, spec.radius);
  if (spec.labeled_per_class == 0 || spec.unlabeled_per_class == 0 || spec.eval_per_class == 0) {
    throw ContractViolation("uda benchmark needs non-empty labeled, unlabeled and eval partitions");
  }
  if (!(spec.sigma_source >= 0.0) || !(spec.sigma_target >= 0.0) || !std::isfinite(spec.angle_deg) ||
      !std::isfinite(spec.translation)) {
    throw ContractViolation("uda benchmark: invalid shift/noise parameters");
  }
  DataBundle b;
  b.labeled = sample_uda_domain(spec, 0, spec.labeled_per_class, derive_seed(spec.seed, "uda.labeled"));
  b.unlabeled = strip_labels(sample_uda_domain(spec, 1, spec.unlabeled_per_class, derive_seed(spec.seed, "uda.unlabeled")));
  b.eval = sample_uda_domain(spec, 1, spec.eval_per_class, derive_seed(spec.seed, "uda.eval"));
  if (spec.pool_per_class > 0) {
    append(b.pool, sample_uda_domain(spec, 0, spec.pool_per_class, derive_seed(spec.seed, "uda.pool.source")));
    append(b.pool, sample_uda_domain(spec, 1, spec.pool_per_class, derive_seed(spec.seed, "uda.pool.target")));
    Rng rng(derive_seed(spec.seed, "uda.pool.shuffle"));
    shuffle_rows(b.pool, rng);
  }
  b.meta = {"uda", spec.dim, spec.classes, spec.seed,
            "rotation " + format_double(spec.angle_deg) + " deg, translation " + format_double(spec.translation)};
  return b;
}

DataBundle gen_ssl_benchmark(const SslSpec& spec) {
  check_geometry(spec.classes, spec.dim, spec.radius);
  if (spec.labels_per_class == 0) throw ContractViolation("ssl benchmark needs labels_per_class >= 1");
  if (spec.unlabeled == 0 || spec.eval_per_class == 0) throw ContractViolation("ssl benchmark needs data");
  if (!(spec.sigma >= 0.0)) throw ContractViolation("ssl benchmark: invalid noise level");

  UdaSpec geometry;
  geometry.classes = spec.classes;
  geometry.dim = spec.dim;
  geometry.radius = spec.radius;
  geometry.sigma_source = spec.sigma;

  DataBundle b;
  b.labeled = sample_uda_domain(geometry, 0, spec.labels_per_class, derive_seed(spec.seed, "ssl.labeled"));

  // Unlabeled classes are drawn uniformly at random rather than stratified.
  Rng rng(derive_seed(spec.seed, "ssl.unlabeled"));
  std::uniform_int_distribution<int> pick_class(0, static_cast<int>(spec.classes) - 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  b.unlabeled.dim = spec.dim;
  for (std::size_t i = 0; i < spec.unlabeled; ++i) {
    auto x = class_mean(spec.classes, spec.dim, spec.radius, pick_class(rng));
    for (auto& v : x) v += spec.sigma * normal(rng);
    b.unlabeled.push(x, kUnlabeled);
  }
  b.eval = sample_uda_domain(geometry, 0, spec.eval_per_class, derive_seed(spec.seed, "ssl.eval"));
  if (spec.pool_per_class > 0) {
    b.pool = sample_uda_domain(geometry, 0, spec.pool_per_class, derive_seed(spec.seed, "ssl.pool"));
  }
  b.meta = {"ssl", spec.dim, spec.classes, spec.seed,
            std::to_string(spec.labels_per_class) + " labels per class"};
  return b;
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  if (ec != std::errc()) throw std::runtime_error("cannot format double");
  return std::string(buf, end);
}

namespace {

void write_partition(std::ostringstream& os, const Dataset& ds, const char* domain) {
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (double v : ds.row(i)) os << format_double(v) << ',';
    os << ds.labels[i] << ',' << domain << '\n';
  }
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.remove_suffix(1);
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  return s;
}

}  // namespace

std::string format_csv(const DataBundle& bundle) {
  std::size_t dim = bundle.meta.dim;
  for (const auto* ds : {&bundle.labeled, &bundle.unlabeled, &bundle.eval, &bundle.pool}) {
    if (!ds->empty()) dim = ds->dim;
  }
  std::ostringstream os;
  for (std::size_t j = 0; j < dim; ++j) os << "feature_" << j << ',';
  os << "label,domain\n";
  write_partition(os, bundle.labeled, "source");
  write_partition(os, bundle.unlabeled, "target");
  write_partition(os, bundle.eval, "eval");
  write_partition(os, bundle.pool, "pool");
  return os.str();
}

DataBundle parse_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(is, line)) throw ParseError("missing header", 1);
  ++line_no;
  auto header = split_commas(trim(line));
  if (header.size() < 3 || trim(header[header.size() - 2]) != "label" || trim(header.back()) != "domain") {
    throw ParseError("header must be feature_0,...,feature_{d-1},label,domain", line_no);
  }
  const std::size_t dim = header.size() - 2;
  for (std::size_t j = 0; j < dim; ++j) {
    if (trim(header[j]) != "feature_" + std::to_string(j)) {
      throw ParseError("expected column feature_" + std::to_string(j), line_no);
    }
  }

  DataBundle b;
  b.meta.kind = "csv";
  b.meta.dim = dim;
  for (auto* ds : {&b.labeled, &b.unlabeled, &b.eval, &b.pool}) ds->dim = dim;
  int max_label = -1;
  std::vector<double> x(dim);
  while (std::getline(is, line)) {
    ++line_no;
    auto t = trim(line);
    if (t.empty()) continue;
    auto cells = split_commas(t);
    if (cells.size() != dim + 2) {
      throw SchemaError("line " + std::to_string(line_no) + ": expected " + std::to_string(dim + 2) + " columns, got " +
                        std::to_string(cells.size()));
    }
    for (std::size_t j = 0; j < dim; ++j) {
      auto c = trim(cells[j]);
      auto [ptr, ec] = std::from_chars(c.data(), c.data() + c.size(), x[j]);
      if (ec != std::errc() || ptr != c.data() + c.size() || !std::isfinite(x[j])) {
        throw ParseError("bad number '" + std::string(c) + "' in column " + std::to_string(j), line_no);
      }
    }
    int label = 0;
    auto lc = trim(cells[dim]);
    auto [lptr, lec] = std::from_chars(lc.data(), lc.data() + lc.size(), label);
    if (lec != std::errc() || lptr != lc.data() + lc.size() || label < kUnlabeled) {
      throw ParseError("bad label '" + std::string(lc) + "'", line_no);
    }
    auto domain = trim(cells[dim + 1]);
    Dataset* dst = nullptr;
    if (domain == "eval") {
      dst = &b.eval;
    } else if (domain == "pool") {
      dst = &b.pool;
    } else if (domain == "source" || domain == "target") {
      dst = label == kUnlabeled ? &b.unlabeled : &b.labeled;
    } else {
      throw ParseError("unknown domain '" + std::string(domain) + "'", line_no);
    }
    if (label == kUnlabeled && dst != &b.unlabeled) {
      throw ParseError("eval and pool rows must be labeled", line_no);
    }
    dst->push(x, label);
    max_label = std::max(max_label, label);
  }
  b.meta.classes = static_cast<std::size_t>(max_label + 1);
  return b;
}

DataBundle load_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  auto b = parse_csv(ss.str());
  b.meta.description = path.string();
  return b;
}

void save_csv(const DataBundle& bundle, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << format_csv(bundle);
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace customkd
