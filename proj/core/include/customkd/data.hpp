#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "customkd/tensor.hpp"

namespace customkd {

constexpr int kUnlabeled = -1;

/// Row-major sample matrix with one label per row (kUnlabeled when absent).
struct Dataset {
  std::size_t dim = 0;
  std::vector<double> features;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  std::span<const double> row(std::size_t i) const { return {features.data() + i * dim, dim}; }
  void push(std::span<const double> x, int label);

  Tensor batch(std::span<const std::size_t> index) const;
  std::vector<int> batch_labels(std::span<const std::size_t> index) const;
  /// Every row in index order.
  Tensor all() const;
  /// Number of samples per class, sized to `classes`.
  std::vector<std::size_t> class_histogram(std::size_t classes) const;
};

struct BundleMeta {
  std::string kind;  // "uda", "ssl" or "csv"
  std::size_t dim = 0;
  std::size_t classes = 0;
  std::uint64_t seed = 0;
  std::string description;
};

/// D_L, D_U, held-out evaluation set and the teacher's pretraining pool.
struct DataBundle {
  Dataset labeled;
  Dataset unlabeled;
  Dataset eval;
  Dataset pool;
  BundleMeta meta;
};

struct UdaSpec {
  std::size_t classes = 8;
  std::size_t dim = 8;
  std::size_t labeled_per_class = 40;    // source, labeled
  std::size_t unlabeled_per_class = 60;  // target, labels dropped
  std::size_t eval_per_class = 60;       // target, held out
  std::size_t pool_per_class = 200;      // per domain, teacher pretraining only
  double radius = 3.0;
  double angle_deg = 20.0;
  double translation = 1.5;
  double sigma_source = 0.6;
  double sigma_target = 0.6;
  std::uint64_t seed = 0;

  bool operator==(const UdaSpec&) const = default;
};

struct SslSpec {
  std::size_t classes = 10;
  std::size_t dim = 8;
  std::size_t labels_per_class = 4;
  std::size_t unlabeled = 1000;
  std::size_t eval_per_class = 50;
  std::size_t pool_per_class = 200;
  double radius = 3.0;
  double sigma = 0.6;
  std::uint64_t seed = 0;

  bool operator==(const SslSpec&) const = default;
};

/// Source: Gaussian clusters whose means sit on a circle of `radius` in the first
/// two coordinates. Target: the same clusters rotated by `angle_deg` in that
/// plane and shifted by `translation` along every remaining axis (along the
/// circle plane's diagonal when dim == 2).
DataBundle gen_uda_benchmark(const UdaSpec& spec);
/// Single domain; D_L is stratified with exactly `labels_per_class` per class.
DataBundle gen_ssl_benchmark(const SslSpec& spec);

/// Draws `count` samples of class `label` from the UDA source (domain 0) or
/// target (domain 1) distribution. Exposed for analysis and tests.
Dataset sample_uda_domain(const UdaSpec& spec, int domain, std::size_t per_class, std::uint64_t seed);

// CSV: header "feature_0,...,feature_{d-1},label,domain"; label -1 marks an
// unlabeled row; domain in {source, target, pool, eval}. Values are written
// with 17 significant digits so a save/load round trip is exact.
//
// Routing on load: domain eval -> eval, domain pool -> pool, label -1 ->
// unlabeled, any other labeled row -> labeled.
DataBundle load_csv(const std::filesystem::path& path);
void save_csv(const DataBundle& bundle, const std::filesystem::path& path);
DataBundle parse_csv(const std::string& text);
std::string format_csv(const DataBundle& bundle);

/// Shortest decimal form that reads back to the same double, at most 17 digits.
std::string format_double(double v);

}  // namespace customkd
