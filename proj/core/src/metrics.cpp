#include "customkd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "customkd/errors.hpp"

namespace customkd {

std::vector<int> argmax_rows(const Tensor& logits) {
  const std::size_t rows = logits.rows(), cols = logits.cols();
  std::vector<int> out(rows);
  auto v = logits.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = v.data() + r * cols;
    out[r] = static_cast<int>(std::max_element(row, row + cols) - row);
  }
  return out;
}

double accuracy(const Tensor& logits, std::span<const int> labels) {
  if (labels.empty()) throw ContractViolation("accuracy of an empty set");
  auto pred = argmax_rows(logits);
  if (pred.size() != labels.size()) throw DimensionError("accuracy: logits and labels disagree in length");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double accuracy(const Model& model, const Dataset& data) {
  if (data.empty()) throw ContractViolation("accuracy of an empty set");
  return accuracy(model.logits(data.all()), data.labels);
}

std::string_view feature_source_name(FeatureSource s) {
  switch (s) {
    case FeatureSource::kStudent: return "f_s";
    case FeatureSource::kTeacher: return "f_t";
    case FeatureSource::kTeacherCustomized: return "f~_t";
    case FeatureSource::kStudentProjected: return "f~_s";
  }
  return "?";
}

FeatureMatrix extract_features(const Encoder& encoder, ProjectionHead* projector, const Dataset& data,
                               FeatureSource source, std::size_t max_rows) {
  if (data.dim != encoder.input_dim()) {
    throw DimensionError("extract_features: data width " + std::to_string(data.dim) + " vs encoder input " +
                         std::to_string(encoder.input_dim()));
  }
  const std::size_t n = std::min(data.size(), max_rows);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Tensor f = encoder.forward(data.batch(idx)).detach();
  if (projector != nullptr) f = projector->forward(f, NormMode::kEval).detach();
  FeatureMatrix m;
  m.rows = n;
  m.cols = f.cols();
  m.values.assign(f.values().begin(), f.values().end());
  m.source = source;
  return m;
}

namespace {

std::vector<double> centered(const FeatureMatrix& m) {
  std::vector<double> c = m.values;
  for (std::size_t j = 0; j < m.cols; ++j) {
    double mu = 0.0;
    for (std::size_t i = 0; i < m.rows; ++i) mu += c[i * m.cols + j];
    mu /= static_cast<double>(m.rows);
    for (std::size_t i = 0; i < m.rows; ++i) c[i * m.cols + j] -= mu;
  }
  return c;
}

/// ||A^T B||_F^2 for row-major A [n x p], B [n x q].
double cross_frobenius_sq(const std::vector<double>& a, std::size_t p, const std::vector<double>& b, std::size_t q,
                          std::size_t n) {
  std::vector<double> g(p * q, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t r = 0; r < p; ++r) {
      const double s = a[i * p + r];
      if (s == 0.0) continue;
      for (std::size_t c = 0; c < q; ++c) g[r * q + c] += s * b[i * q + c];
    }
  }
  double acc = 0.0;
  for (double v : g) acc += v * v;
  return acc;
}

}  // namespace

double linear_cka(const FeatureMatrix& x, const FeatureMatrix& y) {
  if (x.rows != y.rows) {
    throw DimensionError("linear_cka: row counts differ (" + std::to_string(x.rows) + " vs " + std::to_string(y.rows) + ")");
  }
  if (x.rows < 2) throw DegenerateInput("linear_cka needs at least 2 samples");
  const auto xc = centered(x);
  const auto yc = centered(y);
  const double xx = std::sqrt(cross_frobenius_sq(xc, x.cols, xc, x.cols, x.rows));
  const double yy = std::sqrt(cross_frobenius_sq(yc, y.cols, yc, y.cols, y.rows));
  if (!(xx > 0.0) || !(yy > 0.0)) throw DegenerateInput("linear_cka: constant feature matrix");
  const double xy = cross_frobenius_sq(yc, y.cols, xc, x.cols, x.rows);
  return std::clamp(xy / (xx * yy), 0.0, 1.0);
}

std::string format_features_csv(const FeatureMatrix& m) {
  std::ostringstream os;
  for (std::size_t j = 0; j < m.cols; ++j) os << (j ? "," : "") << "dim_" << j;
  os << '\n';
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t j = 0; j < m.cols; ++j) os << (j ? "," : "") << format_double(m.at(i, j));
    os << '\n';
  }
  return os.str();
}

void save_features_csv(const FeatureMatrix& m, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << format_features_csv(m);
}

}  // namespace customkd
