#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "customkd/data.hpp"
#include "customkd/model.hpp"

namespace customkd {

/// Index of the largest entry in each row; the lowest index wins exact ties.
std::vector<int> argmax_rows(const Tensor& logits);

/// Fraction of rows whose argmax equals the label. Throws ContractViolation on
/// an empty set.
double accuracy(const Tensor& logits, std::span<const int> labels);
double accuracy(const Model& model, const Dataset& data);
inline double error_rate(double acc) { return 1.0 - acc; }

enum class FeatureSource { kStudent, kTeacher, kTeacherCustomized, kStudentProjected };

std::string_view feature_source_name(FeatureSource s);

struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
  FeatureSource source = FeatureSource::kStudent;

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

/// Default cap on the rows fed to CKA (deterministic prefix of the dataset).
constexpr std::size_t kCkaMaxSamples = 2048;

/// Row i is encoder (then optional projector, batch norm in eval mode) applied
/// to sample i, with gradients stopped. At most `max_rows` leading samples.
FeatureMatrix extract_features(const Encoder& encoder, ProjectionHead* projector, const Dataset& data,
                               FeatureSource source, std::size_t max_rows = kCkaMaxSamples);

/// Linear CKA: ||Yc^T Xc||_F^2 / (||Xc^T Xc||_F ||Yc^T Yc||_F) with column-centered
/// Xc, Yc. Needs equal row counts >= 2 and non-constant inputs (DegenerateInput).
double linear_cka(const FeatureMatrix& x, const FeatureMatrix& y);

/// CSV with header "dim_0,...,dim_{p-1}".
std::string format_features_csv(const FeatureMatrix& m);
void save_features_csv(const FeatureMatrix& m, const std::filesystem::path& path);

}  // namespace customkd
