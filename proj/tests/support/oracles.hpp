#pragma once

// Reference implementations used only by the tests. They are written from
// the definitions, share no code with the library beyond Tensor storage, and
// favour clarity over speed.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "customkd/graph.hpp"
#include "customkd/metrics.hpp"
#include "customkd/tensor.hpp"

namespace oracle {

using customkd::Tensor;

struct GradReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// Central differences of `f` with respect to every entry of every tensor in
/// `inputs`, compared against the engine's reverse-mode gradient.
///
/// Relative error is |a - n| / max(1, |a|, |n|): relative for O(1) and larger
/// derivatives, absolute near zero where a relative measure is meaningless.
inline GradReport gradcheck(const std::function<Tensor()>& f, std::vector<Tensor> inputs, double h = 1e-5) {
  for (auto& t : inputs) t.clear_grad();
  Tensor loss = f();
  customkd::backward(loss);
  GradReport report;
  for (auto& t : inputs) {
    std::vector<double> analytic(t.size(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    auto v = t.mutable_values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double x = v[i];
      v[i] = x + h;
      const double up = f().item();
      v[i] = x - h;
      const double down = f().item();
      v[i] = x;
      const double numeric = (up - down) / (2.0 * h);
      const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
      report.max_rel_error = std::max(report.max_rel_error, std::abs(analytic[i] - numeric) / denom);
      ++report.checked;
    }
    t.clear_grad();
  }
  return report;
}

inline std::vector<double> uniform(std::size_t n, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

/// Uniform in [lo, hi] but at least `gap` away from zero; keeps finite
/// differences off the ReLU kink.
inline std::vector<double> uniform_off_zero(std::size_t n, double lo, double hi, double gap, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) {
    do {
      x = d(rng);
    } while (std::abs(x) < gap);
  }
  return v;
}

inline Tensor random_tensor(customkd::Shape shape, std::mt19937_64& rng, bool requires_grad = true, double lo = -2.0,
                            double hi = 2.0) {
  auto n = customkd::shape_size(shape);
  return Tensor::from(std::move(shape), uniform(n, lo, hi, rng), requires_grad);
}

using Matrix = std::vector<std::vector<double>>;

inline Matrix to_matrix(const customkd::FeatureMatrix& m) {
  Matrix out(m.rows, std::vector<double>(m.cols));
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t c = 0; c < m.cols; ++c) out[r][c] = m.at(r, c);
  }
  return out;
}

/// Linear CKA straight from the definition: center columns, form the three
/// Gram-like products with explicit triple loops, take Frobenius norms.
inline double cka_brute_force(const Matrix& x, const Matrix& y) {
  const std::size_t n = x.size();
  auto center = [n](Matrix m) {
    const std::size_t p = m.front().size();
    for (std::size_t j = 0; j < p; ++j) {
      double mu = 0.0;
      for (std::size_t i = 0; i < n; ++i) mu += m[i][j];
      mu /= static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) m[i][j] -= mu;
    }
    return m;
  };
  auto cross_fro2 = [n](const Matrix& a, const Matrix& b) {
    // ||a^T b||_F^2
    double s = 0.0;
    for (std::size_t j = 0; j < a.front().size(); ++j) {
      for (std::size_t k = 0; k < b.front().size(); ++k) {
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) dot += a[i][j] * b[i][k];
        s += dot * dot;
      }
    }
    return s;
  };
  const Matrix xc = center(x);
  const Matrix yc = center(y);
  return cross_fro2(yc, xc) / (std::sqrt(cross_fro2(xc, xc)) * std::sqrt(cross_fro2(yc, yc)));
}

inline customkd::FeatureMatrix feature_matrix(const Matrix& m) {
  customkd::FeatureMatrix f;
  f.rows = m.size();
  f.cols = m.front().size();
  for (const auto& row : m) f.values.insert(f.values.end(), row.begin(), row.end());
  return f;
}

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  Matrix m(rows, std::vector<double>(cols));
  for (auto& r : m) {
    for (auto& v : r) v = d(rng);
  }
  return m;
}

/// Random orthogonal q x q matrix by Gram-Schmidt on Gaussian columns.
inline Matrix random_orthogonal(std::size_t q, std::mt19937_64& rng) {
  Matrix a = random_matrix(q, q, rng);
  Matrix cols(q, std::vector<double>(q));
  for (std::size_t j = 0; j < q; ++j) {
    std::vector<double> v(q);
    for (std::size_t i = 0; i < q; ++i) v[i] = a[i][j];
    for (std::size_t k = 0; k < j; ++k) {
      double dot = 0.0;
      for (std::size_t i = 0; i < q; ++i) dot += v[i] * cols[k][i];
      for (std::size_t i = 0; i < q; ++i) v[i] -= dot * cols[k][i];
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < q; ++i) cols[j][i] = v[i] / norm;
  }
  Matrix qm(q, std::vector<double>(q));
  for (std::size_t i = 0; i < q; ++i) {
    for (std::size_t j = 0; j < q; ++j) qm[i][j] = cols[j][i];
  }
  return qm;
}

inline Matrix multiply(const Matrix& a, const Matrix& b, double scale = 1.0) {
  Matrix out(a.size(), std::vector<double>(b.front().size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t k = 0; k < b.size(); ++k) {
      for (std::size_t j = 0; j < b.front().size(); ++j) out[i][j] += scale * a[i][k] * b[k][j];
    }
  }
  return out;
}

}  // namespace oracle
