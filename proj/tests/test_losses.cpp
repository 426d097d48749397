#include <cmath>
#include <random>

#include "doctest.h"

#include "customkd/errors.hpp"
#include "customkd/graph.hpp"
#include "customkd/losses.hpp"
#include "customkd/ops.hpp"
#include "oracles.hpp"

using namespace customkd;

namespace {

// Direct KL(p || q) of temperature-scaled softmaxes for one row, in long double.
long double kl_oracle(const std::vector<double>& teacher, const std::vector<double>& student, double t) {
  auto probs = [t](const std::vector<double>& z) {
    std::vector<long double> p(z.size());
    long double s = 0.0L;
    for (std::size_t i = 0; i < z.size(); ++i) s += (p[i] = std::exp(static_cast<long double>(z[i]) / t));
    for (auto& v : p) v /= s;
    return p;
  };
  auto p = probs(teacher);
  auto q = probs(student);
  long double kl = 0.0L;
  for (std::size_t i = 0; i < p.size(); ++i) kl += p[i] * std::log(p[i] / q[i]);
  return kl;
}

}  // namespace

TEST_CASE("cross entropy") {
  const std::vector<int> label0{0};
  CHECK(std::abs(cross_entropy(Tensor::matrix({{0, 0, 0, 0}}), label0).item() - std::log(4.0)) < 1e-9);
  CHECK(std::abs(cross_entropy(Tensor::matrix({{0, 0, 0, 0}}), label0).item() - 1.3863) < 1e-4);

  const long double e = std::exp(1.0L);
  const double expected = static_cast<double>(-std::log(e / (1.0L + e)));
  CHECK(std::abs(cross_entropy(Tensor::matrix({{1, 0}}), label0).item() - expected) < 1e-12);
  CHECK(std::abs(expected - 0.3133) < 1e-4);

  CHECK(cross_entropy(Tensor::matrix({{30, 0, 0}}), label0).item() < 1e-9);

  const std::vector<int> bad{3};
  CHECK_THROWS_AS(cross_entropy(Tensor::matrix({{0, 0, 0}}), bad), DomainError);
  const std::vector<int> negative{-1};
  CHECK_THROWS_AS(cross_entropy(Tensor::matrix({{0, 0, 0}}), negative), DomainError);
}

TEST_CASE("feature mse") {
  std::mt19937_64 rng(4);
  auto a = oracle::random_tensor({4, 3}, rng);
  auto b = oracle::random_tensor({4, 3}, rng);
  CHECK(feature_mse(a, a).item() == 0.0);
  CHECK(feature_mse(Tensor::matrix({{1, 2}}), Tensor::matrix({{0, 0}})).item() == 5.0);
  CHECK(feature_mse(a, b).item() == feature_mse(b, a).item());

  SUBCASE("mean over the batch of per-row squared norms") {
    auto v = feature_mse(Tensor::matrix({{1, 2}, {0, 3}}), Tensor::matrix({{0, 0}, {0, 0}})).item();
    CHECK(v == (5.0 + 9.0) / 2.0);
  }
  SUBCASE("the detached side receives no gradient") {
    backward(feature_mse(a, b.detach()));
    CHECK(a.has_grad());
    CHECK_FALSE(b.has_grad());
  }
  CHECK_THROWS_AS(feature_mse(Tensor::zeros({2, 3}), Tensor::zeros({2, 2})), DimensionError);
}

TEST_CASE("entropy minimization") {
  CHECK(std::abs(entropy_min(Tensor::matrix({{0, 0, 0, 0}})).item() - std::log(4.0)) < 1e-12);
  CHECK(entropy_min(Tensor::matrix({{30, 0, 0, 0}})).item() < 1e-9);
  CHECK(std::abs(entropy_min(Tensor::matrix({{0.7, 0.7}})).item() - std::log(2.0)) < 1e-12);
  CHECK(std::abs(entropy_min(Tensor::matrix({{0.7, 0.7}})).item() - 0.6931) < 1e-4);

  SUBCASE("invariant to a per-row shift") {
    std::mt19937_64 rng(8);
    auto z = oracle::random_tensor({3, 5}, rng, false);
    auto shifted = add(z, Tensor::matrix({{4, 4, 4, 4, 4}, {-2, -2, -2, -2, -2}, {0.5, 0.5, 0.5, 0.5, 0.5}}));
    CHECK(std::abs(entropy_min(z).item() - entropy_min(shifted).item()) < 1e-12);
  }
  SUBCASE("bounded by ln C") {
    std::mt19937_64 rng(9);
    for (int i = 0; i < 10; ++i) {
      auto z = oracle::random_tensor({4, 6}, rng, false, -5, 5);
      const double h = entropy_min(z).item();
      CHECK(h >= 0.0);
      CHECK(h <= std::log(6.0) + 1e-12);
    }
  }
}

TEST_CASE("soft target loss") {
  std::mt19937_64 rng(10);
  auto z = oracle::random_tensor({4, 3}, rng);
  CHECK(std::abs(soft_target_loss(z, z, 4.0).item()) < 1e-12);
  for (int i = 0; i < 10; ++i) {
    auto s = oracle::random_tensor({4, 3}, rng, false, -4, 4);
    auto t = oracle::random_tensor({4, 3}, rng, false, -4, 4);
    CHECK(soft_target_loss(s, t, 2.0).item() >= 0.0);
  }
  const double oracle_value = static_cast<double>(kl_oracle({2, 0}, {0, 0}, 1.0));
  CHECK(std::abs(soft_target_loss(Tensor::matrix({{0, 0}}), Tensor::matrix({{2, 0}}), 1.0).item() - oracle_value) <
        1e-12);
  SUBCASE("temperature scaling multiplies by T squared") {
    const double t = 3.0;
    const double expected = t * t * static_cast<double>(kl_oracle({2, -1, 0.5}, {0.3, 0.1, 0}, t));
    auto v = soft_target_loss(Tensor::matrix({{0.3, 0.1, 0}}), Tensor::matrix({{2, -1, 0.5}}), t).item();
    CHECK(std::abs(v - expected) < 1e-12);
  }
  SUBCASE("teacher side is stop-gradient") {
    auto s = oracle::random_tensor({2, 3}, rng);
    auto t = oracle::random_tensor({2, 3}, rng);
    backward(soft_target_loss(s, t, 4.0));
    CHECK(s.has_grad());
    CHECK_FALSE(t.has_grad());
  }
  CHECK_THROWS_AS(soft_target_loss(z, z, 0.0), ContractViolation);
  CHECK_THROWS_AS(soft_target_loss(z, z, -1.0), ContractViolation);
}

TEST_CASE("logit mse loss") {
  std::mt19937_64 rng(12);
  auto z = oracle::random_tensor({3, 4}, rng);
  CHECK(logit_mse_loss(z, z).item() == 0.0);
  CHECK(logit_mse_loss(Tensor::matrix({{1, 2}}), Tensor::matrix({{0, 0}})).item() == 2.5);
  auto shift = Tensor::vector({1.25, 1.25, 1.25, 1.25});
  auto other = oracle::random_tensor({3, 4}, rng);
  CHECK(std::abs(logit_mse_loss(add(z, shift), add(other, shift)).item() - logit_mse_loss(z, other).item()) < 1e-12);
  backward(logit_mse_loss(z, other));
  CHECK_FALSE(other.has_grad());
  CHECK_THROWS_AS(logit_mse_loss(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), DimensionError);
}

TEST_CASE("composite loss") {
  auto parts = LossParts{Tensor::scalar(1), Tensor::scalar(2), Tensor::scalar(3), Tensor::scalar(4)};
  CHECK(composite_loss(parts, LossWeights{0.1, 10, 10}).item() == 71.2);
  CHECK(composite_loss(parts, LossWeights{0, 0, 0}).item() == 1.0);

  SUBCASE("defaults") {
    LossWeights w;
    CHECK(w.lambda_u == 0.1);
    CHECK(w.lambda_ft == 10.0);
    CHECK(w.lambda_ftilde == 10.0);
  }
  SUBCASE("undefined parts count as zero") {
    LossParts only_l{Tensor::scalar(1.5), {}, {}, {}};
    CHECK(composite_loss(only_l, LossWeights{}).item() == 1.5);
  }
  SUBCASE("errors") {
    auto nan_parts = LossParts{Tensor::scalar(1), Tensor::scalar(std::nan("")), Tensor::scalar(0), Tensor::scalar(0)};
    CHECK_THROWS_AS(composite_loss(nan_parts, LossWeights{}), ContractViolation);
    auto inf_l = LossParts{Tensor::scalar(INFINITY), {}, {}, {}};
    CHECK_THROWS_AS(composite_loss(inf_l, LossWeights{}), ContractViolation);
    CHECK_THROWS_AS(composite_loss(parts, LossWeights{-0.1, 10, 10}), ContractViolation);
  }
}
