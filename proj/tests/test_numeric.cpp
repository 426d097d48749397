#include <cmath>
#include <random>

#include "doctest.h"

#include "customkd/errors.hpp"
#include "customkd/graph.hpp"
#include "customkd/ops.hpp"
#include "customkd/optim.hpp"
#include "customkd/tensor.hpp"
#include "oracles.hpp"

using namespace customkd;

namespace {

void check_values(const Tensor& t, const std::vector<double>& expected) {
  REQUIRE(t.size() == expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) CHECK(t.at(i) == expected[i]);
}

bool near(double a, double b, double tol) { return std::abs(a - b) <= tol; }

}  // namespace

TEST_CASE("tensor construction keeps shape and values consistent") {
  auto t = Tensor::zeros({2, 3});
  CHECK(t.size() == 6);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
  CHECK_FALSE(t.has_grad());
}

TEST_CASE("matmul") {
  SUBCASE("identity") {
    auto c = matmul(Tensor::matrix({{1, 0}, {0, 1}}), Tensor::matrix({{1, 2}, {3, 4}}));
    CHECK(c.shape() == Shape{2, 2});
    CHECK(bitwise_equal(c, Tensor::matrix({{1, 2}, {3, 4}})));
  }
  SUBCASE("row times column") {
    auto c = matmul(Tensor::matrix({{1, 2}}), Tensor::matrix({{3}, {4}}));
    CHECK(c.shape() == Shape{1, 1});
    CHECK(c.item() == 11.0);
  }
  SUBCASE("zero operand") {
    std::mt19937_64 rng(3);
    auto c = matmul(Tensor::zeros({2, 3}), oracle::random_tensor({3, 4}, rng, false));
    CHECK(c.shape() == Shape{2, 4});
    for (double v : c.values()) CHECK(v == 0.0);
  }
  SUBCASE("shape mismatch names both shapes") {
    try {
      matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
      FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("[2x3]") != std::string::npos);
    }
  }
}

TEST_CASE("elementwise ops") {
  CHECK(bitwise_equal(relu(Tensor::vector({-1, 0, 2})), Tensor::vector({0, 0, 2})));
  CHECK(bitwise_equal(add(Tensor::vector({1, 2}), Tensor::vector({3, 4})), Tensor::vector({4, 6})));
  CHECK(exp(Tensor::vector({0})).item() == 1.0);
  CHECK(bitwise_equal(sub(Tensor::vector({1, 2}), Tensor::vector({3, 5})), Tensor::vector({-2, -3})));
  CHECK(bitwise_equal(mul(Tensor::vector({1, 2}), Tensor::vector({3, 5})), Tensor::vector({3, 10})));
  CHECK(bitwise_equal(square(Tensor::vector({-3, 2})), Tensor::vector({9, 4})));
  CHECK(log(Tensor::vector({1})).item() == 0.0);

  SUBCASE("row broadcast of a bias vector") {
    auto y = add(Tensor::matrix({{1, 2}, {3, 4}}), Tensor::vector({10, 20}));
    CHECK(bitwise_equal(y, Tensor::matrix({{11, 22}, {13, 24}})));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(add(Tensor::vector({1, 2}), Tensor::vector({1, 2, 3})), DimensionError);
    CHECK_THROWS_AS(log(Tensor::vector({1, 0})), DomainError);
    CHECK_THROWS_AS(log(Tensor::vector({-2})), DomainError);
  }
  SUBCASE("relu backward masks non-positive inputs") {
    auto x = Tensor::vector({-1, 0, 2}, true);
    backward(sum(relu(x)));
    check_values(Tensor::vector({x.grad()[0], x.grad()[1], x.grad()[2]}), {0, 0, 1});
  }
}

TEST_CASE("softmax") {
  auto uniform = softmax(Tensor::matrix({{0, 0, 0, 0}}));
  for (double v : uniform.values()) CHECK(v == 0.25);

  auto two = softmax(Tensor::matrix({{1, 0}}));
  const double e = std::exp(1.0);
  CHECK(near(two.at(0), e / (1.0 + e), 1e-12));
  CHECK(near(two.at(0), 0.7311, 1e-4));
  CHECK(near(two.at(1), 0.2689, 1e-4));

  auto big = softmax(Tensor::matrix({{1000, 0}}));
  CHECK(std::isfinite(big.at(0)));
  CHECK(near(big.at(0), 1.0, 1e-12));
  CHECK(near(big.at(1), 0.0, 1e-12));

  SUBCASE("rows sum to one for logits up to 1e3") {
    std::mt19937_64 rng(11);
    auto logits = oracle::random_tensor({16, 7}, rng, false, -1000.0, 1000.0);
    auto p = softmax(logits);
    for (std::size_t r = 0; r < 16; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 7; ++c) s += p.at(r, c);
      CHECK(near(s, 1.0, 1e-9));
    }
  }
  CHECK_THROWS_AS(softmax(Tensor::matrix({{1}})), DimensionError);
}

TEST_CASE("batch norm") {
  SUBCASE("training normalizes each column") {
    // Column 0: mean 5, population variance 4.
    auto x = Tensor::matrix({{3, 1}, {7, 2}, {3, 3}, {7, 4}});
    auto st = BatchNormState::create(2);
    auto y = batch_norm(x, st, NormMode::kTrain);
    double mean = 0.0, var = 0.0;
    for (std::size_t r = 0; r < 4; ++r) mean += y.at(r, 0) / 4.0;
    for (std::size_t r = 0; r < 4; ++r) var += (y.at(r, 0) - mean) * (y.at(r, 0) - mean) / 4.0;
    CHECK(near(mean, 0.0, 1e-12));
    CHECK(near(var, 4.0 / (4.0 + 1e-5), 1e-12));
    // Running stats moved one momentum step toward the batch stats.
    CHECK(near(st.running_mean[0], 0.1 * 5.0, 1e-12));
    CHECK(near(st.running_var[0], 0.9 * 1.0 + 0.1 * 4.0, 1e-12));
  }
  SUBCASE("constant column maps to beta") {
    auto st = BatchNormState::create(1);
    st.gamma.mutable_values()[0] = 2.0;
    st.beta.mutable_values()[0] = 3.0;
    auto y = batch_norm(Tensor::matrix({{1.5}, {1.5}, {1.5}}), st, NormMode::kTrain);
    for (double v : y.values()) CHECK(v == 3.0);
  }
  SUBCASE("eval with matching running stats reproduces training output") {
    std::mt19937_64 rng(5);
    auto x = oracle::random_tensor({6, 3}, rng, false);
    auto st = BatchNormState::create(3);
    st.gamma.mutable_values()[1] = 1.7;
    st.beta.mutable_values()[2] = -0.4;
    auto train_out = batch_norm(x, st, NormMode::kBatchStats);
    for (std::size_t c = 0; c < 3; ++c) {
      double m = 0.0, v = 0.0;
      for (std::size_t r = 0; r < 6; ++r) m += x.at(r, c) / 6.0;
      for (std::size_t r = 0; r < 6; ++r) v += (x.at(r, c) - m) * (x.at(r, c) - m) / 6.0;
      st.running_mean[c] = m;
      st.running_var[c] = v;
    }
    auto eval_out = batch_norm(x, st, NormMode::kEval);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(near(eval_out.at(i), train_out.at(i), 1e-6));
  }
  SUBCASE("batch-stats mode leaves running stats alone") {
    auto st = BatchNormState::create(2);
    batch_norm(Tensor::matrix({{1, 2}, {3, 5}}), st, NormMode::kBatchStats);
    CHECK(st.running_mean == std::vector<double>{0.0, 0.0});
    CHECK(st.running_var == std::vector<double>{1.0, 1.0});
  }
  SUBCASE("single row in training mode is degenerate") {
    auto st = BatchNormState::create(2);
    CHECK_THROWS_AS(batch_norm(Tensor::matrix({{1, 2}}), st, NormMode::kTrain), DegenerateInput);
    CHECK_NOTHROW(batch_norm(Tensor::matrix({{1, 2}}), st, NormMode::kEval));
  }
}

TEST_CASE("backward") {
  SUBCASE("sum is linear") {
    auto w = Tensor::vector({0.3, -1.0, 4.0}, true);
    backward(sum(w));
    REQUIRE(w.has_grad());
    for (double g : w.grad()) CHECK(g == 1.0);
  }
  SUBCASE("sum of squares") {
    auto w = Tensor::vector({1, -2}, true);
    backward(sum(square(w)));
    CHECK(w.grad()[0] == 2.0);
    CHECK(w.grad()[1] == -4.0);
  }
  SUBCASE("fan-out accumulates") {
    auto w = Tensor::vector({1.5}, true);
    backward(sum(add(mul(w, w), w)));  // d/dw (w^2 + w) = 2w + 1
    CHECK(w.grad()[0] == 4.0);
  }
  SUBCASE("gradients accumulate across calls until cleared") {
    auto w = Tensor::vector({1, 2}, true);
    backward(sum(w));
    backward(sum(w));
    CHECK(w.grad()[0] == 2.0);
    w.clear_grad();
    CHECK_FALSE(w.has_grad());
  }
  SUBCASE("non-scalar loss") {
    auto w = Tensor::vector({1, 2}, true);
    CHECK_THROWS_AS(backward(square(w)), ContractViolation);
  }
  SUBCASE("stop-gradient boundary") {
    auto w = Tensor::vector({1, 2}, true);
    auto v = Tensor::vector({3, 4}, true);
    auto cut = square(w).detach();
    CHECK(cut.op() == OpKind::kDetach);
    CHECK_FALSE(cut.requires_grad());
    backward(sum(mul(cut, v)));
    CHECK_FALSE(w.has_grad());
    REQUIRE(v.has_grad());
    CHECK(v.grad()[0] == 1.0);
    CHECK(v.grad()[1] == 4.0);
  }
  SUBCASE("finite-difference agreement on an op chain") {
    std::mt19937_64 rng(21);
    auto a = oracle::random_tensor({3, 4}, rng);
    auto b = oracle::random_tensor({4, 2}, rng);
    auto report = oracle::gradcheck([&] { return mean(exp(scale(matmul(a, b), 0.3))); }, {a, b});
    CHECK(report.max_rel_error < 1e-5);
  }
}

TEST_CASE("compute graph") {
  auto w = Tensor::vector({1, 2}, true);
  auto x = Tensor::vector({3, 4});
  auto shared = mul(w, x);
  auto loss = sum(add(shared, shared));
  auto g = ComputeGraph::trace(loss);
  const auto& recs = g.records();
  for (std::size_t i = 0; i < recs.size(); ++i) {
    for (auto in : recs[i].inputs) CHECK(in < i);
  }
  // w, x, mul, add, sum: the shared node appears once.
  CHECK(g.size() == 5);
  CHECK(g.op_sequence().back() == OpKind::kSum);
  CHECK(g.contains(OpKind::kMul));
  CHECK_FALSE(g.contains(OpKind::kRelu));

  backward(loss, g);
  CHECK(w.grad()[0] == 6.0);
  CHECK(w.grad()[1] == 8.0);

  auto other = sum(w);
  CHECK_THROWS_AS(backward(other, g), ContractViolation);
}

TEST_CASE("sgd") {
  SUBCASE("zero learning rate leaves parameters bitwise unchanged") {
    auto p = Tensor::vector({0.1, -0.7, 3.3}, true);
    auto before = p.clone();
    Sgd opt({p}, 0.0, 0.9);
    backward(sum(square(p)));
    opt.step();
    CHECK(bitwise_equal(p, before));
    CHECK_FALSE(p.has_grad());
  }
  SUBCASE("one step without momentum") {
    auto p = Tensor::vector({1.0}, true);
    Sgd opt({p}, 0.1, 0.0);
    backward(scale(sum(p), 2.0));
    opt.step();
    CHECK(near(p.item(), 0.8, 1e-15));
  }
  SUBCASE("momentum recurrence") {
    auto p = Tensor::vector({0.0}, true);
    Sgd opt({p}, 0.1, 0.9);
    backward(sum(p));
    opt.step();
    CHECK(near(p.item(), -0.1, 1e-15));
    backward(sum(p));
    opt.step();
    CHECK(near(p.item(), -0.1 - 0.19, 1e-15));
    CHECK(opt.state().velocity.front().size() == 1);
  }
  SUBCASE("missing gradient") {
    auto p = Tensor::vector({1.0}, true);
    auto q = Tensor::vector({1.0}, true);
    Sgd opt({p, q}, 0.1);
    backward(sum(p));
    CHECK_THROWS_AS(opt.step(), ContractViolation);
  }
  SUBCASE("invalid hyperparameters") {
    auto p = Tensor::vector({1.0}, true);
    CHECK_THROWS_AS(Sgd({p}, 0.1, 1.0), ContractViolation);
    CHECK_THROWS_AS(Sgd({p}, -0.1), ContractViolation);
  }
}

TEST_CASE("determinism within a process") {
  auto run = [] {
    std::mt19937_64 rng(99);
    auto w = oracle::random_tensor({4, 3}, rng);
    auto x = oracle::random_tensor({5, 4}, rng, false);
    auto st = BatchNormState::create(3);
    Sgd opt({w}, 0.05);
    for (int i = 0; i < 3; ++i) {
      backward(mean(square(batch_norm(matmul(x, w), st, NormMode::kTrain))));
      opt.step();
    }
    return w.clone();
  };
  CHECK(bitwise_equal(run(), run()));
}
