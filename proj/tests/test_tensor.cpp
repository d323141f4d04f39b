#include <cmath>
#include <random>

#include "doctest.h"
#include "genref/tensor.hpp"
#include "test_util.hpp"

using namespace genref;
using genref::testing::oracle_grad_error;
using genref::testing::random_tensor;

TEST_CASE("matmul with the identity returns the vector") {
  const Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const Tensor x = Tensor::from({3}, {0.25, -7.0, 3.5});
  const Tensor y = matmul(eye, x);
  CHECK(y.shape() == Shape{3});
  CHECK(y.to_vector() == x.to_vector());
}

TEST_CASE("softmax of equal logits is uniform") {
  const Tensor p = softmax(Tensor::from({2}, {0.0, 0.0}));
  CHECK(p.at(0) == 0.5);
  CHECK(p.at(1) == 0.5);
}

TEST_CASE("concat joins along the last axis") {
  const Tensor c = concat({Tensor::from({2}, {1, 2}), Tensor::from({1}, {3})});
  CHECK(c.to_vector() == std::vector<double>{1, 2, 3});
}

TEST_CASE("apply_primitive dispatches every kind") {
  const Tensor a = Tensor::from({2}, {0.5, -1.0});
  const Tensor b = Tensor::from({2}, {2.0, 3.0});
  const Tensor ab[] = {a, b};
  const Tensor only_a[] = {a};
  CHECK(apply_primitive(Primitive::add, ab).to_vector() == std::vector<double>{2.5, 2.0});
  CHECK(apply_primitive(Primitive::elementwise_mul, ab).to_vector() == std::vector<double>{1.0, -3.0});
  CHECK(apply_primitive(Primitive::concat, ab).size() == 4);
  CHECK(apply_primitive(Primitive::elementwise_tanh, only_a).at(0) == doctest::Approx(std::tanh(0.5)));
  CHECK(apply_primitive(Primitive::elementwise_sigmoid, only_a).at(1) == doctest::Approx(1 / (1 + std::exp(1.0))));
  CHECK(apply_primitive(Primitive::softmax, only_a).size() == 2);
  CHECK(apply_primitive(Primitive::log, std::span(&b, 1)).at(0) == doctest::Approx(std::log(2.0)));
  CHECK(apply_primitive(Primitive::mean, only_a).item() == -0.25);
  CHECK(apply_primitive(Primitive::slice, only_a, {1, 1}).item() == -1.0);
  CHECK(apply_primitive(Primitive::matmul, ab).item() == -2.0);
  CHECK_THROWS_AS(apply_primitive(Primitive::add, only_a), std::invalid_argument);
}

TEST_CASE("shape mismatch names the primitive and both shapes") {
  const Tensor a = Tensor::zeros({2, 3});
  const Tensor b = Tensor::zeros({4, 2});
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2, 3]") != std::string::npos);
    CHECK(msg.find("[4, 2]") != std::string::npos);
  }
  CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), ShapeError);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(slice(Tensor::zeros({4}), 3, 2), ShapeError);
}

TEST_CASE("derivative of x*x at 3 is 6") {
  const Tensor x = Tensor::scalar(3.0, true);
  const GradientMap g = backward(mul(x, x));
  CHECK(g[x].item() == 6.0);
}

TEST_CASE("gradient of sum(softmax(z)) vanishes") {
  std::mt19937_64 rng(3);
  const Tensor z = random_tensor({7}, rng, 3.0);
  const GradientMap g = backward(sum(softmax(z)));
  for (double v : g[z].to_vector()) CHECK(std::abs(v) < 1e-15);
}

TEST_CASE("backward rejects non-scalar losses and is repeatable") {
  std::mt19937_64 rng(4);
  const Tensor w = random_tensor({3, 3}, rng);
  const Tensor y = tanh(matmul(w, Tensor::from({3}, {1, 2, 3})));
  CHECK_THROWS_AS(backward(y), ShapeError);
  const Tensor loss = sum(y);
  const auto g1 = backward(loss)[w].to_vector();
  const auto g2 = backward(loss)[w].to_vector();
  CHECK(g1 == g2);
}

TEST_CASE("random two-layer tanh net matches central differences") {
  std::mt19937_64 rng(11);
  const Tensor x = random_tensor({4, 5}, rng, 1.0, false);
  const Tensor w1 = random_tensor({5, 6}, rng, 0.8);
  const Tensor b1 = random_tensor({6}, rng, 0.5);
  const Tensor w2 = random_tensor({6, 3}, rng, 0.8);
  const Tensor b2 = random_tensor({3}, rng, 0.5);
  auto build = [&] { return sum(tanh(add(matmul(tanh(add(matmul(x, w1), b1)), w2), b2))); };
  CHECK(oracle_grad_error(build, {w1, b1, w2, b2}, 1e-5) < 1e-4);
}

TEST_CASE("structural primitives match central differences") {
  std::mt19937_64 rng(12);
  const Tensor table = random_tensor({5, 3}, rng);
  const Tensor a = random_tensor({4, 3}, rng);
  const Tensor w = random_tensor({2, 2}, rng);
  const Tensor col = random_tensor({4, 1}, rng);
  const Tensor row = random_tensor({3}, rng);
  const std::size_t ids[] = {2, 0, 2, 4};
  const std::size_t picks[] = {1, 0, 2, 2};
  auto build = [&] {
    const Tensor g = gather_rows(table, ids);                            // [4,3]
    const Tensor mixed = add(mul(g, col), mul(a, row));                  // broadcast column/row
    const Tensor ls = log_softmax(mixed);
    const Tensor picked = pick(ls, picks);                               // [4]
    const Tensor pooled = mean_row_groups(mixed, 2);                     // [2,3]
    const Tensor rep = repeat_rows(pooled, 2);                           // [4,3]
    const Tensor att = weighted_row_sum(softmax(w), rep);                // [2,3]
    const Tensor sel = select_rows({true, false}, att, tanh(pooled));
    const Tensor r = reshape(sel, {6});
    return add(sum(picked), sum(mul(r, sigmoid(r))));
  };
  CHECK(oracle_grad_error(build, {table, a, w, col, row}) < 1e-6);
}

TEST_CASE("grad_check is tight on a quadratic and rejects non-finite values") {
  std::mt19937_64 rng(5);
  const Tensor w = random_tensor({6}, rng);
  const Tensor params[] = {w};
  CHECK(grad_check([&] { return sum(mul(w, w)); }, params, 1e-5) < 1e-8);
  const Tensor neg = Tensor::from({1}, {-1.0}, true);
  const Tensor neg_params[] = {neg};
  CHECK_THROWS_AS(grad_check([&] { return log(neg); }, neg_params, 1e-5), std::domain_error);
  CHECK_THROWS_AS(grad_check([&] { return sum(mul(w, w)); }, params, 1e-2), std::invalid_argument);
}

TEST_CASE("backward is linear in the loss") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = random_tensor({3, 4}, rng);
    const Tensor y = random_tensor({4, 2}, rng);
    const Tensor f = sum(tanh(matmul(x, y)));
    const Tensor g = sum(mul(softmax(matmul(x, y)), sigmoid(matmul(x, y))));
    const auto gf = backward(f);
    const auto gg = backward(g);
    const auto gs = backward(add(f, g));
    for (const Tensor& p : {x, y}) {
      const auto a = gf[p].to_vector();
      const auto b = gg[p].to_vector();
      const auto s = gs[p].to_vector();
      for (std::size_t i = 0; i < s.size(); ++i) CHECK(s[i] == doctest::Approx(a[i] + b[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("softmax rows are distributions and shift invariant") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor z = random_tensor({3, 9}, rng, 20.0, false);
    const Tensor p = softmax(z);
    const Tensor shifted = softmax(add(z, Tensor::full({3, 1}, 123.0)));
    for (std::size_t r = 0; r < 3; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 9; ++c) {
        CHECK(p.at(r, c) >= 0.0);
        s += p.at(r, c);
        CHECK(std::abs(p.at(r, c) - shifted.at(r, c)) < 1e-12);
      }
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("graph replay is bit-identical") {
  auto run = [] {
    std::mt19937_64 rng(8);
    const Tensor w = random_tensor({6, 6}, rng);
    const Tensor x = random_tensor({2, 6}, rng);
    const Tensor loss = sum(log_softmax(tanh(matmul(x, w))));
    return std::make_pair(loss.item(), backward(loss)[w].to_vector());
  };
  const auto a = run();
  const auto b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("no-grad guard stops graph recording") {
  const Tensor w = Tensor::from({2}, {1, 2}, true);
  {
    NoGradGuard guard;
    CHECK_FALSE(grad_enabled());
    CHECK_FALSE(sum(w).requires_grad());
  }
  CHECK(sum(w).requires_grad());
}
