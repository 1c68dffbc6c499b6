#include <doctest.h>

#include <cmath>
#include <vector>

#include "hournas/ops.hpp"
#include "hournas/optim.hpp"
#include "hournas/rng.hpp"
#include "hournas/tensor.hpp"
#include "support/gradcheck.hpp"

using namespace hournas;
using hournas::testing::randn;

namespace {
Tensor values(Shape s, std::vector<Real> v, bool grad = false) { return Tensor(std::move(s), std::move(v), grad); }
}  // namespace

TEST_SUITE("core") {

TEST_CASE("tensor shape and storage") {
  Tensor t({2, 3, 4});
  CHECK(t.numel() == 24);
  CHECK(t.rank() == 3);
  CHECK(t.dim(1) == 3);
  CHECK_THROWS_AS(t.dim(3), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), ShapeError);

  Tensor alias = t;
  alias.data()[5] = 7;
  CHECK(t.data()[5] == 7);
  Tensor copy = t.clone();
  copy.data()[5] = 1;
  CHECK(t.data()[5] == 7);

  t.set_requires_grad(true);
  CHECK(t.grad().size() == t.numel());
}

TEST_CASE("conv2d examples") {
  Graph g = Graph::inference();
  Tensor x = values({1, 1, 1, 1}, {3.0});
  Tensor w = values({1, 1, 1, 1}, {2.0});
  CHECK(ops::conv2d(g, x, w, {}).item() == doctest::Approx(6.0));

  Rng rng(1);
  Tensor img = randn({2, 1, 5, 4}, rng);
  Tensor id({1, 1, 3, 3});
  id.data()[4] = 1;
  Tensor y = ops::conv2d(g, img, id, {1, 1, 1});
  REQUIRE(y.shape() == img.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == img.data()[i]);
}

TEST_CASE("conv2d shape errors name the dimension") {
  Graph g = Graph::inference();
  Tensor x({1, 2, 4, 4});
  Tensor w({3, 3, 3, 3});
  try {
    ops::conv2d(g, x, w, {1, 1, 1});
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("C_in") != std::string::npos);
  }
  CHECK_THROWS_AS(ops::conv2d(g, x, Tensor({3, 2, 2, 2}), {}), ShapeError);
}

TEST_CASE("residual_add examples") {
  Graph g = Graph::inference();
  Tensor x({2}, {1, 2});
  auto y = ops::residual_add(g, x, Tensor({2}, {0, 0}));
  CHECK(y.data()[0] == 1);
  CHECK(y.data()[1] == 2);
  y = ops::residual_add(g, x, Tensor({2}, {3, 4}));
  CHECK(y.data()[0] == 4);
  CHECK(y.data()[1] == 6);
}

TEST_CASE("batchnorm2d examples") {
  Graph g = Graph::inference();
  Tensor gamma({2}, {1.5, 2.0}), beta({2}, {0.25, -1.0});
  Tensor x({3, 2, 1, 2});
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t j = 0; j < 2; ++j) x.data()[(n * 2 + c) * 2 + j] = c == 0 ? 4.0 : -2.0;
  auto y = ops::batchnorm2d(g, x, gamma, beta, {});
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t j = 0; j < 2; ++j) {
      CHECK(y.data()[(n * 2 + 0) * 2 + j] == doctest::Approx(0.25).epsilon(1e-12));
      CHECK(y.data()[(n * 2 + 1) * 2 + j] == doctest::Approx(-1.0).epsilon(1e-12));
    }

  // Zero-mean, unit-variance channel passes through up to the epsilon floor.
  Tensor z({4, 1, 1, 1}, {1, -1, 1, -1});
  auto out = ops::batchnorm2d(g, z, values({1}, {1}), values({1}, {0}), {});
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(out.data()[i] - z.data()[i]) < 1e-5);

  CHECK_THROWS_AS(ops::batchnorm2d(g, Tensor({1, 1, 2, 2}), values({1}, {1}), values({1}, {0}), {}), ShapeError);
}

TEST_CASE("softmax and cross entropy") {
  Graph g = Graph::inference();
  auto p = ops::softmax(g, Tensor({1, 2}, {0, 0}));
  CHECK(p.data()[0] == doctest::Approx(0.5));
  CHECK(p.data()[1] == doctest::Approx(0.5));

  Rng rng(3);
  auto q = ops::softmax(g, randn({5, 7}, rng, 10.0));
  for (std::size_t r = 0; r < 5; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 7; ++c) s += q.data()[r * 7 + c];
    CHECK(std::abs(s - 1) < 1e-12);
  }

  std::vector<int> labels{1};
  double prev = 1e9;
  for (double gap : {1.0, 5.0, 20.0, 50.0}) {
    double loss = ops::cross_entropy(g, Tensor({1, 2}, {0, gap}), labels).item();
    CHECK(loss < prev);
    prev = loss;
  }
  CHECK(prev < 1e-20);
  std::vector<int> bad{2};
  CHECK_THROWS_AS(ops::cross_entropy(g, Tensor({1, 2}, {0, 0}), bad), Error);
}

TEST_CASE("argmax ties resolve to the lowest index") {
  auto a = ops::argmax_rows(Tensor({2, 3}, {0, 0, 0, 1, 3, 3}));
  CHECK(a == std::vector<int>{0, 1});
}

TEST_CASE("backward runs once, in reverse recording order") {
  Tensor x({1}, {2.0}, true);
  Graph g;
  std::vector<int> order;
  Tensor a = values({1}, {0.0});
  g.record({x}, a, [&] { order.push_back(1); });
  Tensor b = values({1}, {0.0});
  g.record({a}, b, [&] { order.push_back(2); });
  Tensor c = values({1}, {0.0});
  g.record({b}, c, [&] { order.push_back(3); });
  g.backward(c);
  CHECK(order == std::vector<int>{3, 2, 1});
  CHECK_THROWS_AS(g.backward(c), Error);
  CHECK_THROWS_AS(g.record({x}, a, [] {}), Error);
}

TEST_CASE("untracked inputs record nothing") {
  Graph g;
  Tensor x({2}, {1, 2});
  auto y = ops::relu(g, x);
  CHECK(g.size() == 0);
  CHECK_FALSE(y.tracked());
}

TEST_CASE("every reachable tracked tensor receives a gradient") {
  Rng rng(4);
  Tensor x = randn({2, 2, 3, 3}, rng);
  Tensor w = randn({3, 2, 3, 3}, rng);
  w.set_requires_grad(true);
  Tensor gamma({3}, {1, 1, 1}, true), beta({3}, {0, 0, 0}, true);
  Tensor hw = randn({4, 3}, rng), hb({4});
  hw.set_requires_grad(true);
  hb.set_requires_grad(true);
  Graph g;
  auto h = ops::conv2d(g, x, w, {1, 1, 1});
  h = ops::relu(g, ops::batchnorm2d(g, h, gamma, beta, {}));
  auto logits = ops::linear(g, ops::global_avg_pool(g, h), hw, hb);
  std::vector<int> labels{0, 3};
  auto loss = ops::cross_entropy(g, logits, labels);
  g.backward(loss);
  for (Tensor* t : {&w, &gamma, &beta, &hw, &hb}) {
    double norm = 0;
    for (auto v : t->grad()) norm += v * v;
    CHECK(norm > 0);
  }
}

TEST_CASE("forward passes are bit-identical across runs") {
  Rng rng(5);
  Tensor x = randn({3, 4, 6, 6}, rng);
  Tensor w = randn({8, 4, 3, 3}, rng);
  Graph g1 = Graph::inference(), g2 = Graph::inference();
  auto a = ops::conv2d(g1, x, w, {2, 1, 1});
  auto b = ops::conv2d(g2, x, w, {2, 1, 1});
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.data()[i] == b.data()[i]);
}

TEST_CASE("sgd and adam") {
  Tensor w({1}, {1.0}, true);
  w.grad()[0] = 0.5;
  std::vector<Tensor> ps{w};
  optim::sgd_step(ps, 0.1);
  CHECK(w.data()[0] == doctest::Approx(0.95).epsilon(1e-15));
  CHECK(w.grad()[0] == 0);

  optim::sgd_step(ps, 0.1);
  CHECK(w.data()[0] == doctest::Approx(0.95).epsilon(1e-15));

  std::vector<Tensor> none{values({1}, {1.0})};
  CHECK_THROWS_AS(optim::sgd_step(none, 0.1), Error);

  // First Adam step: m = (1-b1) g, v = (1-b2) g^2, bias-corrected to g and
  // g^2, so the update is lr * g / (|g| + eps).
  Tensor p({3}, {0.0, 0.0, 0.0}, true);
  const double g[3] = {0.3, -2.0, 0.0};
  for (int i = 0; i < 3; ++i) p.grad()[i] = g[i];
  optim::AdamOptions opt;
  opt.lr = 0.01;
  optim::Adam adam({p}, opt);
  adam.step();
  for (int i = 0; i < 3; ++i) {
    const double expect = -opt.lr * g[i] / (std::abs(g[i]) + opt.eps);
    CHECK(p.data()[i] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("gradient checks on randomized shapes") {
  if (sizeof(Real) != 8) return;  // finite differences need 64-bit storage
  Rng rng(2024);
  for (const auto& c : hournas::testing::grad_cases()) {
    double worst = 0;
    for (int t = 0; t < 10; ++t) worst = std::max(worst, c.run(rng));
    INFO(c.name << " max rel err " << worst);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("residual_add has identity Jacobian in x") {
  Rng rng(6);
  Tensor x = randn({4}, rng), fx = randn({4}, rng);
  x.set_requires_grad(true);
  for (std::size_t k = 0; k < 4; ++k) {
    x.zero_grad();
    Graph g;
    std::vector<Real> e(4, 0);
    e[k] = 1;
    auto y = ops::weighted_sum(g, ops::residual_add(g, x, fx), e);
    g.backward(y);
    for (std::size_t i = 0; i < 4; ++i) CHECK(x.grad()[i] == (i == k ? 1.0 : 0.0));
  }
}

}  // TEST_SUITE
