#include <cmath>
#include <random>

#include "doctest.h"
#include "gsal/errors.hpp"
#include "gsal/model.hpp"
#include "test_support.hpp"

using namespace gsal;

TEST_CASE("softmax closed forms") {
  const double w[] = {0, 0, 0, 0};
  {
    const double bias[] = {0.0, 0.0};
    Model m = make_linear_model({2}, 2, w, bias);
    auto p = forward(m, Tensor({2}, {0.3, -0.7}));
    CHECK(p.values[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(p.values[1] == doctest::Approx(0.5).epsilon(1e-15));
  }
  {
    const double bias[] = {0.0, std::log(3.0)};
    Model m = make_linear_model({2}, 2, w, bias);
    auto p = forward(m, Tensor({2}, {1.0, 2.0}));
    CHECK(p.values[0] == doctest::Approx(0.25).epsilon(1e-14));
    CHECK(p.values[1] == doctest::Approx(0.75).epsilon(1e-14));
  }
}

TEST_CASE("probabilities of random CNNs are normalized and positive") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Model m = testing::random_cnn(seed, 3);
    Tensor x = testing::random_input(m.input_shape(), seed + 100);
    auto p = forward(m, x);
    double total = 0.0;
    for (double v : p.values) {
      CHECK(v > 0.0);
      total += v;
    }
    CHECK(std::abs(total - 1.0) < 1e-9);
  }
}

TEST_CASE("input_gradient of a linear logit is the weight vector") {
  const double w[] = {1, 2, 3, 0, 0, 0};
  Model m = make_linear_model({1, 1, 3}, 2, w);
  Tensor g = input_gradient(m, Tensor({1, 1, 3}, {0.2, 0.5, 0.9}), 0, ScoreKind::Logit);
  CHECK(g.values() == std::vector<double>{1, 2, 3});
}

TEST_CASE("dead ReLU unit contributes no gradient") {
  // hidden unit 0 has a large negative bias, so only unit 1 carries gradient.
  Tensor w1({3, 2}, {1, 10, 1, 20, 1, 30});
  Tensor b1({2}, {-100.0, 0.0});
  Tensor w2({2, 2}, {5, 0, 1, 0});
  Tensor b2({2}, 0.0);
  Model m({3}, 2, {{LayerKind::Dense, 3, 2}, {LayerKind::Relu}, {LayerKind::Dense, 2, 2}}, {w1, b1, w2, b2});
  Tensor g = input_gradient(m, Tensor({3}, {0.1, 0.2, 0.3}), 0, ScoreKind::Logit);
  CHECK(g.values() == std::vector<double>{10, 20, 30});
}

TEST_CASE("finite_difference_gradient basics") {
  SUBCASE("linear") {
    const double w[] = {1.5, -2, 0.25, 0, 0, 0};
    Model m = make_linear_model({3}, 2, w);
    Tensor g = finite_difference_gradient(m, Tensor({3}, {0.4, 0.1, 0.7}), 0, 1e-3, ScoreKind::Logit);
    CHECK(g[0] == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(g[1] == doctest::Approx(-2).epsilon(1e-12));
    CHECK(g[2] == doctest::Approx(0.25).epsilon(1e-12));
  }
  SUBCASE("constant model") {
    const double w[] = {0, 0, 0, 0, 0, 0};
    Model m = make_linear_model({3}, 2, w);
    Tensor g = finite_difference_gradient(m, Tensor({3}, {0.4, 0.1, 0.7}), 1, 1e-5);
    for (double v : g.data()) CHECK(v == 0.0);
  }
  SUBCASE("quadratic scalar") {
    Tensor g = finite_difference_gradient([](const Tensor& x) { return x[0] * x[0]; }, Tensor({1}, {3.0}), 1e-5);
    CHECK(std::abs(g[0] - 6.0) < 1e-8);
  }
  SUBCASE("non-positive step") {
    CHECK_THROWS_AS(finite_difference_gradient([](const Tensor&) { return 0.0; }, Tensor({1}, {0.0}), 0.0),
                    ArgumentError);
  }
}

TEST_CASE("input gradients of random CNNs match central differences") {
  int checked = 0;
  for (std::uint64_t seed = 0; checked < 10; ++seed) {
    Model m = testing::random_cnn(seed, 3);
    Tensor x = testing::random_input(m.input_shape(), seed + 1000);
    if (testing::min_abs_preactivation(m, x) < 1e-3) continue;
    for (auto kind : {ScoreKind::Probability, ScoreKind::Logit}) {
      const std::size_t c = seed % 3;
      Tensor analytic = input_gradient(m, x, c, kind);
      Tensor numeric = finite_difference_gradient(m, x, c, 1e-5, kind);
      CHECK(testing::relative_error(analytic, numeric) < 1e-4);
    }
    ++checked;
  }
}

TEST_CASE("parameter gradients") {
  SUBCASE("logistic regression closed form (p - y) x") {
    const double w[] = {0.3, -0.2, 0.5, -0.4, 0.1, 0.2};
    Model m = make_linear_model({3}, 2, w);
    Tensor x({3}, {0.5, -1.0, 2.0});
    const std::size_t label[] = {1};
    auto p = forward(m, x);
    auto grads = parameter_gradients(m, x.reshaped({1, 3}), label);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t c = 0; c < 2; ++c) {
        const double expected = (p.values[c] - (c == 1 ? 1.0 : 0.0)) * x[i];
        CHECK(std::abs(grads.grads[0][i * 2 + c] - expected) < 1e-10);
      }
    for (std::size_t c = 0; c < 2; ++c) CHECK(std::abs(grads.grads[1][c] - (p.values[c] - (c == 1 ? 1.0 : 0.0))) < 1e-10);
  }
  SUBCASE("duplicated sample gives the same mean gradient") {
    Model m = testing::random_cnn(7, 2);
    Tensor x = testing::random_input(m.input_shape(), 8);
    const std::vector<Tensor> one{x};
    const std::vector<Tensor> two{x, x};
    const std::size_t l1[] = {1};
    const std::size_t l2[] = {1, 1};
    auto a = parameter_gradients(m, one, l1);
    auto b = parameter_gradients(m, two, l2);
    for (std::size_t i = 0; i < a.grads.size(); ++i) CHECK(max_abs_difference(a.grads[i], b.grads[i]) < 1e-14);
  }
  SUBCASE("random net matches finite differences on sampled parameters") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Model m = testing::random_cnn(seed + 50, 3);
      std::vector<Tensor> xs{testing::random_input(m.input_shape(), seed), testing::random_input(m.input_shape(), seed + 1)};
      if (testing::min_abs_preactivation(m, xs[0]) < 1e-3 || testing::min_abs_preactivation(m, xs[1]) < 1e-3) continue;
      const std::size_t labels[] = {0, 2};
      auto grads = parameter_gradients(m, xs, labels);
      CHECK(testing::parameter_gradient_error(m, xs, labels, grads, 20, seed) < 1e-4);
    }
  }
  SUBCASE("empty batch") {
    Model m = testing::random_cnn(1, 2);
    CHECK_THROWS_AS(parameter_gradients(m, std::span<const Tensor>{}, std::span<const std::size_t>{}), ArgumentError);
  }
}

TEST_CASE("error paths") {
  Model m = testing::random_cnn(3, 3);
  CHECK_THROWS_AS(forward(m, Tensor({1, 4, 4})), InputShapeError);
  CHECK_THROWS_AS(input_gradient(m, testing::random_input(m.input_shape(), 1), 3), IndexError);
}

TEST_CASE("backward pass is linear in the seed") {
  Model m = testing::random_cnn(11, 3);
  Tensor x = testing::random_input(m.input_shape(), 12);
  Tensor g0 = input_gradient(m, x, 0);
  Tensor g1 = input_gradient(m, x, 1);

  Graph g;
  std::vector<Var> params;
  for (const auto& p : m.parameters()) params.push_back(g.constant(p));
  Var in = g.input(x.reshaped({1, 1, 8, 8}));
  Var probs = g.softmax(build_logits(g, m, in, params));
  Tensor seed({1, 3}, {1.0, 1.0, 0.0});
  g.backward(probs, seed);
  Tensor both = g.grad(in);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(both[i] - (g0[i] + g1[i])) < 1e-10);
}

TEST_CASE("unreachable nodes keep zero adjoints and graphs are single use") {
  Graph g;
  Var a = g.input(Tensor({2}, {1.0, 2.0}));
  Var b = g.input(Tensor({2}, {3.0, 4.0}));
  Var loss = g.sum(g.mul(a, a));
  g.backward(loss);
  CHECK(g.grad(a).values() == std::vector<double>{2.0, 4.0});
  CHECK(g.grad(b).values() == std::vector<double>{0.0, 0.0});
  CHECK_THROWS(g.backward(loss));
}

TEST_CASE("matmul and add primitives") {
  Graph g;
  Var a = g.input(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  Var b = g.input(Tensor({3, 1}, {1, 0, -1}));
  Var c = g.add(g.matmul(a, b), g.constant(Tensor({2, 1}, {10, 20})));
  CHECK(g.value(c).values() == std::vector<double>{8, 18});
  g.backward(g.sum(c));
  CHECK(g.grad(a).values() == std::vector<double>{1, 0, -1, 1, 0, -1});
  CHECK(g.grad(b).values() == std::vector<double>{5, 7, 9});
}

TEST_CASE("group_broadcast adjoint is the within-group mean") {
  Graph g;
  Var groups = g.input(Tensor({1, 2}, {0.0, 0.0}));
  const int labels[] = {0, 0, 1, 1, 1, 0};
  Var pixels = g.group_broadcast(groups, labels, 2, 3);
  Tensor seed({1, 1, 2, 3}, {1, 2, 3, 4, 5, 6});
  g.backward(pixels, seed);
  CHECK(g.grad(groups)[0] == doctest::Approx((1 + 2 + 6) / 3.0));
  CHECK(g.grad(groups)[1] == doctest::Approx((3 + 4 + 5) / 3.0));
}

TEST_CASE("gradients are bit-identical across repeated evaluation") {
  Model m = testing::random_cnn(21, 3);
  Tensor x = testing::random_input(m.input_shape(), 22);
  CHECK(input_gradient(m, x, 2) == input_gradient(m, x, 2));
}
