#include <cmath>
#include <random>

#include "doctest.h"
#include "gsal/errors.hpp"
#include "gsal/saliency.hpp"
#include "gsal/superpixel.hpp"
#include "test_support.hpp"

using namespace gsal;
using gsal::testing::random_cnn;
using gsal::testing::relative_error;

namespace {

Image random_image(const Shape& shape, std::uint64_t seed) {
  return Image::from_tensor(gsal::testing::random_input(shape, seed));
}

Model rgb_cnn(std::uint64_t seed) {
  const Shape in{3, 8, 8};
  std::vector<LayerSpec> layers{{LayerKind::Conv2d, 3, 4, 3}, {LayerKind::Relu}, {LayerKind::AvgPool2},
                                {LayerKind::Dense, 64, 3}};
  return Model::initialize(in, 3, layers, seed);
}

MethodParams logit_params(Method m = Method::Gradient) {
  MethodParams p;
  p.method = m;
  p.score = ScoreKind::Logit;
  return p;
}

std::vector<double> random_values(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

double norm(const std::vector<double>& v) { return l2_norm(v); }

}  // namespace

TEST_CASE("channel aggregation") {
  Tensor g({3, 1, 2}, {3, 1, -3, 1, 0, 1});
  auto m = channel_aggregate(g);
  CHECK(m.height == 1);
  CHECK(m.width == 2);
  CHECK(m.values[0] == 2.0);
  CHECK(m.values[1] == 1.0);
  CHECK(channel_aggregate(Tensor({1, 1, 1}, {-5})).values[0] == 5.0);
  for (double v : channel_aggregate(Tensor({3, 4, 4})).values) CHECK(v == 0.0);
  CHECK_THROWS_AS(channel_aggregate(Tensor({4, 4})), InputShapeError);
}

TEST_CASE("simple gradient") {
  const std::vector<double> w{1, -2, 3, 0, 0, 0};
  Model lin = make_linear_model({1, 1, 3}, 2, w);
  Image x(1, 3, 1, std::vector<double>{0.5, 0.1, 0.9});
  Tensor raw = raw_attribution(lin, x, logit_params());
  CHECK(raw.values() == std::vector<double>{1, -2, 3});
  CHECK(explain(lin, x, logit_params()).values == std::vector<double>{1, 2, 3});

  Model zero = make_linear_model({1, 1, 3}, 2, std::vector<double>(6, 0.0));
  for (double v : simple_gradient(zero, x).values) CHECK(v == 0.0);

  int checked = 0;
  for (std::uint64_t seed = 0; seed < 12 && checked < 5; ++seed) {
    Model net = random_cnn(seed, 3);
    Image img = random_image({1, 8, 8}, 100 + seed);
    if (gsal::testing::min_abs_preactivation(net, img.to_tensor()) < 1e-4) continue;
    const std::size_t c = predict(net, img.to_tensor());
    Tensor fd = finite_difference_gradient(net, img.to_tensor(), c, 1e-6);
    Tensor an = raw_gradient(net, img, c);
    CHECK(relative_error(an, fd) < 1e-4);
    auto map = simple_gradient(net, img);
    auto fd_map = channel_aggregate(fd);
    for (std::size_t i = 0; i < map.values.size(); ++i)
      CHECK(std::abs(map.values[i] - fd_map.values[i]) <= 1e-4 * std::abs(fd_map.values[i]) + 1e-10);
    ++checked;
  }
  CHECK(checked == 5);
}

TEST_CASE("SmoothGrad") {
  Model net = rgb_cnn(3);
  Image img = random_image({3, 8, 8}, 4);
  auto sg = simple_gradient(net, img);
  CHECK(smoothgrad(net, img, 7, 0.0, 1).values == sg.values);

  const std::size_t c = predict(net, img.to_tensor());
  std::mt19937_64 rng(42);
  std::normal_distribution<double> noise(0.0, 0.2);
  Tensor noisy = img.to_tensor();
  for (auto& v : noisy.data()) v += noise(rng);
  Tensor one = raw_smoothgrad(net, img, c, 1, 0.2, 42);
  CHECK(relative_error(one, input_gradient(net, noisy, c)) < 1e-12);

  std::vector<double> w(2 * 12);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(1.0 + i);
  Model lin = make_linear_model({3, 2, 2}, 2, w);
  Image x = random_image({3, 2, 2}, 5);
  auto p = logit_params(Method::SmoothGrad);
  p.samples = 64;
  p.target_class = 1;
  for (double sigma : {0.01, 0.5, 3.0}) {
    p.sigma = sigma;
    Tensor raw = raw_attribution(lin, x, p);
    for (std::size_t i = 0; i < 12; ++i) CHECK(raw[i] == w[12 + i]);
  }

  auto a = smoothgrad(net, img, 16, 0.1, 9), b = smoothgrad(net, img, 16, 0.1, 9);
  CHECK(a.values == b.values);
  CHECK(a.values != smoothgrad(net, img, 16, 0.1, 10).values);
  CHECK_THROWS_AS(smoothgrad(net, img, 0, 0.1, 1), ArgumentError);
  CHECK_THROWS_AS(smoothgrad(net, img, 4, -0.1, 1), ArgumentError);
}

TEST_CASE("Integrated gradients") {
  Model lin = make_linear_model({1, 1, 2}, 2, std::vector<double>{1, 2, 0, 0});
  Image x(1, 2, 1, std::vector<double>{3, 4});
  auto p = logit_params(Method::IntegratedGradients);
  p.target_class = 0;
  p.steps = 5;
  Tensor raw = raw_attribution(lin, x, p);
  CHECK(raw.values() == std::vector<double>{3, 8});
  CHECK(raw[0] + raw[1] == 11.0);

  Model net = random_cnn(7, 3);
  Image img = random_image({1, 8, 8}, 8);
  for (double v : integrated_gradients(net, img, img, 16).values) CHECK(v == 0.0);

  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    Model m = random_cnn(20 + seed, 3);
    Image im = random_image({1, 8, 8}, 30 + seed);
    Image base(8, 8, 1, 0.0);
    const std::size_t c = predict(m, im.to_tensor());
    Tensor attr = raw_integrated_gradients(m, im, base, c, 256);
    double total = 0;
    for (double v : attr.data()) total += v;
    const double expected = class_score(m, im.to_tensor(), c) - class_score(m, base.to_tensor(), c);
    CHECK(std::abs(total - expected) <= 1e-2 * std::abs(expected));
  }
  CHECK_THROWS_AS(integrated_gradients(net, img, img, 0), ArgumentError);
  CHECK_THROWS_AS(integrated_gradients(net, img, Image(4, 4, 1), 4), InputShapeError);
}

TEST_CASE("Sparsified SmoothGrad") {
  Tensor raw({1, 2, 2}, {5, -4, 0.1, 0});
  CHECK(sparsify(raw, 0.5).values() == std::vector<double>{5, -4, 0, 0});
  CHECK(sparsify(raw, 1.0) == raw);
  CHECK_THROWS_AS(sparsify(raw, 0.0), ArgumentError);
  CHECK_THROWS_AS(sparsify(raw, 1.5), ArgumentError);

  Model net = random_cnn(5, 3);
  Image img = random_image({1, 8, 8}, 6);
  CHECK(sparsified_smoothgrad(net, img, 8, 0.1, 1.0, 3).values == smoothgrad(net, img, 8, 0.1, 3).values);
  for (double k : {1e-9, 0.05, 0.3}) {
    auto m = sparsified_smoothgrad(net, img, 8, 0.1, k, 3);
    const auto nonzero = std::count_if(m.values.begin(), m.values.end(), [](double v) { return v != 0.0; });
    CHECK(nonzero == static_cast<long>(std::ceil(k * 64 - 1e-9)));
  }
}

TEST_CASE("group average") {
  Partition p = make_partition(1, 3, std::vector<int>{0, 0, 1}, "hand");
  SaliencyMap m{1, 3, {1, 3, 5}, "hand"};
  CHECK(group_average(m, p).values == std::vector<double>{2, 2, 5});
  SaliencyMap r{4, 5, {}, "r"};
  std::mt19937_64 rng(1);
  r.values = random_values(20, rng);
  CHECK(group_average(r, grid_partition(4, 5, 1)).values == r.values);
  double mean = 0;
  for (double v : r.values) mean += v / 20;
  for (double v : group_average(r, grid_partition(4, 5, 5)).values) CHECK(v == doctest::Approx(mean).epsilon(1e-12));
  CHECK_THROWS_AS(group_average(r, grid_partition(5, 4, 2)), ArgumentError);

  GroupingOperator op(slic(random_image({3, 8, 8}, 2), {6, 10.0, 10}));
  for (std::size_t k = 0; k < op.sizes().size(); ++k) {
    CHECK(op.weights()[k] > 0.0);
    CHECK(op.weights()[k] * static_cast<double>(op.sizes()[k]) == doctest::Approx(1.0).epsilon(1e-15));
  }
  auto kappa = op.dense();
  const std::size_t d = 64;
  double worst = 0;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double sq = 0;
      for (std::size_t t = 0; t < d; ++t) sq += kappa[i * d + t] * kappa[t * d + j];
      worst = std::max({worst, std::abs(sq - kappa[i * d + j]), std::abs(kappa[i * d + j] - kappa[j * d + i])});
    }
  CHECK(worst < 1e-12);
  auto v = random_values(d, rng);
  auto applied = op.apply(v);
  for (std::size_t i = 0; i < d; ++i) {
    double mv = 0;
    for (std::size_t j = 0; j < d; ++j) mv += kappa[i * d + j] * v[j];
    CHECK(applied[i] == doctest::Approx(mv).epsilon(1e-12));
  }
}

TEST_CASE("grouping invariants on random maps and partitions") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t h = 1 + rng() % 12, w = 1 + rng() % 12, n = h * w;
    Partition part;
    switch (trial % 3) {
      case 0: part = random_partition(h, w, 1 + rng() % n, rng()); break;
      case 1: part = grid_partition(h, w, 1 + rng() % 5); break;
      default: part = felzenszwalb(random_image({1, h, w}, rng()), {1.0 + rng() % 5, 0.5, rng() % 6}); break;
    }
    SaliencyMap a{h, w, random_values(n, rng), "a"}, b{h, w, random_values(n, rng), "b"};
    auto ga = group_average(a, part), gb = group_average(b, part);
    CHECK(group_average(ga, part).values == ga.values);
    CHECK(norm(ga.values) <= norm(a.values) + 1e-12);

    std::vector<double> diff(n), gdiff(n);
    for (std::size_t i = 0; i < n; ++i) {
      diff[i] = a.values[i] - b.values[i];
      gdiff[i] = ga.values[i] - gb.values[i];
    }
    CHECK(norm(gdiff) <= norm(diff) + 1e-12);

    std::vector<double> lo(part.group_count, 1e300), hi(part.group_count, -1e300);
    for (std::size_t i = 0; i < n; ++i) {
      lo[part.labels[i]] = std::min(lo[part.labels[i]], ga.values[i]);
      hi[part.labels[i]] = std::max(hi[part.labels[i]], ga.values[i]);
    }
    for (std::size_t k = 0; k < part.group_count; ++k) CHECK(lo[k] == hi[k]);

    double s = 0, gs = 0, sabs = 0;
    for (std::size_t i = 0; i < n; ++i) {
      s += a.values[i];
      gs += ga.values[i];
      sabs += std::abs(a.values[i]);
    }
    CHECK(std::abs(s - gs) <= 1e-9 * sabs);
  }
}

TEST_CASE("grouped saliency") {
  Model lin = make_linear_model({1, 1, 3}, 2, std::vector<double>{1, 3, 5, 0, 0, 0});
  Image x(1, 3, 1, std::vector<double>{0.2, 0.4, 0.6});
  Partition p = make_partition(1, 3, std::vector<int>{0, 0, 1}, "hand");
  CHECK(grouped(lin, x, p, logit_params()).values == std::vector<double>{2, 2, 5});

  Model net = rgb_cnn(11);
  Image img = random_image({3, 8, 8}, 12);
  Partition singles = grid_partition(8, 8, 1);
  CHECK(grouped(net, img, singles, {}).values == simple_gradient(net, img).values);

  Partition sp = slic(img, {8, 10.0, 10});
  CHECK(grouped(net, img, sp, {}).provenance.find("slic") != std::string::npos);
  Image other = random_image({3, 8, 8}, 13);
  CHECK_THROWS_AS(grouped(net, other, sp, {}), StalePartitionError);
  CHECK_NOTHROW(grouped(net, other, grid_partition(8, 8, 2), {}));

  const std::size_t c = predict(net, img.to_tensor());
  GroupingOperator op(sp);

  MethodParams sgp;
  sgp.method = Method::SmoothGrad;
  sgp.samples = 10;
  sgp.sigma = 0.15;
  sgp.seed = 5;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> noise(0.0, 0.15);
  Tensor per_sample({3, 8, 8}, 0.0);
  for (int s = 0; s < 10; ++s) {
    Tensor noisy = img.to_tensor();
    for (auto& v : noisy.data()) v += noise(rng);
    per_sample += op.apply(input_gradient(net, noisy, c)) * 0.1;
  }
  CHECK(max_abs_difference(grouped_raw(net, img, sp, sgp), per_sample) < 1e-12);
  CHECK(max_abs_difference(grouped_raw(net, img, sp, sgp), op.apply(raw_attribution(net, img, sgp))) == 0.0);

  MethodParams igp;
  igp.method = Method::IntegratedGradients;
  igp.steps = 12;
  const Tensor xt = img.to_tensor();
  Tensor grouped_ig = grouped_raw(net, img, sp, igp);
  Tensor ig_then_group = op.apply(raw_attribution(net, img, igp));
  CHECK(max_abs_difference(grouped_ig, ig_then_group) == 0.0);
  Tensor mean_grad({3, 8, 8}, 0.0);
  for (int k = 0; k < 12; ++k) mean_grad += input_gradient(net, xt * ((k + 0.5) / 12.0), c) * (1.0 / 12.0);
  Tensor group_then_sum = op.apply(mean_grad);
  Tensor sum_then_group({3, 8, 8}, 0.0);
  for (int k = 0; k < 12; ++k) sum_then_group += op.apply(input_gradient(net, xt * ((k + 0.5) / 12.0), c)) * (1.0 / 12.0);
  CHECK(max_abs_difference(group_then_sum, sum_then_group) < 1e-12);
}

TEST_CASE("grouped gradient through the autodiff tape") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    Model net = rgb_cnn(40 + seed);
    Image img = random_image({3, 8, 8}, 50 + seed);
    Partition sp = slic(img, {10, 10.0, 10});
    const std::size_t c = predict(net, img.to_tensor());
    for (auto score : {ScoreKind::Probability, ScoreKind::Logit}) {
      MethodParams p;
      p.score = score;
      Tensor direct = grouped_raw(net, img, sp, p);
      Tensor dual = grouped_gradient_via_graph(net, img, sp, c, score);
      CHECK(relative_error(dual, direct) < 1e-12);
    }
  }
}

TEST_CASE("PGM export") {
  SaliencyMap m{1, 3, {0.0, 0.5, 2.0}, "m"};
  const std::string pgm = to_pgm16(m);
  const std::string header = "P5\n3 1\n65535\n";
  REQUIRE(pgm.size() == header.size() + 6);
  CHECK(pgm.substr(0, header.size()) == header);
  auto word = [&](std::size_t i) {
    return (static_cast<unsigned char>(pgm[header.size() + 2 * i]) << 8) |
           static_cast<unsigned char>(pgm[header.size() + 2 * i + 1]);
  };
  CHECK(word(0) == 0);
  CHECK(word(1) == 16384);
  CHECK(word(2) == 65535);
  SaliencyMap flat{2, 2, {3, 3, 3, 3}, "flat"};
  const std::string f = to_pgm16(flat);
  CHECK(f.substr(f.size() - 8) == std::string(8, '\0'));
}
