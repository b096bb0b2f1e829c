#include <cmath>
#include <random>

#include "gsal/errors.hpp"
#include "gsal/harness.hpp"
#include "gsal/tensor.hpp"
#include "json.hpp"

namespace gsal {

namespace {

double l2(std::span<const double> a, std::span<const double> b) {
  long double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<long double>(a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(static_cast<double>(s));
}

Partition fuzz_partition(std::mt19937_64& rng, std::size_t h, std::size_t w, int kind) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t n = h * w;
  Image img(h, w, 3);
  for (auto& v : img.pixels) v = u(rng);
  switch (kind) {
    case 0: return grid_partition(h, w, 1 + rng() % 4);
    case 1: return random_partition(h, w, 1 + rng() % n, rng());
    case 2: return slic(img, {1 + rng() % n, 0.5 + 20 * u(rng), 1 + rng() % 10});
    case 3: return quickshift(img, {0.5 + 2 * u(rng), 0.5 + 4 * u(rng), 0.2 + 0.8 * u(rng)});
    default: return felzenszwalb(img, {0.1 + 50 * u(rng), 0.8 * u(rng), 1 + rng() % 10});
  }
}

struct Checker {
  PropcheckResult& result;

  void check(const std::string& origin, std::size_t trial, std::span<const double> a, std::span<const double> b,
             const Partition& part) {
    ++result.trials;
    GroupingOperator kappa(part);
    const auto ga = kappa.apply(a), gb = kappa.apply(b);
    const double excess = l2(ga, gb) - l2(a, b);
    result.worst_prop1_excess = std::max(result.worst_prop1_excess, excess);
    const auto gap = prop2_gap(a, b, part);
    const double err = gap.relative_error();
    result.worst_prop2_error = std::max(result.worst_prop2_error, err);
    const bool bad1 = excess > 1e-12, bad2 = !(err < 1e-9);
    if (bad1) ++result.prop1_violations;
    if (bad2) ++result.prop2_violations;
    if ((bad1 || bad2) && result.counterexample.empty()) {
      nlohmann::ordered_json j;
      j["property"] = bad1 ? "grouped loss exceeds pixel loss" : "variance identity";
      j["origin"] = origin;
      j["trial"] = trial;
      j["height"] = part.height;
      j["width"] = part.width;
      j["labels"] = part.labels;
      j["m_hat"] = std::vector<double>(a.begin(), a.end());
      j["m_star"] = std::vector<double>(b.begin(), b.end());
      j["loss_pixel"] = l2(a, b);
      j["loss_grouped"] = l2(ga, gb);
      j["lhs"] = gap.lhs;
      j["rhs"] = gap.rhs;
      result.counterexample = j.dump(2);
    }
  }
};

}  // namespace

PropcheckResult run_propcheck(std::uint64_t seed, std::size_t trials, std::size_t model_trials) {
  PropcheckResult result;
  Checker checker{result};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t h = 1 + rng() % 12, w = 1 + rng() % 12, planes = 1 + rng() % 3;
    const Partition part = fuzz_partition(rng, h, w, static_cast<int>(t % 5));
    std::vector<double> a(h * w * planes), b(a.size());
    if (t % 10 == 9) {
      const double ca = 5 * normal(rng), cb = 5 * normal(rng);
      std::fill(a.begin(), a.end(), ca);
      std::fill(b.begin(), b.end(), cb);
    } else {
      const double scale = std::pow(10.0, static_cast<double>(rng() % 7) - 3.0);
      for (auto& v : a) v = scale * normal(rng);
      for (auto& v : b) v = scale * normal(rng);
    }
    checker.check("fuzz", t, a, b, part);
  }

  if (model_trials > 0) {
    const std::size_t size = 16;
    Dataset pool = generate_shapes(400, size, derive_seed(seed, 1));
    auto halves = disjoint_split(pool, 2, derive_seed(seed, 2));
    TrainConfig tc;
    tc.epochs = 3;
    tc.seed = derive_seed(seed, 3);
    const Model m_hat = train(halves[0], tc);
    tc.seed = derive_seed(seed, 4);
    const Model m_star = train(halves[1], tc);
    Dataset probe = generate_shapes(model_trials, size, derive_seed(seed, 5));
    for (std::size_t t = 0; t < model_trials; ++t) {
      const Image& img = probe.images[t];
      const std::size_t c = predict(m_star, img.to_tensor());
      const Tensor ga = raw_gradient(m_hat, img, c), gb = raw_gradient(m_star, img, c);
      const Partition part = slic(img, {4 + rng() % 61, 10.0, 10});
      checker.check("model-gradient", t, ga.data(), gb.data(), part);
    }
  }
  return result;
}

}  // namespace gsal
