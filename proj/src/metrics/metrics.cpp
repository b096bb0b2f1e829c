#include "gsal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "gsal/errors.hpp"
#include "json.hpp"

namespace gsal {
namespace {

void check_same(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw ArgumentError(std::string(what) + ": dimension mismatch (" + std::to_string(a) + " vs " +
                                  std::to_string(b) + ")");
}

void check_map(const SaliencyMap& map, const Image& img) {
  if (map.height != img.height || map.width != img.width || map.values.size() != img.pixel_count()) {
    throw ArgumentError("saliency map dimensions differ from the image");
  }
}

std::string number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Copy of img with the first k pixels of `order` (all channels) taken from `source`.
void paste_pixels(Image& target, const Image& source, std::span<const std::size_t> order, std::size_t k) {
  const std::size_t n = target.pixel_count();
  for (std::size_t c = 0; c < target.channels; ++c)
    for (std::size_t r = 0; r < k; ++r) target.pixels[c * n + order[r]] = source.pixels[c * n + order[r]];
}

}  // namespace

double interpretation_loss(std::span<const double> m_hat, std::span<const double> m_star) {
  check_same(m_hat.size(), m_star.size(), "interpretation_loss");
  long double acc = 0.0L;
  for (std::size_t i = 0; i < m_hat.size(); ++i) {
    const long double d = static_cast<long double>(m_hat[i]) - m_star[i];
    acc += d * d;
  }
  return static_cast<double>(std::sqrt(acc));
}

double interpretation_loss(const SaliencyMap& m_hat, const SaliencyMap& m_star) {
  if (m_hat.height != m_star.height || m_hat.width != m_star.width) {
    throw ArgumentError("interpretation_loss: dimension mismatch");
  }
  return interpretation_loss(m_hat.values, m_star.values);
}

double Prop2Gap::relative_error() const { return std::abs(lhs - rhs) / std::max(lhs, 1e-12); }

Prop2Gap prop2_gap(std::span<const double> m_hat, std::span<const double> m_star, const Partition& part) {
  check_same(m_hat.size(), m_star.size(), "prop2_gap");
  const std::size_t n = part.pixel_count(), p = part.group_count;
  if (n == 0 || m_hat.size() % n != 0 || m_hat.empty()) throw ArgumentError("prop2_gap: maps do not match partition");
  if (!validate(part).valid()) throw ArgumentError("prop2_gap: invalid partition");
  const auto sizes = part.group_sizes();

  long double pixel_sq = 0.0L, grouped_sq = 0.0L, variance_sum = 0.0L;
  std::vector<long double> mean(p);
  for (std::size_t plane = 0; plane < m_hat.size() / n; ++plane) {
    std::fill(mean.begin(), mean.end(), 0.0L);
    for (std::size_t i = 0; i < n; ++i) {
      const long double d = static_cast<long double>(m_hat[plane * n + i]) - m_star[plane * n + i];
      pixel_sq += d * d;
      mean[static_cast<std::size_t>(part.labels[i])] += d;
    }
    for (std::size_t k = 0; k < p; ++k) mean[k] /= static_cast<long double>(sizes[k]);
    // Left side: squared norm of the group-averaged difference.
    for (std::size_t i = 0; i < n; ++i) {
      const long double g = mean[static_cast<std::size_t>(part.labels[i])];
      grouped_sq += g * g;
    }
    // Right side: |S| times the population variance, i.e. the within-group sum of squares.
    for (std::size_t i = 0; i < n; ++i) {
      const long double d = static_cast<long double>(m_hat[plane * n + i]) - m_star[plane * n + i];
      const long double e = d - mean[static_cast<std::size_t>(part.labels[i])];
      variance_sum += e * e;
    }
  }
  return {static_cast<double>(pixel_sq - grouped_sq), static_cast<double>(variance_sum)};
}

Prop2Gap prop2_gap(const SaliencyMap& m_hat, const SaliencyMap& m_star, const Partition& part) {
  if (m_hat.height != part.height || m_hat.width != part.width || m_star.height != part.height ||
      m_star.width != part.width) {
    throw ArgumentError("prop2_gap: dimension mismatch");
  }
  return prop2_gap(std::span<const double>(m_hat.values), std::span<const double>(m_star.values), part);
}

StabilityEstimate empirical_stability(std::span<const SaliencyMap> a, std::span<const SaliencyMap> b) {
  check_same(a.size(), b.size(), "empirical_stability");
  StabilityEstimate est;
  est.count = a.size();
  if (a.empty()) return est;
  long double total = 0.0L;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = interpretation_loss(a[i], b[i]);
    total += d;
    est.max = std::max(est.max, d);
  }
  est.mean = static_cast<double>(total / static_cast<long double>(a.size()));
  return est;
}

std::vector<double> minmax_normalize(std::span<const double> values) {
  std::vector<double> out(values.size(), 0.0);
  if (values.empty()) return out;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double range = *hi - *lo;
  if (range > 0.0)
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - *lo) / range;
  return out;
}

double ssim_normalized(std::span<const double> a, std::span<const double> b, std::size_t height, std::size_t width) {
  check_same(a.size(), b.size(), "ssim");
  check_same(a.size(), height * width, "ssim");
  if (a.empty()) throw ArgumentError("ssim of empty maps");
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  constexpr std::size_t win = 11;

  auto window_ssim = [&](std::size_t y0, std::size_t x0, std::size_t wh, std::size_t ww,
                         const std::vector<double>& weights) {
    double mu_a = 0.0, mu_b = 0.0;
    for (std::size_t y = 0; y < wh; ++y)
      for (std::size_t x = 0; x < ww; ++x) {
        const double wt = weights[y * ww + x];
        mu_a += wt * a[(y0 + y) * width + x0 + x];
        mu_b += wt * b[(y0 + y) * width + x0 + x];
      }
    double var_a = 0.0, var_b = 0.0, cov = 0.0;
    for (std::size_t y = 0; y < wh; ++y)
      for (std::size_t x = 0; x < ww; ++x) {
        const double wt = weights[y * ww + x];
        const double da = a[(y0 + y) * width + x0 + x] - mu_a, db = b[(y0 + y) * width + x0 + x] - mu_b;
        var_a += wt * da * da;
        var_b += wt * db * db;
        cov += wt * da * db;
      }
    return ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
  };

  if (height < win || width < win) {
    const std::vector<double> uniform(height * width, 1.0 / static_cast<double>(height * width));
    return window_ssim(0, 0, height, width, uniform);
  }
  std::vector<double> gauss(win * win);
  double total = 0.0;
  for (std::size_t y = 0; y < win; ++y)
    for (std::size_t x = 0; x < win; ++x) {
      const double dy = static_cast<double>(y) - 5.0, dx = static_cast<double>(x) - 5.0;
      gauss[y * win + x] = std::exp(-(dy * dy + dx * dx) / (2.0 * 1.5 * 1.5));
      total += gauss[y * win + x];
    }
  for (auto& g : gauss) g /= total;
  long double acc = 0.0L;
  std::size_t count = 0;
  for (std::size_t y = 0; y + win <= height; ++y)
    for (std::size_t x = 0; x + win <= width; ++x) {
      acc += window_ssim(y, x, win, win, gauss);
      ++count;
    }
  return static_cast<double>(acc / static_cast<long double>(count));
}

double ssim(const SaliencyMap& a, const SaliencyMap& b) {
  if (a.height != b.height || a.width != b.width) throw ArgumentError("ssim: dimension mismatch");
  return ssim_normalized(minmax_normalize(a.values), minmax_normalize(b.values), a.height, a.width);
}

double mean_pairwise_distance(const std::vector<std::vector<SaliencyMap>>& maps) {
  if (maps.size() < 2) throw ArgumentError("MeGe needs at least two models");
  const std::size_t images = maps.front().size();
  for (const auto& m : maps) check_same(m.size(), images, "mege");
  if (images == 0) throw ArgumentError("MeGe needs at least one evaluation image");
  long double total = 0.0L;
  std::size_t count = 0;
  for (std::size_t i = 0; i < maps.size(); ++i)
    for (std::size_t j = i + 1; j < maps.size(); ++j)
      for (std::size_t k = 0; k < images; ++k) {
        total += interpretation_loss(maps[i][k], maps[j][k]);
        ++count;
      }
  return static_cast<double>(total / static_cast<long double>(count));
}

double mege(const std::vector<std::vector<SaliencyMap>>& maps) { return 100.0 / (1.0 + mean_pairwise_distance(maps)); }

std::vector<std::size_t> morf_order(const SaliencyMap& map) {
  std::vector<std::size_t> order(map.values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return map.values[a] > map.values[b]; });
  return order;
}

double Curve::auc() const {
  double area = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i) area += 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]);
  return area;
}

std::size_t masked_count(double fraction, std::size_t d) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw ArgumentError("mask fraction must lie in [0, 1]");
  return std::min<std::size_t>(d, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(d))));
}

Curve deletion_insertion(const Model& model, const Image& img, const SaliencyMap& map, FidelityMode mode,
                         double step_fraction, double baseline_value) {
  if (!(step_fraction > 0.0 && step_fraction <= 1.0)) throw ArgumentError("step_fraction must lie in (0, 1]");
  check_map(map, img);
  const std::size_t c = predict(model, img.to_tensor());
  const auto order = morf_order(map);
  const Image blank(img.height, img.width, img.channels, baseline_value);

  Curve curve;
  for (std::size_t s = 0;; ++s) {
    const double f = std::min(1.0, static_cast<double>(s) * step_fraction);
    curve.x.push_back(f);
    if (f >= 1.0 - 1e-12) {
      curve.x.back() = 1.0;
      break;
    }
  }
  std::vector<Tensor> probes;
  for (double f : curve.x) {
    const std::size_t k = masked_count(f, img.pixel_count());
    Image probe = mode == FidelityMode::Deletion ? img : blank;
    paste_pixels(probe, mode == FidelityMode::Deletion ? blank : img, order, k);
    probes.push_back(probe.to_tensor());
  }
  const Tensor probs = forward_batch(model, batch_of(model, probes));
  for (std::size_t i = 0; i < probes.size(); ++i) curve.y.push_back(probs[i * model.class_count() + c]);
  return curve;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  check_same(x.size(), y.size(), "pearson");
  if (x.size() < 2) throw UndefinedCorrelation("correlation needs at least two points");
  long double mx = 0.0L, my = 0.0L;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<long double>(x.size());
  my /= static_cast<long double>(y.size());
  long double sxx = 0.0L, syy = 0.0L, sxy = 0.0L;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const long double dx = x[i] - mx, dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0L || syy == 0.0L) throw UndefinedCorrelation("zero variance in a correlation coordinate");
  return static_cast<double>(sxy / std::sqrt(sxx * syy));
}

double mu_fidelity(const Model& model, const Image& img, const SaliencyMap& map, std::size_t subset_size,
                   std::size_t n_subsets, double baseline_value, std::uint64_t seed, ScoreKind score) {
  check_map(map, img);
  const std::size_t d = img.pixel_count();
  if (subset_size < 1 || subset_size > d) throw ArgumentError("mu_fidelity subset_size must lie in [1, d]");
  if (n_subsets < 2) throw ArgumentError("mu_fidelity needs at least two subsets");
  const Tensor x = img.to_tensor();
  const std::size_t c = predict(model, x);
  const double clean = class_score(model, x, c, score);

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> pool(d);
  std::vector<double> importance, drop;
  std::vector<Tensor> probes;
  for (std::size_t s = 0; s < n_subsets; ++s) {
    std::iota(pool.begin(), pool.end(), 0);
    for (std::size_t i = 0; i < subset_size; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, d - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    long double sum = 0.0L;
    Tensor probe = x;
    for (std::size_t i = 0; i < subset_size; ++i) {
      sum += map.values[pool[i]];
      for (std::size_t ch = 0; ch < img.channels; ++ch) probe[ch * d + pool[i]] = baseline_value;
    }
    importance.push_back(static_cast<double>(sum / static_cast<long double>(subset_size)));
    probes.push_back(std::move(probe));
  }
  constexpr std::size_t chunk = 128;
  for (std::size_t start = 0; start < probes.size(); start += chunk) {
    const std::size_t count = std::min(chunk, probes.size() - start);
    const Tensor batch = batch_of(model, std::span<const Tensor>(probes.data() + start, count));
    Tensor out;
    if (score == ScoreKind::Logit) {
      Graph g;
      std::vector<Var> params;
      for (const auto& p : model.parameters()) params.push_back(g.constant(p));
      out = g.value(build_logits(g, model, g.constant(batch), params));
    } else {
      out = forward_batch(model, batch);
    }
    for (std::size_t i = 0; i < count; ++i) drop.push_back(clean - out[i * model.class_count() + c]);
  }
  return pearson(importance, drop);
}

Image road_impute(const Image& img, std::span<const char> mask, double noise_sigma, std::uint64_t seed, double tol) {
  const std::size_t h = img.height, w = img.width, n = h * w;
  check_same(mask.size(), n, "road_impute mask");
  std::vector<std::size_t> holes;
  for (std::size_t i = 0; i < n; ++i)
    if (mask[i]) holes.push_back(i);
  Image out = img;
  if (holes.empty()) return out;

  std::vector<double> next(holes.size());
  for (std::size_t c = 0; c < img.channels; ++c) {
    double* plane = out.pixels.data() + c * n;
    long double known = 0.0L;
    std::size_t known_count = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (!mask[i]) {
        known += plane[i];
        ++known_count;
      }
    const double start = known_count ? static_cast<double>(known / static_cast<long double>(known_count)) : 0.0;
    for (auto i : holes) plane[i] = start;
    for (std::size_t iter = 0; iter < 200000; ++iter) {
      double change = 0.0;
      for (std::size_t k = 0; k < holes.size(); ++k) {
        const std::size_t i = holes[k], y = i / w, x = i % w;
        double sum = 0.0;
        int count = 0;
        if (x > 0) sum += plane[i - 1], ++count;
        if (x + 1 < w) sum += plane[i + 1], ++count;
        if (y > 0) sum += plane[i - w], ++count;
        if (y + 1 < h) sum += plane[i + w], ++count;
        next[k] = count ? sum / count : plane[i];
        change = std::max(change, std::abs(next[k] - plane[i]));
      }
      for (std::size_t k = 0; k < holes.size(); ++k) plane[holes[k]] = next[k];
      if (change < tol) break;
    }
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, noise_sigma);
  if (noise_sigma > 0.0)
    for (std::size_t c = 0; c < img.channels; ++c)
      for (auto i : holes) out.pixels[c * n + i] += noise(rng);
  return out;
}

AccuracyCurve road_curve(const Model& model, const Dataset& ds, std::span<const SaliencyMap> maps,
                         std::span<const double> fractions, std::uint64_t seed, double noise_sigma) {
  check_same(maps.size(), ds.size(), "road_curve maps");
  for (std::size_t i = 1; i < fractions.size(); ++i)
    if (!(fractions[i] > fractions[i - 1])) throw ArgumentError("road fractions must be increasing");
  AccuracyCurve curve;
  std::vector<std::vector<std::size_t>> orders;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    check_map(maps[i], ds.images[i]);
    orders.push_back(morf_order(maps[i]));
  }
  for (std::size_t f = 0; f < fractions.size(); ++f) {
    Dataset masked = ds;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const Image& img = ds.images[i];
      const std::size_t k = masked_count(fractions[f], img.pixel_count());
      if (k == 0) continue;
      std::vector<char> mask(img.pixel_count(), 0);
      for (std::size_t r = 0; r < k; ++r) mask[orders[i][r]] = 1;
      masked.images[i] = road_impute(img, mask, noise_sigma, derive_seed(derive_seed(seed, f), i));
    }
    curve.fractions.push_back(fractions[f]);
    curve.accuracy.push_back(accuracy(model, masked));
  }
  return curve;
}

Image roar_mask(const Image& img, const SaliencyMap& map, double fraction) {
  check_map(map, img);
  const std::size_t n = img.pixel_count(), k = masked_count(fraction, n);
  const auto order = morf_order(map);
  Image out = img;
  for (std::size_t c = 0; c < img.channels; ++c) {
    long double sum = 0.0L;
    for (std::size_t i = 0; i < n; ++i) sum += img.pixels[c * n + i];
    const double mean = static_cast<double>(sum / static_cast<long double>(n));
    for (std::size_t r = 0; r < k; ++r) out.pixels[c * n + order[r]] = mean;
  }
  return out;
}

AccuracyCurve roar_curve(const TrainConfig& cfg, const Dataset& train_set, std::span<const SaliencyMap> train_maps,
                         const Dataset& test_set, std::span<const SaliencyMap> test_maps,
                         std::span<const double> fractions, std::optional<std::vector<LayerSpec>> layers) {
  check_same(train_maps.size(), train_set.size(), "roar_curve train maps");
  check_same(test_maps.size(), test_set.size(), "roar_curve test maps");
  for (std::size_t i = 1; i < fractions.size(); ++i)
    if (!(fractions[i] > fractions[i - 1])) throw ArgumentError("roar fractions must be increasing");
  AccuracyCurve curve;
  for (double f : fractions) {
    Dataset tr = train_set, te = test_set;
    for (std::size_t i = 0; i < tr.size(); ++i) tr.images[i] = roar_mask(train_set.images[i], train_maps[i], f);
    for (std::size_t i = 0; i < te.size(); ++i) te.images[i] = roar_mask(test_set.images[i], test_maps[i], f);
    try {
      const Model m = train(tr, cfg, layers);
      curve.fractions.push_back(f);
      curve.accuracy.push_back(accuracy(m, te));
    } catch (const TrainingFailure& e) {
      throw TrainingFailure("ROAR retrain at fraction " + number(f) + " failed", e.epoch());
    }
  }
  return curve;
}

void MetricReport::add_scalar(const std::string& name, double value) {
  if (!std::isfinite(value)) throw ArgumentError("metric '" + name + "' is not finite");
  scalars[name] = value;
}

void MetricReport::add_curve(const std::string& name, Curve curve) {
  check_same(curve.x.size(), curve.y.size(), "curve");
  for (std::size_t i = 1; i < curve.x.size(); ++i)
    if (!(curve.x[i] > curve.x[i - 1])) throw ArgumentError("curve '" + name + "' abscissa is not increasing");
  for (double v : curve.y)
    if (!std::isfinite(v)) throw ArgumentError("curve '" + name + "' has a non-finite value");
  curves[name] = std::move(curve);
}

std::string MetricReport::to_json() const {
  nlohmann::ordered_json j;
  j["metadata"] = metadata;
  j["scalars"] = scalars;
  nlohmann::ordered_json cj = nlohmann::ordered_json::object();
  for (const auto& [name, c] : curves) cj[name] = {{"x", c.x}, {"y", c.y}};
  j["curves"] = cj;
  return j.dump(2) + "\n";
}

std::string MetricReport::to_csv() const {
  const auto find = [&](const char* key) {
    auto it = metadata.find(key);
    return it == metadata.end() ? std::string() : it->second;
  };
  const std::string prefix = find("config_fingerprint") + "," + find("seed") + ",";
  std::string out = "config,seed,metric,x,y\n";
  for (const auto& [name, v] : scalars) out += prefix + name + ",," + number(v) + "\n";
  for (const auto& [name, c] : curves)
    for (std::size_t i = 0; i < c.x.size(); ++i) out += prefix + name + "," + number(c.x[i]) + "," + number(c.y[i]) + "\n";
  return out;
}

}  // namespace gsal
