#include "gsal/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "gsal/errors.hpp"

namespace gsal {
namespace {

constexpr std::size_t kChunk = 32;

Tensor image_tensor(const Model& model, const Image& img) {
  if (img.shape() != model.input_shape()) {
    throw InputShapeError("image shape " + shape_string(img.shape()) + " does not match model input " +
                          shape_string(model.input_shape()));
  }
  return img.to_tensor();
}

// Mean of the per-sample input gradients of `inputs`, accumulated in long double so
// that identical samples average back to exactly the same value.
Tensor mean_gradient(const Model& model, const std::vector<Tensor>& inputs, std::size_t c, ScoreKind score) {
  const Shape shape = model.input_shape();
  const std::size_t d = shape_size(shape);
  std::vector<long double> acc(d, 0.0L);
  for (std::size_t start = 0; start < inputs.size(); start += kChunk) {
    const std::size_t count = std::min(kChunk, inputs.size() - start);
    const std::span<const Tensor> chunk(inputs.data() + start, count);
    const std::vector<std::size_t> classes(count, c);
    const Tensor grads = input_gradient_batch(model, batch_of(model, chunk), classes, score);
    for (std::size_t s = 0; s < count; ++s)
      for (std::size_t i = 0; i < d; ++i) acc[i] += grads[s * d + i];
  }
  Tensor out(shape);
  const auto n = static_cast<long double>(inputs.size());
  for (std::size_t i = 0; i < d; ++i) out[i] = static_cast<double>(acc[i] / n);
  return out;
}

std::string format_number(double v) {
  std::ostringstream out;
  out << v;
  return out.str();
}

void check_class(const Model& model, std::size_t c) {
  if (c >= model.class_count()) throw IndexError("class index " + std::to_string(c) + " out of range");
}

}  // namespace

std::string to_string(Method method) {
  switch (method) {
    case Method::Gradient: return "gradient";
    case Method::SmoothGrad: return "smoothgrad";
    case Method::IntegratedGradients: return "ig";
    case Method::SparsifiedSmoothGrad: return "sparsified";
  }
  return "unknown";
}

Method method_from_string(const std::string& name) {
  if (name == "gradient" || name == "sg") return Method::Gradient;
  if (name == "smoothgrad") return Method::SmoothGrad;
  if (name == "ig" || name == "integrated_gradients") return Method::IntegratedGradients;
  if (name == "sparsified" || name == "sparsified_smoothgrad") return Method::SparsifiedSmoothGrad;
  throw ArgumentError("unknown saliency method '" + name + "'");
}

std::string MethodParams::describe() const {
  std::string out = to_string(method) + "(";
  switch (method) {
    case Method::Gradient: break;
    case Method::SmoothGrad:
      out += "n=" + std::to_string(samples) + ",sigma=" + format_number(sigma) + ",seed=" + std::to_string(seed);
      break;
    case Method::IntegratedGradients:
      out += "steps=" + std::to_string(steps) + ",baseline=" + (baseline ? hex64(baseline->fingerprint()) : "zeros");
      break;
    case Method::SparsifiedSmoothGrad:
      out += "n=" + std::to_string(samples) + ",sigma=" + format_number(sigma) +
             ",keep=" + format_number(keep_fraction) + ",seed=" + std::to_string(seed);
      break;
  }
  if (!out.ends_with('(')) out += ",";
  out += std::string("score=") + (score == ScoreKind::Logit ? "logit" : "probability");
  if (target_class) out += ",class=" + std::to_string(*target_class);
  return out + ")";
}

SaliencyMap channel_aggregate(const Tensor& grad, std::string provenance) {
  if (grad.rank() != 3) throw InputShapeError("channel_aggregate expects [C, H, W], got " + shape_string(grad.shape()));
  const std::size_t c = grad.dim(0), h = grad.dim(1), w = grad.dim(2), n = h * w;
  SaliencyMap map{h, w, std::vector<double>(n, 0.0), std::move(provenance)};
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < c; ++k) acc += std::abs(grad[k * n + i]);
    map.values[i] = acc / static_cast<double>(c);
  }
  return map;
}

std::size_t explained_class(const Model& model, const Image& img, const MethodParams& params) {
  if (params.target_class) {
    check_class(model, *params.target_class);
    return *params.target_class;
  }
  return predict(model, image_tensor(model, img));
}

Tensor raw_gradient(const Model& model, const Image& img, std::size_t c, ScoreKind score) {
  check_class(model, c);
  return input_gradient(model, image_tensor(model, img), c, score);
}

Tensor raw_smoothgrad(const Model& model, const Image& img, std::size_t c, std::size_t n, double sigma,
                      std::uint64_t seed, ScoreKind score) {
  if (n < 1) throw ArgumentError("smoothgrad needs at least one sample");
  if (!(sigma >= 0.0)) throw ArgumentError("smoothgrad sigma must be non-negative");
  const Tensor x = image_tensor(model, img);
  if (sigma == 0.0) return raw_gradient(model, img, c, score);
  check_class(model, c);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  std::vector<Tensor> samples(n, x);
  for (auto& s : samples)
    for (auto& v : s.data()) v += noise(rng);
  return mean_gradient(model, samples, c, score);
}

Tensor raw_integrated_gradients(const Model& model, const Image& img, const Image& baseline, std::size_t c,
                                std::size_t steps, ScoreKind score) {
  if (steps < 1) throw ArgumentError("integrated gradients needs at least one step");
  check_class(model, c);
  const Tensor x = image_tensor(model, img);
  if (baseline.shape() != img.shape()) throw InputShapeError("baseline shape does not match the image");
  const Tensor x0 = baseline.to_tensor();
  const Tensor delta = x - x0;
  std::vector<Tensor> path;
  path.reserve(steps);
  for (std::size_t k = 0; k < steps; ++k) {
    const double alpha = (static_cast<double>(k) + 0.5) / static_cast<double>(steps);
    Tensor p = x0;
    for (std::size_t i = 0; i < p.size(); ++i) p[i] += alpha * delta[i];
    path.push_back(std::move(p));
  }
  Tensor avg = mean_gradient(model, path, c, score);
  for (std::size_t i = 0; i < avg.size(); ++i) avg[i] *= delta[i];
  return avg;
}

Tensor sparsify(const Tensor& raw, double keep_fraction) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) throw ArgumentError("keep_fraction must lie in (0, 1]");
  const std::size_t d = raw.size();
  const auto keep = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::ceil(keep_fraction * static_cast<double>(d) * (1.0 - 1e-12))), 1, d);
  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return std::abs(raw[a]) > std::abs(raw[b]); });
  Tensor out(raw.shape(), 0.0);
  for (std::size_t k = 0; k < keep; ++k) out[order[k]] = raw[order[k]];
  return out;
}

Tensor raw_attribution(const Model& model, const Image& img, const MethodParams& params) {
  const std::size_t c = explained_class(model, img, params);
  switch (params.method) {
    case Method::Gradient: return raw_gradient(model, img, c, params.score);
    case Method::SmoothGrad:
      return raw_smoothgrad(model, img, c, params.samples, params.sigma, params.seed, params.score);
    case Method::IntegratedGradients: {
      const Image zeros(img.height, img.width, img.channels, 0.0);
      return raw_integrated_gradients(model, img, params.baseline ? *params.baseline : zeros, c, params.steps,
                                      params.score);
    }
    case Method::SparsifiedSmoothGrad:
      return sparsify(raw_smoothgrad(model, img, c, params.samples, params.sigma, params.seed, params.score),
                      params.keep_fraction);
  }
  throw ArgumentError("unknown saliency method");
}

SaliencyMap explain(const Model& model, const Image& img, const MethodParams& params) {
  return channel_aggregate(raw_attribution(model, img, params), params.describe() + "/pixel");
}

SaliencyMap simple_gradient(const Model& model, const Image& img) { return explain(model, img, {}); }

SaliencyMap smoothgrad(const Model& model, const Image& img, std::size_t n, double sigma, std::uint64_t seed) {
  MethodParams p;
  p.method = Method::SmoothGrad;
  p.samples = n;
  p.sigma = sigma;
  p.seed = seed;
  return explain(model, img, p);
}

SaliencyMap integrated_gradients(const Model& model, const Image& img, const Image& baseline, std::size_t steps) {
  MethodParams p;
  p.method = Method::IntegratedGradients;
  p.steps = steps;
  p.baseline = baseline;
  return explain(model, img, p);
}

SaliencyMap sparsified_smoothgrad(const Model& model, const Image& img, std::size_t n, double sigma,
                                  double keep_fraction, std::uint64_t seed) {
  MethodParams p;
  p.method = Method::SparsifiedSmoothGrad;
  p.samples = n;
  p.sigma = sigma;
  p.keep_fraction = keep_fraction;
  p.seed = seed;
  return explain(model, img, p);
}

GroupingOperator::GroupingOperator(Partition part) : part_(std::move(part)) {
  const auto report = validate(part_);
  if (!report.valid()) throw ArgumentError("grouping needs a partition with full coverage and dense labels");
  sizes_ = part_.group_sizes();
  weights_.resize(sizes_.size());
  for (std::size_t k = 0; k < sizes_.size(); ++k) weights_[k] = 1.0 / static_cast<double>(sizes_[k]);
}

std::vector<double> GroupingOperator::apply(std::span<const double> values) const {
  const std::size_t n = part_.pixel_count(), p = part_.group_count;
  if (values.size() % n != 0 || values.empty()) {
    throw ArgumentError("grouping expects whole planes of " + std::to_string(n) + " pixels");
  }
  std::vector<double> out(values.size());
  std::vector<double> sum(p), lo(p), hi(p);
  for (std::size_t plane = 0; plane < values.size() / n; ++plane) {
    const auto in = values.subspan(plane * n, n);
    std::fill(sum.begin(), sum.end(), 0.0);
    std::fill(lo.begin(), lo.end(), std::numeric_limits<double>::infinity());
    std::fill(hi.begin(), hi.end(), -std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(part_.labels[i]);
      sum[k] += in[i];
      lo[k] = std::min(lo[k], in[i]);
      hi[k] = std::max(hi[k], in[i]);
    }
    // A group that is already constant keeps its value bit-for-bit.
    for (std::size_t k = 0; k < p; ++k)
      if (lo[k] != hi[k]) lo[k] = sum[k] / static_cast<double>(sizes_[k]);
    for (std::size_t i = 0; i < n; ++i) out[plane * n + i] = lo[static_cast<std::size_t>(part_.labels[i])];
  }
  return out;
}

Tensor GroupingOperator::apply(const Tensor& t) const {
  const auto v = apply(t.data());
  return Tensor(t.shape(), v);
}

std::vector<double> GroupingOperator::dense() const {
  const std::size_t n = part_.pixel_count();
  std::vector<double> m(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (part_.labels[i] == part_.labels[j]) m[i * n + j] = weights_[static_cast<std::size_t>(part_.labels[i])];
  return m;
}

SaliencyMap group_average(const SaliencyMap& map, const Partition& part) {
  if (map.height != part.height || map.width != part.width || map.values.size() != part.pixel_count()) {
    throw ArgumentError("saliency map and partition dimensions differ");
  }
  SaliencyMap out = map;
  out.values = GroupingOperator(part).apply(map.values);
  return out;
}

Tensor grouped_raw(const Model& model, const Image& img, const Partition& part, const MethodParams& params) {
  if (part.height != img.height || part.width != img.width) {
    throw ArgumentError("partition dimensions differ from the image");
  }
  if (part.image_fingerprint && *part.image_fingerprint != img.fingerprint()) {
    throw StalePartitionError("partition was computed from a different image (" + hex64(*part.image_fingerprint) +
                              " vs " + hex64(img.fingerprint()) + ")");
  }
  return GroupingOperator(part).apply(raw_attribution(model, img, params));
}

SaliencyMap grouped(const Model& model, const Image& img, const Partition& part, const MethodParams& params) {
  return channel_aggregate(grouped_raw(model, img, part, params), params.describe() + "/" + part.method);
}

Tensor grouped_gradient_via_graph(const Model& model, const Image& img, const Partition& part, std::size_t c,
                                  ScoreKind score) {
  check_class(model, c);
  const Tensor x = image_tensor(model, img);
  if (part.height != img.height || part.width != img.width) {
    throw ArgumentError("partition dimensions differ from the image");
  }
  Graph g;
  std::vector<Var> params;
  for (const auto& p : model.parameters()) params.push_back(g.constant(p));
  const Var gvar = g.input(Tensor({img.channels, part.group_count}, 0.0));
  const Var shifted = g.add(g.constant(x.reshaped({1, img.channels, img.height, img.width})),
                            g.group_broadcast(gvar, part.labels, img.height, img.width));
  Var out = build_logits(g, model, shifted, params);
  if (score == ScoreKind::Probability) out = g.softmax(out);
  const std::size_t classes[] = {c};
  g.backward(g.sum(g.pick(out, classes)));
  const Tensor dg = g.grad(gvar);
  Tensor result(img.shape());
  const std::size_t n = img.pixel_count();
  for (std::size_t k = 0; k < img.channels; ++k)
    for (std::size_t i = 0; i < n; ++i)
      result[k * n + i] = dg[k * part.group_count + static_cast<std::size_t>(part.labels[i])];
  return result;
}

std::string to_pgm16(const SaliencyMap& map) {
  std::string out = "P5\n" + std::to_string(map.width) + " " + std::to_string(map.height) + "\n65535\n";
  const auto [lo, hi] = std::minmax_element(map.values.begin(), map.values.end());
  const double range = map.values.empty() ? 0.0 : *hi - *lo;
  for (double v : map.values) {
    const auto q = range > 0.0 ? static_cast<unsigned>(std::lround((v - *lo) / range * 65535.0)) : 0u;
    out.push_back(static_cast<char>((q >> 8) & 0xff));
    out.push_back(static_cast<char>(q & 0xff));
  }
  return out;
}

void write_pgm16(const SaliencyMap& map, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  const std::string bytes = to_pgm16(map);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace gsal
