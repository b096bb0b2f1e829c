#include "gsal/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "gsal/errors.hpp"

namespace gsal {

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::Relu: return "relu";
    case LayerKind::AvgPool2: return "avgpool2";
    case LayerKind::Dense: return "dense";
  }
  return "unknown";
}

LayerKind layer_kind_from_string(const std::string& name) {
  if (name == "conv2d") return LayerKind::Conv2d;
  if (name == "relu") return LayerKind::Relu;
  if (name == "avgpool2") return LayerKind::AvgPool2;
  if (name == "dense") return LayerKind::Dense;
  throw FormatError("unknown layer kind '" + name + "'");
}

std::vector<Shape> parameter_shapes(const Shape& input_shape, std::size_t class_count,
                                    const std::vector<LayerSpec>& layers) {
  if (input_shape.empty() || shape_size(input_shape) == 0) throw InputShapeError("empty model input shape");
  if (class_count < 2) throw ArgumentError("a classifier needs at least two classes");
  std::vector<Shape> shapes;
  Shape act = input_shape;
  for (const auto& layer : layers) {
    switch (layer.kind) {
      case LayerKind::Conv2d:
        if (act.size() != 3 || act[0] != layer.in) {
          throw InputShapeError("conv2d expects [" + std::to_string(layer.in) + ",H,W], got " + shape_string(act));
        }
        if (layer.kernel == 0 || layer.kernel % 2 == 0 || layer.out == 0) {
          throw InputShapeError("conv2d needs an odd kernel and positive output channels");
        }
        shapes.push_back({layer.out, layer.in, layer.kernel, layer.kernel});
        shapes.push_back({layer.out});
        act = {layer.out, act[1], act[2]};
        break;
      case LayerKind::AvgPool2:
        if (act.size() != 3 || act[1] % 2 || act[2] % 2) {
          throw InputShapeError("avgpool2 needs even spatial dimensions, got " + shape_string(act));
        }
        act = {act[0], act[1] / 2, act[2] / 2};
        break;
      case LayerKind::Dense:
        if (shape_size(act) != layer.in || layer.out == 0) {
          throw InputShapeError("dense expects " + std::to_string(layer.in) + " features, got " +
                                std::to_string(shape_size(act)));
        }
        shapes.push_back({layer.in, layer.out});
        shapes.push_back({layer.out});
        act = {layer.out};
        break;
      case LayerKind::Relu:
        break;
    }
  }
  if (act.size() != 1 || act[0] != class_count) {
    throw InputShapeError("layer stack ends in " + shape_string(act) + ", expected [" + std::to_string(class_count) + "]");
  }
  return shapes;
}

Model::Model(Shape input_shape, std::size_t class_count, std::vector<LayerSpec> layers, std::vector<Tensor> parameters,
             TrainingMetadata metadata)
    : input_shape_(std::move(input_shape)),
      class_count_(class_count),
      layers_(std::move(layers)),
      parameters_(std::move(parameters)),
      metadata_(metadata) {
  const auto shapes = parameter_shapes(input_shape_, class_count_, layers_);
  if (shapes.size() != parameters_.size()) throw InputShapeError("parameter count does not match the layer stack");
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (parameters_[i].shape() != shapes[i]) {
      throw InputShapeError("parameter " + std::to_string(i) + " has shape " + shape_string(parameters_[i].shape()) +
                            ", expected " + shape_string(shapes[i]));
    }
  }
}

Model Model::initialize(Shape input_shape, std::size_t class_count, std::vector<LayerSpec> layers, std::uint64_t seed) {
  const auto shapes = parameter_shapes(input_shape, class_count, layers);
  std::mt19937_64 rng(seed);
  std::vector<Tensor> params;
  for (const auto& shape : shapes) {
    Tensor t(shape, 0.0);
    if (shape.size() > 1) {
      // fan-in: conv [out,in,k,k] -> in*k*k, dense [in,out] -> in
      const std::size_t fan_in = shape.size() == 4 ? shape[1] * shape[2] * shape[3] : shape[0];
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
      for (auto& v : t.data()) v = dist(rng);
    }
    params.push_back(std::move(t));
  }
  TrainingMetadata meta;
  meta.seed = seed;
  return Model(std::move(input_shape), class_count, std::move(layers), std::move(params), meta);
}

std::uint64_t Model::fingerprint() const {
  std::uint64_t h = fnv1a(input_shape_.data(), input_shape_.size() * sizeof(std::size_t));
  h = fnv1a(&class_count_, sizeof class_count_, h);
  for (const auto& l : layers_) {
    const std::size_t fields[] = {static_cast<std::size_t>(l.kind), l.in, l.out, l.kernel};
    h = fnv1a(fields, sizeof fields, h);
  }
  for (const auto& p : parameters_) h = fnv1a(p.data().data(), p.size() * sizeof(double), h);
  return h;
}

Model Model::with_parameters(std::vector<Tensor> parameters, TrainingMetadata metadata) const {
  return Model(input_shape_, class_count_, layers_, std::move(parameters), metadata);
}

std::vector<LayerSpec> default_cnn(const Shape& input_shape, std::size_t class_count) {
  if (input_shape.size() != 3) throw InputShapeError("default_cnn expects [C,H,W]");
  if (input_shape[1] % 4 || input_shape[2] % 4) throw InputShapeError("default_cnn needs H and W divisible by 4");
  const std::size_t features = 16 * (input_shape[1] / 4) * (input_shape[2] / 4);
  return {
      {LayerKind::Conv2d, input_shape[0], 8, 3},
      {LayerKind::Relu},
      {LayerKind::AvgPool2},
      {LayerKind::Conv2d, 8, 16, 3},
      {LayerKind::Relu},
      {LayerKind::AvgPool2},
      {LayerKind::Dense, features, class_count},
  };
}

Model make_linear_model(const Shape& input_shape, std::size_t class_count, std::span<const double> weights,
                        std::span<const double> bias) {
  const std::size_t d = shape_size(input_shape);
  if (weights.size() != d * class_count) throw InputShapeError("linear model needs classes * inputs weights");
  if (!bias.empty() && bias.size() != class_count) throw InputShapeError("linear model bias length mismatch");
  Tensor w({d, class_count});
  for (std::size_t c = 0; c < class_count; ++c)
    for (std::size_t i = 0; i < d; ++i) w[i * class_count + c] = weights[c * d + i];
  Tensor b({class_count}, 0.0);
  for (std::size_t c = 0; c < bias.size(); ++c) b[c] = bias[c];
  return Model(input_shape, class_count, {{LayerKind::Dense, d, class_count}}, {std::move(w), std::move(b)});
}

std::size_t Probs::argmax() const {
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

Var build_logits(Graph& graph, const Model& model, Var batch, std::span<const Var> params) {
  Var act = batch;
  std::size_t p = 0;
  for (const auto& layer : model.layers()) {
    switch (layer.kind) {
      case LayerKind::Conv2d:
        act = graph.conv2d(act, params[p], params[p + 1]);
        p += 2;
        break;
      case LayerKind::Relu:
        act = graph.relu(act);
        break;
      case LayerKind::AvgPool2:
        act = graph.avgpool2(act);
        break;
      case LayerKind::Dense: {
        const std::size_t n = graph.value(act).dim(0);
        if (graph.value(act).rank() != 2) act = graph.reshape(act, {n, layer.in});
        act = graph.add_bias(graph.matmul(act, params[p]), params[p + 1]);
        p += 2;
        break;
      }
    }
  }
  return act;
}

namespace {

void check_input(const Model& model, const Tensor& x) {
  if (x.shape() != model.input_shape()) {
    throw InputShapeError("input shape " + shape_string(x.shape()) + " does not match model input " +
                          shape_string(model.input_shape()));
  }
}

std::size_t check_batch(const Model& model, const Tensor& batch) {
  const Shape& in = model.input_shape();
  if (batch.rank() != in.size() + 1 || !std::equal(in.begin(), in.end(), batch.shape().begin() + 1)) {
    throw InputShapeError("batch shape " + shape_string(batch.shape()) + " does not match model input " +
                          shape_string(in));
  }
  return batch.dim(0);
}

Shape batched(const Shape& in, std::size_t n) {
  Shape s{n};
  s.insert(s.end(), in.begin(), in.end());
  return s;
}

std::vector<Var> constant_params(Graph& g, const Model& model) {
  std::vector<Var> vars;
  vars.reserve(model.parameters().size());
  for (const auto& p : model.parameters()) vars.push_back(g.constant(p));
  return vars;
}

Tensor run_logits(const Model& model, const Tensor& batch) {
  Graph g;
  auto params = constant_params(g, model);
  return g.value(build_logits(g, model, g.constant(batch), params));
}

}  // namespace

Tensor batch_of(const Model& model, std::span<const Tensor> inputs) {
  if (inputs.empty()) throw ArgumentError("empty batch");
  const std::size_t d = shape_size(model.input_shape());
  std::vector<double> data;
  data.reserve(inputs.size() * d);
  for (const auto& x : inputs) {
    check_input(model, x);
    data.insert(data.end(), x.data().begin(), x.data().end());
  }
  return Tensor(batched(model.input_shape(), inputs.size()), std::move(data));
}

Tensor logits(const Model& model, const Tensor& x) {
  check_input(model, x);
  return run_logits(model, x.reshaped(batched(model.input_shape(), 1))).reshaped({model.class_count()});
}

Tensor forward_batch(const Model& model, const Tensor& batch) {
  check_batch(model, batch);
  Graph g;
  auto params = constant_params(g, model);
  return g.value(g.softmax(build_logits(g, model, g.constant(batch), params)));
}

Probs forward(const Model& model, const Tensor& x) {
  check_input(model, x);
  Tensor p = forward_batch(model, x.reshaped(batched(model.input_shape(), 1)));
  return Probs{std::vector<double>(p.data().begin(), p.data().end())};
}

std::size_t predict(const Model& model, const Tensor& x) { return forward(model, x).argmax(); }

double class_score(const Model& model, const Tensor& x, std::size_t c, ScoreKind kind) {
  if (c >= model.class_count()) throw IndexError("class index " + std::to_string(c) + " out of range");
  if (kind == ScoreKind::Logit) return logits(model, x)[c];
  return forward(model, x).values[c];
}

Tensor input_gradient_batch(const Model& model, const Tensor& batch, std::span<const std::size_t> classes,
                            ScoreKind kind) {
  const std::size_t n = check_batch(model, batch);
  if (classes.size() != n) throw InputShapeError("one class index per batch row required");
  for (auto c : classes)
    if (c >= model.class_count()) throw IndexError("class index " + std::to_string(c) + " out of range");
  Graph g;
  auto params = constant_params(g, model);
  Var in = g.input(batch, true);
  Var out = build_logits(g, model, in, params);
  if (kind == ScoreKind::Probability) out = g.softmax(out);
  g.backward(g.sum(g.pick(out, classes)));
  return g.grad(in);
}

Tensor input_gradient(const Model& model, const Tensor& x, std::size_t c, ScoreKind kind) {
  check_input(model, x);
  const std::size_t classes[] = {c};
  return input_gradient_batch(model, x.reshaped(batched(model.input_shape(), 1)), classes, kind)
      .reshaped(model.input_shape());
}

Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  if (!(h > 0.0)) throw ArgumentError("finite-difference step must be positive");
  Tensor grad(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

Tensor finite_difference_gradient(const Model& model, const Tensor& x, std::size_t c, double h, ScoreKind kind) {
  check_input(model, x);
  if (c >= model.class_count()) throw IndexError("class index " + std::to_string(c) + " out of range");
  return finite_difference_gradient([&](const Tensor& probe) { return class_score(model, probe, c, kind); }, x, h);
}

ParamGrads parameter_gradients(const Model& model, const Tensor& batch, std::span<const std::size_t> labels) {
  const std::size_t n = check_batch(model, batch);
  if (n == 0 || labels.empty()) throw ArgumentError("parameter_gradients needs a nonempty batch");
  if (labels.size() != n) throw InputShapeError("one label per sample required");
  for (auto l : labels)
    if (l >= model.class_count()) throw IndexError("label " + std::to_string(l) + " out of range");
  Graph g;
  std::vector<Var> params;
  for (const auto& p : model.parameters()) params.push_back(g.input(p, true));
  Var loss = g.cross_entropy(build_logits(g, model, g.constant(batch), params), labels);
  g.backward(loss);
  ParamGrads out;
  out.loss = g.value(loss)[0];
  for (auto v : params) out.grads.push_back(g.grad(v));
  return out;
}

ParamGrads parameter_gradients(const Model& model, std::span<const Tensor> inputs, std::span<const std::size_t> labels) {
  if (inputs.empty() || labels.empty()) throw ArgumentError("parameter_gradients needs a nonempty batch");
  return parameter_gradients(model, batch_of(model, inputs), labels);
}

double mean_cross_entropy(const Model& model, const Tensor& batch, std::span<const std::size_t> labels) {
  check_batch(model, batch);
  Graph g;
  auto params = constant_params(g, model);
  return g.value(g.cross_entropy(build_logits(g, model, g.constant(batch), params), labels))[0];
}

}  // namespace gsal
