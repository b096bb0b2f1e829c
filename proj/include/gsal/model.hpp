#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "gsal/graph.hpp"
#include "gsal/tensor.hpp"

namespace gsal {

enum class LayerKind { Conv2d, Relu, AvgPool2, Dense };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

// conv2d: in/out are channels and kernel is the (odd) side length.
// dense: in/out are feature counts; the activation is flattened first.
struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t kernel = 0;

  bool operator==(const LayerSpec&) const = default;
};

struct TrainingMetadata {
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  std::uint64_t dataset_fingerprint = 0;
  double final_loss = std::numeric_limits<double>::quiet_NaN();
};

// Immutable classifier: a layer stack followed by softmax.
class Model {
 public:
  Model(Shape input_shape, std::size_t class_count, std::vector<LayerSpec> layers, std::vector<Tensor> parameters,
        TrainingMetadata metadata = {});

  // He-normal weights and zero biases drawn from `seed`.
  static Model initialize(Shape input_shape, std::size_t class_count, std::vector<LayerSpec> layers,
                          std::uint64_t seed);

  const Shape& input_shape() const noexcept { return input_shape_; }
  std::size_t class_count() const noexcept { return class_count_; }
  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
  const std::vector<Tensor>& parameters() const noexcept { return parameters_; }
  const TrainingMetadata& metadata() const noexcept { return metadata_; }

  std::uint64_t fingerprint() const;
  Model with_parameters(std::vector<Tensor> parameters, TrainingMetadata metadata) const;

 private:
  Shape input_shape_;
  std::size_t class_count_;
  std::vector<LayerSpec> layers_;
  std::vector<Tensor> parameters_;
  TrainingMetadata metadata_;
};

// Parameter shapes implied by a layer stack; throws InputShapeError when the stack
// does not fit `input_shape`.
std::vector<Shape> parameter_shapes(const Shape& input_shape, std::size_t class_count,
                                    const std::vector<LayerSpec>& layers);

// conv 3x3x8 -> relu -> avgpool -> conv 3x3x16 -> relu -> avgpool -> dense.
std::vector<LayerSpec> default_cnn(const Shape& input_shape, std::size_t class_count);

// Single dense layer; weights[c * d + i] is the weight of input i for class c.
Model make_linear_model(const Shape& input_shape, std::size_t class_count, std::span<const double> weights,
                        std::span<const double> bias = {});

// Which output a saliency gradient differentiates.
enum class ScoreKind { Probability, Logit };

struct Probs {
  std::vector<double> values;
  std::size_t argmax() const;
};

// Records the network on `graph` and returns logits [N, classes].
Var build_logits(Graph& graph, const Model& model, Var batch, std::span<const Var> params);

Tensor batch_of(const Model& model, std::span<const Tensor> inputs);

Probs forward(const Model& model, const Tensor& x);
Tensor logits(const Model& model, const Tensor& x);
// [N, classes] post-softmax probabilities for a batch [N, ...input_shape].
Tensor forward_batch(const Model& model, const Tensor& batch);
std::size_t predict(const Model& model, const Tensor& x);
double class_score(const Model& model, const Tensor& x, std::size_t c, ScoreKind kind = ScoreKind::Probability);

Tensor input_gradient(const Model& model, const Tensor& x, std::size_t c, ScoreKind kind = ScoreKind::Probability);

// Per-sample gradients for a batch [N, ...]: row n holds d score(x_n, classes[n]) / d x_n.
Tensor input_gradient_batch(const Model& model, const Tensor& batch, std::span<const std::size_t> classes,
                            ScoreKind kind = ScoreKind::Probability);

Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h);
Tensor finite_difference_gradient(const Model& model, const Tensor& x, std::size_t c, double h,
                                  ScoreKind kind = ScoreKind::Probability);

struct ParamGrads {
  std::vector<Tensor> grads;
  double loss = 0.0;
};

// Gradients of the mean cross-entropy over the batch.
ParamGrads parameter_gradients(const Model& model, const Tensor& batch, std::span<const std::size_t> labels);
ParamGrads parameter_gradients(const Model& model, std::span<const Tensor> inputs, std::span<const std::size_t> labels);
double mean_cross_entropy(const Model& model, const Tensor& batch, std::span<const std::size_t> labels);

}  // namespace gsal
