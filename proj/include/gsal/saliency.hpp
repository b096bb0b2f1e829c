#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gsal/dataset.hpp"
#include "gsal/model.hpp"
#include "gsal/partition.hpp"
#include "gsal/tensor.hpp"

namespace gsal {

struct SaliencyMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;  // row-major
  std::string provenance;

  std::size_t pixel_count() const noexcept { return height * width; }
  double at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
};

enum class Method { Gradient, SmoothGrad, IntegratedGradients, SparsifiedSmoothGrad };
std::string to_string(Method method);
Method method_from_string(const std::string& name);

struct MethodParams {
  Method method = Method::Gradient;
  std::size_t samples = 32;  // smoothgrad n
  double sigma = 0.1;        // smoothgrad noise std, in intensity units
  std::size_t steps = 64;    // integrated gradients
  double keep_fraction = 0.05;
  std::uint64_t seed = 0;
  std::optional<Image> baseline;  // integrated gradients; all zeros when empty
  ScoreKind score = ScoreKind::Probability;
  // Differentiated class; the model's prediction on the clean image when empty.
  std::optional<std::size_t> target_class;

  std::string describe() const;
};

// Mean of absolute values over the channels of a [C, H, W] gradient.
SaliencyMap channel_aggregate(const Tensor& grad, std::string provenance = {});

std::size_t explained_class(const Model& model, const Image& img, const MethodParams& params);

// Signed [C, H, W] attributions before channel aggregation.
Tensor raw_gradient(const Model& model, const Image& img, std::size_t c, ScoreKind score = ScoreKind::Probability);
Tensor raw_smoothgrad(const Model& model, const Image& img, std::size_t c, std::size_t n, double sigma,
                      std::uint64_t seed, ScoreKind score = ScoreKind::Probability);
Tensor raw_integrated_gradients(const Model& model, const Image& img, const Image& baseline, std::size_t c,
                                std::size_t steps, ScoreKind score = ScoreKind::Probability);
// Keeps the ceil(keep_fraction * size) entries of largest magnitude (earlier index wins ties).
Tensor sparsify(const Tensor& raw, double keep_fraction);
Tensor raw_attribution(const Model& model, const Image& img, const MethodParams& params);

SaliencyMap explain(const Model& model, const Image& img, const MethodParams& params);
SaliencyMap simple_gradient(const Model& model, const Image& img);
SaliencyMap smoothgrad(const Model& model, const Image& img, std::size_t n, double sigma, std::uint64_t seed);
SaliencyMap integrated_gradients(const Model& model, const Image& img, const Image& baseline, std::size_t steps);
SaliencyMap sparsified_smoothgrad(const Model& model, const Image& img, std::size_t n, double sigma,
                                  double keep_fraction, std::uint64_t seed);

// The group-average projection kappa = A W A^T of a partition, applied per channel plane.
class GroupingOperator {
 public:
  explicit GroupingOperator(Partition part);

  const Partition& partition() const noexcept { return part_; }
  const std::vector<std::size_t>& sizes() const noexcept { return sizes_; }
  const std::vector<double>& weights() const noexcept { return weights_; }

  // values holds one or more planes of height*width entries.
  std::vector<double> apply(std::span<const double> values) const;
  Tensor apply(const Tensor& t) const;
  // Dense d x d matrix, row-major; for small test instances.
  std::vector<double> dense() const;

 private:
  Partition part_;
  std::vector<std::size_t> sizes_;
  std::vector<double> weights_;
};

SaliencyMap group_average(const SaliencyMap& map, const Partition& part);

// Super-pixel variant of a method: group-averaged raw attributions, then aggregated.
// A partition that carries an image fingerprint must match img (StalePartitionError).
Tensor grouped_raw(const Model& model, const Image& img, const Partition& part, const MethodParams& params);
SaliencyMap grouped(const Model& model, const Image& img, const Partition& part, const MethodParams& params);

// g-SG through the autodiff tape: A^T grad_g score(x + A W g) at g = 0, as [C, H, W].
Tensor grouped_gradient_via_graph(const Model& model, const Image& img, const Partition& part, std::size_t c,
                                  ScoreKind score = ScoreKind::Probability);

// Binary 16-bit PGM after min-max normalisation (constant maps become 0).
std::string to_pgm16(const SaliencyMap& map);
void write_pgm16(const SaliencyMap& map, const std::filesystem::path& path);

}  // namespace gsal
