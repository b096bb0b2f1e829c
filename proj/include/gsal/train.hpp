#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "gsal/dataset.hpp"
#include "gsal/model.hpp"

namespace gsal {

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double learning_rate = 0.05;
  double momentum = 0.9;
  std::uint64_t seed = 0;

  // Throws ArgumentError unless every numeric field is positive.
  void validate() const;
};

// Mini-batch SGD with momentum on the mean cross-entropy, starting from
// Model::initialize(seed). Uses default_cnn unless `layers` is given.
Model train(const Dataset& ds, const TrainConfig& cfg, std::optional<std::vector<LayerSpec>> layers = std::nullopt);

// Fraction of argmax-correct predictions.
double accuracy(const Model& model, const Dataset& ds);
std::vector<std::size_t> predictions(const Model& model, std::span<const Image> images);

void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

}  // namespace gsal
