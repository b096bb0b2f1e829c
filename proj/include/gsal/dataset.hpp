#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gsal/tensor.hpp"

namespace gsal {

// Channel-planar image with intensities in [0,1]; pixels[(c * height + y) * width + x].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c, double fill = 0.0);
  Image(std::size_t h, std::size_t w, std::size_t c, std::vector<double> data);

  std::size_t pixel_count() const noexcept { return height * width; }
  double& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const { return pixels[(c * height + y) * width + x]; }

  Shape shape() const { return {channels, height, width}; }
  Tensor to_tensor() const { return Tensor(shape(), pixels); }
  static Image from_tensor(const Tensor& t);

  std::uint64_t fingerprint() const;
  bool operator==(const Image&) const = default;
};

struct Dataset {
  std::string name;
  std::vector<Image> images;
  std::vector<std::size_t> labels;
  std::size_t class_count = 0;

  std::size_t size() const noexcept { return images.size(); }
  Shape input_shape() const;
  std::uint64_t fingerprint() const;
  // Throws ArgumentError unless images/labels agree and every label is < class_count.
  void validate() const;
  Dataset subset(std::span<const std::size_t> indices, std::string subset_name) const;
};

// Public CIFAR-10 binary layout: 3073-byte records of 1 label + 32x32 R, G, B planes.
Dataset load_cifar10_binary(const std::filesystem::path& path);
Dataset parse_cifar10_binary(std::span<const unsigned char> bytes, std::string name = "cifar10");

// Grayscale two-class set: one filled square (class 0) or disk (class 1) on a noise
// background. Foreground intensities lie in [0.7, 1], background in [0.05, 0.25].
Dataset generate_shapes(std::size_t n, std::size_t size, std::uint64_t seed);

// Stratified shuffle into `parts` pairwise-disjoint subsets of equal size (+-1).
std::vector<std::vector<std::size_t>> disjoint_split_indices(const Dataset& ds, std::size_t parts, std::uint64_t seed);
std::vector<Dataset> disjoint_split(const Dataset& ds, std::size_t parts, std::uint64_t seed);

// Leave-one-fold-out training sets: element i is the union of every fold except fold i.
std::vector<Dataset> leave_one_fold_out(const Dataset& ds, std::size_t folds, std::uint64_t seed);

}  // namespace gsal
