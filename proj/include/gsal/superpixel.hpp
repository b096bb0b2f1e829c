#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "gsal/dataset.hpp"
#include "gsal/partition.hpp"

namespace gsal {

struct LabImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::array<double, 3>> pixels;  // row-major (L, a, b)

  const std::array<double, 3>& at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
};

// sRGB -> linear RGB -> XYZ (D65) -> CIELAB. Single-channel images are replicated to RGB.
LabImage rgb_to_lab(const Image& img);
std::array<double, 3> srgb_to_lab(double r, double g, double b);

// Separable Gaussian with reflected borders, applied per channel; sigma <= 0 returns a copy.
Image gaussian_blur(const Image& img, double sigma);

struct SlicParams {
  std::size_t n_segments = 100;
  double compactness = 10.0;
  std::size_t max_iter = 10;
};
Partition slic(const Image& img, const SlicParams& params = {});

struct QuickshiftParams {
  double kernel_size = 3.0;
  double max_dist = 3.0;
  double ratio = 1.0;
};
// Groups need not be 4-connected.
Partition quickshift(const Image& img, const QuickshiftParams& params = {});

struct FelzenszwalbParams {
  double scale = 1.0;
  double sigma = 0.8;
  std::size_t min_size = 20;
};
// Groups need not be 4-connected.
Partition felzenszwalb(const Image& img, const FelzenszwalbParams& params = {});

}  // namespace gsal
