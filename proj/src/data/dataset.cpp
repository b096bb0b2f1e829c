#include "gsal/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>

#include "gsal/errors.hpp"

namespace gsal {

Image::Image(std::size_t h, std::size_t w, std::size_t c, double fill)
    : height(h), width(w), channels(c), pixels(h * w * c, fill) {
  if (h == 0 || w == 0 || c == 0) throw ArgumentError("image dimensions must be positive");
}

Image::Image(std::size_t h, std::size_t w, std::size_t c, std::vector<double> data)
    : height(h), width(w), channels(c), pixels(std::move(data)) {
  if (h == 0 || w == 0 || c == 0) throw ArgumentError("image dimensions must be positive");
  if (pixels.size() != h * w * c) throw ArgumentError("image data length does not match dimensions");
}

Image Image::from_tensor(const Tensor& t) {
  if (t.rank() != 3) throw InputShapeError("image tensors are [C,H,W], got " + shape_string(t.shape()));
  return Image(t.dim(1), t.dim(2), t.dim(0), std::vector<double>(t.data().begin(), t.data().end()));
}

std::uint64_t Image::fingerprint() const {
  const std::size_t dims[] = {height, width, channels};
  return fnv1a(pixels.data(), pixels.size() * sizeof(double), fnv1a(dims, sizeof dims));
}

Shape Dataset::input_shape() const {
  if (images.empty()) throw ArgumentError("dataset '" + name + "' is empty");
  return images.front().shape();
}

std::uint64_t Dataset::fingerprint() const {
  std::uint64_t h = fnv1a(&class_count, sizeof class_count);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::uint64_t img = images[i].fingerprint();
    h = fnv1a(&img, sizeof img, h);
    h = fnv1a(&labels[i], sizeof labels[i], h);
  }
  return h;
}

void Dataset::validate() const {
  if (images.size() != labels.size()) throw ArgumentError("dataset '" + name + "': images and labels differ in length");
  for (auto l : labels) {
    if (l >= class_count) throw ArgumentError("dataset '" + name + "': label " + std::to_string(l) + " out of range");
  }
  for (const auto& img : images) {
    if (img.shape() != images.front().shape()) throw ArgumentError("dataset '" + name + "': mixed image shapes");
  }
}

Dataset Dataset::subset(std::span<const std::size_t> indices, std::string subset_name) const {
  Dataset out;
  out.name = std::move(subset_name);
  out.class_count = class_count;
  out.images.reserve(indices.size());
  out.labels.reserve(indices.size());
  for (auto i : indices) {
    out.images.push_back(images.at(i));
    out.labels.push_back(labels.at(i));
  }
  return out;
}

Dataset parse_cifar10_binary(std::span<const unsigned char> bytes, std::string name) {
  constexpr std::size_t kRecord = 3073, kSide = 32, kPlane = kSide * kSide;
  if (bytes.size() % kRecord != 0) {
    throw FormatError("CIFAR-10 binary length " + std::to_string(bytes.size()) + " is not a multiple of 3073");
  }
  Dataset ds;
  ds.name = std::move(name);
  ds.class_count = 10;
  const std::size_t n = bytes.size() / kRecord;
  ds.images.reserve(n);
  ds.labels.reserve(n);
  for (std::size_t r = 0; r < n; ++r) {
    const unsigned char* rec = bytes.data() + r * kRecord;
    if (rec[0] > 9) {
      throw CorruptRecordError("CIFAR-10 record " + std::to_string(r) + " has label byte " + std::to_string(rec[0]));
    }
    std::vector<double> px(3 * kPlane);
    for (std::size_t i = 0; i < 3 * kPlane; ++i) px[i] = rec[1 + i] / 255.0;
    ds.images.emplace_back(kSide, kSide, 3, std::move(px));
    ds.labels.push_back(rec[0]);
  }
  return ds;
}

Dataset load_cifar10_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open CIFAR-10 file " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_cifar10_binary(bytes, path.filename().string());
}

Dataset generate_shapes(std::size_t n, std::size_t size, std::uint64_t seed) {
  if (size < 16) throw ArgumentError("shapes need a side length of at least 16");
  if (n < 2) throw ArgumentError("shapes need at least two samples");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = i % 2;
  std::shuffle(labels.begin(), labels.end(), rng);

  Dataset ds;
  ds.name = "shapes-" + std::to_string(n) + "-" + std::to_string(size) + "-" + std::to_string(seed);
  ds.class_count = 2;
  ds.labels = labels;
  ds.images.reserve(n);
  const double side = static_cast<double>(size);
  for (std::size_t i = 0; i < n; ++i) {
    Image img(size, size, 1);
    for (auto& p : img.pixels) p = 0.05 + 0.2 * unit(rng);
    const double r = side * (0.15 + 0.15 * unit(rng));
    const double cx = r + (side - 2 * r) * unit(rng);
    const double cy = r + (side - 2 * r) * unit(rng);
    const double level = 0.75 + 0.2 * unit(rng);
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
        const bool inside = labels[i] == 0 ? (std::abs(dx) <= r && std::abs(dy) <= r) : (dx * dx + dy * dy <= r * r);
        if (inside) img.at(0, y, x) = std::clamp(level + 0.1 * (unit(rng) - 0.5), 0.7, 1.0);
      }
    }
    ds.images.push_back(std::move(img));
  }
  return ds;
}

std::vector<std::vector<std::size_t>> disjoint_split_indices(const Dataset& ds, std::size_t parts, std::uint64_t seed) {
  if (parts < 2) throw ArgumentError("disjoint_split needs at least two parts");
  if (parts > ds.size()) throw ArgumentError("cannot split " + std::to_string(ds.size()) + " samples into " +
                                             std::to_string(parts) + " parts");
  std::mt19937_64 rng(seed);
  std::vector<std::vector<std::size_t>> by_class(std::max<std::size_t>(ds.class_count, 1));
  for (std::size_t i = 0; i < ds.size(); ++i) by_class.at(ds.labels[i]).push_back(i);

  // Deal each shuffled class round-robin, continuing the cursor across classes so
  // part sizes differ by at most one.
  std::vector<std::vector<std::size_t>> out(parts);
  std::size_t cursor = 0;
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    for (auto idx : members) {
      out[cursor].push_back(idx);
      cursor = (cursor + 1) % parts;
    }
  }
  for (auto& part : out) std::shuffle(part.begin(), part.end(), rng);
  return out;
}

std::vector<Dataset> disjoint_split(const Dataset& ds, std::size_t parts, std::uint64_t seed) {
  std::vector<Dataset> out;
  const auto indices = disjoint_split_indices(ds, parts, seed);
  for (std::size_t p = 0; p < parts; ++p) out.push_back(ds.subset(indices[p], ds.name + "/part" + std::to_string(p)));
  return out;
}

std::vector<Dataset> leave_one_fold_out(const Dataset& ds, std::size_t folds, std::uint64_t seed) {
  const auto indices = disjoint_split_indices(ds, folds, seed);
  std::vector<Dataset> out;
  for (std::size_t held = 0; held < folds; ++held) {
    std::vector<std::size_t> keep;
    for (std::size_t f = 0; f < folds; ++f)
      if (f != held) keep.insert(keep.end(), indices[f].begin(), indices[f].end());
    out.push_back(ds.subset(keep, ds.name + "/without-fold" + std::to_string(held)));
  }
  return out;
}

}  // namespace gsal
