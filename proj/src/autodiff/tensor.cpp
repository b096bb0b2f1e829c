#include "gsal/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>

#include "gsal/errors.hpp"

namespace gsal {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
  for (auto d : shape_) {
    if (d == 0) throw InputShapeError("tensor dimensions must be positive: " + shape_string(shape_));
  }
}

Tensor::Tensor(Shape shape, std::span<const double> data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  for (auto d : shape_) {
    if (d == 0) throw InputShapeError("tensor dimensions must be positive: " + shape_string(shape_));
  }
  if (data_.size() != shape_size(shape_)) {
    throw InputShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                          shape_string(shape_));
  }
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw InputShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  Tensor out = *this;
  out.shape_ = std::move(shape);
  return out;
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

Tensor& Tensor::operator+=(const Tensor& other) {
  if (other.shape_ != shape_) {
    throw InputShapeError("shape mismatch " + shape_string(shape_) + " vs " + shape_string(other.shape_));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double factor) {
  for (auto& v : data_) v *= factor;
  return *this;
}

Tensor operator+(Tensor a, const Tensor& b) { return a += b; }

Tensor operator-(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw InputShapeError("shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

Tensor operator*(Tensor a, double factor) { return a *= factor; }

bool all_finite(const Tensor& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](double v) { return std::isfinite(v); });
}

double l2_norm(std::span<const double> values) {
  long double acc = 0.0L;
  for (double v : values) acc += static_cast<long double>(v) * v;
  return static_cast<double>(std::sqrt(acc));
}

double max_abs_difference(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw InputShapeError("shape mismatch in max_abs_difference");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t fingerprint(const Tensor& t) {
  std::uint64_t h = fnv1a(t.shape().data(), t.shape().size() * sizeof(std::size_t));
  return fnv1a(t.data().data(), t.size() * sizeof(double), h);
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace gsal
