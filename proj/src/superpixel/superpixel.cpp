#include "gsal/superpixel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "gsal/errors.hpp"

namespace gsal {
namespace {

double srgb_to_linear(double c) { return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4); }

double lab_f(double t) {
  constexpr double delta = 6.0 / 29.0;
  return t > delta * delta * delta ? std::cbrt(t) : t / (3.0 * delta * delta) + 4.0 / 29.0;
}

std::size_t reflect(long i, std::size_t n) {
  const long len = static_cast<long>(n);
  while (i < 0 || i >= len) {
    if (i < 0) i = -i - 1;
    if (i >= len) i = 2 * len - i - 1;
  }
  return static_cast<std::size_t>(i);
}

void check_image(const Image& img) {
  if (img.height == 0 || img.width == 0) throw InputShapeError("image must have positive height and width");
  if (img.pixels.size() != img.channels * img.height * img.width) {
    throw InputShapeError("image pixel buffer does not match its dimensions");
  }
}

std::string tag(const std::string& name, std::initializer_list<std::pair<const char*, double>> params) {
  std::ostringstream out;
  out << name << '(';
  bool first = true;
  for (const auto& [key, value] : params) {
    if (!first) out << ',';
    first = false;
    out << key << '=' << value;
  }
  out << ')';
  return out.str();
}

double lab_dist2(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  const double d0 = a[0] - b[0], d1 = a[1] - b[1], d2 = a[2] - b[2];
  return d0 * d0 + d1 * d1 + d2 * d2;
}

struct DisjointSet {
  std::vector<std::size_t> parent, size;
  explicit DisjointSet(std::size_t n) : parent(n), size(n, 1) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t i) {
    while (parent[i] != i) {
      parent[i] = parent[parent[i]];
      i = parent[i];
    }
    return i;
  }
  // Attaches b's tree under a.
  void attach(std::size_t a, std::size_t b) {
    parent[b] = a;
    size[a] += size[b];
  }
};

// Chooses an nx-by-ny seed grid: closest count to n, then squarest cells, then more columns.
std::pair<std::size_t, std::size_t> seed_grid(std::size_t h, std::size_t w, std::size_t n) {
  std::size_t best_nx = 1, best_ny = 1;
  std::size_t best_err = std::numeric_limits<std::size_t>::max();
  double best_aspect = std::numeric_limits<double>::infinity();
  for (std::size_t nx = 1; nx <= std::min(n, w); ++nx) {
    const auto ny = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(static_cast<double>(n) / static_cast<double>(nx))), 1, h);
    const std::size_t count = nx * ny;
    const std::size_t err = count > n ? count - n : n - count;
    const double aspect =
        std::abs(std::log((static_cast<double>(w) / nx) / (static_cast<double>(h) / ny)));
    const bool better = err < best_err || (err == best_err && aspect < best_aspect - 1e-12) ||
                        (err == best_err && std::abs(aspect - best_aspect) <= 1e-12 && nx > best_nx);
    if (better) {
      best_err = err;
      best_aspect = aspect;
      best_nx = nx;
      best_ny = ny;
    }
  }
  return {best_nx, best_ny};
}

// Keeps the largest 4-connected piece of every label and merges the remaining pieces
// (and unassigned pixels, label -1) into their largest neighbouring piece.
std::vector<int> enforce_connectivity(std::size_t h, std::size_t w, const std::vector<int>& raw) {
  const std::size_t n = h * w;
  std::vector<std::size_t> comp(n, n);
  std::vector<std::size_t> comp_size;
  std::vector<int> comp_label;
  std::vector<std::vector<std::size_t>> members;
  std::vector<std::size_t> stack;
  auto neighbours = [&](std::size_t i, auto&& fn) {
    const std::size_t y = i / w, x = i % w;
    if (x > 0) fn(i - 1);
    if (x + 1 < w) fn(i + 1);
    if (y > 0) fn(i - w);
    if (y + 1 < h) fn(i + w);
  };
  for (std::size_t s = 0; s < n; ++s) {
    if (comp[s] != n) continue;
    const std::size_t id = comp_size.size();
    members.emplace_back();
    comp[s] = id;
    stack.assign(1, s);
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      members[id].push_back(i);
      neighbours(i, [&](std::size_t j) {
        if (comp[j] == n && raw[j] == raw[s]) {
          comp[j] = id;
          stack.push_back(j);
        }
      });
    }
    comp_size.push_back(members[id].size());
    comp_label.push_back(raw[s]);
  }

  const std::size_t ncomp = comp_size.size();
  const int max_label = *std::max_element(raw.begin(), raw.end());
  std::vector<std::size_t> best(static_cast<std::size_t>(std::max(max_label, 0)) + 1, ncomp);
  for (std::size_t c = 0; c < ncomp; ++c) {
    if (comp_label[c] < 0) continue;
    auto& b = best[static_cast<std::size_t>(comp_label[c])];
    if (b == ncomp || comp_size[c] > comp_size[b]) b = c;
  }
  std::vector<char> kept(ncomp, 0);
  for (auto b : best)
    if (b != ncomp) kept[b] = 1;

  DisjointSet ds(ncomp);
  ds.size = comp_size;
  for (;;) {
    std::vector<std::size_t> orphans;
    for (std::size_t c = 0; c < ncomp; ++c)
      if (ds.find(c) == c && !kept[c]) orphans.push_back(c);
    if (orphans.empty()) break;
    std::stable_sort(orphans.begin(), orphans.end(),
                     [&](std::size_t a, std::size_t b) { return ds.size[a] < ds.size[b]; });
    for (auto o : orphans) {
      if (ds.find(o) != o) continue;
      std::size_t target = ncomp;
      for (auto i : members[o]) {
        neighbours(i, [&](std::size_t j) {
          const std::size_t r = ds.find(comp[j]);
          if (r == o) return;
          if (target == ncomp || ds.size[r] > ds.size[target] || (ds.size[r] == ds.size[target] && r < target)) {
            target = r;
          }
        });
      }
      if (target == ncomp) {
        kept[o] = 1;  // whole image is one orphan piece
        continue;
      }
      ds.attach(target, o);
      members[target].insert(members[target].end(), members[o].begin(), members[o].end());
      members[o].clear();
    }
  }

  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<int>(ds.find(comp[i]));
  return out;
}

}  // namespace

std::array<double, 3> srgb_to_lab(double r, double g, double b) {
  const double lr = srgb_to_linear(r), lg = srgb_to_linear(g), lb = srgb_to_linear(b);
  const double x = 0.4124564 * lr + 0.3575761 * lg + 0.1804375 * lb;
  const double y = 0.2126729 * lr + 0.7151522 * lg + 0.0721750 * lb;
  const double z = 0.0193339 * lr + 0.1191920 * lg + 0.9503041 * lb;
  const double fx = lab_f(x / 0.95047), fy = lab_f(y), fz = lab_f(z / 1.08883);
  const double lightness = y > 216.0 / 24389.0 ? 116.0 * fy - 16.0 : 24389.0 / 27.0 * y;
  return {lightness, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

LabImage rgb_to_lab(const Image& img) {
  check_image(img);
  if (img.channels != 1 && img.channels != 3) {
    throw InputShapeError("Lab conversion needs 1 or 3 channels, got " + std::to_string(img.channels));
  }
  LabImage lab{img.height, img.width, std::vector<std::array<double, 3>>(img.pixel_count())};
  const std::size_t gc = img.channels == 3 ? 1 : 0, bc = img.channels == 3 ? 2 : 0;
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      lab.pixels[y * img.width + x] = srgb_to_lab(img.at(0, y, x), img.at(gc, y, x), img.at(bc, y, x));
  return lab;
}

Image gaussian_blur(const Image& img, double sigma) {
  check_image(img);
  if (sigma <= 0.0) return img;
  const long radius = static_cast<long>(std::ceil(4.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  for (long k = -radius; k <= radius; ++k)
    kernel[static_cast<std::size_t>(k + radius)] = std::exp(-0.5 * static_cast<double>(k * k) / (sigma * sigma));
  const double total = std::accumulate(kernel.begin(), kernel.end(), 0.0);
  for (auto& v : kernel) v /= total;

  Image tmp = img, out = img;
  for (std::size_t c = 0; c < img.channels; ++c) {
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x) {
        double acc = 0.0;
        for (long k = -radius; k <= radius; ++k)
          acc += kernel[static_cast<std::size_t>(k + radius)] * img.at(c, y, reflect(static_cast<long>(x) + k, img.width));
        tmp.at(c, y, x) = acc;
      }
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x) {
        double acc = 0.0;
        for (long k = -radius; k <= radius; ++k)
          acc += kernel[static_cast<std::size_t>(k + radius)] * tmp.at(c, reflect(static_cast<long>(y) + k, img.height), x);
        out.at(c, y, x) = acc;
      }
  }
  return out;
}

Partition slic(const Image& img, const SlicParams& params) {
  check_image(img);
  const std::size_t h = img.height, w = img.width, n = h * w;
  if (params.n_segments < 1 || params.n_segments > n) {
    throw ArgumentError("slic n_segments must lie in [1, pixel count]");
  }
  if (!(params.compactness >= 0.0)) throw ArgumentError("slic compactness must be non-negative");
  if (params.max_iter < 1) throw ArgumentError("slic max_iter must be at least 1");

  const LabImage lab = rgb_to_lab(img);
  const double step = std::sqrt(static_cast<double>(n) / static_cast<double>(params.n_segments));
  const double spatial_weight = (params.compactness / step) * (params.compactness / step);

  auto gradient = [&](std::size_t y, std::size_t x) {
    const std::size_t xl = x > 0 ? x - 1 : x, xr = x + 1 < w ? x + 1 : x;
    const std::size_t yu = y > 0 ? y - 1 : y, yd = y + 1 < h ? y + 1 : y;
    return lab_dist2(lab.at(y, xr), lab.at(y, xl)) + lab_dist2(lab.at(yd, x), lab.at(yu, x));
  };

  struct Center {
    std::array<double, 3> color;
    double y, x;
  };
  std::vector<Center> centers;
  const auto [nx, ny] = seed_grid(h, w, params.n_segments);
  for (std::size_t i = 0; i < ny; ++i) {
    for (std::size_t j = 0; j < nx; ++j) {
      // Seeds sit at cell centres in pixel coordinates; a perturbed seed snaps to its pixel.
      const double cy = (static_cast<double>(i) + 0.5) * h / ny - 0.5;
      const double cx = (static_cast<double>(j) + 0.5) * w / nx - 0.5;
      const auto sy = std::min(h - 1, static_cast<std::size_t>(std::lround(std::max(0.0, cy))));
      const auto sx = std::min(w - 1, static_cast<std::size_t>(std::lround(std::max(0.0, cx))));
      std::size_t by = sy, bx = sx;
      double bg = gradient(sy, sx);
      for (std::size_t yy = sy > 0 ? sy - 1 : 0; yy <= std::min(h - 1, sy + 1); ++yy)
        for (std::size_t xx = sx > 0 ? sx - 1 : 0; xx <= std::min(w - 1, sx + 1); ++xx) {
          const double g = gradient(yy, xx);
          if (g < bg) {
            bg = g;
            by = yy;
            bx = xx;
          }
        }
      if (by == sy && bx == sx) {
        centers.push_back({lab.at(sy, sx), cy, cx});
      } else {
        centers.push_back({lab.at(by, bx), static_cast<double>(by), static_cast<double>(bx)});
      }
    }
  }

  std::vector<int> labels(n, -1), previous;
  std::vector<double> dist(n);
  for (std::size_t iter = 0; iter < params.max_iter; ++iter) {
    std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
    std::fill(labels.begin(), labels.end(), -1);
    for (std::size_t k = 0; k < centers.size(); ++k) {
      const Center& c = centers[k];
      const auto y0 = static_cast<std::size_t>(std::max(0.0, std::ceil(c.y - step)));
      const auto y1 = static_cast<std::size_t>(std::min(static_cast<double>(h - 1), std::floor(c.y + step)));
      const auto x0 = static_cast<std::size_t>(std::max(0.0, std::ceil(c.x - step)));
      const auto x1 = static_cast<std::size_t>(std::min(static_cast<double>(w - 1), std::floor(c.x + step)));
      for (std::size_t y = y0; y <= y1; ++y)
        for (std::size_t x = x0; x <= x1; ++x) {
          const double dy = static_cast<double>(y) - c.y, dx = static_cast<double>(x) - c.x;
          const double d = lab_dist2(lab.at(y, x), c.color) + (dy * dy + dx * dx) * spatial_weight;
          const std::size_t i = y * w + x;
          if (d < dist[i]) {
            dist[i] = d;
            labels[i] = static_cast<int>(k);
          }
        }
    }
    std::vector<std::array<double, 6>> acc(centers.size(), std::array<double, 6>{});
    for (std::size_t i = 0; i < n; ++i) {
      if (labels[i] < 0) continue;
      auto& a = acc[static_cast<std::size_t>(labels[i])];
      const auto& px = lab.pixels[i];
      a[0] += px[0];
      a[1] += px[1];
      a[2] += px[2];
      a[3] += static_cast<double>(i / w);
      a[4] += static_cast<double>(i % w);
      a[5] += 1.0;
    }
    for (std::size_t k = 0; k < centers.size(); ++k) {
      const auto& a = acc[k];
      if (a[5] == 0.0) continue;
      centers[k] = {{a[0] / a[5], a[1] / a[5], a[2] / a[5]}, a[3] / a[5], a[4] / a[5]};
    }
    if (labels == previous) break;
    previous = labels;
  }

  const auto connected = enforce_connectivity(h, w, labels);
  Partition part = make_partition(h, w, connected,
                                  tag("slic", {{"n_segments", static_cast<double>(params.n_segments)},
                                               {"compactness", params.compactness},
                                               {"max_iter", static_cast<double>(params.max_iter)}}));
  part.image_fingerprint = img.fingerprint();
  return part;
}

Partition quickshift(const Image& img, const QuickshiftParams& params) {
  check_image(img);
  if (!(params.kernel_size > 0.0)) throw ArgumentError("quickshift kernel_size must be positive");
  if (!(params.max_dist > 0.0)) throw ArgumentError("quickshift max_dist must be positive");
  if (!(params.ratio > 0.0 && params.ratio <= 1.0)) throw ArgumentError("quickshift ratio must lie in (0, 1]");

  const std::size_t h = img.height, w = img.width, n = h * w;
  const LabImage lab = rgb_to_lab(img);
  std::vector<std::array<double, 3>> color(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < 3; ++k) color[i][k] = params.ratio * lab.pixels[i][k];

  auto joint_dist2 = [&](std::size_t i, std::size_t j) {
    const double dy = static_cast<double>(i / w) - static_cast<double>(j / w);
    const double dx = static_cast<double>(i % w) - static_cast<double>(j % w);
    return dy * dy + dx * dx + lab_dist2(color[i], color[j]);
  };
  auto for_window = [&](std::size_t i, long radius, auto&& fn) {
    const long y = static_cast<long>(i / w), x = static_cast<long>(i % w);
    for (long yy = std::max(0L, y - radius); yy <= std::min(static_cast<long>(h) - 1, y + radius); ++yy)
      for (long xx = std::max(0L, x - radius); xx <= std::min(static_cast<long>(w) - 1, x + radius); ++xx)
        fn(static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx));
  };

  const double sigma = params.kernel_size;
  const long density_radius = static_cast<long>(std::ceil(3.0 * sigma));
  std::vector<double> density(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for_window(i, density_radius, [&](std::size_t j) { density[i] += std::exp(-joint_dist2(i, j) / (2.0 * sigma * sigma)); });

  const long link_radius = static_cast<long>(std::ceil(params.max_dist));
  const double max_d2 = params.max_dist * params.max_dist;
  std::vector<std::size_t> parent(n);
  for (std::size_t i = 0; i < n; ++i) {
    parent[i] = i;
    double best = std::numeric_limits<double>::infinity();
    for_window(i, link_radius, [&](std::size_t j) {
      if (j == i) return;
      const bool higher = density[j] > density[i] || (density[j] == density[i] && j < i);
      if (!higher) return;
      const double d2 = joint_dist2(i, j);
      if (d2 <= max_d2 && (d2 < best || (d2 == best && j < parent[i]))) {
        best = d2;
        parent[i] = j;
      }
    });
  }

  std::vector<int> roots(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t r = i;
    while (parent[r] != r) r = parent[r];
    roots[i] = static_cast<int>(r);
  }
  Partition part = make_partition(
      h, w, roots,
      tag("quickshift", {{"kernel_size", params.kernel_size}, {"max_dist", params.max_dist}, {"ratio", params.ratio}}));
  part.image_fingerprint = img.fingerprint();
  return part;
}

Partition felzenszwalb(const Image& img, const FelzenszwalbParams& params) {
  check_image(img);
  if (!(params.scale >= 0.0) || !(params.sigma >= 0.0)) {
    throw ArgumentError("felzenszwalb scale and sigma must be non-negative");
  }
  const std::size_t h = img.height, w = img.width, n = h * w;
  const Image smooth = gaussian_blur(img, params.sigma);

  struct Edge {
    double weight;
    std::size_t a, b;
  };
  std::vector<Edge> edges;
  edges.reserve(4 * n);
  auto add_edge = [&](std::size_t a, std::size_t b) {
    double d2 = 0.0;
    for (std::size_t c = 0; c < smooth.channels; ++c) {
      const double d = smooth.pixels[c * n + a] - smooth.pixels[c * n + b];
      d2 += d * d;
    }
    edges.push_back({std::sqrt(d2), a, b});
  };
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t i = y * w + x;
      if (x + 1 < w) add_edge(i, i + 1);
      if (y + 1 < h) add_edge(i, i + w);
      if (y + 1 < h && x + 1 < w) add_edge(i, i + w + 1);
      if (y + 1 < h && x > 0) add_edge(i, i + w - 1);
    }
  std::stable_sort(edges.begin(), edges.end(), [](const Edge& l, const Edge& r) { return l.weight < r.weight; });

  DisjointSet ds(n);
  std::vector<double> threshold(n, params.scale);
  for (const auto& e : edges) {
    std::size_t a = ds.find(e.a), b = ds.find(e.b);
    if (a == b || e.weight > threshold[a] || e.weight > threshold[b]) continue;
    if (ds.size[a] < ds.size[b]) std::swap(a, b);
    ds.attach(a, b);
    threshold[a] = e.weight + params.scale / static_cast<double>(ds.size[a]);
  }
  for (const auto& e : edges) {
    std::size_t a = ds.find(e.a), b = ds.find(e.b);
    if (a == b || (ds.size[a] >= params.min_size && ds.size[b] >= params.min_size)) continue;
    if (ds.size[a] < ds.size[b]) std::swap(a, b);
    ds.attach(a, b);
  }

  std::vector<int> roots(n);
  for (std::size_t i = 0; i < n; ++i) roots[i] = static_cast<int>(ds.find(i));
  Partition part = make_partition(h, w, roots,
                                  tag("felzenszwalb", {{"scale", params.scale},
                                                       {"sigma", params.sigma},
                                                       {"min_size", static_cast<double>(params.min_size)}}));
  part.image_fingerprint = img.fingerprint();
  return part;
}

}  // namespace gsal
