#include <cmath>
#include <map>
#include <random>
#include <set>

#include "doctest.h"
#include "gsal/errors.hpp"
#include "gsal/superpixel.hpp"

using namespace gsal;

namespace {

Image two_tone(std::size_t h, std::size_t w, std::size_t channels, double left, double right) {
  Image img(h, w, channels);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) img.at(c, y, x) = x < w / 2 ? left : right;
  return img;
}

Image noise_image(std::size_t h, std::size_t w, std::size_t channels, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(h, w, channels);
  for (auto& v : img.pixels) v = u(rng);
  return img;
}

bool same_grouping(const Partition& a, const Partition& b) {
  if (a.labels.size() != b.labels.size() || a.group_count != b.group_count) return false;
  std::map<int, int> ab;
  for (std::size_t i = 0; i < a.labels.size(); ++i) {
    auto [it, inserted] = ab.try_emplace(a.labels[i], b.labels[i]);
    if (it->second != b.labels[i]) return false;
  }
  return true;
}

// Textbook Lab of an sRGB gray level.
double gray_lightness(double v) {
  const double lin = v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
  const double t = lin;
  return t > 216.0 / 24389.0 ? 116.0 * std::cbrt(t) - 16.0 : 24389.0 / 27.0 * t;
}

// All-pairs quickshift: density over a (2r+1)^2 window, links to the closest pixel that is
// higher in (density, -index) order within the joint distance.
std::vector<int> brute_quickshift(const Image& img, double kernel, double max_dist, double ratio) {
  const LabImage lab = rgb_to_lab(img);
  const long h = static_cast<long>(img.height), w = static_cast<long>(img.width), n = h * w;
  auto d2 = [&](long i, long j) {
    double s = double((i / w - j / w) * (i / w - j / w) + (i % w - j % w) * (i % w - j % w));
    for (int k = 0; k < 3; ++k) {
      const double d = ratio * (lab.pixels[i][k] - lab.pixels[j][k]);
      s += d * d;
    }
    return s;
  };
  const long r = static_cast<long>(std::ceil(3 * kernel));
  std::vector<double> dens(n, 0.0);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < n; ++j)
      if (std::labs(i / w - j / w) <= r && std::labs(i % w - j % w) <= r)
        dens[i] += std::exp(-d2(i, j) / (2 * kernel * kernel));
  std::vector<long> parent(n);
  for (long i = 0; i < n; ++i) {
    parent[i] = i;
    double best = max_dist * max_dist;
    bool found = false;
    for (long j = 0; j < n; ++j) {
      const bool higher = dens[j] > dens[i] || (dens[j] == dens[i] && j < i);
      if (j == i || !higher) continue;
      const double d = d2(i, j);
      if (d < best || (d == best && !found)) {
        best = d;
        parent[i] = j;
        found = true;
      }
    }
  }
  std::vector<int> roots(n);
  for (long i = 0; i < n; ++i) {
    long k = i;
    while (parent[k] != k) k = parent[k];
    roots[i] = static_cast<int>(k);
  }
  return roots;
}

}  // namespace

TEST_CASE("Lab conversion of reference colors") {
  auto white = srgb_to_lab(1, 1, 1);
  CHECK(std::abs(white[0] - 100.0) < 0.1);
  CHECK(std::abs(white[1]) < 0.5);
  CHECK(std::abs(white[2]) < 0.5);

  auto black = srgb_to_lab(0, 0, 0);
  CHECK(black[0] == 0.0);
  CHECK(black[1] == 0.0);
  CHECK(black[2] == 0.0);

  auto gray = srgb_to_lab(0.5, 0.5, 0.5);
  CHECK(std::abs(gray[0] - gray_lightness(0.5)) < 1e-3);
  CHECK(std::abs(gray[0] - 53.39) < 0.1);
  CHECK(std::abs(gray[1]) < 0.5);
  CHECK(std::abs(gray[2]) < 0.5);

  Image g(2, 3, 1, 0.5);
  Image rgb(2, 3, 3, 0.5);
  auto a = rgb_to_lab(g), b = rgb_to_lab(rgb);
  CHECK(a.pixels == b.pixels);
  CHECK(a.height == 2);
  CHECK(a.width == 3);
  CHECK_THROWS_AS(rgb_to_lab(Image(2, 2, 2)), InputShapeError);
}

TEST_CASE("Gaussian blur") {
  Image flat(5, 7, 1, 0.3);
  Image blurred = gaussian_blur(flat, 1.5);
  for (double v : blurred.pixels) CHECK(v == doctest::Approx(0.3));
  Image noisy = noise_image(6, 6, 2, 3);
  CHECK(gaussian_blur(noisy, 0.0) == noisy);
  double before = 0, after = 0;
  Image sm = gaussian_blur(noisy, 1.0);
  for (std::size_t i = 1; i < noisy.pixels.size(); ++i) {
    before += std::abs(noisy.pixels[i] - noisy.pixels[i - 1]);
    after += std::abs(sm.pixels[i] - sm.pixels[i - 1]);
  }
  CHECK(after < before);
}

TEST_CASE("SLIC on a uniform image converges to the spatial Voronoi tiling") {
  Image img(32, 32, 3, 0.4);
  Partition part = slic(img, {16, 10.0, 10});
  REQUIRE(part.group_count == 16);
  auto report = validate(part);
  CHECK(report.valid());
  CHECK(report.connected);
  for (auto s : part.group_sizes()) {
    CHECK(s >= 0.8 * 64);
    CHECK(s <= 1.2 * 64);
  }

  // Lloyd iterations on pixel coordinates from the same 4x4 seed grid.
  std::vector<std::pair<double, double>> centers;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) centers.emplace_back(i * 8 + 3.5, j * 8 + 3.5);
  std::vector<int> oracle(32 * 32);
  for (int iter = 0; iter < 20; ++iter) {
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        double best = 1e18;
        for (int k = 0; k < 16; ++k) {
          const double d = (y - centers[k].first) * (y - centers[k].first) + (x - centers[k].second) * (x - centers[k].second);
          if (d < best) {
            best = d;
            oracle[y * 32 + x] = k;
          }
        }
      }
    std::vector<double> sy(16), sx(16), cnt(16);
    for (int i = 0; i < 32 * 32; ++i) {
      sy[oracle[i]] += i / 32;
      sx[oracle[i]] += i % 32;
      cnt[oracle[i]] += 1;
    }
    for (int k = 0; k < 16; ++k) centers[k] = {sy[k] / cnt[k], sx[k] / cnt[k]};
  }
  CHECK(same_grouping(part, make_partition(32, 32, oracle, "oracle")));
}

TEST_CASE("SLIC basic contracts") {
  Image img = noise_image(12, 10, 3, 1);
  Partition one = slic(img, {1, 10.0, 10});
  CHECK(one.group_count == 1);
  CHECK(validate(one).valid());
  CHECK(one.image_fingerprint == img.fingerprint());

  CHECK_THROWS_AS(slic(img, {121, 10.0, 10}), ArgumentError);
  CHECK_THROWS_AS(slic(img, {0, 10.0, 10}), ArgumentError);
  CHECK_NOTHROW(slic(img, {120, 10.0, 10}));

  Image tone = two_tone(8, 8, 3, 0.0, 1.0);
  Partition split = slic(tone, {2, 0.1, 10});
  std::set<int> left, right;
  for (std::size_t y = 0; y < 8; ++y) {
    left.insert(split.labels[y * 8]);
    right.insert(split.labels[y * 8 + 7]);
  }
  for (int l : left) CHECK(right.count(l) == 0);

  Partition hundred = slic(noise_image(32, 32, 3, 5), {100, 10.0, 10});
  CHECK(hundred.group_count >= 50);
  CHECK(hundred.group_count <= 200);
  CHECK(validate(hundred).connected);
  CHECK(slic(noise_image(32, 32, 3, 5), {100, 10.0, 10}) == hundred);
}

TEST_CASE("Quickshift") {
  Image flat(8, 8, 3, 0.6);
  Partition one = quickshift(flat, {3.0, std::hypot(8.0, 8.0), 1.0});
  CHECK(one.group_count == 1);
  CHECK(same_grouping(one, make_partition(8, 8, brute_quickshift(flat, 3.0, std::hypot(8.0, 8.0), 1.0), "o")));

  Image tone = two_tone(16, 16, 3, 0.0, 1.0);
  Partition split = quickshift(tone, {3.0, 2.0, 1.0});
  CHECK(validate(split).valid());
  std::vector<std::set<int>> colors(split.group_count);
  for (std::size_t i = 0; i < 256; ++i) colors[split.labels[i]].insert(i % 16 < 8 ? 0 : 1);
  for (const auto& c : colors) CHECK(c.size() == 1);
  CHECK(same_grouping(split, make_partition(16, 16, brute_quickshift(tone, 3.0, 2.0, 1.0), "o")));

  Image noisy = noise_image(8, 9, 3, 4);
  for (double md : {1.5, 3.0, 20.0}) {
    for (double ratio : {0.25, 1.0}) {
      Partition q = quickshift(noisy, {1.0, md, ratio});
      CHECK(same_grouping(q, make_partition(8, 9, brute_quickshift(noisy, 1.0, md, ratio), "o")));
    }
  }

  Partition singles = quickshift(noisy, {3.0, 1e-9, 1.0});
  CHECK(singles.group_count == 72);

  CHECK_THROWS_AS(quickshift(flat, {0.0, 3.0, 1.0}), ArgumentError);
  CHECK_THROWS_AS(quickshift(flat, {3.0, 0.0, 1.0}), ArgumentError);
  CHECK_THROWS_AS(quickshift(flat, {3.0, 3.0, 1.5}), ArgumentError);
  CHECK_THROWS_AS(quickshift(flat, {3.0, 3.0, 0.0}), ArgumentError);
}

TEST_CASE("Felzenszwalb") {
  CHECK(felzenszwalb(Image(8, 8, 3, 0.2), {1.0, 0.8, 1}).group_count == 1);
  CHECK(felzenszwalb(Image(8, 8, 3, 0.2), {0.0, 0.0, 1}).group_count == 1);

  Image tone = two_tone(8, 8, 1, 0.0, 1.0);
  for (auto params : {FelzenszwalbParams{0.1, 0.0, 5}, FelzenszwalbParams{0.1, 0.8, 20}}) {
    Partition two = felzenszwalb(tone, params);
    CHECK(two.group_count == 2);
    for (std::size_t i = 0; i < 64; ++i) CHECK(two.labels[i] == two.labels[(i / 8) * 8 + (i % 8 < 4 ? 0 : 7)]);
  }

  Image noisy = noise_image(12, 12, 3, 9);
  CHECK(felzenszwalb(noisy, {0.5, 0.8, 144}).group_count == 1);
  for (std::size_t min_size : {1, 5, 20}) {
    std::size_t prev = 12 * 12 + 1;
    for (double scale = 0.0; scale <= 20.0; scale += 0.25) {
      Partition p = felzenszwalb(noisy, {scale, 0.5, min_size});
      CHECK(validate(p).valid());
      CHECK(p.group_count <= prev);
      prev = p.group_count;
    }
  }
  CHECK_THROWS_AS(felzenszwalb(noisy, {-1.0, 0.8, 20}), ArgumentError);
}

TEST_CASE("Grid and random partitions") {
  Partition g = grid_partition(4, 4, 2);
  CHECK(g.group_count == 4);
  for (auto s : g.group_sizes()) CHECK(s == 4);
  CHECK(grid_partition(5, 7, 1).group_count == 35);
  CHECK(grid_partition(5, 7, 7).group_count == 1);
  CHECK(grid_partition(5, 7, 100).group_count == 1);
  Partition ragged = grid_partition(5, 7, 3);
  CHECK(ragged.group_count == 6);
  CHECK(validate(ragged).connected);
  CHECK_FALSE(ragged.image_fingerprint.has_value());
  CHECK_THROWS_AS(grid_partition(4, 4, 0), ArgumentError);

  CHECK(random_partition(6, 6, 1, 3).group_count == 1);
  Partition perm = random_partition(6, 6, 36, 3);
  for (auto s : perm.group_sizes()) CHECK(s == 1);
  CHECK(random_partition(16, 16, 40, 11) == random_partition(16, 16, 40, 11));
  CHECK(random_partition(16, 16, 40, 11).labels != random_partition(16, 16, 40, 12).labels);
  auto r = validate(random_partition(16, 16, 40, 11));
  CHECK(r.coverage);
  CHECK(r.dense_labels);
  CHECK_FALSE(r.connected);
  CHECK_THROWS_AS(random_partition(4, 4, 17, 0), ArgumentError);
  CHECK_THROWS_AS(random_partition(4, 4, 0, 0), ArgumentError);
}

TEST_CASE("validate reports defects without throwing") {
  Partition gap;
  gap.height = 2;
  gap.width = 2;
  gap.labels = {0, 0, 2, 2};
  gap.group_count = 3;
  auto r = validate(gap);
  CHECK(r.coverage);
  CHECK_FALSE(r.dense_labels);

  gap.labels = {0, 5, 1, 1};
  CHECK_FALSE(validate(gap).coverage);
  gap.labels = {0, 1};
  CHECK_FALSE(validate(gap).coverage);

  Partition diag = make_partition(2, 2, std::vector<int>{7, 3, 3, 7}, "hand");
  CHECK(diag.labels == std::vector<int>{0, 1, 1, 0});
  CHECK(validate(diag).valid());
  CHECK_FALSE(validate(diag).connected);
}

TEST_CASE("P-PART round trip") {
  Partition p = slic(noise_image(9, 11, 3, 2), {12, 10.0, 10});
  Partition back = parse_ppart(to_ppart(p));
  CHECK(back.labels == p.labels);
  CHECK(back.group_count == p.group_count);
  CHECK(back.height == 9);
  CHECK(back.width == 11);
  CHECK(to_ppart(grid_partition(2, 3, 2)) == "P-PART 2 3 2\n0 0 1\n0 0 1\n");

  auto path = std::filesystem::temp_directory_path() / "gsal_test_part.ppart";
  save_ppart(p, path);
  CHECK(load_ppart(path).labels == p.labels);
  std::filesystem::remove(path);

  CHECK_THROWS_AS(parse_ppart("P-PART 2 2 2\n0 1 1"), FormatError);
  CHECK_THROWS_AS(parse_ppart("P-PART 2 2 3\n0 1 1 1"), FormatError);
  CHECK_THROWS_AS(parse_ppart("PART 2 2 2\n0 1 1 1"), FormatError);
  CHECK_THROWS_AS(parse_ppart("P-PART 2 2 2\n0 1 1 1 1"), FormatError);
  CHECK_THROWS_AS(load_ppart("/nonexistent/part.ppart"), FormatError);
}

TEST_CASE("fuzzed partitions keep coverage and dense labels") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> dim(1, 14);
  for (int trial = 0; trial < 150; ++trial) {
    const std::size_t h = dim(rng), w = dim(rng);
    Image img = noise_image(h, w, trial % 2 ? 3 : 1, trial);
    const std::size_t n = h * w;
    std::vector<Partition> parts = {
        slic(img, {1 + rng() % n, 0.5 + (rng() % 40), 1 + rng() % 10}),
        quickshift(img, {0.5 + (rng() % 5), 0.5 + (rng() % 8), 0.1 + 0.9 * (rng() % 10) / 9.0}),
        felzenszwalb(img, {(rng() % 50) / 4.0, (rng() % 8) / 4.0, rng() % 30}),
        grid_partition(h, w, 1 + rng() % 8),
        random_partition(h, w, 1 + rng() % n, rng()),
    };
    for (std::size_t k = 0; k < parts.size(); ++k) {
      auto r = validate(parts[k]);
      CHECK(r.coverage);
      CHECK(r.dense_labels);
      if (k == 0 || k == 3) CHECK(r.connected);
    }
  }
}
