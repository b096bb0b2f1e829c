#include "gsal/partition.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>
#include <unordered_map>

#include "gsal/errors.hpp"

namespace gsal {

std::vector<std::size_t> Partition::group_sizes() const {
  std::vector<std::size_t> sizes(group_count, 0);
  for (int l : labels)
    if (l >= 0 && static_cast<std::size_t>(l) < group_count) ++sizes[static_cast<std::size_t>(l)];
  return sizes;
}

ValidationReport validate(const Partition& part) {
  ValidationReport r;
  r.group_count = part.group_count;
  const std::size_t n = part.pixel_count();
  r.coverage = n > 0 && part.labels.size() == n &&
               std::all_of(part.labels.begin(), part.labels.end(), [&](int l) {
                 return l >= 0 && static_cast<std::size_t>(l) < part.group_count;
               });
  if (!r.coverage) return r;

  const auto sizes = part.group_sizes();
  r.dense_labels = part.group_count > 0 && std::all_of(sizes.begin(), sizes.end(), [](std::size_t s) { return s > 0; });

  // Flood each group from its first pixel; connected iff every pixel is reached.
  std::vector<char> seen(n, 0);
  std::vector<char> started(part.group_count, 0);
  std::vector<std::size_t> stack;
  r.connected = true;
  for (std::size_t start = 0; start < n && r.connected; ++start) {
    const auto label = static_cast<std::size_t>(part.labels[start]);
    if (seen[start]) continue;
    if (started[label]) {
      r.connected = false;
      break;
    }
    started[label] = 1;
    seen[start] = 1;
    stack.assign(1, start);
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      const std::size_t y = i / part.width, x = i % part.width;
      const std::size_t nbrs[4] = {x > 0 ? i - 1 : n, x + 1 < part.width ? i + 1 : n, y > 0 ? i - part.width : n,
                                   y + 1 < part.height ? i + part.width : n};
      for (auto j : nbrs) {
        if (j < n && !seen[j] && part.labels[j] == part.labels[i]) {
          seen[j] = 1;
          stack.push_back(j);
        }
      }
    }
  }
  return r;
}

Partition make_partition(std::size_t height, std::size_t width, std::span<const int> raw_labels, std::string method) {
  if (raw_labels.size() != height * width) throw ArgumentError("label map does not match partition size");
  Partition part;
  part.height = height;
  part.width = width;
  part.method = std::move(method);
  part.labels.resize(raw_labels.size());
  std::unordered_map<int, int> remap;
  for (std::size_t i = 0; i < raw_labels.size(); ++i) {
    auto [it, inserted] = remap.try_emplace(raw_labels[i], static_cast<int>(remap.size()));
    part.labels[i] = it->second;
  }
  part.group_count = remap.size();
  return part;
}

Partition grid_partition(std::size_t height, std::size_t width, std::size_t cell) {
  if (cell == 0) throw ArgumentError("grid cell must be at least 1");
  if (height == 0 || width == 0) throw ArgumentError("grid partition needs positive dimensions");
  const std::size_t cols = (width + cell - 1) / cell, rows = (height + cell - 1) / cell;
  Partition part;
  part.height = height;
  part.width = width;
  part.group_count = rows * cols;
  part.method = "grid(cell=" + std::to_string(cell) + ")";
  part.labels.resize(height * width);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) part.labels[y * width + x] = static_cast<int>((y / cell) * cols + x / cell);
  return part;
}

Partition random_partition(std::size_t height, std::size_t width, std::size_t p, std::uint64_t seed) {
  const std::size_t n = height * width;
  if (n == 0) throw ArgumentError("random partition needs positive dimensions");
  if (p < 1 || p > n) throw ArgumentError("random partition needs 1 <= p <= pixel count");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(p) - 1);
  Partition part;
  part.height = height;
  part.width = width;
  part.group_count = p;
  part.method = "random(p=" + std::to_string(p) + ",seed=" + std::to_string(seed) + ")";
  part.labels.resize(n);
  std::vector<std::size_t> sizes(p, 0);
  for (auto& l : part.labels) {
    l = pick(rng);
    ++sizes[static_cast<std::size_t>(l)];
  }
  for (std::size_t empty = 0; empty < p; ++empty) {
    if (sizes[empty] > 0) continue;
    const auto largest = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
    auto it = std::find(part.labels.begin(), part.labels.end(), largest);
    *it = static_cast<int>(empty);
    --sizes[static_cast<std::size_t>(largest)];
    ++sizes[empty];
  }
  return part;
}

std::string to_ppart(const Partition& part) {
  std::ostringstream out;
  out << "P-PART " << part.height << ' ' << part.width << ' ' << part.group_count << '\n';
  for (std::size_t y = 0; y < part.height; ++y) {
    for (std::size_t x = 0; x < part.width; ++x) {
      if (x) out << ' ';
      out << part.labels[y * part.width + x];
    }
    out << '\n';
  }
  return out.str();
}

Partition parse_ppart(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string magic;
  Partition part;
  if (!(in >> magic >> part.height >> part.width >> part.group_count) || magic != "P-PART") {
    throw FormatError("not a P-PART partition header");
  }
  part.labels.resize(part.height * part.width);
  for (auto& l : part.labels) {
    if (!(in >> l)) throw FormatError("P-PART file ends before h*w labels");
  }
  std::string extra;
  if (in >> extra) throw FormatError("trailing data after P-PART labels");
  if (!validate(part).valid()) throw FormatError("P-PART labels are not a dense cover of [0, p)");
  part.method = "file";
  return part;
}

void save_ppart(const Partition& part, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << to_ppart(part);
}

Partition load_ppart(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_ppart(buf.str());
}

}  // namespace gsal
