#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace gsal {

// Per-pixel group labels in [0, group_count), row-major.
struct Partition {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<int> labels;
  std::size_t group_count = 0;
  std::string method;
  // Fingerprint of the image the partition was computed from; empty for
  // image-independent partitions (grid, random).
  std::optional<std::uint64_t> image_fingerprint;

  std::size_t pixel_count() const noexcept { return height * width; }
  std::vector<std::size_t> group_sizes() const;
  bool operator==(const Partition&) const = default;
};

struct ValidationReport {
  bool coverage = false;      // every pixel carries a label in [0, p)
  bool dense_labels = false;  // every label in [0, p) is used
  bool connected = false;     // every group is 4-connected
  std::size_t group_count = 0;

  bool valid() const noexcept { return coverage && dense_labels; }
};

// Never throws; malformed partitions are reported.
ValidationReport validate(const Partition& part);

// Renumbers arbitrary integer labels to 0..p-1 in raster order of first appearance.
Partition make_partition(std::size_t height, std::size_t width, std::span<const int> raw_labels, std::string method);

Partition grid_partition(std::size_t height, std::size_t width, std::size_t cell);

// i.i.d. uniform labels; every empty label then takes the lowest-index pixel of the
// currently largest group, so exactly p groups are nonempty.
Partition random_partition(std::size_t height, std::size_t width, std::size_t p, std::uint64_t seed);

// "P-PART h w p" header followed by h rows of w space-separated labels.
std::string to_ppart(const Partition& part);
Partition parse_ppart(std::string_view text);
void save_ppart(const Partition& part, const std::filesystem::path& path);
Partition load_ppart(const std::filesystem::path& path);

}  // namespace gsal
