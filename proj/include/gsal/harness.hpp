#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gsal/dataset.hpp"
#include "gsal/metrics.hpp"
#include "gsal/model.hpp"
#include "gsal/partition.hpp"
#include "gsal/saliency.hpp"
#include "gsal/superpixel.hpp"
#include "gsal/train.hpp"

namespace gsal {

// Sectioned key/value settings addressed as "section.key". Every key has a default;
// unknown keys are rejected.
class Config {
 public:
  Config();

  static Config parse(std::string_view ini_text);
  static Config load(const std::filesystem::path& path);

  // Accepts "section.key=value" or "--section.key=value".
  void apply_override(std::string_view assignment);
  void set(const std::string& key, std::string value);

  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::size_t get_size(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<std::string> get_list(const std::string& key) const;

  const std::map<std::string, std::string>& entries() const noexcept { return entries_; }

  // Sorted "section.key=value" lines for the given sections (all when empty). run.jobs and
  // run.output never change results and are left out.
  std::string canonical(const std::vector<std::string>& sections = {}) const;
  std::uint64_t fingerprint(const std::vector<std::string>& sections = {}) const;
  std::string to_ini() const;

 private:
  std::map<std::string, std::string> entries_;
};

// "pixel", "slic:N", "quickshift:D", "felzenszwalb:S", "grid:C" or "random:P".
struct PartitionPolicy {
  enum class Kind { Pixel, Slic, Quickshift, Felzenszwalb, Grid, Random };
  Kind kind = Kind::Pixel;
  double value = 0.0;

  static PartitionPolicy parse(const std::string& text);
  std::string name() const;
};

struct DataSpec {
  std::string source = "shapes";
  std::filesystem::path path;
  std::filesystem::path eval_path;
  std::size_t n = 2000;
  std::size_t size = 32;
  std::size_t eval_n = 100;
  std::uint64_t seed = 0;
};

enum class Layout { Disjoint, KFold, Init };

struct MetricSettings {
  double deletion_step = 0.02;
  std::vector<std::string> fidelity_roles{"pixel", "superpixel", "grid", "random"};
  double mufidelity_subset = 0.1;
  std::size_t mufidelity_trials = 128;
  std::vector<double> fractions{0.0, 0.1, 0.3, 0.5, 0.7};
  double road_noise = 0.01;
  bool roar = false;
  std::size_t roar_n = 0;
  std::vector<std::size_t> tradeoff;
};

struct ExperimentConfig {
  Config raw;
  DataSpec data;
  TrainConfig train;
  Layout layout = Layout::Disjoint;
  std::size_t k = 2;
  bool reference = true;
  std::vector<MethodParams> methods;
  PartitionPolicy superpixel;
  SlicParams slic;
  QuickshiftParams quickshift;
  FelzenszwalbParams felzenszwalb;
  std::size_t grid_cell = 4;
  std::vector<PartitionPolicy> explain_policies;
  std::string explain_images;
  std::string explain_model;
  MetricSettings metrics;
  std::vector<std::uint64_t> seeds;
  std::filesystem::path output;
  std::size_t jobs = 1;

  // Throws ConfigError on any invalid field or missing input file.
  static ExperimentConfig from(const Config& cfg);
  std::uint64_t fingerprint() const { return raw.fingerprint(); }
};

// "0-9", "3", "0,4,7" or "all"; indices must be below `count`.
std::vector<std::size_t> parse_selector(const std::string& text, std::size_t count);

// Runs fn(0..n-1) on `jobs` threads; results must be written by index.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

Dataset training_data(const ExperimentConfig& cfg);
Dataset evaluation_data(const ExperimentConfig& cfg);

Partition policy_partition(const ExperimentConfig& cfg, const PartitionPolicy& policy, const Image& img,
                           std::uint64_t seed);

// On-disk P-PART cache keyed by the data and partition settings. A cached file whose image
// fingerprint no longer matches is recomputed with a warning.
class PartitionCache {
 public:
  PartitionCache(const ExperimentConfig& cfg, std::filesystem::path root);

  // `set` names the image collection so that equal indices in different sets never collide.
  Partition get(const PartitionPolicy& policy, const std::string& set, const Image& img, std::size_t index,
                std::uint64_t seed) const;
  std::size_t stale_count() const noexcept { return stale_.load(); }

 private:
  const ExperimentConfig* cfg_;
  std::filesystem::path root_;
  mutable std::atomic<std::size_t> stale_{0};
};

struct ModelSet {
  std::vector<Model> models;
  std::optional<Model> reference;
  std::vector<std::filesystem::path> paths;
  bool cache_hit = false;
};

// Trains the configured layout for one seed, or reloads it from <output>/models/<key>, where
// <key> hashes the data and train settings (evaluation-set keys excluded) and the seed.
ModelSet train_models(const ExperimentConfig& cfg, std::uint64_t seed, bool with_reference);
std::filesystem::path model_dir(const ExperimentConfig& cfg, std::uint64_t seed);

// Per-image method parameters: the smoothing noise stream is tied to the image index.
MethodParams image_params(const MethodParams& base, std::uint64_t seed, std::size_t index);

// Maps of every image under one method, grouped when `parts` is given.
std::vector<SaliencyMap> compute_maps(const ExperimentConfig& cfg, const Model& model, const Dataset& images,
                                      const MethodParams& method, const std::vector<Partition>* parts,
                                      std::uint64_t seed);

std::vector<Partition> policy_partitions(const ExperimentConfig& cfg, const PartitionCache& cache,
                                         const PartitionPolicy& policy, const Dataset& images, std::uint64_t seed);

MetricReport stability_report(const ExperimentConfig& cfg, std::uint64_t seed, const std::vector<Model>& models,
                              const Dataset& images, const PartitionCache& cache);
MetricReport fidelity_report(const ExperimentConfig& cfg, std::uint64_t seed, const Model& model,
                             const std::vector<Model>& pair, const Dataset& images, const PartitionCache& cache);
MetricReport interpretability_report(const ExperimentConfig& cfg, std::uint64_t seed, const Model& model,
                                     const Dataset& train_set, const Dataset& images, const PartitionCache& cache);

struct PropcheckResult {
  std::size_t trials = 0;
  std::size_t prop1_violations = 0;
  std::size_t prop2_violations = 0;
  double worst_prop2_error = 0.0;
  double worst_prop1_excess = -std::numeric_limits<double>::infinity();  // max of L(grouped) - L(pixel)
  std::string counterexample;  // JSON of the first violation, empty when none

  bool passed() const noexcept { return prop1_violations == 0 && prop2_violations == 0; }
};

// Random maps and partitions (constant maps every tenth trial) plus gradient pairs from two
// small trained models.
PropcheckResult run_propcheck(std::uint64_t seed, std::size_t trials, std::size_t model_trials);

struct RunRecord {
  std::string verb;
  std::string config_fingerprint;
  std::vector<std::pair<std::string, double>> timings;
  std::vector<std::filesystem::path> artifacts;
  bool partial = false;
  std::string failure;

  void write(const std::filesystem::path& path) const;
};

// Writes text atomically (temp file + rename).
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace gsal
