#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "gsal/errors.hpp"
#include "gsal/harness.hpp"
#include "gsal/tensor.hpp"
#include "json.hpp"

namespace gsal {

namespace {

std::mutex log_mutex;

void warn(const std::string& message) {
  std::lock_guard lock(log_mutex);
  std::cerr << "warning: " << message << "\n";
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream text;
  text << in.rdbuf();
  return text.str();
}

std::uint64_t text_hash(const std::string& text) { return fnv1a(text.data(), text.size()); }

double mean_of(const std::vector<double>& v) {
  long double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : static_cast<double>(s / v.size());
}

std::string file_safe(std::string s) {
  for (auto& ch : s)
    if (ch == ':' || ch == '/' || ch == ' ') ch = '_';
  return s;
}

}  // namespace

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::max<std::size_t>(1, std::min(jobs, n));
  std::vector<std::exception_ptr> errors(n);
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

Dataset training_data(const ExperimentConfig& cfg) {
  const auto& d = cfg.data;
  if (d.source == "shapes") return generate_shapes(d.n, d.size, d.seed);
  Dataset all = load_cifar10_binary(d.path);
  if (all.size() < d.n) throw ConfigError("data.path holds fewer than data.n images");
  std::vector<std::size_t> idx(d.n);
  for (std::size_t i = 0; i < d.n; ++i) idx[i] = i;
  return all.subset(idx, "cifar10/train");
}

Dataset evaluation_data(const ExperimentConfig& cfg) {
  const auto& d = cfg.data;
  if (d.source == "shapes") {
    Dataset ds = generate_shapes(d.eval_n, d.size, derive_seed(d.seed, 1));
    ds.name = "shapes/eval";
    return ds;
  }
  std::size_t offset = 0;
  Dataset all;
  if (d.eval_path.empty()) {
    all = load_cifar10_binary(d.path);
    offset = d.n;
  } else {
    all = load_cifar10_binary(d.eval_path);
  }
  if (all.size() < offset + d.eval_n) throw ConfigError("not enough CIFAR-10 images left for data.eval_n");
  std::vector<std::size_t> idx(d.eval_n);
  for (std::size_t i = 0; i < d.eval_n; ++i) idx[i] = offset + i;
  return all.subset(idx, "cifar10/eval");
}

Partition policy_partition(const ExperimentConfig& cfg, const PartitionPolicy& policy, const Image& img,
                           std::uint64_t seed) {
  using Kind = PartitionPolicy::Kind;
  const auto cells = static_cast<std::size_t>(policy.value);
  switch (policy.kind) {
    case Kind::Pixel: return grid_partition(img.height, img.width, 1);
    case Kind::Slic: {
      SlicParams p = cfg.slic;
      p.n_segments = std::min(cells, img.pixel_count());
      return slic(img, p);
    }
    case Kind::Quickshift: {
      QuickshiftParams p = cfg.quickshift;
      p.max_dist = policy.value;
      return quickshift(img, p);
    }
    case Kind::Felzenszwalb: {
      FelzenszwalbParams p = cfg.felzenszwalb;
      p.scale = policy.value;
      return felzenszwalb(img, p);
    }
    case Kind::Grid: return grid_partition(img.height, img.width, cells);
    case Kind::Random: return random_partition(img.height, img.width, std::min(cells, img.pixel_count()), seed);
  }
  throw ArgumentError("unknown partition policy");
}

PartitionCache::PartitionCache(const ExperimentConfig& cfg, std::filesystem::path root)
    : cfg_(&cfg), root_(std::move(root)) {}

Partition PartitionCache::get(const PartitionPolicy& policy, const std::string& set, const Image& img,
                              std::size_t index, std::uint64_t seed) const {
  std::string key = cfg_->raw.canonical({"data", "partition"}) + "policy=" + policy.name() + "\nset=" + set + "\n";
  if (policy.kind == PartitionPolicy::Kind::Random) key += "seed=" + std::to_string(seed) + "\n";
  const auto dir = root_ / "partitions" / (file_safe(policy.name()) + "-" + hex64(text_hash(key)));
  const auto stem = "img" + std::to_string(index);
  const auto ppart = dir / (stem + ".ppart");
  const auto fp_file = dir / (stem + ".fp");
  const auto image_fp = hex64(img.fingerprint());

  if (std::filesystem::exists(ppart) && std::filesystem::exists(fp_file)) {
    if (read_text(fp_file) == image_fp + "\n") {
      try {
        Partition part = load_ppart(ppart);
        if (part.height == img.height && part.width == img.width) {
          part.method = policy.name();
          part.image_fingerprint = img.fingerprint();
          return part;
        }
      } catch (const FormatError&) {
      }
    }
    ++stale_;
    warn("stale partition cache " + ppart.string() + " (image changed); recomputing");
  }
  Partition part = policy_partition(*cfg_, policy, img, seed);
  part.method = policy.name();
  part.image_fingerprint = img.fingerprint();
  write_text(ppart, to_ppart(part));
  write_text(fp_file, image_fp + "\n");
  return part;
}

std::filesystem::path model_dir(const ExperimentConfig& cfg, std::uint64_t seed) {
  std::string key;
  std::istringstream lines(cfg.raw.canonical({"data", "train"}));
  for (std::string line; std::getline(lines, line);)
    if (!line.starts_with("data.eval_")) key += line + "\n";
  key += "seed=" + std::to_string(seed) + "\n";
  return cfg.output / "models" / ("seed" + std::to_string(seed) + "-" + hex64(text_hash(key)));
}

ModelSet train_models(const ExperimentConfig& cfg, std::uint64_t seed, bool with_reference) {
  const auto dir = model_dir(cfg, seed);
  std::filesystem::create_directories(dir);
  std::optional<Dataset> full;
  const auto data = [&]() -> const Dataset& {
    if (!full) full = training_data(cfg);
    return *full;
  };

  const std::size_t k = cfg.k;
  const std::size_t total = k + (with_reference ? 1 : 0);
  std::vector<std::filesystem::path> paths;
  for (std::size_t i = 0; i < k; ++i) paths.push_back(dir / ("model" + std::to_string(i) + ".bin"));
  if (with_reference) paths.push_back(dir / "reference.bin");

  std::vector<std::size_t> missing;
  for (std::size_t i = 0; i < total; ++i)
    if (!std::filesystem::exists(paths[i])) missing.push_back(i);

  std::vector<Dataset> sets;
  if (!missing.empty()) {
    const Dataset& ds = data();
    switch (cfg.layout) {
      case Layout::Disjoint: sets = disjoint_split(ds, k, seed); break;
      case Layout::KFold: sets = leave_one_fold_out(ds, k, seed); break;
      case Layout::Init: sets.assign(k, ds); break;
    }
    if (with_reference) sets.push_back(ds);
  }
  parallel_for(missing.size(), cfg.jobs, [&](std::size_t j) {
    const std::size_t i = missing[j];
    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(seed, i < k ? i : 1000);
    Model m = train(sets[i], tc);
    auto tmp = paths[i];
    tmp += ".tmp";
    save_model(m, tmp);
    std::filesystem::rename(tmp, paths[i]);
  });

  ModelSet out;
  out.cache_hit = missing.empty();
  for (std::size_t i = 0; i < k; ++i) out.models.push_back(load_model(paths[i]));
  if (with_reference) out.reference = load_model(paths[k]);
  out.paths = paths;

  nlohmann::ordered_json manifest;
  manifest["seed"] = seed;
  manifest["layout"] = cfg.raw.get("train.layout");
  manifest["dataset_fingerprint"] = hex64(out.models.front().metadata().dataset_fingerprint);
  manifest["models"] = nlohmann::ordered_json::array();
  for (const auto& p : paths) manifest["models"].push_back(p.filename().string());
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  return out;
}

MethodParams image_params(const MethodParams& base, std::uint64_t seed, std::size_t index) {
  MethodParams p = base;
  p.seed = derive_seed(seed, index);
  return p;
}

std::vector<SaliencyMap> compute_maps(const ExperimentConfig& cfg, const Model& model, const Dataset& images,
                                      const MethodParams& method, const std::vector<Partition>* parts,
                                      std::uint64_t seed) {
  std::vector<SaliencyMap> maps(images.size());
  parallel_for(images.size(), cfg.jobs, [&](std::size_t i) {
    const auto p = image_params(method, seed, i);
    maps[i] = parts ? grouped(model, images.images[i], (*parts)[i], p) : explain(model, images.images[i], p);
  });
  return maps;
}

std::vector<Partition> policy_partitions(const ExperimentConfig& cfg, const PartitionCache& cache,
                                         const PartitionPolicy& policy, const Dataset& images, std::uint64_t seed) {
  std::vector<Partition> parts(images.size());
  parallel_for(images.size(), cfg.jobs, [&](std::size_t i) {
    parts[i] = cache.get(policy, images.name, images.images[i], i, derive_seed(seed, i));
  });
  return parts;
}

namespace {

MetricReport base_report(const ExperimentConfig& cfg, std::uint64_t seed, const std::string& verb,
                         const Dataset& images) {
  MetricReport r;
  r.metadata["config_fingerprint"] = hex64(cfg.fingerprint());
  r.metadata["seed"] = std::to_string(seed);
  r.metadata["verb"] = verb;
  r.metadata["images"] = std::to_string(images.size());
  r.metadata["dataset"] = images.name;
  r.metadata["superpixel"] = cfg.superpixel.name();
  return r;
}

double mean_groups(const std::vector<Partition>& parts) {
  std::vector<double> g;
  for (const auto& p : parts) g.push_back(static_cast<double>(p.group_count));
  return mean_of(g);
}

double mean_ssim(const std::vector<SaliencyMap>& a, const std::vector<SaliencyMap>& b) {
  std::vector<double> s(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) s[i] = ssim(a[i], b[i]);
  return mean_of(s);
}

struct FidelityRow {
  double deletion = 0, insertion = 0, mufidelity = 0;
  std::size_t undefined = 0;
  bool has_mufidelity = false;
};

FidelityRow fidelity_row(const ExperimentConfig& cfg, std::uint64_t seed, const Model& model, const Dataset& images,
                         const std::vector<SaliencyMap>& maps, bool curves) {
  const std::size_t n = images.size();
  std::vector<double> del(n), ins(n), mu(n, std::nan(""));
  parallel_for(n, cfg.jobs, [&](std::size_t i) {
    const auto& img = images.images[i];
    if (curves) {
      del[i] = deletion_insertion(model, img, maps[i], FidelityMode::Deletion, cfg.metrics.deletion_step).auc();
      ins[i] = deletion_insertion(model, img, maps[i], FidelityMode::Insertion, cfg.metrics.deletion_step).auc();
    }
    const auto subset = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(cfg.metrics.mufidelity_subset * img.pixel_count())));
    try {
      mu[i] = mu_fidelity(model, img, maps[i], subset, cfg.metrics.mufidelity_trials, 0.0, derive_seed(seed, i));
    } catch (const UndefinedCorrelation&) {
    }
  });
  FidelityRow row;
  row.deletion = mean_of(del);
  row.insertion = mean_of(ins);
  std::vector<double> defined;
  for (double v : mu)
    if (std::isnan(v)) ++row.undefined;
    else defined.push_back(v);
  row.has_mufidelity = !defined.empty();
  row.mufidelity = mean_of(defined);
  return row;
}

}  // namespace

MetricReport stability_report(const ExperimentConfig& cfg, std::uint64_t seed, const std::vector<Model>& models,
                              const Dataset& images, const PartitionCache& cache) {
  if (models.size() < 2) throw ArgumentError("stability needs at least two models");
  MetricReport r = base_report(cfg, seed, "stability", images);
  r.metadata["models"] = std::to_string(models.size());
  const auto sp = policy_partitions(cfg, cache, cfg.superpixel, images, seed);
  r.add_scalar("groups.superpixel", mean_groups(sp));
  for (const auto& method : cfg.methods) {
    const auto name = to_string(method.method);
    for (const bool super : {false, true}) {
      const std::string role = super ? "superpixel" : "pixel";
      std::vector<std::vector<SaliencyMap>> maps;
      for (const auto& m : models) maps.push_back(compute_maps(cfg, m, images, method, super ? &sp : nullptr, seed));
      const auto st = empirical_stability(maps[0], maps[1]);
      r.add_scalar("ssim." + name + "." + role, mean_ssim(maps[0], maps[1]));
      r.add_scalar("l2_mean." + name + "." + role, st.mean);
      r.add_scalar("l2_max." + name + "." + role, st.max);
      r.add_scalar("mege." + name + "." + role, mege(maps));
    }
  }
  return r;
}

MetricReport fidelity_report(const ExperimentConfig& cfg, std::uint64_t seed, const Model& model,
                             const std::vector<Model>& pair, const Dataset& images, const PartitionCache& cache) {
  MetricReport r = base_report(cfg, seed, "fidelity", images);
  const auto sp = policy_partitions(cfg, cache, cfg.superpixel, images, seed);
  PartitionPolicy grid_policy{PartitionPolicy::Kind::Grid, static_cast<double>(cfg.grid_cell)};
  const auto grid = policy_partitions(cfg, cache, grid_policy, images, seed);
  std::vector<Partition> random(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& img = images.images[i];
    random[i] = random_partition(img.height, img.width, sp[i].group_count, derive_seed(derive_seed(seed, 7), i));
    random[i].image_fingerprint = img.fingerprint();
  }
  r.metadata["grid"] = grid_policy.name();
  r.add_scalar("groups.superpixel", mean_groups(sp));
  r.add_scalar("groups.grid", mean_groups(grid));
  r.add_scalar("groups.random", mean_groups(random));

  const std::vector<std::pair<std::string, const std::vector<Partition>*>> roles{
      {"pixel", nullptr}, {"superpixel", &sp}, {"grid", &grid}, {"random", &random}};
  for (const auto& method : cfg.methods) {
    const auto name = to_string(method.method);
    for (const auto& [role, parts] : roles) {
      const auto& wanted = cfg.metrics.fidelity_roles;
      if (std::find(wanted.begin(), wanted.end(), role) == wanted.end()) continue;
      const auto maps = compute_maps(cfg, model, images, method, parts, seed);
      const auto row = fidelity_row(cfg, seed, model, images, maps, true);
      r.add_scalar("deletion_auc." + name + "." + role, row.deletion);
      r.add_scalar("insertion_auc." + name + "." + role, row.insertion);
      if (row.has_mufidelity) r.add_scalar("mufidelity." + name + "." + role, row.mufidelity);
      r.add_scalar("mufidelity_undefined." + name + "." + role, static_cast<double>(row.undefined));
    }
  }

  for (std::size_t n : cfg.metrics.tradeoff) {
    PartitionPolicy policy{PartitionPolicy::Kind::Slic, static_cast<double>(n)};
    const auto parts = policy_partitions(cfg, cache, policy, images, seed);
    MethodParams sg;
    const auto tag = "slic:" + std::to_string(n);
    const auto maps = compute_maps(cfg, model, images, sg, &parts, seed);
    const auto row = fidelity_row(cfg, seed, model, images, maps, false);
    r.add_scalar("tradeoff_groups." + tag, mean_groups(parts));
    if (row.has_mufidelity) r.add_scalar("tradeoff_mufidelity." + tag, row.mufidelity);
    if (pair.size() >= 2) {
      const auto a = compute_maps(cfg, pair[0], images, sg, &parts, seed);
      const auto b = compute_maps(cfg, pair[1], images, sg, &parts, seed);
      r.add_scalar("tradeoff_ssim." + tag, mean_ssim(a, b));
    }
  }
  return r;
}

MetricReport interpretability_report(const ExperimentConfig& cfg, std::uint64_t seed, const Model& model,
                                     const Dataset& train_set, const Dataset& images, const PartitionCache& cache) {
  MetricReport r = base_report(cfg, seed, "interpretability", images);
  const auto sp = policy_partitions(cfg, cache, cfg.superpixel, images, seed);
  std::optional<Dataset> roar_train;
  std::vector<Partition> roar_sp;
  if (cfg.metrics.roar) {
    const std::size_t n = cfg.metrics.roar_n == 0 ? train_set.size() : std::min(cfg.metrics.roar_n, train_set.size());
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    roar_train = train_set.subset(idx, train_set.name + "/roar");
    roar_sp = policy_partitions(cfg, cache, cfg.superpixel, *roar_train, seed);
    r.metadata["roar_train"] = std::to_string(n);
  }
  for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
    const auto& method = cfg.methods[mi];
    const auto name = to_string(method.method);
    for (const bool super : {false, true}) {
      const std::string role = super ? "superpixel" : "pixel";
      const auto maps = compute_maps(cfg, model, images, method, super ? &sp : nullptr, seed);
      const auto road = road_curve(model, images, maps, cfg.metrics.fractions, derive_seed(seed, mi),
                                   cfg.metrics.road_noise);
      r.add_curve("road." + name + "." + role, Curve{road.fractions, road.accuracy});
      if (roar_train) {
        const auto train_maps =
            compute_maps(cfg, model, *roar_train, method, super ? &roar_sp : nullptr, derive_seed(seed, 11));
        TrainConfig tc = cfg.train;
        tc.seed = derive_seed(seed, 2000);
        const auto roar = roar_curve(tc, *roar_train, train_maps, images, maps, cfg.metrics.fractions);
        r.add_curve("roar." + name + "." + role, Curve{roar.fractions, roar.accuracy});
      }
    }
  }
  return r;
}

void RunRecord::write(const std::filesystem::path& path) const {
  nlohmann::ordered_json j;
  j["verb"] = verb;
  j["config_fingerprint"] = config_fingerprint;
  j["partial"] = partial;
  if (!failure.empty()) j["failure"] = failure;
  j["timings"] = nlohmann::ordered_json::array();
  for (const auto& [stage, seconds] : timings) j["timings"].push_back({{"stage", stage}, {"seconds", seconds}});
  j["artifacts"] = nlohmann::ordered_json::array();
  for (const auto& a : artifacts) j["artifacts"].push_back(a.string());
  write_text(path, j.dump(2) + "\n");
}

}  // namespace gsal
