// gsal: command-line driver for the grouped-saliency experiments.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gsal/errors.hpp"
#include "gsal/harness.hpp"
#include "gsal/tensor.hpp"
#include "json.hpp"

using namespace gsal;

namespace {

constexpr int kOk = 0, kInvalid = 1, kRuntime = 2, kViolation = 3;

struct Stopwatch {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - start).count();
    start = now;
    return s;
  }
};

struct Common {
  std::string config_path;
  std::size_t jobs = 0;
  std::vector<std::string> sets;
};

ExperimentConfig load_config(const Common& common, const std::vector<std::string>& extras,
                             const std::vector<std::string>& forced = {}) {
  Config cfg = common.config_path.empty() ? Config() : Config::load(common.config_path);
  for (const auto& s : common.sets) cfg.apply_override(s);
  for (const auto& e : extras) {
    if (!e.starts_with("--") || e.find('=') == std::string::npos)
      throw ConfigError("unrecognised argument '" + e + "' (overrides take the form --section.key=value)");
    cfg.apply_override(e);
  }
  for (const auto& f : forced) cfg.apply_override(f);
  if (common.jobs > 0) cfg.set("run.jobs", std::to_string(common.jobs));
  return ExperimentConfig::from(cfg);
}

std::filesystem::path seed_dir(const ExperimentConfig& e, const std::string& verb, std::uint64_t seed) {
  return e.output / verb / ("seed" + std::to_string(seed));
}

void write_report(const MetricReport& report, const std::filesystem::path& dir, RunRecord& record) {
  write_text(dir / "report.json", report.to_json());
  write_text(dir / "report.csv", report.to_csv());
  record.artifacts.push_back(dir / "report.json");
  record.artifacts.push_back(dir / "report.csv");
}

void print_scalars(const MetricReport& report) {
  for (const auto& [name, v] : report.scalars) std::printf("  %-40s %.6f\n", name.c_str(), v);
}

const Model& analysis_model(const ModelSet& set) { return set.reference ? *set.reference : set.models.front(); }

int run_train(const ExperimentConfig& e, RunRecord& record) {
  Stopwatch sw;
  for (auto seed : e.seeds) {
    const auto set = train_models(e, seed, e.reference);
    record.timings.emplace_back("train seed " + std::to_string(seed), sw.lap());
    for (const auto& p : set.paths) record.artifacts.push_back(p);
    std::printf("seed %llu: %zu model(s)%s, %s in %s\n", static_cast<unsigned long long>(seed), set.models.size(),
                set.reference ? " + reference" : "", set.cache_hit ? "reused from cache" : "trained",
                model_dir(e, seed).string().c_str());
  }
  return kOk;
}

int run_explain(const ExperimentConfig& e, const std::string& model_file, RunRecord& record) {
  Stopwatch sw;
  const Dataset eval = evaluation_data(e);
  const auto idx = parse_selector(e.explain_images, eval.size());
  PartitionCache cache(e, e.output);
  std::optional<Model> fixed;
  if (!model_file.empty()) fixed = load_model(model_file);
  for (auto seed : e.seeds) {
    std::optional<ModelSet> set;
    if (!fixed) set = train_models(e, seed, e.explain_model == "reference");
    const Model& model = fixed ? *fixed
                         : e.explain_model == "reference"
                             ? *set->reference
                             : set->models.at(parse_selector(e.explain_model, set->models.size()).front());
    const auto dir = seed_dir(e, "explain", seed);
    std::string index = "config,seed,image,method,policy,groups,file\n";
    for (const auto& policy : e.explain_policies) {
      for (const auto& method : e.methods) {
        for (auto i : idx) {
          const Image& img = eval.images[i];
          const auto params = image_params(method, seed, i);
          SaliencyMap map;
          std::size_t groups = img.pixel_count();
          if (policy.kind == PartitionPolicy::Kind::Pixel) {
            map = explain(model, img, params);
          } else {
            const auto part = cache.get(policy, eval.name, img, i, derive_seed(seed, i));
            groups = part.group_count;
            map = grouped(model, img, part, params);
          }
          const auto stem = "img" + std::to_string(i) + "_" + to_string(method.method) + "_" +
                            (policy.kind == PartitionPolicy::Kind::Pixel ? "pixel" : policy.name());
          auto file = stem;
          for (auto& ch : file)
            if (ch == ':') ch = '-';
          nlohmann::ordered_json j;
          j["image"] = i;
          j["dataset"] = eval.name;
          j["method"] = to_string(method.method);
          j["policy"] = policy.name();
          j["groups"] = groups;
          j["provenance"] = map.provenance;
          j["height"] = map.height;
          j["width"] = map.width;
          j["values"] = map.values;
          write_text(dir / (file + ".json"), j.dump() + "\n");
          write_pgm16(map, dir / (file + ".pgm"));
          record.artifacts.push_back(dir / (file + ".json"));
          record.artifacts.push_back(dir / (file + ".pgm"));
          index += hex64(e.fingerprint()) + "," + std::to_string(seed) + "," + std::to_string(i) + "," +
                   to_string(method.method) + "," + policy.name() + "," + std::to_string(groups) + "," + file +
                   ".json\n";
        }
      }
    }
    write_text(dir / "maps.csv", index);
    record.artifacts.push_back(dir / "maps.csv");
    record.timings.emplace_back("explain seed " + std::to_string(seed), sw.lap());
    std::printf("seed %llu: %zu map(s) in %s\n", static_cast<unsigned long long>(seed),
                idx.size() * e.methods.size() * e.explain_policies.size(), dir.string().c_str());
  }
  if (cache.stale_count() > 0) std::printf("recomputed %zu stale partition(s)\n", cache.stale_count());
  return kOk;
}

int run_stability(const ExperimentConfig& e, const std::string& a, const std::string& b, RunRecord& record) {
  if (a.empty() != b.empty()) throw ConfigError("--model-a and --model-b must be given together");
  Stopwatch sw;
  const Dataset eval = evaluation_data(e);
  PartitionCache cache(e, e.output);
  for (auto seed : e.seeds) {
    std::vector<Model> models;
    if (!a.empty()) models = {load_model(a), load_model(b)};
    else models = train_models(e, seed, false).models;
    const auto report = stability_report(e, seed, models, eval, cache);
    write_report(report, seed_dir(e, "stability", seed), record);
    record.timings.emplace_back("stability seed " + std::to_string(seed), sw.lap());
    std::printf("seed %llu:\n", static_cast<unsigned long long>(seed));
    print_scalars(report);
  }
  return kOk;
}

int run_fidelity(const ExperimentConfig& e, RunRecord& record) {
  Stopwatch sw;
  const Dataset eval = evaluation_data(e);
  PartitionCache cache(e, e.output);
  for (auto seed : e.seeds) {
    const auto set = train_models(e, seed, e.reference);
    const auto report = fidelity_report(e, seed, analysis_model(set), set.models, eval, cache);
    write_report(report, seed_dir(e, "fidelity", seed), record);
    record.timings.emplace_back("fidelity seed " + std::to_string(seed), sw.lap());
    std::printf("seed %llu:\n", static_cast<unsigned long long>(seed));
    print_scalars(report);
  }
  return kOk;
}

int run_interpretability(const ExperimentConfig& e, RunRecord& record) {
  Stopwatch sw;
  const Dataset eval = evaluation_data(e);
  const Dataset train_set = training_data(e);
  PartitionCache cache(e, e.output);
  for (auto seed : e.seeds) {
    const auto set = train_models(e, seed, e.reference);
    const auto report = interpretability_report(e, seed, analysis_model(set), train_set, eval, cache);
    write_report(report, seed_dir(e, "interpretability", seed), record);
    record.timings.emplace_back("interpretability seed " + std::to_string(seed), sw.lap());
    std::printf("seed %llu:\n", static_cast<unsigned long long>(seed));
    for (const auto& [name, c] : report.curves) {
      std::printf("  %-40s", name.c_str());
      for (std::size_t i = 0; i < c.x.size(); ++i) std::printf(" %.2f:%.4f", c.x[i], c.y[i]);
      std::printf("\n");
    }
  }
  return kOk;
}

int run_propcheck_verb(const ExperimentConfig& e, std::uint64_t seed, std::size_t trials, std::size_t model_trials,
                       RunRecord& record) {
  Stopwatch sw;
  const auto result = run_propcheck(seed, trials, model_trials);
  record.timings.emplace_back("propcheck", sw.lap());
  MetricReport report;
  report.metadata["config_fingerprint"] = hex64(e.fingerprint());
  report.metadata["seed"] = std::to_string(seed);
  report.metadata["verb"] = "propcheck";
  report.add_scalar("trials", static_cast<double>(result.trials));
  report.add_scalar("violations.loss_bound", static_cast<double>(result.prop1_violations));
  report.add_scalar("violations.variance_identity", static_cast<double>(result.prop2_violations));
  report.add_scalar("worst.loss_excess", result.worst_prop1_excess);
  report.add_scalar("worst.identity_relative_error", result.worst_prop2_error);
  const auto dir = e.output / "propcheck";
  write_report(report, dir, record);
  std::printf("%zu trial(s): %zu loss-bound and %zu identity violation(s); worst relative error %.3g\n",
              result.trials, result.prop1_violations, result.prop2_violations, result.worst_prop2_error);
  if (!result.passed()) {
    write_text(dir / "counterexample.json", result.counterexample + "\n");
    record.artifacts.push_back(dir / "counterexample.json");
    std::fprintf(stderr, "property violation; counterexample:\n%s\n", result.counterexample.c_str());
    return kViolation;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gsal: grouped gradient saliency experiments"};
  app.require_subcommand(1);
  app.fallthrough();
  app.allow_extras();
  Common common;
  app.add_option("--config", common.config_path, "INI config file")->check(CLI::ExistingFile);
  app.add_option("--jobs", common.jobs, "worker threads for per-image work");
  app.add_option("--set", common.sets, "override, section.key=value (repeatable)");

  auto* train_cmd = app.add_subcommand("train", "train the split models and the reference model");
  auto* explain_cmd = app.add_subcommand("explain", "write saliency maps as JSON and PGM");
  std::string model_file, images;
  explain_cmd->add_option("--model", model_file, "model file to explain instead of the trained set");
  explain_cmd->add_option("--images", images, "image selector, e.g. 0-9 or 1,5,7");
  auto* stability_cmd = app.add_subcommand("stability", "SSIM, L2 stability and MeGe across models");
  std::string model_a, model_b;
  stability_cmd->add_option("--model-a", model_a, "first model file");
  stability_cmd->add_option("--model-b", model_b, "second model file");
  auto* fidelity_cmd = app.add_subcommand("fidelity", "deletion/insertion AUC and muFidelity");
  auto* interp_cmd = app.add_subcommand("interpretability", "ROAD curves, ROAR with --roar");
  bool roar = false;
  interp_cmd->add_flag("--roar", roar, "also retrain for ROAR");
  auto* prop_cmd = app.add_subcommand("propcheck", "fuzz the grouping loss bound and variance identity");
  std::uint64_t prop_seed = 0;
  std::size_t trials = 1000, model_trials = 50;
  prop_cmd->add_option("--seed", prop_seed, "fuzz seed");
  prop_cmd->add_option("--trials", trials, "random map/partition trials");
  prop_cmd->add_option("--model-trials", model_trials, "trained-model gradient trials");
  for (auto* sub : app.get_subcommands({})) sub->allow_extras();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err) == 0 ? kOk : kInvalid;
  }

  auto* sub = app.get_subcommands().front();
  RunRecord record;
  record.verb = sub->get_name();
  std::optional<ExperimentConfig> cfg;
  try {
    auto extras = app.remaining();
    const auto more = sub->remaining();
    extras.insert(extras.end(), more.begin(), more.end());
    std::vector<std::string> forced;
    if (!images.empty()) forced.push_back("explain.images=" + images);
    if (roar) forced.push_back("metrics.roar=true");
    cfg = load_config(common, extras, forced);
    record.config_fingerprint = hex64(cfg->fingerprint());
    write_text(cfg->output / record.verb / "config.ini", cfg->raw.to_ini());

    int code = kOk;
    if (sub == train_cmd) code = run_train(*cfg, record);
    else if (sub == explain_cmd) code = run_explain(*cfg, model_file, record);
    else if (sub == stability_cmd) code = run_stability(*cfg, model_a, model_b, record);
    else if (sub == fidelity_cmd) code = run_fidelity(*cfg, record);
    else if (sub == interp_cmd) code = run_interpretability(*cfg, record);
    else if (sub == prop_cmd) code = run_propcheck_verb(*cfg, prop_seed, trials, model_trials, record);
    record.write(cfg->output / record.verb / "run.json");
    return code;
  } catch (const std::invalid_argument& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kInvalid;
  } catch (const FormatError& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kInvalid;
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    if (cfg) {
      record.partial = true;
      record.failure = err.what();
      try {
        record.write(cfg->output / record.verb / "run.json");
      } catch (const std::exception&) {
      }
    }
    return kRuntime;
  }
}
