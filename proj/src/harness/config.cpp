#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "gsal/errors.hpp"
#include "gsal/harness.hpp"
#include "gsal/tensor.hpp"

namespace gsal {

namespace {

const std::map<std::string, std::string>& defaults() {
  static const std::map<std::string, std::string> table{
      {"data.source", "shapes"},
      {"data.path", ""},
      {"data.eval_path", ""},
      {"data.n", "2000"},
      {"data.size", "32"},
      {"data.eval_n", "100"},
      {"data.seed", "0"},
      {"train.epochs", "10"},
      {"train.batch_size", "32"},
      {"train.learning_rate", "0.05"},
      {"train.momentum", "0.9"},
      {"train.layout", "disjoint"},
      {"train.k", "2"},
      {"train.reference", "true"},
      {"methods.list", "gradient,smoothgrad,ig,sparsified"},
      {"methods.samples", "32"},
      {"methods.sigma", "0.1"},
      {"methods.steps", "64"},
      {"methods.keep_fraction", "0.05"},
      {"methods.score", "probability"},
      {"partition.superpixel", "slic:100"},
      {"partition.compactness", "10"},
      {"partition.max_iter", "10"},
      {"partition.qs_kernel", "3"},
      {"partition.qs_ratio", "1"},
      {"partition.fz_sigma", "0.8"},
      {"partition.fz_min_size", "20"},
      {"partition.grid", "4"},
      {"explain.policies", "pixel,slic:100"},
      {"explain.images", "0-3"},
      {"explain.model", "0"},
      {"metrics.deletion_step", "0.02"},
      {"metrics.fidelity_roles", "pixel,superpixel,grid,random"},
      {"metrics.mufidelity_subset", "0.1"},
      {"metrics.mufidelity_trials", "128"},
      {"metrics.fractions", "0,0.1,0.3,0.5,0.7"},
      {"metrics.road_noise", "0.01"},
      {"metrics.roar", "false"},
      {"metrics.roar_n", "0"},
      {"metrics.tradeoff", ""},
      {"run.seeds", "0"},
      {"run.output", "gsal_out"},
      {"run.jobs", "1"},
  };
  return table;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const auto* end = text.data() + text.size();
  auto [p, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || p != end) throw ConfigError("'" + key + "' is not a valid number: '" + text + "'");
  return v;
}

}  // namespace

Config::Config() : entries_(defaults()) {}

Config Config::parse(std::string_view ini_text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in{std::string(ini_text)};
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  Config cfg;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("config key '" + section + "' lies outside any section");
    for (const auto& [key, value] : body) cfg.set(section + "." + key, value.data());
  }
  return cfg;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse(text.str());
}

void Config::apply_override(std::string_view assignment) {
  if (assignment.starts_with("--")) assignment.remove_prefix(2);
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ConfigError("override '" + std::string(assignment) + "' lacks '='");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void Config::set(const std::string& key, std::string value) {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second = trim(value);
}

const std::string& Config::get(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

double Config::get_double(const std::string& key) const {
  const double v = parse_number<double>(key, get(key));
  if (!std::isfinite(v)) throw ConfigError("'" + key + "' must be finite");
  return v;
}

std::size_t Config::get_size(const std::string& key) const { return parse_number<std::size_t>(key, get(key)); }

std::uint64_t Config::get_u64(const std::string& key) const { return parse_number<std::uint64_t>(key, get(key)); }

bool Config::get_bool(const std::string& key) const {
  const auto& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("'" + key + "' is not a boolean: '" + v + "'");
}

std::vector<std::string> Config::get_list(const std::string& key) const {
  std::vector<std::string> out;
  std::istringstream in(get(key));
  for (std::string item; std::getline(in, item, ',');) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string Config::canonical(const std::vector<std::string>& sections) const {
  std::string out;
  for (const auto& [key, value] : entries_) {
    if (key == "run.jobs" || key == "run.output") continue;
    const auto section = key.substr(0, key.find('.'));
    if (!sections.empty() && std::find(sections.begin(), sections.end(), section) == sections.end()) continue;
    out += key + "=" + value + "\n";
  }
  return out;
}

std::uint64_t Config::fingerprint(const std::vector<std::string>& sections) const {
  const auto text = canonical(sections);
  return fnv1a(text.data(), text.size());
}

std::string Config::to_ini() const {
  std::string out, current;
  for (const auto& [key, value] : entries_) {
    const auto dot = key.find('.');
    const auto section = key.substr(0, dot);
    if (section != current) {
      out += (out.empty() ? "[" : "\n[") + section + "]\n";
      current = section;
    }
    out += key.substr(dot + 1) + " = " + value + "\n";
  }
  return out;
}

PartitionPolicy PartitionPolicy::parse(const std::string& text) {
  PartitionPolicy p;
  const auto colon = text.find(':');
  const auto kind = text.substr(0, colon);
  if (kind == "pixel") {
    if (colon != std::string::npos) throw ConfigError("policy 'pixel' takes no parameter");
    return p;
  }
  if (colon == std::string::npos) throw ConfigError("partition policy '" + text + "' needs a parameter");
  const auto arg = text.substr(colon + 1);
  p.value = parse_number<double>("partition policy", arg);
  if (!(p.value > 0) || !std::isfinite(p.value)) throw ConfigError("partition policy '" + text + "' needs a positive parameter");
  if (kind == "slic") p.kind = Kind::Slic;
  else if (kind == "quickshift") p.kind = Kind::Quickshift;
  else if (kind == "felzenszwalb") p.kind = Kind::Felzenszwalb;
  else if (kind == "grid") p.kind = Kind::Grid;
  else if (kind == "random") p.kind = Kind::Random;
  else throw ConfigError("unknown partition policy '" + kind + "'");
  const bool integral = p.kind == Kind::Slic || p.kind == Kind::Grid || p.kind == Kind::Random;
  if (integral && p.value != std::floor(p.value)) throw ConfigError("policy '" + text + "' needs an integer");
  return p;
}

std::string PartitionPolicy::name() const {
  const auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  switch (kind) {
    case Kind::Pixel: return "pixel";
    case Kind::Slic: return "slic:" + num(value);
    case Kind::Quickshift: return "quickshift:" + num(value);
    case Kind::Felzenszwalb: return "felzenszwalb:" + num(value);
    case Kind::Grid: return "grid:" + num(value);
    case Kind::Random: return "random:" + num(value);
  }
  return {};
}

ExperimentConfig ExperimentConfig::from(const Config& cfg) {
  ExperimentConfig e;
  e.raw = cfg;

  auto& d = e.data;
  d.source = cfg.get("data.source");
  d.path = cfg.get("data.path");
  d.eval_path = cfg.get("data.eval_path");
  d.n = cfg.get_size("data.n");
  d.size = cfg.get_size("data.size");
  d.eval_n = cfg.get_size("data.eval_n");
  d.seed = cfg.get_u64("data.seed");
  if (d.source == "cifar10") {
    if (d.path.empty() || !std::filesystem::exists(d.path))
      throw ConfigError("data.path '" + d.path.string() + "' does not exist");
    if (!d.eval_path.empty() && !std::filesystem::exists(d.eval_path))
      throw ConfigError("data.eval_path '" + d.eval_path.string() + "' does not exist");
  } else if (d.source == "shapes") {
    if (d.size < 8) throw ConfigError("data.size must be at least 8");
  } else {
    throw ConfigError("data.source must be 'shapes' or 'cifar10'");
  }
  if (d.n == 0 || d.eval_n == 0) throw ConfigError("data.n and data.eval_n must be positive");

  e.train.epochs = cfg.get_size("train.epochs");
  e.train.batch_size = cfg.get_size("train.batch_size");
  e.train.learning_rate = cfg.get_double("train.learning_rate");
  e.train.momentum = cfg.get_double("train.momentum");
  try {
    e.train.validate();
  } catch (const ArgumentError& err) {
    throw ConfigError(err.what());
  }
  const auto& layout = cfg.get("train.layout");
  if (layout == "disjoint") e.layout = Layout::Disjoint;
  else if (layout == "kfold") e.layout = Layout::KFold;
  else if (layout == "init") e.layout = Layout::Init;
  else throw ConfigError("train.layout must be disjoint, kfold or init");
  e.k = cfg.get_size("train.k");
  if (e.k < 2) throw ConfigError("train.k must be at least 2");
  if (e.layout != Layout::Init && e.k > d.n) throw ConfigError("train.k exceeds data.n");
  e.reference = cfg.get_bool("train.reference");

  MethodParams base;
  base.samples = cfg.get_size("methods.samples");
  base.sigma = cfg.get_double("methods.sigma");
  base.steps = cfg.get_size("methods.steps");
  base.keep_fraction = cfg.get_double("methods.keep_fraction");
  const auto& score = cfg.get("methods.score");
  if (score == "probability") base.score = ScoreKind::Probability;
  else if (score == "logit") base.score = ScoreKind::Logit;
  else throw ConfigError("methods.score must be 'probability' or 'logit'");
  if (base.samples == 0 || base.steps == 0 || base.sigma < 0 || !(base.keep_fraction > 0 && base.keep_fraction <= 1))
    throw ConfigError("methods: samples and steps must be positive, sigma >= 0, keep_fraction in (0,1]");
  for (const auto& name : cfg.get_list("methods.list")) {
    MethodParams m = base;
    try {
      m.method = method_from_string(name);
    } catch (const ArgumentError&) {
      throw ConfigError("unknown method '" + name + "'");
    }
    e.methods.push_back(m);
  }
  if (e.methods.empty()) throw ConfigError("methods.list is empty");

  e.superpixel = PartitionPolicy::parse(cfg.get("partition.superpixel"));
  if (e.superpixel.kind == PartitionPolicy::Kind::Pixel || e.superpixel.kind == PartitionPolicy::Kind::Random)
    throw ConfigError("partition.superpixel must be a segmentation or grid policy");
  e.slic.compactness = cfg.get_double("partition.compactness");
  e.slic.max_iter = cfg.get_size("partition.max_iter");
  e.quickshift.kernel_size = cfg.get_double("partition.qs_kernel");
  e.quickshift.ratio = cfg.get_double("partition.qs_ratio");
  e.felzenszwalb.sigma = cfg.get_double("partition.fz_sigma");
  e.felzenszwalb.min_size = cfg.get_size("partition.fz_min_size");
  e.grid_cell = cfg.get_size("partition.grid");
  if (e.grid_cell == 0) throw ConfigError("partition.grid must be positive");
  for (const auto& p : cfg.get_list("explain.policies")) e.explain_policies.push_back(PartitionPolicy::parse(p));
  if (e.explain_policies.empty()) throw ConfigError("explain.policies is empty");
  e.explain_images = cfg.get("explain.images");
  e.explain_model = cfg.get("explain.model");

  auto& m = e.metrics;
  m.deletion_step = cfg.get_double("metrics.deletion_step");
  if (!(m.deletion_step > 0 && m.deletion_step <= 1)) throw ConfigError("metrics.deletion_step must lie in (0,1]");
  m.fidelity_roles = cfg.get_list("metrics.fidelity_roles");
  for (const auto& role : m.fidelity_roles)
    if (role != "pixel" && role != "superpixel" && role != "grid" && role != "random")
      throw ConfigError("unknown fidelity role '" + role + "'");
  if (m.fidelity_roles.empty()) throw ConfigError("metrics.fidelity_roles is empty");
  m.mufidelity_subset = cfg.get_double("metrics.mufidelity_subset");
  if (!(m.mufidelity_subset > 0 && m.mufidelity_subset < 1))
    throw ConfigError("metrics.mufidelity_subset must lie in (0,1)");
  m.mufidelity_trials = cfg.get_size("metrics.mufidelity_trials");
  if (m.mufidelity_trials < 2) throw ConfigError("metrics.mufidelity_trials must be at least 2");
  m.fractions.clear();
  for (const auto& f : cfg.get_list("metrics.fractions")) {
    const double v = parse_number<double>("metrics.fractions", f);
    if (!(v >= 0 && v <= 1) || (!m.fractions.empty() && v <= m.fractions.back()))
      throw ConfigError("metrics.fractions must be increasing values in [0,1]");
    m.fractions.push_back(v);
  }
  if (m.fractions.empty()) throw ConfigError("metrics.fractions is empty");
  m.road_noise = cfg.get_double("metrics.road_noise");
  if (m.road_noise < 0) throw ConfigError("metrics.road_noise must be non-negative");
  m.roar = cfg.get_bool("metrics.roar");
  m.roar_n = cfg.get_size("metrics.roar_n");
  for (const auto& t : cfg.get_list("metrics.tradeoff")) {
    const auto n = parse_number<std::size_t>("metrics.tradeoff", t);
    if (n == 0) throw ConfigError("metrics.tradeoff sizes must be positive");
    m.tradeoff.push_back(n);
  }

  for (const auto& s : cfg.get_list("run.seeds")) e.seeds.push_back(parse_number<std::uint64_t>("run.seeds", s));
  if (e.seeds.empty()) throw ConfigError("run.seeds is empty");
  e.output = cfg.get("run.output");
  if (e.output.empty()) throw ConfigError("run.output is empty");
  e.jobs = cfg.get_size("run.jobs");
  if (e.jobs == 0) throw ConfigError("run.jobs must be positive");
  return e;
}

std::vector<std::size_t> parse_selector(const std::string& text, std::size_t count) {
  std::vector<std::size_t> out;
  if (trim(text) == "all") {
    for (std::size_t i = 0; i < count; ++i) out.push_back(i);
    return out;
  }
  std::istringstream in(text);
  for (std::string item; std::getline(in, item, ',');) {
    item = trim(item);
    if (item.empty()) continue;
    const auto dash = item.find('-');
    std::size_t lo, hi;
    if (dash == std::string::npos) {
      lo = hi = parse_number<std::size_t>("image selector", item);
    } else {
      lo = parse_number<std::size_t>("image selector", trim(item.substr(0, dash)));
      hi = parse_number<std::size_t>("image selector", trim(item.substr(dash + 1)));
    }
    if (lo > hi || hi >= count)
      throw ConfigError("image selector '" + item + "' is outside 0-" + std::to_string(count - 1));
    for (std::size_t i = lo; i <= hi; ++i) out.push_back(i);
  }
  if (out.empty()) throw ConfigError("image selector '" + text + "' selects nothing");
  return out;
}

}  // namespace gsal
