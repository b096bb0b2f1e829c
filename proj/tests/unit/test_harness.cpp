#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>
#include <unistd.h>

#include "doctest.h"
#include "gsal/errors.hpp"
#include "gsal/harness.hpp"

using namespace gsal;

namespace {

std::filesystem::path scratch(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() / ("gsal_harness_" + tag + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

Image noise_image(std::size_t side, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(side, side, 3);
  for (auto& v : img.pixels) v = u(rng);
  return img;
}

}  // namespace

TEST_CASE("config defaults, ini parsing and overrides") {
  Config d;
  CHECK(d.get("data.source") == "shapes");
  CHECK(d.get_size("data.n") == 2000);
  CHECK(d.get_double("train.learning_rate") == doctest::Approx(0.05));
  CHECK(d.get_bool("train.reference"));
  CHECK(d.get_list("methods.list") == std::vector<std::string>{"gradient", "smoothgrad", "ig", "sparsified"});

  const auto c = Config::parse("[data]\nn = 300\nsize=16\n\n; note\n[methods]\nlist = gradient, ig\n");
  CHECK(c.get_size("data.n") == 300);
  CHECK(c.get_size("data.size") == 16);
  CHECK(c.get_list("methods.list") == std::vector<std::string>{"gradient", "ig"});
  CHECK(c.get("train.epochs") == "10");

  Config o;
  o.apply_override("--train.epochs=4");
  o.apply_override("data.seed=9");
  CHECK(o.get_size("train.epochs") == 4);
  CHECK(o.get_u64("data.seed") == 9);
}

TEST_CASE("unknown keys and malformed overrides are rejected") {
  CHECK_THROWS_AS(Config::parse("[data]\nbogus=1\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("[nosuch]\nn=1\n"), ConfigError);
  Config c;
  CHECK_THROWS_AS(c.apply_override("--data.bogus=1"), ConfigError);
  CHECK_THROWS_AS(c.apply_override("--data.n"), ConfigError);
  CHECK_THROWS_AS(Config::load("/nonexistent/gsal.ini"), std::invalid_argument);
}

TEST_CASE("experiment validation") {
  Config c;
  c.set("train.layout", "sideways");
  CHECK_THROWS_AS(ExperimentConfig::from(c), ConfigError);
  Config n;
  n.set("data.n", "1");
  CHECK_THROWS_AS(ExperimentConfig::from(n), ConfigError);
  const auto e = ExperimentConfig::from(Config());
  CHECK(e.methods.size() == 4);
  CHECK(e.superpixel.kind == PartitionPolicy::Kind::Slic);
  CHECK(e.seeds == std::vector<std::uint64_t>{0});
}

TEST_CASE("fingerprint survives reserialization and ignores jobs and output") {
  Config a;
  a.apply_override("--data.n=500");
  a.apply_override("--methods.samples=8");
  const auto b = Config::parse(a.to_ini());
  CHECK(a.canonical() == b.canonical());
  CHECK(a.fingerprint() == b.fingerprint());

  Config c = a;
  c.set("run.jobs", "8");
  c.set("run.output", "elsewhere");
  CHECK(c.fingerprint() == a.fingerprint());

  Config d = a;
  d.set("data.seed", "1");
  CHECK(d.fingerprint() != a.fingerprint());
  CHECK(d.fingerprint({"train"}) == a.fingerprint({"train"}));

  const auto text = a.canonical({"data"});
  CHECK(text.starts_with("data."));
  CHECK(text.find("train.") == std::string::npos);
}

TEST_CASE("partition policy parse and name round trip") {
  for (const std::string s : {"pixel", "slic:100", "quickshift:5", "felzenszwalb:50", "grid:4", "random:30"})
    CHECK(PartitionPolicy::parse(s).name() == s);
  CHECK(PartitionPolicy::parse("slic:100").kind == PartitionPolicy::Kind::Slic);
  CHECK(PartitionPolicy::parse("grid:4").value == 4.0);
  CHECK_THROWS_AS(PartitionPolicy::parse("voronoi:3"), std::invalid_argument);
  CHECK_THROWS_AS(PartitionPolicy::parse("slic:"), std::invalid_argument);
}

TEST_CASE("selectors") {
  CHECK(parse_selector("0-3", 10) == std::vector<std::size_t>{0, 1, 2, 3});
  CHECK(parse_selector("7", 10) == std::vector<std::size_t>{7});
  CHECK(parse_selector("0,4,9", 10) == std::vector<std::size_t>{0, 4, 9});
  CHECK(parse_selector("all", 3) == std::vector<std::size_t>{0, 1, 2});
  CHECK_THROWS_AS(parse_selector("10", 10), std::invalid_argument);
  CHECK_THROWS_AS(parse_selector("5-2", 10), std::invalid_argument);
  CHECK_THROWS_AS(parse_selector("x", 10), std::invalid_argument);
}

TEST_CASE("parallel_for covers every index and rethrows the lowest failure") {
  for (std::size_t jobs : {1u, 2u, 7u}) {
    std::vector<std::size_t> out(100, 0);
    std::atomic<std::size_t> calls{0};
    parallel_for(out.size(), jobs, [&](std::size_t i) {
      out[i] = i * i;
      ++calls;
    });
    CHECK(calls.load() == 100);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == i * i);
  }
  try {
    parallel_for(50, 4, [](std::size_t i) {
      if (i == 13 || i == 40) throw std::runtime_error("job " + std::to_string(i));
    });
    FAIL("no exception");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()) == "job 13");
  }
}

TEST_CASE("partition cache reuses entries and recomputes stale ones") {
  const auto root = scratch("cache");
  Config c;
  c.set("run.output", root.string());
  const auto e = ExperimentConfig::from(c);
  const auto policy = PartitionPolicy::parse("slic:20");
  const Image img = noise_image(16, 1);

  PartitionCache cache(e, root);
  const auto first = cache.get(policy, "unit", img, 0, 5);
  CHECK(cache.stale_count() == 0);
  std::size_t files = 0;
  for (const auto& f : std::filesystem::recursive_directory_iterator(root / "partitions"))
    if (f.is_regular_file()) ++files;
  CHECK(files == 2);

  const auto again = cache.get(policy, "unit", img, 0, 5);
  CHECK(again.labels == first.labels);
  CHECK(cache.stale_count() == 0);

  const Image other = noise_image(16, 2);
  const auto changed = cache.get(policy, "unit", other, 0, 5);
  CHECK(cache.stale_count() == 1);
  CHECK(changed.labels == policy_partition(e, policy, other, 5).labels);
  CHECK(cache.get(policy, "unit", other, 0, 5).labels == changed.labels);
  CHECK(cache.stale_count() == 1);

  const auto separate = cache.get(policy, "other-set", img, 0, 5);
  CHECK(separate.labels == first.labels);
  CHECK(cache.stale_count() == 1);
  std::filesystem::remove_all(root);
}

TEST_CASE("write_text replaces files whole") {
  const auto root = scratch("write");
  const auto p = root / "nested" / "a.txt";
  write_text(p, "one\n");
  write_text(p, "two\n");
  std::ifstream in(p);
  std::string s((std::istreambuf_iterator<char>(in)), {});
  CHECK(s == "two\n");
  std::size_t n = 0;
  for ([[maybe_unused]] const auto& f : std::filesystem::directory_iterator(root / "nested")) ++n;
  CHECK(n == 1);
  std::filesystem::remove_all(root);
}
