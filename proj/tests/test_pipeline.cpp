#include <cstdlib>
#include <sys/wait.h>

#include <algorithm>
#include <filesystem>
#include <set>
#include <sstream>

#include "doctest.h"
#include "gaopom/binary_io.hpp"
#include "gaopom/pipeline.hpp"

using namespace gaopom;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("gaopom_test_pipeline_" + name);
  fs::remove_all(p);
  return p;
}

int run(const std::string& cmd, const RunConfig& cfg) {
  std::ostringstream log, err;
  return run_command(cmd, cfg, log, err);
}

std::size_t count_files(const fs::path& dir) {
  std::size_t n = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir)) n += e.is_regular_file();
  return n;
}

}  // namespace

TEST_CASE("config text parsing") {
  const RunConfig c = RunConfig::from_text(
      "# comment\nseed = 9\nattack.epsilon = 4\nattack.methods = opom, ga-opom\neval.top_k = 1,5\n");
  CHECK(c.seed == 9);
  CHECK(c.attack.epsilon == 4.0);
  CHECK(c.methods == std::vector<Method>{Method::Opom, Method::GaOpom});
  CHECK(RunConfig::from_text(c.to_text()).to_text() == c.to_text());
  CHECK_THROWS_AS(RunConfig::from_text("attack.bogus = 1\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_text("seed\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_text("attack.outer_steps = many\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_file("/nonexistent/run.cfg"), ConfigError);
}

TEST_CASE("seeds fan out by section") {
  RunConfig c;
  CHECK(c.data_seed() != c.attack_seed());
  CHECK(c.train_seed("a") != c.train_seed("b"));
  const auto s = c.ablation_seeds();
  CHECK(s.size() == 5);
  CHECK(std::set<std::uint64_t>(s.begin(), s.end()).size() == 5);
  RunConfig d;
  d.seed = 1;
  CHECK(d.data_seed() != c.data_seed());
}

TEST_CASE("bad configurations exit with code 1") {
  RunConfig c;
  c.out_dir = fresh_dir("bad").string();
  c.data.height = 0;
  CHECK(run("gen-data", c) == 1);
  c = RunConfig{};
  c.out_dir = fresh_dir("bad").string();
  c.data.height = 18;  // conv pooling needs multiples of 4
  CHECK(run("gen-data", c) == 1);
  c = RunConfig{};
  c.out_dir = fresh_dir("missing").string();
  CHECK(run("train", c) == 1);
  CHECK(run("craft", c) == 1);
  CHECK(run("evaluate", c) == 1);
}

TEST_CASE("full pipeline is reproducible") {
  RunConfig c;
  c.out_dir = fresh_dir("full").string();
  REQUIRE(run("gen-data", c) == 0);
  const Dataset ds = Dataset::load(c.dataset_path());
  CHECK(ds.num_identities() == 20);
  CHECK(ds.identities[0].train_images.size() + ds.identities[0].test_images.size() == 15);
  const auto ds_bytes = io::read_file(c.dataset_path());
  REQUIRE(run("gen-data", c) == 0);
  CHECK(io::read_file(c.dataset_path()) == ds_bytes);

  REQUIRE(run("train", c) == 0);
  CHECK(count_files(fs::path(c.out_dir) / "models") == 4);

  c.methods = {Method::Opom, Method::GaOpom};
  c.attack.outer_steps = 4;
  c.attack.inner_multiplier = 2;
  REQUIRE(run("craft", c) == 0);
  for (const char* s : {"s-mlp3-softmax", "s-mlp3-margin"})
    for (const char* m : {"opom", "ga-opom"}) CHECK(count_files(fs::path(c.out_dir) / "masks" / s / m) == 20);

  REQUIRE(run("evaluate", c) == 0);
  const auto csv = io::read_file(c.report_path());
  // 2 surrogates x 2 methods x 2 targets plus the header.
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 9);
  const auto meta = io::read_file(c.report_metadata_path());
  REQUIRE(run("evaluate", c) == 0);
  CHECK(io::read_file(c.report_path()) == csv);
  CHECK(io::read_file(c.report_metadata_path()) == meta);

  // Masks crafted under a different configuration are rejected.
  RunConfig other = c;
  other.attack.epsilon = 6.0;
  CHECK(run("evaluate", other) == 1);

  // Corrupt mask file is an I/O failure.
  io::write_file(c.mask_path("s-mlp3-softmax", Method::Opom, 0), {'G', 'A'});
  CHECK(run("evaluate", c) == 2);
  fs::remove_all(c.out_dir);
}

TEST_CASE("command-line driver") {
  const char* cli = std::getenv("GAOPOM_CLI");
  if (!cli) return;
  const fs::path out = fresh_dir("cli");
  const std::string base = std::string(cli) + " ";
  const auto sh = [](const std::string& cmd) {
    const int rc = std::system((cmd + " >/dev/null 2>&1").c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  };
  CHECK(sh(base + "gen-data --out " + out.string()) == 0);
  CHECK(fs::is_regular_file(out / "dataset.gads"));
  CHECK(sh(base + "gen-data --out " + out.string() + " --set data.bogus=1") == 1);
  CHECK(sh(base + "craft --out " + out.string() + " --epsilon -1") == 1);
  CHECK(sh(base + "craft --out " + out.string()) == 1);  // models missing
  CHECK(sh(base + "nonsense") != 0);
  fs::remove_all(out);
}
