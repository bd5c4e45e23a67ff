// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "uniqseg/run_config.hpp"
#include "uniqseg/toml_lite.hpp"

using namespace uniqseg;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* tag) {
  fs::path p = fs::temp_directory_path() / (std::string("uniqseg_cli_") + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

/// Runs the CLI binary (path from the UNIQSEG_CLI env var) and returns its
/// exit code; stdout/stderr go to the given file.
int run_cli(const std::string& args, const fs::path& log) {
  const char* cli = std::getenv("UNIQSEG_CLI");
  REQUIRE(cli != nullptr);
  std::string cmd = std::string(cli) + " " + args + " > " + log.string() + " 2>&1";
  int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("toml: scalars, arrays, sections, errors") {
  auto t = toml::parse(R"(
# comment
top = 1

[alpha]
s = "hi there"
i = -42
f = 2.5e-1
b = true
arr = [1, 2, 3]
names = ["a", "b"]
)");
  CHECK(t.at("").at("top").as_int() == 1);
  CHECK(t.at("alpha").at("s").as_string() == "hi there");
  CHECK(t.at("alpha").at("i").as_int() == -42);
  CHECK(t.at("alpha").at("f").as_float() == doctest::Approx(0.25));
  CHECK(t.at("alpha").at("b").as_bool());
  CHECK(t.at("alpha").at("arr").as_array().size() == 3);
  CHECK(t.at("alpha").at("names").as_array()[1].as_string() == "b");

  CHECK_THROWS_AS(toml::parse("x ="), ConfigError);
  CHECK_THROWS_AS(toml::parse("[unclosed"), ConfigError);
  CHECK_THROWS_AS(toml::parse("a = 1\na = 2"), ConfigError);
  CHECK_THROWS_AS(toml::parse("a = [1, "), ConfigError);
}

TEST_CASE("run config: defaults match the documented hyper-parameters") {
  config::RunConfig c = config::parse_run_config("");
  CHECK(c.train.loss.focal_alpha == 0.1);
  CHECK(c.train.loss.focal_gamma == 2.5);
  CHECK(c.train.loss.lambda_equi == 3.0);
  CHECK(c.train.sampling.pixels_per_instance == 50);
  CHECK(c.train.sampling.kind == membank::SamplingKind::InstanceBalanced);
  CHECK(c.train.memory_capacity == 10000);
  CHECK(c.train.optimizer == train::OptimizerKind::Sgd);
  CHECK(c.train.learning_rate == 0.01);
  CHECK(c.train.batch_size == 8);
  CHECK(c.scene.image_size == 128);
  CHECK(c.train.transforms.enable_hflip);
  CHECK(c.train.transforms.enable_crop);
  CHECK(c.train.transforms.crop_ratio_min == 0.6);
  CHECK(c.train.transforms.crop_ratio_max == 1.0);
  CHECK_FALSE(c.train.transforms.enable_rotation);
  CHECK_FALSE(c.train.transforms.enable_scaling);

  // Capacity is configurable up to the reference scale.
  config::RunConfig big = config::parse_run_config("[memory]\ncapacity = 100000\n");
  CHECK(big.train.memory_capacity == 100000);
}

TEST_CASE("run config: unknown keys and sections are named in the error") {
  try {
    config::parse_run_config("[loss]\nfocal_alpa = 0.1\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("focal_alpa") != std::string::npos);
  }
  CHECK_THROWS_AS(config::parse_run_config("[nonsense]\nx = 1\n"), ConfigError);
  CHECK_THROWS_AS(config::parse_run_config("[loss]\nfocal_alpha = \"high\"\n"), ConfigError);
}

TEST_CASE("run config: TOML round-trip preserves the effective settings") {
  config::RunConfig c = config::parse_run_config(R"(
[scene]
image_size = 64
max_instances = 3

[loss]
inter_loss_kind = "l2"

[train]
epochs = 7
optimizer = "adam"
learning_rate = 0.004
inter_warmup_epochs = 3
equi_mode = "aug"
)");
  config::RunConfig back = config::parse_run_config(config::to_toml(c));
  CHECK(back.scene.image_size == 64);
  CHECK(back.scene.max_instances == 3);
  CHECK(back.train.loss.inter_loss_kind == loss::InterLossKind::L2);
  CHECK(back.train.epochs == 7);
  CHECK(back.train.optimizer == train::OptimizerKind::Adam);
  CHECK(back.train.learning_rate == 0.004);
  CHECK(back.train.inter_warmup_epochs == 3);
  CHECK(back.train.equi_mode == train::EquiMode::Augmentation);
}

TEST_CASE("cli: gen determinism and argument errors") {
  fs::path dir = temp_dir("gen");

  CHECK(run_cli("gen --count 4 --seed 3 --out " + (dir / "a").string(), dir / "log1") == 0);
  CHECK(run_cli("gen --count 4 --seed 3 --out " + (dir / "b").string(), dir / "log2") == 0);
  CHECK(slurp(dir / "a" / "manifest.json") == slurp(dir / "b" / "manifest.json"));

  // Missing required --out: usage error.
  CHECK(run_cli("gen --count 4", dir / "log3") == 1);
  CHECK(run_cli("--help", dir / "log4") == 0);
  CHECK(run_cli("eval --checkpoint missing.uqs --data " + (dir / "a").string(), dir / "log5") ==
        1);
}

TEST_CASE("cli: train rejects bad config keys by name") {
  fs::path dir = temp_dir("train");
  std::ofstream(dir / "bad.toml") << "[train]\nepochz = 3\n";
  CHECK(run_cli("train --config " + (dir / "bad.toml").string() + " --data x --out y",
                dir / "log") == 1);
  CHECK(slurp(dir / "log").find("epochz") != std::string::npos);

  // Conflicting branch flags.
  std::ofstream(dir / "ok.toml") << "[train]\nepochs = 1\n";
  CHECK(run_cli("train --config " + (dir / "ok.toml").string() +
                    " --data x --out y --no-equi --aug-only",
                dir / "log2") == 1);
}

TEST_CASE("cli: verify subcommand selection") {
  fs::path dir = temp_dir("verify");
  CHECK(run_cli("verify --suite nonsense", dir / "log") == 1);
}
