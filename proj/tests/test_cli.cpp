#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "psd/cli.hpp"
#include "psd/errors.hpp"

namespace fs = std::filesystem;

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

int lines_in(const std::string& text) {
  int n = 0;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) ++n;
  return n;
}

// Every config used by these tests: tiny images, two blocks, one epoch.
const char* kTinySpec = R"({"num_classes": 4, "image_size": 16, "regions_per_image": 3,
  "patch_size": 4, "train_per_class": 8, "test_per_class": 4, "seed": 2})";

std::string tiny_train_config(const std::string& dataset, const std::string& out_dir) {
  return std::string(R"({"mode": "psd", "epochs": 1, "batch_size": 8, "widths": [4, 8],
    "tap_index": 2, "dataset": ")") +
         dataset + R"(", "out_dir": ")" + out_dir + "\"}";
}

struct TempDir {
  std::string path;
  explicit TempDir(const std::string& p) : path(p) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("empty config text yields the full default train config") {
  auto c = psd::parse_train_config("{}", {});
  CHECK(c.mode == "psd");
  CHECK(c.m == 2);
  CHECK(c.eta == 0.05);
  CHECK(c.alpha == 1.0);
  CHECK(c.beta == 5);
  CHECK(c.omega_l == 1.0);
  CHECK(c.momentum == 0.9);
  CHECK(c.weight_decay == 1e-4);
  CHECK(c.tap_index == 3);
  CHECK(c.widths == std::vector<int>{8, 16, 32, 32});
}

TEST_CASE("overrides win over file values and are type checked") {
  auto c = psd::parse_train_config(R"({"alpha": 0.5, "m": 1})", {"alpha=2.0", "mode=baseline"});
  CHECK(c.alpha == 2.0);
  CHECK(c.m == 1);
  CHECK(c.mode == "baseline");

  auto w = psd::parse_train_config("{}", {"widths=[4,8]", "tap_index=1"});
  CHECK(w.widths == std::vector<int>{4, 8});

  CHECK_THROWS_WITH_AS(psd::parse_train_config("{}", {"eta=1.5"}),
                       doctest::Contains("eta"), psd::ConfigError);
  CHECK_THROWS_WITH_AS(psd::parse_train_config("{}", {"epochs=2.5"}),
                       doctest::Contains("epochs"), psd::ConfigError);
  CHECK_THROWS_AS(psd::parse_train_config("{}", {"nonsense"}), psd::ConfigError);
  CHECK_THROWS_WITH_AS(psd::parse_train_config(R"({"bogus_key": 1})", {}),
                       doctest::Contains("bogus_key"), psd::ConfigError);
  CHECK_THROWS_AS(psd::parse_train_config("[1,2]", {}), psd::ConfigError);
  CHECK_THROWS_AS(psd::parse_train_config("not json", {}), psd::ConfigError);
}

TEST_CASE("a run record feeds back in through its config object") {
  const char* run_json = R"({"command": "train", "version": "1.0.0",
    "config": {"mode": "baseline", "epochs": 7}, "metrics": {"final_top1": 0.5}})";
  auto c = psd::parse_train_config(run_json, {});
  CHECK(c.mode == "baseline");
  CHECK(c.epochs == 7);
}

TEST_CASE("spec config parses with defaults and rejects unknowns") {
  auto s = psd::parse_spec_config("{}", {});
  CHECK(s.num_classes == 10);
  CHECK(s.image_size == 32);
  CHECK(s.regions_per_image == 6);
  CHECK(s.patch_size == 6);

  auto t = psd::parse_spec_config(kTinySpec, {"seed=9"});
  CHECK(t.num_classes == 4);
  CHECK(t.seed == 9);
  CHECK_THROWS_AS(psd::parse_spec_config(R"({"widths": [1]})", {}), psd::ConfigError);
}

TEST_CASE("cli rejects unknown flags and subcommands with exit 1") {
  CHECK(psd::run_cli({"train", "--bogus"}) == 1);
  CHECK(psd::run_cli({"frobnicate"}) == 1);
  CHECK(psd::run_cli({}) == 1);
  CHECK(psd::run_cli({"eval"}) == 1);  // missing required --model/--data
}

TEST_CASE("gen-data, train, eval, masked-curve, export-crm pipeline") {
  TempDir tmp("cli_tmp");
  write_text(tmp.path + "/spec.json", kTinySpec);

  CHECK(psd::run_cli({"gen-data", "--config", tmp.path + "/spec.json", "--out", tmp.path}) == 0);
  REQUIRE(fs::exists(tmp.path + "/dataset.psdd"));
  CHECK(fs::exists(tmp.path + "/gen.json"));

  const std::string run_dir = tmp.path + "/run";
  write_text(tmp.path + "/train.json",
             tiny_train_config(tmp.path + "/dataset.psdd", run_dir));
  CHECK(psd::run_cli({"train", "--config", tmp.path + "/train.json"}) == 0);
  REQUIRE(fs::exists(run_dir + "/metrics.csv"));
  REQUIRE(fs::exists(run_dir + "/model.psdm"));
  REQUIRE(fs::exists(run_dir + "/run.json"));
  CHECK(lines_in(read_text(run_dir + "/metrics.csv")) == 2);  // header + one epoch

  CHECK(psd::run_cli({"eval", "--model", run_dir + "/model.psdm", "--data",
                      tmp.path + "/dataset.psdd"}) == 0);
  // 4 classes: forcing top5 is a config error.
  CHECK(psd::run_cli({"eval", "--model", run_dir + "/model.psdm", "--data",
                      tmp.path + "/dataset.psdd", "--top5"}) == 1);

  CHECK(psd::run_cli({"masked-curve", "--model", run_dir + "/model.psdm", "--data",
                      tmp.path + "/dataset.psdd", "--block", "4", "--out", tmp.path}) == 0);
  const std::string curve = read_text(tmp.path + "/masked_curve.csv");
  CHECK(lines_in(curve) == 6);
  CHECK(curve.rfind("pct,top1,top5", 0) == 0);

  CHECK(psd::run_cli({"export-crm", "--model", run_dir + "/model.psdm", "--data",
                      tmp.path + "/dataset.psdd", "--count", "2", "--out",
                      tmp.path + "/crm"}) == 0);
  int pgms = 0;
  for (const auto& entry : fs::directory_iterator(tmp.path + "/crm"))
    pgms += entry.path().extension() == ".pgm";
  CHECK(pgms == 6);

  // Asking for more samples than the split holds is a config error.
  CHECK(psd::run_cli({"export-crm", "--model", run_dir + "/model.psdm", "--data",
                      tmp.path + "/dataset.psdd", "--count", "999", "--out",
                      tmp.path + "/crm"}) == 1);
}

TEST_CASE("a run is reproducible from its run.json") {
  TempDir tmp("cli_tmp_repro");
  write_text(tmp.path + "/spec.json", kTinySpec);
  REQUIRE(psd::run_cli({"gen-data", "--config", tmp.path + "/spec.json", "--out", tmp.path}) ==
          0);

  const std::string run_dir = tmp.path + "/run";
  write_text(tmp.path + "/train.json",
             tiny_train_config(tmp.path + "/dataset.psdd", run_dir));
  REQUIRE(psd::run_cli({"train", "--config", tmp.path + "/train.json"}) == 0);
  const std::string first = read_text(run_dir + "/metrics.csv");

  REQUIRE(psd::run_cli({"train", "--config", run_dir + "/run.json"}) == 0);
  const std::string second = read_text(run_dir + "/metrics.csv");

  // Identical apart from the wall-time column at the end of each row.
  std::istringstream a(first), b(second);
  std::string la, lb;
  int rows = 0;
  while (std::getline(a, la) && std::getline(b, lb)) {
    CHECK(la.substr(0, la.rfind(',')) == lb.substr(0, lb.rfind(',')));
    ++rows;
  }
  CHECK(rows == 2);
}

TEST_CASE("PSD_OUT overrides the configured output directory") {
  TempDir tmp("cli_tmp_env");
  TempDir redirected("cli_tmp_env_redirect");
  write_text(tmp.path + "/spec.json", kTinySpec);
  REQUIRE(psd::run_cli({"gen-data", "--config", tmp.path + "/spec.json", "--out", tmp.path}) ==
          0);
  write_text(tmp.path + "/train.json",
             tiny_train_config(tmp.path + "/dataset.psdd", tmp.path + "/ignored"));

  setenv("PSD_OUT", redirected.path.c_str(), 1);
  const int rc = psd::run_cli({"train", "--config", tmp.path + "/train.json"});
  unsetenv("PSD_OUT");
  CHECK(rc == 0);
  CHECK(fs::exists(redirected.path + "/metrics.csv"));
  CHECK(!fs::exists(tmp.path + "/ignored"));
}

TEST_CASE("data and numeric failures map to exit codes 2 and 3") {
  TempDir tmp("cli_tmp_codes");
  write_text(tmp.path + "/garbage.psdd", "XXXXoh no");
  write_text(tmp.path + "/spec.json", kTinySpec);
  REQUIRE(psd::run_cli({"gen-data", "--config", tmp.path + "/spec.json", "--out", tmp.path}) ==
          0);

  // Missing and corrupt files are format errors.
  CHECK(psd::run_cli({"eval", "--model", tmp.path + "/nope.psdm", "--data",
                      tmp.path + "/dataset.psdd"}) == 2);
  write_text(tmp.path + "/train_bad.json",
             tiny_train_config(tmp.path + "/garbage.psdd", tmp.path + "/run"));
  CHECK(psd::run_cli({"train", "--config", tmp.path + "/train_bad.json"}) == 2);

  // A wildly divergent run aborts with the numeric exit code.
  write_text(tmp.path + "/train_nan.json",
             tiny_train_config(tmp.path + "/dataset.psdd", tmp.path + "/run_nan"));
  CHECK(psd::run_cli({"train", "--config", tmp.path + "/train_nan.json", "lr=1e6",
                      "epochs=5"}) == 3);
}

TEST_CASE("ablate emits the grid csv from a config") {
  TempDir tmp("cli_tmp_ablate");
  write_text(tmp.path + "/spec.json", kTinySpec);
  REQUIRE(psd::run_cli({"gen-data", "--config", tmp.path + "/spec.json", "--out", tmp.path}) ==
          0);
  write_text(tmp.path + "/train.json",
             tiny_train_config(tmp.path + "/dataset.psdd", tmp.path + "/ab"));
  CHECK(psd::run_cli({"ablate", "--config", tmp.path + "/train.json", "--seeds", "1"}) == 0);
  const std::string csv = read_text(tmp.path + "/ab/ablation.csv");
  CHECK(csv.rfind("config,seed,top1,top5,region_recall", 0) == 0);
  // 8 runs plus mean and std rows per config, plus the header.
  CHECK(lines_in(csv) == 1 + 8 + 16);
  CHECK(fs::exists(tmp.path + "/ab/ablate.json"));
}
