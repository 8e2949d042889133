#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "psd/errors.hpp"
#include "psd/rng.hpp"
#include "psd/trainer.hpp"

using psd::Dataset;
using psd::TrainConfig;

namespace {

Dataset small_ds() {
  psd::SyntheticSpec spec;
  spec.num_classes = 4;
  spec.image_size = 16;
  spec.regions_per_image = 3;
  spec.patch_size = 4;
  spec.train_per_class = 10;
  spec.test_per_class = 6;
  spec.seed = 5;
  return psd::gen_synthetic(spec);
}

TrainConfig small_config(const std::string& mode) {
  TrainConfig c;
  c.mode = mode;
  c.widths = {4, 8};
  c.tap_index = 2;
  c.epochs = 2;
  c.batch_size = 8;
  c.lr = 0.05;
  c.seed = 3;
  return c;
}

bool rows_equal_ignoring_time(const psd::EpochRow& a, const psd::EpochRow& b) {
  return a.epoch == b.epoch && a.l_g == b.l_g && a.l_l == b.l_l && a.l_d == b.l_d &&
         a.omega_d == b.omega_d && a.train_top1 == b.train_top1 && a.test_top1 == b.test_top1 &&
         a.test_top5 == b.test_top5;
}

}  // namespace

TEST_CASE("validate_config rejects out-of-range fields") {
  TrainConfig c = small_config("psd");
  psd::validate_config(c);

  c.mode = "psdx";
  CHECK_THROWS_AS(psd::validate_config(c), psd::ConfigError);
  c = small_config("psd");
  c.eta = 1.5;
  CHECK_THROWS_AS(psd::validate_config(c), psd::ConfigError);
  c = small_config("psd");
  c.eta = 0.0;
  CHECK_THROWS_AS(psd::validate_config(c), psd::ConfigError);
  c = small_config("psd");
  c.m = 0;
  CHECK_THROWS_AS(psd::validate_config(c), psd::ConfigError);
  c = small_config("psd");
  c.lr = -0.1;
  CHECK_THROWS_AS(psd::validate_config(c), psd::ConfigError);
  c = small_config("psd");
  c.momentum = 1.0;
  CHECK_THROWS_AS(psd::validate_config(c), psd::ConfigError);
  c = small_config("psd");
  c.batch_size = 0;
  CHECK_THROWS_AS(psd::validate_config(c), psd::ConfigError);
  c = small_config("psd");
  c.tap_index = 3;  // only two blocks
  CHECK_THROWS_AS(psd::validate_config(c), psd::ConfigError);
  c = small_config("psd");
  c.alpha = -1.0;
  CHECK_THROWS_AS(psd::validate_config(c), psd::ConfigError);
  c = small_config("psd");
  c.da_pct = 1.5;
  CHECK_THROWS_AS(psd::validate_config(c), psd::ConfigError);
}

TEST_CASE("evaluate with a zeroed head sits at exact chance") {
  auto ds = small_ds();
  auto bundle = psd::init_model({4, 8}, 4, 2, 7);
  for (double& v : bundle.teacher.w.mutable_data()) v = 0.0;
  for (double& v : bundle.teacher.b.mutable_data()) v = 0.0;
  // All logits tie, so the ranked prediction is always class 0.
  auto ev = psd::evaluate(bundle, ds, "test", false);
  CHECK(ev.top1 == 0.25);
  CHECK(ev.top5 == -1.0);
}

TEST_CASE("evaluate enforces the top5 class-count rule") {
  auto ds = small_ds();
  auto bundle = psd::init_model({4, 8}, 4, 2, 7);
  CHECK_THROWS_AS(psd::evaluate(bundle, ds, "test", true), psd::ConfigError);
  CHECK_THROWS_AS(psd::evaluate(bundle, ds, "void", false), psd::ContractError);
}

TEST_CASE("evaluate top1 never exceeds top5") {
  psd::SyntheticSpec spec;
  spec.num_classes = 6;
  spec.image_size = 16;
  spec.patch_size = 4;
  spec.regions_per_image = 3;
  spec.train_per_class = 2;
  spec.test_per_class = 10;
  spec.seed = 8;
  auto ds = psd::gen_synthetic(spec);
  auto bundle = psd::init_model({4, 8}, 6, 2, 9);
  auto ev = psd::evaluate(bundle, ds, "test", true);
  CHECK(ev.top1 <= ev.top5);
  CHECK(ev.top1 >= 0.0);
  CHECK(ev.top5 <= 1.0);
}

TEST_CASE("evaluate touches only embedding and teacher parameters") {
  auto ds = small_ds();
  auto clean = psd::init_model({4, 8}, 4, 2, 11);
  auto poisoned = psd::init_model({4, 8}, 4, 2, 11);
  for (double& v : poisoned.student.w.mutable_data()) v = std::nan("");
  for (double& v : poisoned.student.b.mutable_data()) v = std::nan("");
  for (double& v : poisoned.crm.theta.mutable_data()) v = std::nan("");
  auto a = psd::evaluate(clean, ds, "test", false);
  auto b = psd::evaluate(poisoned, ds, "test", false);
  CHECK(a.top1 == b.top1);
}

TEST_CASE("region_recall is 1 at q=1 and monotone in q") {
  auto ds = small_ds();
  auto bundle = psd::init_model({4, 8}, 4, 2, 13);
  CHECK(psd::region_recall(bundle, ds, "test", 1.0) == 1.0);
  double prev = 0.0;
  for (double q : {0.1, 0.25, 0.5, 0.75, 1.0}) {
    const double r = psd::region_recall(bundle, ds, "test", q);
    CHECK(r >= prev);
    prev = r;
  }
}

TEST_CASE("region_recall needs region metadata and a valid q") {
  auto ds = small_ds();
  auto bundle = psd::init_model({4, 8}, 4, 2, 13);
  CHECK_THROWS_AS(psd::region_recall(bundle, ds, "test", 0.0), psd::ConfigError);
  auto stripped = ds;
  for (auto& s : stripped.samples) s.regions.clear();
  CHECK_THROWS_AS(psd::region_recall(bundle, stripped, "test", 0.25), psd::ContractError);
}

TEST_CASE("uniform random response maps recall about a quarter at q=0.25") {
  psd::Rng rng(17);
  int hit = 0, total = 0;
  while (total < 2000) {
    psd::ResponseMap map;
    map.h = 8;
    map.w = 8;
    map.values.resize(64);
    for (double& v : map.values) v = rng.uniform01();
    std::vector<psd::Region> regions;
    for (int k = 0; k < 4; ++k) {
      psd::Region r;
      r.h = 4;
      r.w = 4;
      r.r = static_cast<int>(rng.below(29));
      r.c = static_cast<int>(rng.below(29));
      regions.push_back(r);
    }
    auto [h, t] = psd::regions_recalled(map, regions, 32, 32, 0.25);
    hit += h;
    total += t;
  }
  const double recall = static_cast<double>(hit) / total;
  CHECK(recall > 0.20);
  CHECK(recall < 0.30);
}

TEST_CASE("train with zero epochs reports chance-level accuracy") {
  psd::SyntheticSpec spec;
  spec.num_classes = 10;
  spec.train_per_class = 2;
  spec.test_per_class = 50;
  spec.seed = 19;
  auto ds = psd::gen_synthetic(spec);

  TrainConfig c = small_config("psd");
  c.epochs = 0;
  auto res = psd::train(c, ds);
  CHECK(res.metrics.epochs.empty());
  CHECK(res.metrics.final_top1 == doctest::Approx(0.1).epsilon(0.5));
  CHECK(std::abs(res.metrics.final_top1 - 0.1) < 0.05);
  CHECK(res.metrics.final_top5 >= 0.0);
}

TEST_CASE("psd training records coherent per-epoch metrics") {
  auto ds = small_ds();
  TrainConfig c = small_config("psd");
  int hook_calls = 0;
  psd::RunHooks hooks;
  hooks.on_loss = [&](int epoch, int batch, const psd::TotalLoss& tl) {
    ++hook_calls;
    CHECK(epoch >= 0);
    CHECK(batch >= 0);
    CHECK(tl.chain.stages.size() == 3);  // m=2 with alpha>0
    CHECK(std::isfinite(tl.breakdown.total));
  };
  auto res = psd::train(c, ds, hooks);

  REQUIRE(res.metrics.epochs.size() == 2);
  CHECK(hook_calls == 2 * 5);  // 40 train samples / batch 8, twice
  for (int e = 0; e < 2; ++e) {
    const auto& row = res.metrics.epochs[static_cast<std::size_t>(e)];
    CHECK(row.epoch == e);
    CHECK(row.omega_d == psd::ramp_up(e, c.alpha, c.beta));
    CHECK(row.l_g > 0.0);
    CHECK(row.l_l > 0.0);
    CHECK(row.l_d >= 0.0);
    CHECK(row.train_top1 >= 0.0);
    CHECK(row.train_top1 <= 1.0);
    CHECK(row.test_top1 >= 0.0);
    CHECK(row.test_top1 <= 1.0);
    CHECK(row.test_top5 == -1.0);  // 4 classes
    CHECK(row.wall_time >= 0.0);
  }
  CHECK(res.metrics.region_recall >= 0.0);
  CHECK(res.metrics.region_recall <= 1.0);
}

TEST_CASE("training twice with one seed is bitwise reproducible") {
  auto ds = small_ds();
  TrainConfig c = small_config("psd");
  auto a = psd::train(c, ds);
  auto b = psd::train(c, ds);
  REQUIRE(a.metrics.epochs.size() == b.metrics.epochs.size());
  for (std::size_t i = 0; i < a.metrics.epochs.size(); ++i)
    CHECK(rows_equal_ignoring_time(a.metrics.epochs[i], b.metrics.epochs[i]));
  auto pa = psd::named_params(a.bundle);
  auto pb = psd::named_params(b.bundle);
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].second.data() == pb[i].second.data());
}

TEST_CASE("zero-weight psd and baseline produce identical runs") {
  auto ds = small_ds();
  TrainConfig psd_cfg = small_config("psd");
  psd_cfg.alpha = 0.0;
  psd_cfg.omega_l = 0.0;
  psd_cfg.epochs = 3;
  TrainConfig base_cfg = small_config("baseline");
  base_cfg.epochs = 3;

  auto a = psd::train(psd_cfg, ds);
  auto b = psd::train(base_cfg, ds);
  REQUIRE(a.metrics.epochs.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    INFO("epoch ", i);
    CHECK(rows_equal_ignoring_time(a.metrics.epochs[i], b.metrics.epochs[i]));
  }
  auto pa = psd::named_params(a.bundle);
  auto pb = psd::named_params(b.bundle);
  for (std::size_t i = 0; i < pa.size(); ++i) {
    INFO(pa[i].first);
    CHECK(pa[i].second.data() == pb[i].second.data());
  }
}

TEST_CASE("step-by-step activates one stage per epoch window") {
  auto ds = small_ds();
  TrainConfig c = small_config("psd_sbs");
  c.epochs = 4;
  psd::RunHooks hooks;
  hooks.on_loss = [&](int epoch, int, const psd::TotalLoss& tl) {
    if (epoch < 2) {
      CHECK(tl.chain.stages.size() == 2);
      CHECK(tl.breakdown.l_l[0] > 0.0);
      CHECK(tl.breakdown.l_l[1] == 0.0);
      CHECK(tl.breakdown.l_d[1] == 0.0);
    } else {
      CHECK(tl.chain.stages.size() == 3);
      CHECK(tl.breakdown.l_l[0] == 0.0);
      CHECK(tl.breakdown.l_l[1] > 0.0);
      CHECK(tl.breakdown.l_d[0] == 0.0);
    }
  };
  auto res = psd::train(c, ds, hooks);
  CHECK(res.metrics.epochs.size() == 4);
}

TEST_CASE("augmented baseline diverges from plain baseline but stays deterministic") {
  auto ds = small_ds();
  TrainConfig da = small_config("baseline_da");
  da.epochs = 1;
  da.da_pct = 0.2;
  da.da_block = 4;
  TrainConfig plain = small_config("baseline");
  plain.epochs = 1;

  auto a = psd::train(da, ds);
  auto b = psd::train(da, ds);
  auto c = psd::train(plain, ds);
  CHECK(a.metrics.epochs[0].l_g == b.metrics.epochs[0].l_g);
  CHECK(a.metrics.epochs[0].l_g != c.metrics.epochs[0].l_g);
}

TEST_CASE("head-shared training keeps the heads aliased") {
  auto ds = small_ds();
  TrainConfig c = small_config("psd_headshared");
  c.epochs = 1;
  auto res = psd::train(c, ds);
  CHECK(res.bundle.student.w.impl() == res.bundle.teacher.w.impl());
  CHECK(res.bundle.share_heads);
}

TEST_CASE("exploding training aborts with a numeric diagnostic") {
  auto ds = small_ds();
  TrainConfig c = small_config("psd");
  c.lr = 1e6;
  c.epochs = 5;
  try {
    psd::train(c, ds);
    FAIL("expected NumericError");
  } catch (const psd::NumericError& e) {
    CHECK(e.epoch() >= 0);
    CHECK(e.batch() >= 0);
  }
}

TEST_CASE("train writes metrics, checkpoint, and nothing else") {
  namespace fs = std::filesystem;
  const std::string dir = "trainer_tmp_out";
  fs::remove_all(dir);
  auto ds = small_ds();
  TrainConfig c = small_config("psd");
  c.out_dir = dir;
  auto res = psd::train(c, ds);

  std::ifstream metrics(dir + "/metrics.csv");
  REQUIRE(metrics.good());
  std::string line;
  std::getline(metrics, line);
  CHECK(line == psd::metrics_csv_header());
  int rows = 0;
  while (std::getline(metrics, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 2);

  auto loaded = psd::load_checkpoint(dir + "/model.psdm");
  auto pa = psd::named_params(res.bundle);
  auto pb = psd::named_params(loaded);
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].second.data() == pb[i].second.data());

  int entries = 0;
  for (const auto& entry : fs::directory_iterator(dir)) {
    (void)entry;
    ++entries;
  }
  CHECK(entries == 2);
  fs::remove_all(dir);
}

TEST_CASE("masked_curve starts at the clean accuracy with one row per pct") {
  auto ds = small_ds();
  TrainConfig c = small_config("psd");
  c.epochs = 1;
  auto res = psd::train(c, ds);

  auto rows = psd::masked_curve(res.bundle, ds, {0.0, 0.1, 0.2, 0.3, 0.4}, 4, 23);
  REQUIRE(rows.size() == 5);
  auto clean = psd::evaluate(res.bundle, ds, "test", false);
  CHECK(rows[0].pct == 0.0);
  CHECK(rows[0].top1 == clean.top1);
  for (const auto& row : rows) {
    CHECK(row.top1 >= 0.0);
    CHECK(row.top1 <= 1.0);
  }
  CHECK_THROWS_AS(psd::masked_curve(res.bundle, ds, {1.5}, 4, 23), psd::ConfigError);
}

TEST_CASE("ablation_suite emits the full grid with summary rows") {
  namespace fs = std::filesystem;
  const std::string csv = "ablation_tmp.csv";
  fs::remove(csv);
  auto ds = small_ds();
  TrainConfig base = small_config("psd");
  base.epochs = 1;

  auto rows = psd::ablation_suite(base, ds, {1, 2}, csv);
  // 8 configs x 2 seeds, plus mean and std per config.
  REQUIRE(rows.size() == 16 + 16);
  int mean_rows = 0, run_rows = 0;
  for (const auto& r : rows) {
    if (r.seed == "mean" || r.seed == "std")
      ++mean_rows;
    else
      ++run_rows;
    CHECK(r.top1 >= 0.0);
    CHECK(r.top1 <= 1.0);
  }
  CHECK(run_rows == 16);
  CHECK(mean_rows == 16);

  std::ifstream in(csv);
  REQUIRE(in.good());
  std::string line;
  std::getline(in, line);
  CHECK(line == "config,seed,top1,top5,region_recall");
  int csv_rows = 0;
  bool saw_da = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++csv_rows;
    if (line.rfind("baseline_da_pct10,", 0) == 0) saw_da = true;
  }
  CHECK(csv_rows == 32);
  CHECK(saw_da);
  fs::remove(csv);
}

TEST_CASE("ablation_suite requires at least one seed") {
  auto ds = small_ds();
  TrainConfig base = small_config("psd");
  CHECK_THROWS_AS(psd::ablation_suite(base, ds, {}, ""), psd::ConfigError);
}
