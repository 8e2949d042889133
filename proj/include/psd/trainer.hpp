#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "psd/data.hpp"
#include "psd/distill.hpp"
#include "psd/masking.hpp"
#include "psd/model.hpp"

namespace psd {

// One training run. mode selects the objective: "baseline" is plain
// cross-entropy, "baseline_da" adds random block masking as augmentation,
// "psd" the full progressive objective, "psd_sbs" its step-by-step variant
// (one stage active per equal epoch window), "psd_headshared" ties the
// student head to the teacher head.
struct TrainConfig {
  std::string mode = "psd";
  int m = 2;
  double eta = 0.05;
  double alpha = 1.0;
  int beta = 5;
  double omega_l = 1.0;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int epochs = 20;
  int batch_size = 32;
  std::uint64_t seed = 1;
  int tap_index = 3;
  std::vector<int> widths = {8, 16, 32, 32};
  double da_pct = 0.05;
  int da_block = 8;
  std::string dataset;
  std::string out_dir;
};

void validate_config(const TrainConfig& config);

struct EpochRow {
  int epoch = 0;
  double l_g = 0.0;
  double l_l = 0.0;  // mean over batches and stages
  double l_d = 0.0;
  double omega_d = 0.0;
  double train_top1 = 0.0;
  double test_top1 = 0.0;
  double test_top5 = -1.0;  // -1 when the dataset has fewer than 5 classes
  double wall_time = 0.0;
};

struct MaskedCurveRow {
  double pct = 0.0;
  double top1 = 0.0;
  double top5 = -1.0;
};

struct RunMetrics {
  std::vector<EpochRow> epochs;
  double final_top1 = 0.0;
  double final_top5 = -1.0;
  double region_recall = 0.0;  // test split, q = 0.25
  std::vector<MaskedCurveRow> masked_curve;
};

struct EvalResult {
  double top1 = 0.0;
  double top5 = -1.0;
};

// Callbacks into a running training loop; on_loss fires once per optimizer
// step on the psd modes, before backpropagation.
struct RunHooks {
  std::function<void(int epoch, int batch_index, const TotalLoss&)> on_loss;
};

struct TrainResult {
  ModelBundle bundle;
  RunMetrics metrics;
};

TrainResult train(const TrainConfig& config, const Dataset& dataset, const RunHooks& hooks = {});
// Loads config.dataset from disk first.
TrainResult train(const TrainConfig& config, const RunHooks& hooks = {});

EvalResult evaluate(const ModelBundle& bundle, const Dataset& dataset, const std::string& split,
                    bool with_top5);

// Fraction of planted regions whose center pixel falls inside the upsampled
// top-q cell set of the true-class response map.
double region_recall(const ModelBundle& bundle, const Dataset& dataset, const std::string& split,
                     double q);
// Recall bookkeeping for one map: (regions hit, regions total).
std::pair<int, int> regions_recalled(const ResponseMap& map, const std::vector<Region>& regions,
                                     std::int64_t img_h, std::int64_t img_w, double q);

std::vector<MaskedCurveRow> masked_curve(const ModelBundle& bundle, const Dataset& dataset,
                                         const std::vector<double>& pct_grid, std::int64_t block,
                                         std::uint64_t seed);

struct AblationRow {
  std::string config;
  std::string seed;  // a number, or "mean"/"std" for the summary rows
  double top1 = 0.0;
  double top5 = -1.0;
  double region_recall = 0.0;
};

// Runs baseline, psd m in {1,2,3}, psd_sbs, psd_headshared, and baseline_da
// at pct in {0.05, 0.10} for every seed; appends each row to csv_path as soon
// as its run finishes, then the per-config mean/std summary rows.
std::vector<AblationRow> ablation_suite(const TrainConfig& base, const Dataset& dataset,
                                        const std::vector<std::uint64_t>& seeds,
                                        const std::string& csv_path);

std::string metrics_csv_header();
std::string epoch_row_csv(const EpochRow& row);

}  // namespace psd
