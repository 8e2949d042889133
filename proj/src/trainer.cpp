#include "psd/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "psd/errors.hpp"
#include "psd/rng.hpp"

namespace psd {
namespace {

const std::set<std::string>& known_modes() {
  static const std::set<std::string> modes{"baseline", "psd", "psd_sbs", "psd_headshared",
                                           "baseline_da"};
  return modes;
}

bool is_psd_mode(const std::string& mode) {
  return mode == "psd" || mode == "psd_sbs" || mode == "psd_headshared";
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Number of classes ranked strictly above the label, counting equal values at
// lower indices as above (so ranking is total and deterministic).
int label_rank(const double* row, int C, int label) {
  int rank = 0;
  for (int j = 0; j < C; ++j) {
    if (row[j] > row[label]) ++rank;
    if (j < label && row[j] == row[label]) ++rank;
  }
  return rank;
}

std::int64_t count_top1(const Tensor& logits, const std::vector<int>& labels) {
  const int C = static_cast<int>(logits.dim(1));
  std::int64_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    hits += label_rank(logits.data().data() + static_cast<std::int64_t>(i) * C, C, labels[i]) == 0;
  return hits;
}

double vec_mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

int sbs_stage(int epoch, int epochs, int m) {
  if (epochs <= 0) return 1;
  const int stage =
      static_cast<int>(static_cast<std::int64_t>(epoch) * m / epochs) + 1;
  return std::min(stage, m);
}

std::vector<MaskedImage> gather_batch(const Dataset& ds, const std::vector<std::size_t>& order,
                                      std::size_t start, std::size_t end,
                                      const TrainConfig& config, int epoch,
                                      std::vector<int>& labels) {
  const std::int64_t side = ds.spec.image_size;
  std::vector<MaskedImage> batch;
  labels.clear();
  for (std::size_t i = start; i < end; ++i) {
    const Sample& s = ds.samples[order[i]];
    std::vector<double> px = s.pixels;
    if (config.mode == "baseline_da" && config.da_pct > 0.0)
      px = random_mask_augment(px, side, side, config.da_pct, config.da_block,
                               derive_seed(config.seed, 4, static_cast<std::uint64_t>(epoch),
                                           static_cast<std::uint64_t>(order[i])));
    batch.push_back(make_unmasked(std::move(px), side, side));
    labels.push_back(s.label);
  }
  return batch;
}

Tensor stack_samples(const Dataset& ds, const std::vector<std::size_t>& idx, std::size_t start,
                     std::size_t end) {
  const std::int64_t side = ds.spec.image_size;
  const std::int64_t n = static_cast<std::int64_t>(end - start);
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(n * 3 * side * side));
  for (std::size_t i = start; i < end; ++i) {
    const auto& px = ds.samples[idx[i]].pixels;
    data.insert(data.end(), px.begin(), px.end());
  }
  return Tensor::from_data({n, 3, side, side}, std::move(data));
}

void require_range(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

}  // namespace

void validate_config(const TrainConfig& config) {
  if (!known_modes().count(config.mode))
    throw ConfigError("unknown mode \"" + config.mode +
                      "\" (expected baseline, psd, psd_sbs, psd_headshared, or baseline_da)");
  if (is_psd_mode(config.mode))
    require_range(config.m >= 1, "m must be >= 1 for psd modes, got " + std::to_string(config.m));
  require_range(config.eta > 0.0 && config.eta <= 1.0,
                "eta must lie in (0, 1], got " + fmt(config.eta));
  require_range(config.alpha >= 0.0, "alpha must be >= 0, got " + fmt(config.alpha));
  require_range(config.beta >= 0, "beta must be >= 0, got " + std::to_string(config.beta));
  require_range(config.omega_l >= 0.0, "omega_l must be >= 0, got " + fmt(config.omega_l));
  require_range(config.lr >= 0.0, "lr must be >= 0, got " + fmt(config.lr));
  require_range(config.momentum >= 0.0 && config.momentum < 1.0,
                "momentum must lie in [0, 1), got " + fmt(config.momentum));
  require_range(config.weight_decay >= 0.0,
                "weight_decay must be >= 0, got " + fmt(config.weight_decay));
  require_range(config.epochs >= 0, "epochs must be >= 0, got " + std::to_string(config.epochs));
  require_range(config.batch_size >= 1,
                "batch_size must be >= 1, got " + std::to_string(config.batch_size));
  require_range(!config.widths.empty(), "widths must be non-empty");
  for (int w : config.widths)
    require_range(w >= 1, "widths entries must be >= 1, got " + std::to_string(w));
  require_range(config.tap_index >= 1 &&
                    config.tap_index <= static_cast<int>(config.widths.size()),
                "tap_index must lie in [1, " + std::to_string(config.widths.size()) + "], got " +
                    std::to_string(config.tap_index));
  require_range(config.da_pct >= 0.0 && config.da_pct <= 1.0,
                "da_pct must lie in [0, 1], got " + fmt(config.da_pct));
  require_range(config.da_block >= 1,
                "da_block must be >= 1, got " + std::to_string(config.da_block));
}

EvalResult evaluate(const ModelBundle& bundle, const Dataset& dataset, const std::string& split,
                    bool with_top5) {
  if (with_top5 && bundle.num_classes < 5)
    throw ConfigError("evaluate: top5 requested but the model has only " +
                      std::to_string(bundle.num_classes) + " classes");
  auto idx = split_indices(dataset, split);
  if (idx.empty()) throw ContractError("evaluate: split \"" + split + "\" is empty");

  NoGradGuard ng;
  const int C = bundle.num_classes;
  std::int64_t top1_hits = 0, top5_hits = 0;
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < idx.size(); start += kChunk) {
    const std::size_t end = std::min(start + kChunk, idx.size());
    Tensor x = stack_samples(dataset, idx, start, end);
    EmbedOut out = forward_embed(bundle, x);
    Tensor logits = forward_head(out.final, bundle.teacher);
    for (std::size_t i = start; i < end; ++i) {
      const double* row = logits.data().data() + static_cast<std::int64_t>(i - start) * C;
      const int rank = label_rank(row, C, dataset.samples[idx[i]].label);
      top1_hits += rank < 1;
      top5_hits += rank < 5;
    }
  }

  EvalResult result;
  const double n = static_cast<double>(idx.size());
  result.top1 = static_cast<double>(top1_hits) / n;
  result.top5 = with_top5 ? static_cast<double>(top5_hits) / n : -1.0;
  return result;
}

std::pair<int, int> regions_recalled(const ResponseMap& map, const std::vector<Region>& regions,
                                     std::int64_t img_h, std::int64_t img_w, double q) {
  MaskGrid grid = locate(map, q);
  const auto mask = upsample_mask(grid, img_h, img_w);
  int hit = 0;
  for (const auto& r : regions) {
    const std::int64_t center = (r.r + r.h / 2) * img_w + (r.c + r.w / 2);
    hit += mask[static_cast<std::size_t>(center)] == 1;
  }
  return {hit, static_cast<int>(regions.size())};
}

double region_recall(const ModelBundle& bundle, const Dataset& dataset, const std::string& split,
                     double q) {
  auto idx = split_indices(dataset, split);
  if (idx.empty()) throw ContractError("region_recall: split \"" + split + "\" is empty");

  NoGradGuard ng;
  const std::int64_t side = dataset.spec.image_size;
  std::int64_t hit = 0, total = 0;
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < idx.size(); start += kChunk) {
    const std::size_t end = std::min(start + kChunk, idx.size());
    Tensor x = stack_samples(dataset, idx, start, end);
    EmbedOut out = forward_embed(bundle, x);
    for (std::size_t i = start; i < end; ++i) {
      const Sample& s = dataset.samples[idx[i]];
      if (s.regions.empty())
        throw ContractError("region_recall: sample " + std::to_string(idx[i]) +
                            " has no region metadata");
      ResponseMap map =
          compute_crm(out.tap, static_cast<std::int64_t>(i - start), bundle.crm, s.label);
      auto [h, t] = regions_recalled(map, s.regions, side, side, q);
      hit += h;
      total += t;
    }
  }
  return static_cast<double>(hit) / static_cast<double>(total);
}

std::vector<MaskedCurveRow> masked_curve(const ModelBundle& bundle, const Dataset& dataset,
                                         const std::vector<double>& pct_grid, std::int64_t block,
                                         std::uint64_t seed) {
  std::vector<MaskedCurveRow> rows;
  for (double pct : pct_grid) {
    if (pct < 0.0 || pct > 1.0)
      throw ConfigError("masked_curve: pct must lie in [0, 1], got " + fmt(pct));
    Dataset masked = build_masked_testset(dataset, pct, block, seed);
    EvalResult ev = evaluate(bundle, masked, "test", bundle.num_classes >= 5);
    rows.push_back({pct, ev.top1, ev.top5});
  }
  return rows;
}

std::string metrics_csv_header() {
  return "epoch,l_g,l_l,l_d,omega_d,train_top1,test_top1,test_top5,wall_time";
}

std::string epoch_row_csv(const EpochRow& row) {
  std::string top5 = row.test_top5 < 0.0 ? std::string() : fmt(row.test_top5);
  return std::to_string(row.epoch) + "," + fmt(row.l_g) + "," + fmt(row.l_l) + "," +
         fmt(row.l_d) + "," + fmt(row.omega_d) + "," + fmt(row.train_top1) + "," +
         fmt(row.test_top1) + "," + top5 + "," + fmt(row.wall_time);
}

TrainResult train(const TrainConfig& config, const Dataset& dataset, const RunHooks& hooks) {
  validate_config(config);
  const int C = dataset.spec.num_classes;
  const bool psd_mode = is_psd_mode(config.mode);
  const bool with_top5 = C >= 5;

  TrainResult result;
  result.bundle = init_model(config.widths, C, config.tap_index, config.seed,
                             config.mode == "psd_headshared");
  Sgd opt(config.lr, config.momentum, config.weight_decay);
  Schedule sched;
  sched.alpha = config.alpha;
  sched.beta = config.beta;
  sched.omega_l = config.omega_l;

  auto train_idx = split_indices(dataset, "train");
  if (config.epochs > 0 && train_idx.empty())
    throw ContractError("train: train split is empty");

  std::ofstream metrics_out;
  if (!config.out_dir.empty()) {
    std::filesystem::create_directories(config.out_dir);
    metrics_out.open(config.out_dir + "/metrics.csv", std::ios::trunc);
    metrics_out << metrics_csv_header() << "\n" << std::flush;
  }

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    auto order = train_idx;
    Rng shuffle_rng(derive_seed(config.seed, 10, static_cast<std::uint64_t>(epoch)));
    shuffle_in_place(order, shuffle_rng);

    const int active_stage =
        config.mode == "psd_sbs" ? sbs_stage(epoch, config.epochs, config.m) : 0;
    double lg_sum = 0.0, ll_sum = 0.0, ld_sum = 0.0;
    std::int64_t seen = 0, correct = 0;

    int batch_index = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size), ++batch_index) {
      const std::size_t end =
          std::min(start + static_cast<std::size_t>(config.batch_size), order.size());
      std::vector<int> labels;
      auto batch = gather_batch(dataset, order, start, end, config, epoch, labels);
      const auto bsz = static_cast<double>(labels.size());

      if (psd_mode) {
        auto inspect = [&](const TotalLoss& tl) {
          if (hooks.on_loss) hooks.on_loss(epoch, batch_index, tl);
          NoGradGuard ng;
          Tensor logits =
              forward_head(tl.chain.stages[0].embed.final, result.bundle.teacher);
          correct += count_top1(logits, labels);
        };
        LossBreakdown bd =
            train_step(result.bundle, opt, batch, labels, config.m, config.eta, sched, epoch,
                       batch_index, active_stage, kZeroFill, inspect);
        lg_sum += bd.l_g * bsz;
        ll_sum += vec_mean(bd.l_l) * bsz;
        ld_sum += vec_mean(bd.l_d) * bsz;
      } else {
        auto params = named_params(result.bundle);
        for (auto& [name, t] : params) t.zero_grad();
        EmbedOut out = forward_embed(result.bundle, batch_tensor(batch));
        Tensor logits = forward_head(out.final, result.bundle.teacher);
        Tensor loss = cross_entropy(logits, labels);
        if (!std::isfinite(loss.item())) {
          detail::clear_tape();
          throw NumericError("train: non-finite loss " + std::to_string(loss.item()), epoch,
                             batch_index);
        }
        correct += count_top1(logits, labels);
        backward(loss);
        for (auto& [name, t] : params) {
          if (name.rfind("head_s.", 0) == 0 || name.rfind("crm.", 0) == 0) continue;
          opt.step(name, t);
        }
        lg_sum += loss.item() * bsz;
      }
      seen += static_cast<std::int64_t>(labels.size());
    }

    EvalResult ev = evaluate(result.bundle, dataset, "test", with_top5);
    EpochRow row;
    row.epoch = epoch;
    row.l_g = lg_sum / static_cast<double>(seen);
    row.l_l = ll_sum / static_cast<double>(seen);
    row.l_d = ld_sum / static_cast<double>(seen);
    row.omega_d = psd_mode ? ramp_up(epoch, config.alpha, config.beta) : 0.0;
    row.train_top1 = static_cast<double>(correct) / static_cast<double>(seen);
    row.test_top1 = ev.top1;
    row.test_top5 = ev.top5;
    row.wall_time =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
    result.metrics.epochs.push_back(row);
    if (metrics_out.is_open()) metrics_out << epoch_row_csv(row) << "\n" << std::flush;
  }

  EvalResult final_ev = evaluate(result.bundle, dataset, "test", with_top5);
  result.metrics.final_top1 = final_ev.top1;
  result.metrics.final_top5 = final_ev.top5;
  result.metrics.region_recall = region_recall(result.bundle, dataset, "test", 0.25);

  if (!config.out_dir.empty())
    save_checkpoint(result.bundle, config.out_dir + "/model.psdm");
  return result;
}

TrainResult train(const TrainConfig& config, const RunHooks& hooks) {
  if (config.dataset.empty()) throw ConfigError("train: no dataset path configured");
  Dataset ds = load_packed(config.dataset);
  return train(config, ds, hooks);
}

std::vector<AblationRow> ablation_suite(const TrainConfig& base, const Dataset& dataset,
                                        const std::vector<std::uint64_t>& seeds,
                                        const std::string& csv_path) {
  if (seeds.empty()) throw ConfigError("ablation_suite: need at least one seed");

  struct Variant {
    std::string name;
    void (*tweak)(TrainConfig&);
  };
  const std::vector<Variant> variants{
      {"baseline", [](TrainConfig& c) { c.mode = "baseline"; }},
      {"psd_m1",
       [](TrainConfig& c) {
         c.mode = "psd";
         c.m = 1;
       }},
      {"psd_m2",
       [](TrainConfig& c) {
         c.mode = "psd";
         c.m = 2;
       }},
      {"psd_m3",
       [](TrainConfig& c) {
         c.mode = "psd";
         c.m = 3;
       }},
      {"psd_sbs", [](TrainConfig& c) { c.mode = "psd_sbs"; }},
      {"psd_headshared", [](TrainConfig& c) { c.mode = "psd_headshared"; }},
      {"baseline_da_pct05",
       [](TrainConfig& c) {
         c.mode = "baseline_da";
         c.da_pct = 0.05;
       }},
      {"baseline_da_pct10",
       [](TrainConfig& c) {
         c.mode = "baseline_da";
         c.da_pct = 0.10;
       }},
  };

  auto append_row = [&](const AblationRow& row) {
    if (csv_path.empty()) return;
    std::ofstream out(csv_path, std::ios::app);
    out << row.config << "," << row.seed << "," << fmt(row.top1) << ","
        << (row.top5 < 0.0 ? std::string() : fmt(row.top5)) << "," << fmt(row.region_recall)
        << "\n";
  };
  if (!csv_path.empty()) {
    std::ofstream out(csv_path, std::ios::trunc);
    out << "config,seed,top1,top5,region_recall\n";
  }

  std::vector<AblationRow> rows;
  for (const auto& variant : variants) {
    for (std::uint64_t seed : seeds) {
      TrainConfig c = base;
      variant.tweak(c);
      c.seed = seed;
      c.out_dir.clear();
      TrainResult res = train(c, dataset);
      AblationRow row{variant.name, std::to_string(seed), res.metrics.final_top1,
                      res.metrics.final_top5, res.metrics.region_recall};
      rows.push_back(row);
      append_row(row);
    }
  }

  for (const auto& variant : variants) {
    std::vector<const AblationRow*> own;
    for (const auto& r : rows)
      if (r.config == variant.name && r.seed != "mean" && r.seed != "std") own.push_back(&r);
    const double n = static_cast<double>(own.size());
    AblationRow mean{variant.name, "mean", 0.0, 0.0, 0.0};
    for (const auto* r : own) {
      mean.top1 += r->top1 / n;
      mean.top5 += r->top5 / n;
      mean.region_recall += r->region_recall / n;
    }
    AblationRow stddev{variant.name, "std", 0.0, 0.0, 0.0};
    for (const auto* r : own) {
      stddev.top1 += (r->top1 - mean.top1) * (r->top1 - mean.top1) / n;
      stddev.top5 += (r->top5 - mean.top5) * (r->top5 - mean.top5) / n;
      stddev.region_recall +=
          (r->region_recall - mean.region_recall) * (r->region_recall - mean.region_recall) / n;
    }
    stddev.top1 = std::sqrt(stddev.top1);
    stddev.top5 = std::sqrt(stddev.top5);
    stddev.region_recall = std::sqrt(stddev.region_recall);
    rows.push_back(mean);
    rows.push_back(stddev);
    append_row(mean);
    append_row(stddev);
  }
  return rows;
}

}  // namespace psd
