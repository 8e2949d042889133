#include "psd/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "psd/errors.hpp"
#include "psd/masking.hpp"
#include "psd/model.hpp"

namespace psd {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file \"" + path + "\"");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

json parse_object(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");
  // A run record carries the original config under "config"; unwrap it so a
  // run.json reproduces its run directly.
  if (j.contains("config") && j.at("config").is_object()) j = j.at("config");
  return j;
}

void apply_overrides(json& j, const std::vector<std::string>& overrides) {
  for (const auto& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError("override \"" + ov + "\" is not of the form key=value");
    const std::string key = ov.substr(0, eq);
    const std::string value = ov.substr(eq + 1);
    json parsed;
    try {
      parsed = json::parse(value);
    } catch (const json::exception&) {
      parsed = value;  // bare words are strings
    }
    j[key] = parsed;
  }
}

void reject_unknown(const json& j, const std::set<std::string>& known) {
  for (const auto& item : j.items())
    if (!known.count(item.key())) throw ConfigError("unknown config key \"" + item.key() + "\"");
}

double get_num(const json& j, const char* key, double fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number()) throw ConfigError("config key \"" + std::string(key) +
                                                "\" must be a number");
  return j.at(key).get<double>();
}

int get_int(const json& j, const char* key, int fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number_integer())
    throw ConfigError("config key \"" + std::string(key) + "\" must be an integer");
  return j.at(key).get<int>();
}

std::uint64_t get_u64(const json& j, const char* key, std::uint64_t fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() &&
                                 v.get<std::int64_t>() < 0))
    throw ConfigError("config key \"" + std::string(key) + "\" must be a nonnegative integer");
  return v.get<std::uint64_t>();
}

std::string get_str(const json& j, const char* key, const std::string& fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_string())
    throw ConfigError("config key \"" + std::string(key) + "\" must be a string");
  return j.at(key).get<std::string>();
}

std::vector<int> get_int_array(const json& j, const char* key, std::vector<int> fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_array()) throw ConfigError("config key \"" + std::string(key) +
                                       "\" must be an array of integers");
  std::vector<int> out;
  for (const auto& el : v) {
    if (!el.is_number_integer())
      throw ConfigError("config key \"" + std::string(key) + "\" must be an array of integers");
    out.push_back(el.get<int>());
  }
  return out;
}

json config_to_json(const TrainConfig& c) {
  return json{{"mode", c.mode},
              {"m", c.m},
              {"eta", c.eta},
              {"alpha", c.alpha},
              {"beta", c.beta},
              {"omega_l", c.omega_l},
              {"lr", c.lr},
              {"momentum", c.momentum},
              {"weight_decay", c.weight_decay},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"seed", c.seed},
              {"tap_index", c.tap_index},
              {"widths", c.widths},
              {"da_pct", c.da_pct},
              {"da_block", c.da_block},
              {"dataset", c.dataset},
              {"out_dir", c.out_dir}};
}

json spec_to_json(const SyntheticSpec& s) {
  return json{{"num_classes", s.num_classes},
              {"image_size", s.image_size},
              {"regions_per_image", s.regions_per_image},
              {"patch_size", s.patch_size},
              {"train_per_class", s.train_per_class},
              {"test_per_class", s.test_per_class},
              {"noise_std", s.noise_std},
              {"seed", s.seed}};
}

// PSD_OUT wins over everything; otherwise the configured directory, with a
// final fallback of ./out.
std::string resolve_out(const std::string& configured) {
  const char* env = std::getenv("PSD_OUT");
  if (env != nullptr && *env != '\0') return env;
  if (!configured.empty()) return configured;
  return "out";
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ContractError("cannot open " + path + " for writing");
  out << j.dump(2) << "\n";
}

struct CliOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string model_path;
  std::string data_path;
  std::string out_dir;
  std::string split = "test";
  bool force_top5 = false;
  std::vector<double> grid{0.0, 0.1, 0.2, 0.3, 0.4};
  std::int64_t block = 8;
  std::uint64_t mask_seed = 1;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  int count = 8;
  double eta = 0.05;
};

int do_gen_data(const CliOptions& opt) {
  const std::string text = opt.config_path.empty() ? "{}" : read_file(opt.config_path);
  SyntheticSpec spec = parse_spec_config(text, opt.overrides);
  const std::string out = resolve_out(opt.out_dir);
  Dataset ds = gen_synthetic(spec);
  fs::create_directories(out);
  save_packed(ds, out + "/dataset.psdd");
  write_json_file(out + "/gen.json", json{{"command", "gen-data"},
                                          {"version", kVersion},
                                          {"config", spec_to_json(spec)},
                                          {"dataset", "dataset.psdd"}});
  std::cout << "wrote " << ds.samples.size() << " samples (" << spec.num_classes << " classes) to "
            << out << "/dataset.psdd\n";
  return 0;
}

int do_train(const CliOptions& opt) {
  const std::string text = opt.config_path.empty() ? "{}" : read_file(opt.config_path);
  TrainConfig cfg = parse_train_config(text, opt.overrides);
  cfg.out_dir = resolve_out(cfg.out_dir);
  if (cfg.dataset.empty())
    throw ConfigError("config key \"dataset\" is required for train (path to a .psdd file)");

  TrainResult res = train(cfg);
  json run{{"command", "train"},
           {"version", kVersion},
           {"config", config_to_json(cfg)},
           {"metrics",
            json{{"final_top1", res.metrics.final_top1},
                 {"final_top5", res.metrics.final_top5 < 0.0
                                    ? json(nullptr)
                                    : json(res.metrics.final_top5)},
                 {"region_recall", res.metrics.region_recall},
                 {"epochs", res.metrics.epochs.size()}}}};
  write_json_file(cfg.out_dir + "/run.json", run);
  std::cout << "mode " << cfg.mode << ": test top1 " << res.metrics.final_top1;
  if (res.metrics.final_top5 >= 0.0) std::cout << ", top5 " << res.metrics.final_top5;
  std::cout << ", region recall " << res.metrics.region_recall << "\n";
  std::cout << "artifacts in " << cfg.out_dir << "\n";
  return 0;
}

int do_eval(const CliOptions& opt) {
  ModelBundle bundle = load_checkpoint(opt.model_path);
  Dataset ds = load_packed(opt.data_path);
  const bool want5 = opt.force_top5 || bundle.num_classes >= 5;
  EvalResult ev = evaluate(bundle, ds, opt.split, want5);
  std::cout << "top1 " << ev.top1 << "\n";
  if (ev.top5 >= 0.0) std::cout << "top5 " << ev.top5 << "\n";
  return 0;
}

int do_masked_curve(const CliOptions& opt) {
  ModelBundle bundle = load_checkpoint(opt.model_path);
  Dataset ds = load_packed(opt.data_path);
  auto rows = masked_curve(bundle, ds, opt.grid, opt.block, opt.mask_seed);
  const std::string out = resolve_out(opt.out_dir);
  fs::create_directories(out);
  std::ofstream csv(out + "/masked_curve.csv", std::ios::trunc);
  csv << "pct,top1,top5\n";
  for (const auto& row : rows) {
    csv << row.pct << "," << row.top1 << ","
        << (row.top5 < 0.0 ? std::string() : std::to_string(row.top5)) << "\n";
    std::cout << "pct " << row.pct << ": top1 " << row.top1 << "\n";
  }
  std::cout << "curve written to " << out << "/masked_curve.csv\n";
  return 0;
}

int do_ablate(const CliOptions& opt) {
  const std::string text = opt.config_path.empty() ? "{}" : read_file(opt.config_path);
  TrainConfig cfg = parse_train_config(text, opt.overrides);
  if (cfg.dataset.empty())
    throw ConfigError("config key \"dataset\" is required for ablate (path to a .psdd file)");
  Dataset ds = load_packed(cfg.dataset);
  const std::string out = resolve_out(cfg.out_dir.empty() ? opt.out_dir : cfg.out_dir);
  fs::create_directories(out);
  auto rows = ablation_suite(cfg, ds, opt.seeds, out + "/ablation.csv");
  write_json_file(out + "/ablate.json", json{{"command", "ablate"},
                                             {"version", kVersion},
                                             {"config", config_to_json(cfg)},
                                             {"seeds", opt.seeds},
                                             {"rows", rows.size()}});
  std::cout << "ablation grid complete: " << rows.size() << " rows in " << out
            << "/ablation.csv\n";
  return 0;
}

int do_export_crm(const CliOptions& opt) {
  ModelBundle bundle = load_checkpoint(opt.model_path);
  Dataset ds = load_packed(opt.data_path);
  if (opt.count < 1) throw ConfigError("count must be >= 1, got " + std::to_string(opt.count));
  auto idx = split_indices(ds, opt.split);
  if (static_cast<std::size_t>(opt.count) > idx.size())
    throw ConfigError("count " + std::to_string(opt.count) + " exceeds the " +
                      std::to_string(idx.size()) + " samples in split \"" + opt.split + "\"");

  const std::string out = resolve_out(opt.out_dir);
  fs::create_directories(out);
  const std::int64_t side = ds.spec.image_size;

  NoGradGuard ng;
  for (int i = 0; i < opt.count; ++i) {
    const Sample& s = ds.samples[idx[static_cast<std::size_t>(i)]];
    MaskedImage img = make_unmasked(s.pixels, side, side);
    EmbedOut fwd = forward_embed(bundle, batch_tensor({img}));
    ResponseMap map = compute_crm(fwd.tap, 0, bundle.crm, s.label);
    MaskGrid grid = locate(map, opt.eta, s.label);
    auto pixel_mask = upsample_mask(grid, side, side);

    const auto id = static_cast<std::int64_t>(idx[static_cast<std::size_t>(i)]);
    write_pgm(out + "/" + export_name(opt.split, id, 0, "image"), image_to_bytes(img), side,
              side);
    write_pgm(out + "/" + export_name(opt.split, id, 0, "crm"), crm_to_bytes(map), map.h, map.w);
    write_pgm(out + "/" + export_name(opt.split, id, 0, "mask"), mask_to_bytes(pixel_mask), side,
              side);
  }
  std::cout << "wrote " << opt.count << " CRM triplets to " << out << "\n";
  return 0;
}

}  // namespace

TrainConfig parse_train_config(const std::string& text,
                               const std::vector<std::string>& overrides) {
  json j = parse_object(text);
  apply_overrides(j, overrides);
  static const std::set<std::string> known{
      "mode",       "m",          "eta",       "alpha",     "beta",    "omega_l",
      "lr",         "momentum",   "weight_decay", "epochs", "batch_size", "seed",
      "tap_index",  "widths",     "da_pct",    "da_block",  "dataset", "out_dir"};
  reject_unknown(j, known);

  TrainConfig c;
  c.mode = get_str(j, "mode", c.mode);
  c.m = get_int(j, "m", c.m);
  c.eta = get_num(j, "eta", c.eta);
  c.alpha = get_num(j, "alpha", c.alpha);
  c.beta = get_int(j, "beta", c.beta);
  c.omega_l = get_num(j, "omega_l", c.omega_l);
  c.lr = get_num(j, "lr", c.lr);
  c.momentum = get_num(j, "momentum", c.momentum);
  c.weight_decay = get_num(j, "weight_decay", c.weight_decay);
  c.epochs = get_int(j, "epochs", c.epochs);
  c.batch_size = get_int(j, "batch_size", c.batch_size);
  c.seed = get_u64(j, "seed", c.seed);
  c.tap_index = get_int(j, "tap_index", c.tap_index);
  c.widths = get_int_array(j, "widths", c.widths);
  c.da_pct = get_num(j, "da_pct", c.da_pct);
  c.da_block = get_int(j, "da_block", c.da_block);
  c.dataset = get_str(j, "dataset", c.dataset);
  c.out_dir = get_str(j, "out_dir", c.out_dir);
  validate_config(c);
  return c;
}

SyntheticSpec parse_spec_config(const std::string& text,
                                const std::vector<std::string>& overrides) {
  json j = parse_object(text);
  apply_overrides(j, overrides);
  static const std::set<std::string> known{"num_classes",     "image_size", "regions_per_image",
                                           "patch_size",      "train_per_class",
                                           "test_per_class",  "noise_std",  "seed"};
  reject_unknown(j, known);

  SyntheticSpec s;
  s.num_classes = get_int(j, "num_classes", s.num_classes);
  s.image_size = get_int(j, "image_size", s.image_size);
  s.regions_per_image = get_int(j, "regions_per_image", s.regions_per_image);
  s.patch_size = get_int(j, "patch_size", s.patch_size);
  s.train_per_class = get_int(j, "train_per_class", s.train_per_class);
  s.test_per_class = get_int(j, "test_per_class", s.test_per_class);
  s.noise_std = get_num(j, "noise_std", s.noise_std);
  s.seed = get_u64(j, "seed", s.seed);
  validate_spec(s);
  return s;
}

int run_cli(std::vector<std::string> args) {
  CLI::App app{"progressive self-distillation on synthetic data"};
  app.require_subcommand(1);
  CliOptions opt;

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "JSON config file");
    sub->add_option("overrides", opt.overrides, "key=value overrides applied after the file");
  };

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  add_config(gen);
  gen->add_option("--out", opt.out_dir, "output directory (default ./out; PSD_OUT overrides)");

  auto* tr = app.add_subcommand("train", "train a model and write metrics and a checkpoint");
  add_config(tr);

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  ev->add_option("--model", opt.model_path, "checkpoint file")->required();
  ev->add_option("--data", opt.data_path, "packed dataset file")->required();
  ev->add_option("--split", opt.split, "dataset split (default test)");
  ev->add_flag("--top5", opt.force_top5, "require top5 even with fewer than 5 classes");

  auto* mc = app.add_subcommand("masked-curve", "accuracy under growing test-time masking");
  mc->add_option("--model", opt.model_path, "checkpoint file")->required();
  mc->add_option("--data", opt.data_path, "packed dataset file")->required();
  mc->add_option("--grid", opt.grid, "mask percentages")->delimiter(',');
  mc->add_option("--block", opt.block, "mask block size in pixels");
  mc->add_option("--seed", opt.mask_seed, "mask placement seed");
  mc->add_option("--out", opt.out_dir, "output directory (default ./out; PSD_OUT overrides)");

  auto* ab = app.add_subcommand("ablate", "run the full ablation grid");
  add_config(ab);
  ab->add_option("--seeds", opt.seeds, "seeds for every configuration")->delimiter(',');
  ab->add_option("--out", opt.out_dir, "output directory when the config sets none");

  auto* ex = app.add_subcommand("export-crm", "export image/CRM/mask PGM triplets");
  ex->add_option("--model", opt.model_path, "checkpoint file")->required();
  ex->add_option("--data", opt.data_path, "packed dataset file")->required();
  ex->add_option("--count", opt.count, "number of samples to export");
  ex->add_option("--split", opt.split, "dataset split (default test)");
  ex->add_option("--eta", opt.eta, "masking percentile for the exported mask");
  ex->add_option("--out", opt.out_dir, "output directory (default ./out; PSD_OUT overrides)");

  try {
    std::reverse(args.begin(), args.end());
    app.parse(std::move(args));
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    std::cerr << "error (cli): " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (gen->parsed()) return do_gen_data(opt);
    if (tr->parsed()) return do_train(opt);
    if (ev->parsed()) return do_eval(opt);
    if (mc->parsed()) return do_masked_curve(opt);
    if (ab->parsed()) return do_ablate(opt);
    if (ex->parsed()) return do_export_crm(opt);
    std::cerr << "error (cli): no subcommand selected\n" << app.help();
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "error (config): " << e.what() << "\n"
              << "hint: check the configuration keys, ranges, and overrides\n";
    return 1;
  } catch (const FormatError& e) {
    std::cerr << "error (format): " << e.what() << "\n"
              << "hint: the file is corrupt or of the wrong type; regenerate it\n";
    return 2;
  } catch (const DomainError& e) {
    std::cerr << "error (data): " << e.what() << "\n"
              << "hint: the dataset and model disagree; regenerate or retrain\n";
    return 2;
  } catch (const ShapeError& e) {
    std::cerr << "error (data): " << e.what() << "\n"
              << "hint: the dataset and model shapes disagree; check widths and image size\n";
    return 2;
  } catch (const ContractError& e) {
    std::cerr << "error (data): " << e.what() << "\n"
              << "hint: an input is missing or empty; check the dataset and split names\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "error (numeric): " << e.what() << "\n"
              << "hint: training diverged; lower lr or revisit the schedule\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace psd
