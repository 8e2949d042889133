#include "psd/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "psd/binio.hpp"
#include "psd/errors.hpp"
#include "psd/rng.hpp"

namespace psd {

namespace {

using nlohmann::json;

constexpr std::uint32_t kDatasetVersion = 1;

double clip01(double v) { return std::min(1.0, std::max(0.0, v)); }

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  const double hh = (h - std::floor(h)) * 6.0;
  const int i = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  switch (i) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

bool rects_overlap(const Region& a, const Region& b) {
  return a.r < b.r + b.h && b.r < a.r + a.h && a.c < b.c + b.w && b.c < a.c + a.w;
}

// One class bank: kBankSize jittered variants of the class base color.
std::vector<std::vector<double>> make_bank(int c, const SyntheticSpec& spec) {
  Rng rng(derive_seed(spec.seed, 1, static_cast<std::uint64_t>(c)));
  const auto base =
      hsv_to_rgb(static_cast<double>(c) / spec.num_classes, 0.65, 0.75);
  const int p = spec.patch_size;
  std::vector<std::vector<double>> bank;
  bank.reserve(kBankSize);
  for (int k = 0; k < kBankSize; ++k) {
    std::vector<double> pat(static_cast<std::size_t>(3 * p * p));
    for (int ch = 0; ch < 3; ++ch)
      for (int i = 0; i < p * p; ++i)
        pat[static_cast<std::size_t>(ch * p * p + i)] =
            clip01(base[static_cast<std::size_t>(ch)] + rng.uniform(-0.25, 0.25));
    bank.push_back(std::move(pat));
  }
  return bank;
}

Sample make_sample(int label, const std::string& split, std::uint64_t global_index,
                   const std::vector<std::vector<double>>& bank, const SyntheticSpec& spec) {
  Rng rng(derive_seed(spec.seed, 2, global_index));
  const int size = spec.image_size;
  const int plane = size * size;
  Sample s;
  s.label = label;
  s.split = split;
  s.pixels.resize(static_cast<std::size_t>(3 * plane));
  for (int ch = 0; ch < 3; ++ch)
    for (int i = 0; i < plane; ++i)
      s.pixels[static_cast<std::size_t>(ch * plane + i)] =
          clip01(0.5 + spec.noise_std * rng.normal());

  const int p = spec.patch_size;
  const int max_pos = size - p + 1;
  for (int k = 0; k < spec.regions_per_image; ++k) {
    const auto& pat = bank[rng.below(kBankSize)];
    Region reg{0, 0, p, p};
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      reg.r = static_cast<int>(rng.below(static_cast<std::uint64_t>(max_pos)));
      reg.c = static_cast<int>(rng.below(static_cast<std::uint64_t>(max_pos)));
      placed = std::none_of(s.regions.begin(), s.regions.end(),
                            [&](const Region& other) { return rects_overlap(reg, other); });
    }
    if (!placed)
      throw ConfigError("gen_synthetic: patch placement failed after 1000 attempts "
                        "(spec too dense)");
    for (int ch = 0; ch < 3; ++ch)
      for (int i = 0; i < p; ++i)
        for (int j = 0; j < p; ++j)
          s.pixels[static_cast<std::size_t>(ch * plane + (reg.r + i) * size + reg.c + j)] =
              pat[static_cast<std::size_t>(ch * p * p + i * p + j)];
    s.regions.push_back(reg);
  }
  return s;
}

}  // namespace

void validate_spec(const SyntheticSpec& spec) {
  if (spec.num_classes < 2) throw ConfigError("spec: num_classes must be >= 2");
  if (spec.image_size < 1) throw ConfigError("spec: image_size must be positive");
  if (spec.patch_size < 1 || spec.patch_size > spec.image_size)
    throw ConfigError("spec: patch_size must be in [1, image_size]");
  if (spec.regions_per_image < 1) throw ConfigError("spec: regions_per_image must be >= 1");
  const std::int64_t covered = static_cast<std::int64_t>(spec.regions_per_image) *
                               spec.patch_size * spec.patch_size;
  if (covered >= static_cast<std::int64_t>(spec.image_size) * spec.image_size)
    throw ConfigError("spec: regions_per_image * patch_size^2 must be smaller than the image");
  if (spec.train_per_class < 1 || spec.test_per_class < 1)
    throw ConfigError("spec: per-class sample counts must be >= 1");
  if (spec.noise_std < 0.0) throw ConfigError("spec: noise_std must be >= 0");
}

Dataset gen_synthetic(const SyntheticSpec& spec) {
  validate_spec(spec);
  std::vector<std::vector<std::vector<double>>> banks;
  banks.reserve(static_cast<std::size_t>(spec.num_classes));
  for (int c = 0; c < spec.num_classes; ++c) banks.push_back(make_bank(c, spec));

  Dataset ds;
  ds.spec = spec;
  ds.format_version = kDatasetVersion;
  std::uint64_t gid = 0;
  for (int c = 0; c < spec.num_classes; ++c)
    for (int i = 0; i < spec.train_per_class; ++i)
      ds.samples.push_back(make_sample(c, "train", gid++, banks[static_cast<std::size_t>(c)], spec));
  for (int c = 0; c < spec.num_classes; ++c)
    for (int i = 0; i < spec.test_per_class; ++i)
      ds.samples.push_back(make_sample(c, "test", gid++, banks[static_cast<std::size_t>(c)], spec));
  return ds;
}

void save_packed(const Dataset& dataset, const std::string& path) {
  json spec{{"num_classes", dataset.spec.num_classes},
            {"image_size", dataset.spec.image_size},
            {"regions_per_image", dataset.spec.regions_per_image},
            {"patch_size", dataset.spec.patch_size},
            {"train_per_class", dataset.spec.train_per_class},
            {"test_per_class", dataset.spec.test_per_class},
            {"noise_std", dataset.spec.noise_std},
            {"seed", dataset.spec.seed}};
  json samples = json::array();
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const Sample& s = dataset.samples[i];
    json regions = json::array();
    for (const Region& r : s.regions) regions.push_back({r.r, r.c, r.h, r.w});
    samples.push_back({{"id", i}, {"label", s.label}, {"split", s.split}, {"regions", regions}});
  }
  const std::string manifest = json{{"spec", spec}, {"samples", samples}}.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw ContractError("save_packed: cannot open " + path + " for writing");
  out.write("PSDD", 4);
  binio::write_u32(out, dataset.format_version);
  binio::write_u64(out, manifest.size());
  out.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
  for (const Sample& s : dataset.samples)
    binio::write_f64_array(out, s.pixels.data(), s.pixels.size());
  if (!out) throw ContractError("save_packed: write to " + path + " failed");
}

Dataset load_packed(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open dataset " + path, 0);
  binio::Reader r(in);
  char magic[4];
  r.read_bytes(magic, 4, "dataset magic");
  if (std::string(magic, 4) != "PSDD")
    throw FormatError("bad dataset magic, expected \"PSDD\"", 0);
  const std::uint32_t version = r.read_u32("dataset version");
  if (version != kDatasetVersion)
    throw FormatError("unsupported dataset version " + std::to_string(version), 4);
  const std::uint64_t manifest_len = r.read_u64("manifest length");
  if (manifest_len > (std::uint64_t{1} << 32))
    throw FormatError("implausible manifest length", 8);
  const std::uint64_t manifest_off = r.offset();
  const std::string manifest = r.read_string(manifest_len, "manifest");

  json doc;
  try {
    doc = json::parse(manifest);
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest is not valid JSON: ") + e.what(), manifest_off);
  }

  Dataset ds;
  ds.format_version = version;
  try {
    const json& spec = doc.at("spec");
    ds.spec.num_classes = spec.at("num_classes").get<int>();
    ds.spec.image_size = spec.at("image_size").get<int>();
    ds.spec.regions_per_image = spec.at("regions_per_image").get<int>();
    ds.spec.patch_size = spec.at("patch_size").get<int>();
    ds.spec.train_per_class = spec.at("train_per_class").get<int>();
    ds.spec.test_per_class = spec.at("test_per_class").get<int>();
    ds.spec.noise_std = spec.at("noise_std").get<double>();
    ds.spec.seed = spec.at("seed").get<std::uint64_t>();

    for (const json& js : doc.at("samples")) {
      Sample s;
      s.label = js.at("label").get<int>();
      s.split = js.at("split").get<std::string>();
      for (const json& jr : js.at("regions")) {
        if (!jr.is_array() || jr.size() != 4)
          throw FormatError("region record must be [r, c, h, w]", manifest_off);
        s.regions.push_back(
            {jr[0].get<int>(), jr[1].get<int>(), jr[2].get<int>(), jr[3].get<int>()});
      }
      ds.samples.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest missing or mistyped field: ") + e.what(),
                      manifest_off);
  }

  const int size = ds.spec.image_size;
  std::vector<int> train_counts(static_cast<std::size_t>(ds.spec.num_classes), 0);
  std::vector<int> test_counts(static_cast<std::size_t>(ds.spec.num_classes), 0);
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    Sample& s = ds.samples[i];
    if (s.label < 0 || s.label >= ds.spec.num_classes)
      throw FormatError("sample " + std::to_string(i) + " has out-of-range label " +
                            std::to_string(s.label),
                        manifest_off);
    if (s.split == "train")
      ++train_counts[static_cast<std::size_t>(s.label)];
    else if (s.split == "test")
      ++test_counts[static_cast<std::size_t>(s.label)];
    else
      throw FormatError("sample " + std::to_string(i) + " has unknown split \"" + s.split + "\"",
                        manifest_off);
    for (const Region& reg : s.regions)
      if (reg.r < 0 || reg.c < 0 || reg.h < 1 || reg.w < 1 || reg.r + reg.h > size ||
          reg.c + reg.w > size)
        throw FormatError("sample " + std::to_string(i) + " has a region outside the image",
                          manifest_off);
    s.pixels.resize(static_cast<std::size_t>(3 * size * size));
    r.read_f64_array(s.pixels.data(), s.pixels.size(),
                     "pixels of sample " + std::to_string(i));
  }
  for (int c = 0; c < ds.spec.num_classes; ++c) {
    if (train_counts[static_cast<std::size_t>(c)] != ds.spec.train_per_class ||
        test_counts[static_cast<std::size_t>(c)] != ds.spec.test_per_class)
      throw FormatError("per-class sample counts do not match the spec", manifest_off);
  }
  if (!r.at_eof()) throw FormatError("trailing bytes after pixel payload", r.offset());
  return ds;
}

std::vector<std::size_t> split_indices(const Dataset& dataset, const std::string& split) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i)
    if (dataset.samples[i].split == split) out.push_back(i);
  return out;
}

std::vector<double> random_mask_augment(const std::vector<double>& pixels, std::int64_t h,
                                        std::int64_t w, double pct, std::int64_t block,
                                        std::uint64_t seed) {
  if (pct < 0.0 || pct > 1.0)
    throw ConfigError("random_mask_augment: pct must be in [0, 1], got " + std::to_string(pct));
  if (block < 1) throw ConfigError("random_mask_augment: block must be >= 1");
  if (static_cast<std::int64_t>(pixels.size()) != 3 * h * w)
    throw ShapeError("random_mask_augment: pixel count does not match 3x" + std::to_string(h) +
                     "x" + std::to_string(w));

  const std::int64_t rows = (h + block - 1) / block;
  const std::int64_t cols = (w + block - 1) / block;
  std::vector<std::int64_t> cells(static_cast<std::size_t>(rows * cols));
  std::iota(cells.begin(), cells.end(), 0);
  Rng rng(seed);
  shuffle_in_place(cells, rng);

  std::vector<double> out = pixels;
  const double target = pct * static_cast<double>(h * w);
  std::int64_t zeroed = 0;
  const std::int64_t plane = h * w;
  for (std::int64_t cell : cells) {
    if (static_cast<double>(zeroed) >= target) break;
    const std::int64_t r0 = (cell / cols) * block;
    const std::int64_t c0 = (cell % cols) * block;
    const std::int64_t r1 = std::min(h, r0 + block);
    const std::int64_t c1 = std::min(w, c0 + block);
    for (std::int64_t r = r0; r < r1; ++r)
      for (std::int64_t c = c0; c < c1; ++c)
        for (int ch = 0; ch < 3; ++ch) out[static_cast<std::size_t>(ch * plane + r * w + c)] = 0.0;
    zeroed += (r1 - r0) * (c1 - c0);
  }
  return out;
}

Dataset build_masked_testset(const Dataset& dataset, double pct, std::int64_t block,
                             std::uint64_t seed) {
  Dataset out = dataset;
  const std::int64_t size = dataset.spec.image_size;
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    if (out.samples[i].split != "test") continue;
    out.samples[i].pixels = random_mask_augment(out.samples[i].pixels, size, size, pct, block,
                                                derive_seed(seed, 3, i));
  }
  return out;
}

}  // namespace psd
