#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace psd {

struct SyntheticSpec {
  int num_classes = 10;
  int image_size = 32;
  int regions_per_image = 6;  // 1 for the single-region variant
  int patch_size = 6;
  int train_per_class = 200;
  int test_per_class = 50;
  double noise_std = 0.1;
  std::uint64_t seed = 1;
};

struct Region {
  int r = 0;
  int c = 0;
  int h = 0;
  int w = 0;
};

struct Sample {
  std::vector<double> pixels;  // 3*size*size, channel-major, values in [0,1]
  int label = 0;
  std::string split;  // "train" or "test"
  std::vector<Region> regions;
};

struct Dataset {
  SyntheticSpec spec;
  std::vector<Sample> samples;
  std::uint32_t format_version = 1;
};

// Number of signature textures drawn per class.
inline constexpr int kBankSize = 8;

void validate_spec(const SyntheticSpec& spec);
Dataset gen_synthetic(const SyntheticSpec& spec);

void save_packed(const Dataset& dataset, const std::string& path);
Dataset load_packed(const std::string& path);

std::vector<std::size_t> split_indices(const Dataset& dataset, const std::string& split);

std::vector<double> random_mask_augment(const std::vector<double>& pixels, std::int64_t h,
                                        std::int64_t w, double pct, std::int64_t block,
                                        std::uint64_t seed);
Dataset build_masked_testset(const Dataset& dataset, double pct, std::int64_t block,
                             std::uint64_t seed);

}  // namespace psd
