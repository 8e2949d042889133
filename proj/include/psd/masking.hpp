#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "psd/model.hpp"
#include "psd/tensor.hpp"

namespace psd {

// Binary grid at feature resolution; 1 marks a cell selected for removal.
struct MaskGrid {
  std::int64_t h = 0;
  std::int64_t w = 0;
  std::vector<std::uint8_t> grid;
  double eta = 0.0;
  int source_class = -1;
};

// An image plus the running record of which pixels masking has zeroed.
struct MaskedImage {
  std::int64_t h = 0;
  std::int64_t w = 0;
  std::vector<double> pixels;  // 3*h*w, row-major per channel
  int stage = 0;
  std::vector<std::uint8_t> zeroed;  // h*w, 1 = removed by masking
};

using FillColor = std::array<double, 3>;
inline constexpr FillColor kZeroFill{0.0, 0.0, 0.0};

MaskGrid locate(const ResponseMap& map, double eta, int source_class = -1);
std::vector<std::uint8_t> upsample_mask(const MaskGrid& grid, std::int64_t img_h,
                                        std::int64_t img_w);
MaskedImage make_unmasked(std::vector<double> pixels, std::int64_t h, std::int64_t w);
MaskedImage apply_mask(const MaskedImage& x, const std::vector<std::uint8_t>& pixel_mask,
                       const FillColor& fill = kZeroFill);

Tensor batch_tensor(const std::vector<MaskedImage>& batch);

// One link of the progressive chain. For stage i >= 1, maps/grids describe the
// CRMs (computed on stage i-1's forward) that produced these images.
struct ChainStage {
  Tensor x;
  EmbedOut embed;
  std::vector<MaskedImage> images;
  std::vector<ResponseMap> maps;
  std::vector<MaskGrid> grids;
};

struct ChainResult {
  std::vector<ChainStage> stages;  // stages[0] holds the unmasked batch
};

// Runs forwards for stages 0..masked_stages, masking each stage's batch with
// CRMs taken at the ground-truth label of each sample.
ChainResult build_chain(const ModelBundle& bundle, const std::vector<MaskedImage>& batch,
                        const std::vector<int>& labels, int masked_stages, double eta,
                        const FillColor& fill = kZeroFill);

void write_pgm(const std::string& path, const std::vector<std::uint8_t>& bytes, std::int64_t h,
               std::int64_t w);
std::vector<std::uint8_t> crm_to_bytes(const ResponseMap& map);
std::vector<std::uint8_t> mask_to_bytes(const std::vector<std::uint8_t>& mask);
std::vector<std::uint8_t> image_to_bytes(const MaskedImage& img);
std::string export_name(const std::string& split, std::int64_t sample_id, int stage,
                        const std::string& kind);

}  // namespace psd
