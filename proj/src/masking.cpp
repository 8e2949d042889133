#include "psd/masking.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "psd/errors.hpp"

namespace psd {

MaskGrid locate(const ResponseMap& map, double eta, int source_class) {
  if (!(eta > 0.0) || eta > 1.0)
    throw ConfigError("locate: eta must be in (0, 1], got " + std::to_string(eta));
  const std::int64_t cells = map.h * map.w;
  const std::int64_t k = static_cast<std::int64_t>(
      std::ceil(eta * static_cast<double>(cells)));

  std::vector<std::int64_t> order(static_cast<std::size_t>(cells));
  std::iota(order.begin(), order.end(), 0);
  // NaN cells sink below every real value (they still order deterministically
  // so a poisoned forward surfaces as a NumericError later, not as UB here).
  std::sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
    const bool an = std::isnan(map.values[a]);
    const bool bn = std::isnan(map.values[b]);
    if (an != bn) return bn;
    if (!an && map.values[a] != map.values[b]) return map.values[a] > map.values[b];
    return a < b;
  });

  MaskGrid out;
  out.h = map.h;
  out.w = map.w;
  out.eta = eta;
  out.source_class = source_class;
  out.grid.assign(static_cast<std::size_t>(cells), 0);
  for (std::int64_t i = 0; i < k; ++i) out.grid[static_cast<std::size_t>(order[i])] = 1;
  return out;
}

std::vector<std::uint8_t> upsample_mask(const MaskGrid& grid, std::int64_t img_h,
                                        std::int64_t img_w) {
  if (grid.h <= 0 || grid.w <= 0 || img_h % grid.h != 0 || img_w % grid.w != 0)
    throw ShapeError("upsample_mask: image " + std::to_string(img_h) + "x" +
                     std::to_string(img_w) + " not divisible by grid " + std::to_string(grid.h) +
                     "x" + std::to_string(grid.w));
  const std::int64_t bh = img_h / grid.h, bw = img_w / grid.w;
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(img_h * img_w), 0);
  for (std::int64_t i = 0; i < grid.h; ++i)
    for (std::int64_t j = 0; j < grid.w; ++j) {
      if (!grid.grid[static_cast<std::size_t>(i * grid.w + j)]) continue;
      for (std::int64_t r = i * bh; r < (i + 1) * bh; ++r)
        std::fill(mask.begin() + r * img_w + j * bw, mask.begin() + r * img_w + (j + 1) * bw,
                  std::uint8_t{1});
    }
  return mask;
}

MaskedImage make_unmasked(std::vector<double> pixels, std::int64_t h, std::int64_t w) {
  if (static_cast<std::int64_t>(pixels.size()) != 3 * h * w)
    throw ShapeError("make_unmasked: " + std::to_string(pixels.size()) + " values for 3x" +
                     std::to_string(h) + "x" + std::to_string(w));
  MaskedImage img;
  img.h = h;
  img.w = w;
  img.pixels = std::move(pixels);
  img.stage = 0;
  img.zeroed.assign(static_cast<std::size_t>(h * w), 0);
  return img;
}

MaskedImage apply_mask(const MaskedImage& x, const std::vector<std::uint8_t>& pixel_mask,
                       const FillColor& fill) {
  if (static_cast<std::int64_t>(pixel_mask.size()) != x.h * x.w)
    throw ShapeError("apply_mask: mask size " + std::to_string(pixel_mask.size()) +
                     " does not match image " + std::to_string(x.h) + "x" + std::to_string(x.w));
  MaskedImage out = x;
  out.stage = x.stage + 1;
  const std::int64_t plane = x.h * x.w;
  for (std::int64_t p = 0; p < plane; ++p) {
    if (!pixel_mask[static_cast<std::size_t>(p)]) continue;
    out.zeroed[static_cast<std::size_t>(p)] = 1;
    for (int ch = 0; ch < 3; ++ch) out.pixels[ch * plane + p] = fill[static_cast<std::size_t>(ch)];
  }
  return out;
}

Tensor batch_tensor(const std::vector<MaskedImage>& batch) {
  if (batch.empty()) throw ContractError("batch_tensor: empty batch");
  const std::int64_t h = batch.front().h, w = batch.front().w;
  const std::int64_t per = 3 * h * w;
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(per) * batch.size());
  for (const auto& img : batch) {
    if (img.h != h || img.w != w) throw ShapeError("batch_tensor: mixed image sizes in batch");
    data.insert(data.end(), img.pixels.begin(), img.pixels.end());
  }
  return Tensor::from_data({static_cast<std::int64_t>(batch.size()), 3, h, w}, std::move(data));
}

ChainResult build_chain(const ModelBundle& bundle, const std::vector<MaskedImage>& batch,
                        const std::vector<int>& labels, int masked_stages, double eta,
                        const FillColor& fill) {
  if (masked_stages < 0) throw ContractError("build_chain: masked_stages must be >= 0");
  if (labels.size() != batch.size())
    throw ContractError("build_chain: " + std::to_string(labels.size()) + " labels for batch of " +
                        std::to_string(batch.size()));

  ChainResult chain;
  chain.stages.emplace_back();
  chain.stages[0].images = batch;
  chain.stages[0].x = batch_tensor(batch);
  chain.stages[0].embed = forward_embed(bundle, chain.stages[0].x);

  const std::int64_t img_h = batch.front().h, img_w = batch.front().w;
  for (int stage = 1; stage <= masked_stages; ++stage) {
    const ChainStage& prev = chain.stages.back();
    ChainStage next;
    next.images.reserve(batch.size());
    for (std::size_t s = 0; s < batch.size(); ++s) {
      ResponseMap map =
          compute_crm(prev.embed.tap, static_cast<std::int64_t>(s), bundle.crm, labels[s]);
      MaskGrid grid = locate(map, eta, labels[s]);
      next.images.push_back(apply_mask(prev.images[s], upsample_mask(grid, img_h, img_w), fill));
      next.maps.push_back(std::move(map));
      next.grids.push_back(std::move(grid));
    }
    next.x = batch_tensor(next.images);
    next.embed = forward_embed(bundle, next.x);
    chain.stages.push_back(std::move(next));
  }
  return chain;
}

void write_pgm(const std::string& path, const std::vector<std::uint8_t>& bytes, std::int64_t h,
               std::int64_t w) {
  if (static_cast<std::int64_t>(bytes.size()) != h * w)
    throw ContractError("write_pgm: byte count does not match " + std::to_string(h) + "x" +
                        std::to_string(w));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ContractError("write_pgm: cannot open " + path);
  out << "P5\n" << w << " " << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ContractError("write_pgm: write to " + path + " failed");
}

std::vector<std::uint8_t> crm_to_bytes(const ResponseMap& map) {
  // Min-max normalized per map; a constant map renders as all black.
  std::vector<std::uint8_t> out(map.values.size(), 0);
  const auto [lo_it, hi_it] = std::minmax_element(map.values.begin(), map.values.end());
  const double lo = *lo_it, hi = *hi_it;
  if (hi > lo) {
    const double scale = 255.0 / (hi - lo);
    for (std::size_t i = 0; i < map.values.size(); ++i)
      out[i] = static_cast<std::uint8_t>(std::lround((map.values[i] - lo) * scale));
  }
  return out;
}

std::vector<std::uint8_t> mask_to_bytes(const std::vector<std::uint8_t>& mask) {
  std::vector<std::uint8_t> out(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) out[i] = mask[i] ? 255 : 0;
  return out;
}

std::vector<std::uint8_t> image_to_bytes(const MaskedImage& img) {
  const std::int64_t plane = img.h * img.w;
  std::vector<std::uint8_t> out(static_cast<std::size_t>(plane));
  for (std::int64_t p = 0; p < plane; ++p) {
    const double gray =
        (img.pixels[p] + img.pixels[plane + p] + img.pixels[2 * plane + p]) / 3.0;
    const double clipped = std::min(1.0, std::max(0.0, gray));
    out[static_cast<std::size_t>(p)] = static_cast<std::uint8_t>(std::lround(clipped * 255.0));
  }
  return out;
}

std::string export_name(const std::string& split, std::int64_t sample_id, int stage,
                        const std::string& kind) {
  return split + "_" + std::to_string(sample_id) + "_stage" + std::to_string(stage) + "_" + kind +
         ".pgm";
}

}  // namespace psd
