#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "psd/tensor.hpp"

namespace psd {

// Four (by default) conv blocks, each conv 3x3 stride 1 pad 1 -> bias -> relu
// -> 2x2 average pool. tap_index is 1-based.
struct EmbeddingNet {
  std::vector<Tensor> conv_w;
  std::vector<Tensor> conv_b;
  std::vector<int> widths;
  int tap_index = 3;
};

// Global average pool followed by one fully connected layer.
struct HeadNet {
  Tensor w;  // [D x C]
  Tensor b;  // [C]
};

struct CRMHead {
  Tensor theta;  // [D_tap x C]
};

struct ModelBundle {
  EmbeddingNet embed;
  HeadNet teacher;
  HeadNet student;
  CRMHead crm;
  bool share_heads = false;
  int num_classes = 0;
};

struct EmbedOut {
  std::vector<Tensor> blocks;
  Tensor tap;
  Tensor final;
};

struct ResponseMap {
  std::int64_t h = 0;
  std::int64_t w = 0;
  std::vector<double> values;  // row-major h*w
};

ModelBundle init_model(const std::vector<int>& widths, int num_classes, int tap_index,
                       std::uint64_t seed, bool share_heads = false);

EmbedOut forward_embed(const ModelBundle& bundle, const Tensor& x);
Tensor forward_head(const Tensor& s_final, const HeadNet& head);
Tensor crm_logits(const Tensor& s_tap, const CRMHead& crm);
ResponseMap compute_crm(const Tensor& s_tap, std::int64_t sample, const CRMHead& crm, int c);

// Unique trainable parameters in canonical order; with share_heads the student
// aliases the teacher and is not listed separately.
std::vector<std::pair<std::string, Tensor>> named_params(const ModelBundle& bundle);
std::int64_t param_count(const ModelBundle& bundle);

void save_checkpoint(const ModelBundle& bundle, const std::string& path);
ModelBundle load_checkpoint(const std::string& path);

}  // namespace psd
