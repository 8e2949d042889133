#pragma once

#include <functional>
#include <vector>

#include "psd/masking.hpp"
#include "psd/model.hpp"
#include "psd/tensor.hpp"

namespace psd {

// Loss weights. omega_d is derived per epoch from alpha/beta via ramp_up;
// omega_l stays fixed. alpha == 0 switches distillation off entirely.
struct Schedule {
  double alpha = 1.0;
  int beta = 5;
  double omega_l = 1.0;
};

double ramp_up(int epoch, double alpha, int beta);

struct LossBreakdown {
  double l_g = 0.0;
  // Entry i-1 belongs to stage i: the locating term is evaluated on the
  // stage i-1 images, the distillation term on the stage i images.
  std::vector<double> l_l;
  std::vector<double> l_d;
  double omega_d = 0.0;
  double omega_l = 0.0;
  double total = 0.0;
};

Tensor classification_loss(const ModelBundle& bundle, const Tensor& x,
                           const std::vector<int>& labels);
Tensor locating_loss(const ModelBundle& bundle, const Tensor& xbar, const std::vector<int>& labels);
Tensor distillation_loss(const ModelBundle& bundle, const Tensor& x, const Tensor& xbar);

struct TotalLoss {
  Tensor loss;
  LossBreakdown breakdown;
  ChainResult chain;
};

// Builds the progressive chain once and assembles the composite objective from
// the recorded forwards. active_stage 0 keeps every stage's terms; a value j in
// [1, m] keeps only stage j's locating and distillation terms (step-by-step
// training). Skipped weights skip their forwards too, so with alpha = 0 and
// omega_l = 0 the graph collapses to plain cross-entropy on the clean batch.
TotalLoss total_loss(const ModelBundle& bundle, const std::vector<MaskedImage>& batch,
                     const std::vector<int>& labels, int m, double eta, const Schedule& schedule,
                     int epoch, int active_stage = 0, const FillColor& fill = kZeroFill);

// One optimizer update: zero grads, build total_loss, backprop, step every
// parameter whose loss term is live this run. Heads/CRM tied to a zero weight
// are left untouched so their values stay at initialization. `inspect`, if
// set, sees the assembled loss (chain included) before backpropagation.
LossBreakdown train_step(const ModelBundle& bundle, Sgd& opt,
                         const std::vector<MaskedImage>& batch, const std::vector<int>& labels,
                         int m, double eta, const Schedule& schedule, int epoch,
                         int batch_index = 0, int active_stage = 0,
                         const FillColor& fill = kZeroFill,
                         const std::function<void(const TotalLoss&)>& inspect = {});

}  // namespace psd
