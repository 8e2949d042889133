#include "psd/distill.hpp"

#include <cmath>
#include <string>

#include "psd/errors.hpp"

namespace psd {

double ramp_up(int epoch, double alpha, int beta) {
  if (beta <= 0 || epoch >= beta) return alpha;
  const double t = 1.0 - static_cast<double>(epoch) / beta;
  return alpha * std::exp(-5.0 * t * t);
}

Tensor classification_loss(const ModelBundle& bundle, const Tensor& x,
                           const std::vector<int>& labels) {
  EmbedOut out = forward_embed(bundle, x);
  return cross_entropy(forward_head(out.final, bundle.teacher), labels);
}

Tensor locating_loss(const ModelBundle& bundle, const Tensor& xbar,
                     const std::vector<int>& labels) {
  EmbedOut out = forward_embed(bundle, xbar);
  return cross_entropy(crm_logits(out.tap, bundle.crm), labels);
}

Tensor distillation_loss(const ModelBundle& bundle, const Tensor& x, const Tensor& xbar) {
  EmbedOut clean = forward_embed(bundle, x);
  EmbedOut masked = forward_embed(bundle, xbar);
  return kl_div(forward_head(clean.final, bundle.teacher),
                forward_head(masked.final, bundle.student));
}

TotalLoss total_loss(const ModelBundle& bundle, const std::vector<MaskedImage>& batch,
                     const std::vector<int>& labels, int m, double eta, const Schedule& schedule,
                     int epoch, int active_stage, const FillColor& fill) {
  if (m < 1) throw ConfigError("total_loss: m must be >= 1, got " + std::to_string(m));
  if (active_stage < 0 || active_stage > m)
    throw ConfigError("total_loss: active_stage " + std::to_string(active_stage) +
                      " outside [0, " + std::to_string(m) + "]");

  const double omega_d = ramp_up(epoch, schedule.alpha, schedule.beta);
  const double omega_l = schedule.omega_l;

  const int last_term = active_stage == 0 ? m : active_stage;
  int masked_stages = 0;
  if (omega_d > 0.0)
    masked_stages = last_term;
  else if (omega_l > 0.0)
    masked_stages = last_term - 1;

  TotalLoss result;
  result.chain = build_chain(bundle, batch, labels, masked_stages, eta, fill);
  const auto& stages = result.chain.stages;

  Tensor teacher_logits = forward_head(stages[0].embed.final, bundle.teacher);
  Tensor lg = cross_entropy(teacher_logits, labels);

  auto& bd = result.breakdown;
  bd.l_l.assign(static_cast<std::size_t>(m), 0.0);
  bd.l_d.assign(static_cast<std::size_t>(m), 0.0);
  bd.omega_d = omega_d;
  bd.omega_l = omega_l;
  bd.l_g = lg.item();

  Tensor total = lg;
  for (int i = 1; i <= m; ++i) {
    if (active_stage != 0 && i != active_stage) continue;
    if (omega_l > 0.0) {
      Tensor ll =
          cross_entropy(crm_logits(stages[static_cast<std::size_t>(i - 1)].embed.tap, bundle.crm),
                        labels);
      bd.l_l[static_cast<std::size_t>(i - 1)] = ll.item();
      total = add(total, scale(ll, omega_l));
    }
    if (omega_d > 0.0) {
      Tensor student_logits =
          forward_head(stages[static_cast<std::size_t>(i)].embed.final, bundle.student);
      Tensor ld = kl_div(teacher_logits, student_logits);
      bd.l_d[static_cast<std::size_t>(i - 1)] = ld.item();
      total = add(total, scale(ld, omega_d));
    }
  }

  bd.total = total.item();
  result.loss = total;
  return result;
}

LossBreakdown train_step(const ModelBundle& bundle, Sgd& opt,
                         const std::vector<MaskedImage>& batch, const std::vector<int>& labels,
                         int m, double eta, const Schedule& schedule, int epoch, int batch_index,
                         int active_stage, const FillColor& fill,
                         const std::function<void(const TotalLoss&)>& inspect) {
  if (batch.empty()) throw ContractError("train_step: empty batch");

  auto params = named_params(bundle);
  for (auto& [name, t] : params) t.zero_grad();

  TotalLoss tl = total_loss(bundle, batch, labels, m, eta, schedule, epoch, active_stage, fill);
  if (!std::isfinite(tl.breakdown.total)) {
    detail::clear_tape();
    throw NumericError("train_step: non-finite loss " + std::to_string(tl.breakdown.total), epoch,
                       batch_index);
  }
  if (inspect) inspect(tl);

  backward(tl.loss);

  const bool step_student = tl.breakdown.omega_d > 0.0;
  const bool step_crm = tl.breakdown.omega_l > 0.0;
  for (auto& [name, t] : params) {
    if (!step_student && name.rfind("head_s.", 0) == 0) continue;
    if (!step_crm && name.rfind("crm.", 0) == 0) continue;
    opt.step(name, t);
  }
  return tl.breakdown;
}

}  // namespace psd
