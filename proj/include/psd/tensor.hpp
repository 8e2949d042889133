#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "psd/errors.hpp"

namespace psd {

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  // Set on outputs of recorded primitives; gradients flow through these during
  // the backward replay even though they are not leaves.
  bool tracked = false;
  std::unique_ptr<std::vector<double>> grad;

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  void ensure_grad();
};

// Value-semantic handle over a shared tensor payload.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::int64_t numel() const;
  std::int64_t dim(std::size_t axis) const;
  const std::vector<double>& data() const;
  std::vector<double>& mutable_data();
  bool requires_grad() const;
  bool tracked() const;
  const std::vector<double>& grad() const;
  void zero_grad();
  double item() const;

  std::shared_ptr<TensorImpl> impl() const { return impl_; }
  static Tensor wrap(std::shared_ptr<TensorImpl> impl);

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Disables graph recording for its scope (evaluation, mask construction).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor relu(const Tensor& a);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor conv2d(const Tensor& x, const Tensor& k, std::int64_t stride, std::int64_t pad);
Tensor avg_pool2(const Tensor& x);
Tensor global_avg_pool(const Tensor& x);
Tensor bias_add(const Tensor& x, const Tensor& bias);
Tensor softmax(const Tensor& logits);
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);
Tensor kl_div(const Tensor& teacher_logits, const Tensor& student_logits);
Tensor stop_gradient(const Tensor& x);
Tensor sum(const Tensor& x);

void backward(const Tensor& loss);

void sgd_step(std::vector<double>& param, const std::vector<double>& grad,
              std::vector<double>& velocity, double lr, double momentum, double weight_decay);

// Momentum SGD with one velocity buffer per named parameter.
class Sgd {
 public:
  Sgd(double lr, double momentum, double weight_decay)
      : lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {}

  void step(const std::string& name, Tensor& param);
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

 private:
  double lr_;
  double momentum_;
  double weight_decay_;
  std::unordered_map<std::string, std::vector<double>> velocity_;
};

namespace detail {
std::size_t tape_size();
void clear_tape();
}  // namespace detail

}  // namespace psd
