#include "psd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

#include "psd/kernels.hpp"

namespace psd {

namespace {

thread_local std::vector<std::function<void()>> g_tape;
thread_local bool g_recording = true;

using ImplPtr = std::shared_ptr<TensorImpl>;

bool flows(const ImplPtr& t) { return t->requires_grad || t->tracked; }

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

void check_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.shape().size() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(t.shape()));
}

ImplPtr make_output(Shape shape) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data.assign(static_cast<std::size_t>(shape_numel(impl->shape)), 0.0);
  return impl;
}

void record(std::function<void()> fn) { g_tape.push_back(std::move(fn)); }

// Row softmax with max subtraction, written into out (same layout as in).
void softmax_rows(const double* in, double* out, std::int64_t rows, std::int64_t cols) {
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* x = in + r * cols;
    double* p = out + r * cols;
    double mx = x[0];
    for (std::int64_t c = 1; c < cols; ++c) mx = std::max(mx, x[c]);
    double s = 0.0;
    for (std::int64_t c = 0; c < cols; ++c) {
      p[c] = std::exp(x[c] - mx);
      s += p[c];
    }
    const double inv = 1.0 / s;
    for (std::int64_t c = 0; c < cols; ++c) p[c] *= inv;
  }
}

constexpr double kLogClamp = 1e-12;

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out << 'x';
    out << s[i];
  }
  out << ']';
  return out.str();
}

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (std::int64_t d : s) n *= d;
  return n;
}

void TensorImpl::ensure_grad() {
  if (!grad) grad = std::make_unique<std::vector<double>>(data.size(), 0.0);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  for (std::int64_t d : shape)
    if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data.assign(static_cast<std::size_t>(shape_numel(impl->shape)), value);
  impl->requires_grad = requires_grad;
  if (requires_grad) impl->ensure_grad();
  return wrap(std::move(impl));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values, bool requires_grad) {
  for (std::int64_t d : shape)
    if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size()))
    throw ShapeError("from_data: " + std::to_string(values.size()) + " values for shape " +
                     shape_str(shape));
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  if (requires_grad) impl->ensure_grad();
  return wrap(std::move(impl));
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

Tensor Tensor::wrap(std::shared_ptr<TensorImpl> impl) {
  Tensor t;
  t.impl_ = std::move(impl);
  return t;
}

const Shape& Tensor::shape() const { return impl_->shape; }
std::int64_t Tensor::numel() const { return impl_->numel(); }
std::int64_t Tensor::dim(std::size_t axis) const { return impl_->shape.at(axis); }
const std::vector<double>& Tensor::data() const { return impl_->data; }
std::vector<double>& Tensor::mutable_data() { return impl_->data; }
bool Tensor::requires_grad() const { return impl_->requires_grad; }
bool Tensor::tracked() const { return impl_->tracked; }

const std::vector<double>& Tensor::grad() const {
  if (!impl_->grad) throw ContractError("tensor has no gradient buffer");
  return *impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_->grad) std::fill(impl_->grad->begin(), impl_->grad->end(), 0.0);
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(impl_->shape));
  return impl_->data[0];
}

NoGradGuard::NoGradGuard() : prev_(g_recording) { g_recording = false; }
NoGradGuard::~NoGradGuard() { g_recording = prev_; }

bool grad_enabled() { return g_recording; }

namespace {

// Shared wiring for elementwise binaries: build output, register closure.
template <class Fwd, class Bwd>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Bwd bwd) {
  check_same_shape(a, b, name);
  auto out = make_output(a.shape());
  fwd(a.data().data(), b.data().data(), out->data.data(), out->numel());
  const bool need_a = flows(a.impl());
  const bool need_b = flows(b.impl());
  if (g_recording && (need_a || need_b)) {
    out->tracked = true;
    ImplPtr ai = a.impl(), bi = b.impl(), oi = out;
    record([ai, bi, oi, need_a, need_b, bwd] {
      if (!oi->grad) return;
      bwd(*ai, *bi, *oi, need_a, need_b);
    });
  }
  return Tensor::wrap(out);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "add",
      [](const double* x, const double* y, double* o, std::int64_t n) {
        for (std::int64_t i = 0; i < n; ++i) o[i] = x[i] + y[i];
      },
      [](TensorImpl& ai, TensorImpl& bi, TensorImpl& oi, bool na, bool nb) {
        const auto& dy = *oi.grad;
        if (na) {
          ai.ensure_grad();
          for (std::size_t i = 0; i < dy.size(); ++i) (*ai.grad)[i] += dy[i];
        }
        if (nb) {
          bi.ensure_grad();
          for (std::size_t i = 0; i < dy.size(); ++i) (*bi.grad)[i] += dy[i];
        }
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "sub",
      [](const double* x, const double* y, double* o, std::int64_t n) {
        for (std::int64_t i = 0; i < n; ++i) o[i] = x[i] - y[i];
      },
      [](TensorImpl& ai, TensorImpl& bi, TensorImpl& oi, bool na, bool nb) {
        const auto& dy = *oi.grad;
        if (na) {
          ai.ensure_grad();
          for (std::size_t i = 0; i < dy.size(); ++i) (*ai.grad)[i] += dy[i];
        }
        if (nb) {
          bi.ensure_grad();
          for (std::size_t i = 0; i < dy.size(); ++i) (*bi.grad)[i] -= dy[i];
        }
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "mul",
      [](const double* x, const double* y, double* o, std::int64_t n) {
        for (std::int64_t i = 0; i < n; ++i) o[i] = x[i] * y[i];
      },
      [](TensorImpl& ai, TensorImpl& bi, TensorImpl& oi, bool na, bool nb) {
        const auto& dy = *oi.grad;
        if (na) {
          ai.ensure_grad();
          for (std::size_t i = 0; i < dy.size(); ++i) (*ai.grad)[i] += dy[i] * bi.data[i];
        }
        if (nb) {
          bi.ensure_grad();
          for (std::size_t i = 0; i < dy.size(); ++i) (*bi.grad)[i] += dy[i] * ai.data[i];
        }
      });
}

Tensor scale(const Tensor& a, double factor) {
  auto out = make_output(a.shape());
  const auto& x = a.data();
  for (std::size_t i = 0; i < x.size(); ++i) out->data[i] = x[i] * factor;
  if (g_recording && flows(a.impl())) {
    out->tracked = true;
    ImplPtr ai = a.impl(), oi = out;
    record([ai, oi, factor] {
      if (!oi->grad) return;
      ai->ensure_grad();
      const auto& dy = *oi->grad;
      for (std::size_t i = 0; i < dy.size(); ++i) (*ai->grad)[i] += dy[i] * factor;
    });
  }
  return Tensor::wrap(out);
}

Tensor relu(const Tensor& a) {
  auto out = make_output(a.shape());
  const auto& x = a.data();
  for (std::size_t i = 0; i < x.size(); ++i) out->data[i] = x[i] > 0.0 ? x[i] : 0.0;
  if (g_recording && flows(a.impl())) {
    out->tracked = true;
    ImplPtr ai = a.impl(), oi = out;
    record([ai, oi] {
      if (!oi->grad) return;
      ai->ensure_grad();
      const auto& dy = *oi->grad;
      for (std::size_t i = 0; i < dy.size(); ++i)
        if (ai->data[i] > 0.0) (*ai->grad)[i] += dy[i];
    });
  }
  return Tensor::wrap(out);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_rank(a, 2, "matmul");
  check_rank(b, 2, "matmul");
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  auto out = make_output({m, n});
  kernels::matmul(a.data().data(), b.data().data(), out->data.data(), m, k, n, false, false,
                  false);
  const bool need_a = flows(a.impl());
  const bool need_b = flows(b.impl());
  if (g_recording && (need_a || need_b)) {
    out->tracked = true;
    ImplPtr ai = a.impl(), bi = b.impl(), oi = out;
    record([ai, bi, oi, m, k, n, need_a, need_b] {
      if (!oi->grad) return;
      const double* dc = oi->grad->data();
      if (need_a) {
        ai->ensure_grad();
        kernels::matmul(dc, bi->data.data(), ai->grad->data(), m, n, k, false, true, true);
      }
      if (need_b) {
        bi->ensure_grad();
        kernels::matmul(ai->data.data(), dc, bi->grad->data(), k, m, n, true, false, true);
      }
    });
  }
  return Tensor::wrap(out);
}

Tensor conv2d(const Tensor& x, const Tensor& k, std::int64_t stride, std::int64_t pad) {
  check_rank(x, 4, "conv2d input");
  check_rank(k, 4, "conv2d kernel");
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (pad < 0) throw ShapeError("conv2d: pad must be >= 0");
  kernels::Conv2dDims d;
  d.batch = x.dim(0);
  d.in_channels = x.dim(1);
  d.in_h = x.dim(2);
  d.in_w = x.dim(3);
  d.out_channels = k.dim(0);
  d.k_h = k.dim(2);
  d.k_w = k.dim(3);
  d.stride = stride;
  d.pad = pad;
  if (k.dim(1) != d.in_channels)
    throw ShapeError("conv2d: kernel channels " + std::to_string(k.dim(1)) +
                     " do not match input channels " + std::to_string(d.in_channels));
  if (d.k_h > d.in_h + 2 * pad || d.k_w > d.in_w + 2 * pad)
    throw ShapeError("conv2d: kernel " + shape_str(k.shape()) + " larger than padded input " +
                     shape_str(x.shape()));
  d.out_h = (d.in_h + 2 * pad - d.k_h) / stride + 1;
  d.out_w = (d.in_w + 2 * pad - d.k_w) / stride + 1;
  auto out = make_output({d.batch, d.out_channels, d.out_h, d.out_w});
  kernels::conv2d_forward(x.data().data(), k.data().data(), out->data.data(), d);
  const bool need_x = flows(x.impl());
  const bool need_k = flows(k.impl());
  if (g_recording && (need_x || need_k)) {
    out->tracked = true;
    ImplPtr xi = x.impl(), ki = k.impl(), oi = out;
    record([xi, ki, oi, d, need_x, need_k] {
      if (!oi->grad) return;
      const double* dy = oi->grad->data();
      if (need_x) {
        xi->ensure_grad();
        kernels::conv2d_input_grad(dy, ki->data.data(), xi->grad->data(), d);
      }
      if (need_k) {
        ki->ensure_grad();
        kernels::conv2d_kernel_grad(xi->data.data(), dy, ki->grad->data(), d);
      }
    });
  }
  return Tensor::wrap(out);
}

Tensor avg_pool2(const Tensor& x) {
  check_rank(x, 4, "avg_pool2");
  const std::int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0)
    throw ShapeError("avg_pool2: spatial dims must be even, got " + shape_str(x.shape()));
  const std::int64_t oh = h / 2, ow = w / 2;
  auto out = make_output({b, c, oh, ow});
  const double* in = x.data().data();
  for (std::int64_t p = 0; p < b * c; ++p) {
    const double* ip = in + p * h * w;
    double* op = out->data.data() + p * oh * ow;
    for (std::int64_t i = 0; i < oh; ++i)
      for (std::int64_t j = 0; j < ow; ++j) {
        const double* r0 = ip + (2 * i) * w + 2 * j;
        const double* r1 = r0 + w;
        op[i * ow + j] = (r0[0] + r0[1] + r1[0] + r1[1]) * 0.25;
      }
  }
  if (g_recording && flows(x.impl())) {
    out->tracked = true;
    ImplPtr xi = x.impl(), oi = out;
    record([xi, oi, b, c, h, w, oh, ow] {
      if (!oi->grad) return;
      xi->ensure_grad();
      const double* dy = oi->grad->data();
      double* dx = xi->grad->data();
      for (std::int64_t p = 0; p < b * c; ++p) {
        const double* dyp = dy + p * oh * ow;
        double* dxp = dx + p * h * w;
        for (std::int64_t i = 0; i < oh; ++i)
          for (std::int64_t j = 0; j < ow; ++j) {
            const double g = dyp[i * ow + j] * 0.25;
            double* r0 = dxp + (2 * i) * w + 2 * j;
            double* r1 = r0 + w;
            r0[0] += g;
            r0[1] += g;
            r1[0] += g;
            r1[1] += g;
          }
      }
    });
  }
  return Tensor::wrap(out);
}

Tensor global_avg_pool(const Tensor& x) {
  check_rank(x, 4, "global_avg_pool");
  const std::int64_t b = x.dim(0), d = x.dim(1), h = x.dim(2), w = x.dim(3);
  auto out = make_output({b, d});
  const double inv = 1.0 / static_cast<double>(h * w);
  const double* in = x.data().data();
  for (std::int64_t p = 0; p < b * d; ++p) {
    const double* ip = in + p * h * w;
    double acc = 0.0;
    for (std::int64_t i = 0; i < h * w; ++i) acc += ip[i];
    out->data[p] = acc * inv;
  }
  if (g_recording && flows(x.impl())) {
    out->tracked = true;
    ImplPtr xi = x.impl(), oi = out;
    record([xi, oi, b, d, h, w, inv] {
      if (!oi->grad) return;
      xi->ensure_grad();
      const double* dy = oi->grad->data();
      double* dx = xi->grad->data();
      for (std::int64_t p = 0; p < b * d; ++p) {
        const double g = dy[p] * inv;
        double* dxp = dx + p * h * w;
        for (std::int64_t i = 0; i < h * w; ++i) dxp[i] += g;
      }
    });
  }
  return Tensor::wrap(out);
}

Tensor bias_add(const Tensor& x, const Tensor& bias) {
  check_rank(bias, 1, "bias_add bias");
  const std::size_t rank = x.shape().size();
  if (rank != 2 && rank != 4)
    throw ShapeError("bias_add: input must be rank 2 or 4, got " + shape_str(x.shape()));
  const std::int64_t c = x.dim(1);
  if (bias.dim(0) != c)
    throw ShapeError("bias_add: bias " + shape_str(bias.shape()) + " does not match channels " +
                     std::to_string(c));
  const std::int64_t b = x.dim(0);
  const std::int64_t plane = rank == 4 ? x.dim(2) * x.dim(3) : 1;
  auto out = make_output(x.shape());
  const double* in = x.data().data();
  const double* bv = bias.data().data();
  for (std::int64_t bi = 0; bi < b; ++bi)
    for (std::int64_t ci = 0; ci < c; ++ci) {
      const double add_v = bv[ci];
      const std::int64_t base = (bi * c + ci) * plane;
      for (std::int64_t i = 0; i < plane; ++i) out->data[base + i] = in[base + i] + add_v;
    }
  const bool need_x = flows(x.impl());
  const bool need_b = flows(bias.impl());
  if (g_recording && (need_x || need_b)) {
    out->tracked = true;
    ImplPtr xi = x.impl(), bi2 = bias.impl(), oi = out;
    record([xi, bi2, oi, b, c, plane, need_x, need_b] {
      if (!oi->grad) return;
      const auto& dy = *oi->grad;
      if (need_x) {
        xi->ensure_grad();
        for (std::size_t i = 0; i < dy.size(); ++i) (*xi->grad)[i] += dy[i];
      }
      if (need_b) {
        bi2->ensure_grad();
        for (std::int64_t bb = 0; bb < b; ++bb)
          for (std::int64_t cc = 0; cc < c; ++cc) {
            const std::int64_t base = (bb * c + cc) * plane;
            double acc = 0.0;
            for (std::int64_t i = 0; i < plane; ++i) acc += dy[base + i];
            (*bi2->grad)[cc] += acc;
          }
      }
    });
  }
  return Tensor::wrap(out);
}

Tensor softmax(const Tensor& logits) {
  check_rank(logits, 2, "softmax");
  const std::int64_t b = logits.dim(0), c = logits.dim(1);
  auto out = make_output(logits.shape());
  softmax_rows(logits.data().data(), out->data.data(), b, c);
  if (g_recording && flows(logits.impl())) {
    out->tracked = true;
    ImplPtr li = logits.impl(), oi = out;
    record([li, oi, b, c] {
      if (!oi->grad) return;
      li->ensure_grad();
      const double* p = oi->data.data();
      const double* dy = oi->grad->data();
      double* dx = li->grad->data();
      for (std::int64_t r = 0; r < b; ++r) {
        const double* pr = p + r * c;
        const double* dyr = dy + r * c;
        double dot = 0.0;
        for (std::int64_t j = 0; j < c; ++j) dot += dyr[j] * pr[j];
        double* dxr = dx + r * c;
        for (std::int64_t j = 0; j < c; ++j) dxr[j] += pr[j] * (dyr[j] - dot);
      }
    });
  }
  return Tensor::wrap(out);
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  check_rank(logits, 2, "cross_entropy");
  const std::int64_t b = logits.dim(0), c = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != b)
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                     std::to_string(b));
  for (int y : labels)
    if (y < 0 || y >= c)
      throw DomainError("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                        std::to_string(c) + ")");
  auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(b * c));
  softmax_rows(logits.data().data(), probs->data(), b, c);
  double loss = 0.0;
  for (std::int64_t r = 0; r < b; ++r)
    loss -= std::log(std::max((*probs)[r * c + labels[r]], kLogClamp));
  loss /= static_cast<double>(b);
  auto out = make_output({1});
  out->data[0] = loss;
  if (g_recording && flows(logits.impl())) {
    out->tracked = true;
    ImplPtr li = logits.impl(), oi = out;
    auto lab = std::make_shared<std::vector<int>>(labels);
    record([li, oi, probs, lab, b, c] {
      if (!oi->grad) return;
      li->ensure_grad();
      const double up = (*oi->grad)[0] / static_cast<double>(b);
      double* dx = li->grad->data();
      for (std::int64_t r = 0; r < b; ++r) {
        const double* pr = probs->data() + r * c;
        double* dxr = dx + r * c;
        for (std::int64_t j = 0; j < c; ++j) {
          const double onehot = j == (*lab)[r] ? 1.0 : 0.0;
          dxr[j] += up * (pr[j] - onehot);
        }
      }
    });
  }
  return Tensor::wrap(out);
}

Tensor kl_div(const Tensor& teacher_logits, const Tensor& student_logits) {
  check_same_shape(teacher_logits, student_logits, "kl_div");
  check_rank(teacher_logits, 2, "kl_div");
  const std::int64_t b = teacher_logits.dim(0), c = teacher_logits.dim(1);
  auto pt = std::make_shared<std::vector<double>>(static_cast<std::size_t>(b * c));
  auto ps = std::make_shared<std::vector<double>>(static_cast<std::size_t>(b * c));
  softmax_rows(teacher_logits.data().data(), pt->data(), b, c);
  softmax_rows(student_logits.data().data(), ps->data(), b, c);
  auto gap = std::make_shared<std::vector<double>>(static_cast<std::size_t>(b * c));
  auto row_kl = std::make_shared<std::vector<double>>(static_cast<std::size_t>(b));
  double loss = 0.0;
  for (std::int64_t r = 0; r < b; ++r) {
    double acc = 0.0;
    for (std::int64_t j = 0; j < c; ++j) {
      const std::size_t i = static_cast<std::size_t>(r * c + j);
      const double g = std::log(std::max((*pt)[i], kLogClamp)) -
                       std::log(std::max((*ps)[i], kLogClamp));
      (*gap)[i] = g;
      acc += (*pt)[i] * g;
    }
    (*row_kl)[r] = acc;
    loss += acc;
  }
  loss /= static_cast<double>(b);
  auto out = make_output({1});
  out->data[0] = loss;
  const bool need_t = flows(teacher_logits.impl());
  const bool need_s = flows(student_logits.impl());
  if (g_recording && (need_t || need_s)) {
    out->tracked = true;
    ImplPtr ti = teacher_logits.impl(), si = student_logits.impl(), oi = out;
    record([ti, si, oi, pt, ps, gap, row_kl, b, c, need_t, need_s] {
      if (!oi->grad) return;
      const double up = (*oi->grad)[0] / static_cast<double>(b);
      if (need_t) {
        ti->ensure_grad();
        double* dt = ti->grad->data();
        for (std::int64_t r = 0; r < b; ++r)
          for (std::int64_t j = 0; j < c; ++j) {
            const std::size_t i = static_cast<std::size_t>(r * c + j);
            dt[i] += up * (*pt)[i] * ((*gap)[i] - (*row_kl)[r]);
          }
      }
      if (need_s) {
        si->ensure_grad();
        double* ds = si->grad->data();
        for (std::int64_t r = 0; r < b; ++r)
          for (std::int64_t j = 0; j < c; ++j) {
            const std::size_t i = static_cast<std::size_t>(r * c + j);
            ds[i] += up * ((*ps)[i] - (*pt)[i]);
          }
      }
    });
  }
  return Tensor::wrap(out);
}

Tensor stop_gradient(const Tensor& x) {
  auto out = make_output(x.shape());
  out->data = x.data();
  return Tensor::wrap(out);
}

Tensor sum(const Tensor& x) {
  auto out = make_output({1});
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  out->data[0] = acc;
  if (g_recording && flows(x.impl())) {
    out->tracked = true;
    ImplPtr xi = x.impl(), oi = out;
    record([xi, oi] {
      if (!oi->grad) return;
      xi->ensure_grad();
      const double up = (*oi->grad)[0];
      for (double& g : *xi->grad) g += up;
    });
  }
  return Tensor::wrap(out);
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw ContractError("backward requires a scalar loss, got " + shape_str(loss.shape()));
  if (!loss.impl()->tracked)
    throw ContractError("backward: loss was not produced by recorded primitives");
  loss.impl()->ensure_grad();
  (*loss.impl()->grad)[0] = 1.0;
  for (auto it = g_tape.rbegin(); it != g_tape.rend(); ++it) (*it)();
  g_tape.clear();
}

void sgd_step(std::vector<double>& param, const std::vector<double>& grad,
              std::vector<double>& velocity, double lr, double momentum, double weight_decay) {
  if (param.size() != grad.size())
    throw ContractError("sgd_step: gradient size does not match parameter size");
  if (velocity.size() != param.size()) velocity.assign(param.size(), 0.0);
  for (std::size_t i = 0; i < param.size(); ++i) {
    velocity[i] = momentum * velocity[i] + (grad[i] + weight_decay * param[i]);
    param[i] -= lr * velocity[i];
  }
}

void Sgd::step(const std::string& name, Tensor& param) {
  auto& vel = velocity_[name];
  sgd_step(param.mutable_data(), param.grad(), vel, lr_, momentum_, weight_decay_);
}

namespace detail {
std::size_t tape_size() { return g_tape.size(); }
void clear_tape() { g_tape.clear(); }
}  // namespace detail

}  // namespace psd
