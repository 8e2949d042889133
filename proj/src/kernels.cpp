#include "psd/kernels.hpp"

#include <algorithm>

namespace psd::kernels {

namespace {

// Four independent accumulator chains; the summation order is fixed in source,
// so the result does not depend on optimization level or thread count.
inline double dot4(const double* a, const double* b, std::int64_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  double tail = 0.0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((s0 + s1) + (s2 + s3)) + tail;
}

// Valid output range [lo, hi) so that ow*stride + shift lands in [0, limit).
inline void valid_range(std::int64_t shift, std::int64_t stride, std::int64_t limit,
                        std::int64_t count, std::int64_t& lo, std::int64_t& hi) {
  lo = 0;
  if (shift < 0) lo = (-shift + stride - 1) / stride;
  hi = count;
  std::int64_t top = limit - shift;  // need ow*stride < top
  if (top <= 0) {
    hi = lo;
    return;
  }
  hi = std::min(count, (top + stride - 1) / stride);
  if (hi < lo) hi = lo;
}

// One (b, o) output plane: y[b,o,:,:] = sum over (c,kh,kw) of shifted x rows.
void conv2d_forward_plane(const double* x, const double* k, double* y, const Conv2dDims& d,
                          std::int64_t b, std::int64_t o) {
  const std::int64_t plane = d.out_h * d.out_w;
  double* yp = y + (b * d.out_channels + o) * plane;
  std::fill(yp, yp + plane, 0.0);
  for (std::int64_t c = 0; c < d.in_channels; ++c) {
    const double* xc = x + (b * d.in_channels + c) * d.in_h * d.in_w;
    const double* kc = k + (o * d.in_channels + c) * d.k_h * d.k_w;
    for (std::int64_t kh = 0; kh < d.k_h; ++kh) {
      for (std::int64_t kw = 0; kw < d.k_w; ++kw) {
        const double kval = kc[kh * d.k_w + kw];
        const std::int64_t shift = kw - d.pad;
        std::int64_t lo, hi;
        valid_range(shift, d.stride, d.in_w, d.out_w, lo, hi);
        for (std::int64_t oh = 0; oh < d.out_h; ++oh) {
          const std::int64_t ih = oh * d.stride + kh - d.pad;
          if (ih < 0 || ih >= d.in_h) continue;
          const double* xrow = xc + ih * d.in_w;
          double* yrow = yp + oh * d.out_w;
          if (d.stride == 1) {
            const double* xs = xrow + shift;
            for (std::int64_t ow = lo; ow < hi; ++ow) yrow[ow] += kval * xs[ow];
          } else {
            for (std::int64_t ow = lo; ow < hi; ++ow)
              yrow[ow] += kval * xrow[ow * d.stride + shift];
          }
        }
      }
    }
  }
}

// One (b, c) input-gradient plane, gathering from all output channels.
void conv2d_input_grad_plane(const double* dy, const double* k, double* dx, const Conv2dDims& d,
                             std::int64_t b, std::int64_t c) {
  double* dxp = dx + (b * d.in_channels + c) * d.in_h * d.in_w;
  for (std::int64_t o = 0; o < d.out_channels; ++o) {
    const double* dyp = dy + (b * d.out_channels + o) * d.out_h * d.out_w;
    const double* kc = k + (o * d.in_channels + c) * d.k_h * d.k_w;
    for (std::int64_t kh = 0; kh < d.k_h; ++kh) {
      for (std::int64_t kw = 0; kw < d.k_w; ++kw) {
        const double kval = kc[kh * d.k_w + kw];
        const std::int64_t shift = kw - d.pad;
        std::int64_t lo, hi;
        valid_range(shift, d.stride, d.in_w, d.out_w, lo, hi);
        for (std::int64_t oh = 0; oh < d.out_h; ++oh) {
          const std::int64_t ih = oh * d.stride + kh - d.pad;
          if (ih < 0 || ih >= d.in_h) continue;
          const double* dyrow = dyp + oh * d.out_w;
          double* dxrow = dxp + ih * d.in_w;
          if (d.stride == 1) {
            double* dxs = dxrow + shift;
            for (std::int64_t ow = lo; ow < hi; ++ow) dxs[ow] += kval * dyrow[ow];
          } else {
            for (std::int64_t ow = lo; ow < hi; ++ow)
              dxrow[ow * d.stride + shift] += kval * dyrow[ow];
          }
        }
      }
    }
  }
}

// One (o, c) kernel-gradient tile.
void conv2d_kernel_grad_tile(const double* x, const double* dy, double* dk, const Conv2dDims& d,
                             std::int64_t o, std::int64_t c) {
  double* dkp = dk + (o * d.in_channels + c) * d.k_h * d.k_w;
  for (std::int64_t kh = 0; kh < d.k_h; ++kh) {
    for (std::int64_t kw = 0; kw < d.k_w; ++kw) {
      const std::int64_t shift = kw - d.pad;
      std::int64_t lo, hi;
      valid_range(shift, d.stride, d.in_w, d.out_w, lo, hi);
      double acc = 0.0;
      for (std::int64_t b = 0; b < d.batch; ++b) {
        const double* xc = x + (b * d.in_channels + c) * d.in_h * d.in_w;
        const double* dyp = dy + (b * d.out_channels + o) * d.out_h * d.out_w;
        for (std::int64_t oh = 0; oh < d.out_h; ++oh) {
          const std::int64_t ih = oh * d.stride + kh - d.pad;
          if (ih < 0 || ih >= d.in_h) continue;
          const double* dyrow = dyp + oh * d.out_w;
          const double* xrow = xc + ih * d.in_w;
          if (d.stride == 1) {
            acc += dot4(dyrow + lo, xrow + lo + shift, hi - lo);
          } else {
            for (std::int64_t ow = lo; ow < hi; ++ow)
              acc += dyrow[ow] * xrow[ow * d.stride + shift];
          }
        }
      }
      dkp[kh * d.k_w + kw] += acc;
    }
  }
}

inline const double* mat_row(const double* m, std::int64_t row, std::int64_t cols) {
  return m + row * cols;
}

// c[i,j] (+)= sum_k a(i,k) b(k,j) with explicit index maps per transpose flag.
void matmul_rows(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
                 std::int64_t n, bool ta, bool tb, bool accumulate, std::int64_t i0,
                 std::int64_t i1) {
  for (std::int64_t i = i0; i < i1; ++i) {
    double* crow = c + i * n;
    if (!accumulate) std::fill(crow, crow + n, 0.0);
    if (!ta && !tb) {
      const double* arow = mat_row(a, i, k);
      for (std::int64_t p = 0; p < k; ++p) {
        const double av = arow[p];
        const double* brow = mat_row(b, p, n);
        for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    } else if (!ta && tb) {
      const double* arow = mat_row(a, i, k);
      for (std::int64_t j = 0; j < n; ++j) crow[j] += dot4(arow, mat_row(b, j, k), k);
    } else if (ta && !tb) {
      for (std::int64_t p = 0; p < k; ++p) {
        const double av = a[p * m + i];
        const double* brow = mat_row(b, p, n);
        for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    } else {
      for (std::int64_t p = 0; p < k; ++p) {
        const double av = a[p * m + i];
        for (std::int64_t j = 0; j < n; ++j) crow[j] += av * b[j * k + p];
      }
    }
  }
}

}  // namespace

void conv2d_forward(const double* x, const double* k, double* y, const Conv2dDims& d) {
  const std::int64_t units = d.batch * d.out_channels;
#pragma omp parallel for schedule(static) if (units > 1)
  for (std::int64_t u = 0; u < units; ++u) {
    conv2d_forward_plane(x, k, y, d, u / d.out_channels, u % d.out_channels);
  }
}

void conv2d_input_grad(const double* dy, const double* k, double* dx, const Conv2dDims& d) {
  const std::int64_t units = d.batch * d.in_channels;
#pragma omp parallel for schedule(static) if (units > 1)
  for (std::int64_t u = 0; u < units; ++u) {
    conv2d_input_grad_plane(dy, k, dx, d, u / d.in_channels, u % d.in_channels);
  }
}

void conv2d_kernel_grad(const double* x, const double* dy, double* dk, const Conv2dDims& d) {
  const std::int64_t units = d.out_channels * d.in_channels;
#pragma omp parallel for schedule(static) if (units > 1)
  for (std::int64_t u = 0; u < units; ++u) {
    conv2d_kernel_grad_tile(x, dy, dk, d, u / d.in_channels, u % d.in_channels);
  }
}

void matmul(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
            std::int64_t n, bool transpose_a, bool transpose_b, bool accumulate) {
#pragma omp parallel for schedule(static) if (m * n * k > 16384)
  for (std::int64_t i = 0; i < m; ++i) {
    matmul_rows(a, b, c, m, k, n, transpose_a, transpose_b, accumulate, i, i + 1);
  }
}

namespace serial {

void conv2d_forward(const double* x, const double* k, double* y, const Conv2dDims& d) {
  for (std::int64_t b = 0; b < d.batch; ++b)
    for (std::int64_t o = 0; o < d.out_channels; ++o) conv2d_forward_plane(x, k, y, d, b, o);
}

void conv2d_input_grad(const double* dy, const double* k, double* dx, const Conv2dDims& d) {
  for (std::int64_t b = 0; b < d.batch; ++b)
    for (std::int64_t c = 0; c < d.in_channels; ++c) conv2d_input_grad_plane(dy, k, dx, d, b, c);
}

void conv2d_kernel_grad(const double* x, const double* dy, double* dk, const Conv2dDims& d) {
  for (std::int64_t o = 0; o < d.out_channels; ++o)
    for (std::int64_t c = 0; c < d.in_channels; ++c) conv2d_kernel_grad_tile(x, dy, dk, d, o, c);
}

void matmul(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
            std::int64_t n, bool transpose_a, bool transpose_b, bool accumulate) {
  matmul_rows(a, b, c, m, k, n, transpose_a, transpose_b, accumulate, 0, m);
}

}  // namespace serial

}  // namespace psd::kernels
