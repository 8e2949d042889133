#pragma once

#include <cstdint>

namespace psd::kernels {

// Dense f64 compute kernels. Layouts are row-major: x[B,C,H,W], k[O,C,Kh,Kw],
// y[B,O,Ho,Wo]. Convolution is cross-correlation with zero padding.
//
// Every kernel has an OpenMP-parallel entry point and a serial reference
// (kernels::serial) that runs the identical per-partition workers in a plain
// loop. A partition (one (b,o), (b,c) or (o,c) slice) is always computed by a
// single thread with a fixed inner accumulation order, so the parallel result
// is bitwise identical to the serial one for any thread count.

struct Conv2dDims {
  std::int64_t batch;
  std::int64_t in_channels;
  std::int64_t in_h;
  std::int64_t in_w;
  std::int64_t out_channels;
  std::int64_t k_h;
  std::int64_t k_w;
  std::int64_t stride;
  std::int64_t pad;
  std::int64_t out_h;
  std::int64_t out_w;
};

void conv2d_forward(const double* x, const double* k, double* y, const Conv2dDims& d);
// Accumulates into dx / dk (callers zero-initialize or chain gradients).
void conv2d_input_grad(const double* dy, const double* k, double* dx, const Conv2dDims& d);
void conv2d_kernel_grad(const double* x, const double* dy, double* dk, const Conv2dDims& d);

// c[M,N] (+)= op_a(a) * op_b(b), where op transposes the stored matrix.
// a is stored MxK (or KxM when transpose_a), b is KxN (or NxK when transpose_b).
void matmul(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
            std::int64_t n, bool transpose_a, bool transpose_b, bool accumulate);

namespace serial {
void conv2d_forward(const double* x, const double* k, double* y, const Conv2dDims& d);
void conv2d_input_grad(const double* dy, const double* k, double* dx, const Conv2dDims& d);
void conv2d_kernel_grad(const double* x, const double* dy, double* dk, const Conv2dDims& d);
void matmul(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
            std::int64_t n, bool transpose_a, bool transpose_b, bool accumulate);
}  // namespace serial

}  // namespace psd::kernels
