// Compares the OpenMP kernels against the serial reference: wall time and
// bitwise agreement on a conv workload shaped like one training batch.
#include <chrono>
#include <cstdio>
#include <cstring>
#include <vector>

#include "psd/kernels.hpp"
#include "psd/rng.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double seconds(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double>(b - a).count();
}

void fill_random(std::vector<double>& v, psd::Rng& rng) {
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
}

template <class F>
double time_best(F&& f, int reps) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    auto t0 = Clock::now();
    f();
    auto t1 = Clock::now();
    best = std::min(best, seconds(t0, t1));
  }
  return best;
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

int main() {
  psd::Rng rng(12345);
  psd::kernels::Conv2dDims d;
  d.batch = 32;
  d.in_channels = 16;
  d.in_h = 16;
  d.in_w = 16;
  d.out_channels = 32;
  d.k_h = 3;
  d.k_w = 3;
  d.stride = 1;
  d.pad = 1;
  d.out_h = 16;
  d.out_w = 16;

  std::vector<double> x(d.batch * d.in_channels * d.in_h * d.in_w);
  std::vector<double> k(d.out_channels * d.in_channels * d.k_h * d.k_w);
  std::vector<double> y(d.batch * d.out_channels * d.out_h * d.out_w);
  std::vector<double> y_ref(y.size());
  std::vector<double> dy(y.size());
  std::vector<double> dx(x.size()), dx_ref(x.size());
  std::vector<double> dk(k.size()), dk_ref(k.size());
  fill_random(x, rng);
  fill_random(k, rng);
  fill_random(dy, rng);

  const int reps = 5;
  bool all_equal = true;
  std::printf("%-16s %12s %12s %9s  %s\n", "kernel", "serial (ms)", "openmp (ms)", "speedup",
              "bitwise");

  double ts = time_best([&] { psd::kernels::serial::conv2d_forward(x.data(), k.data(),
                                                                   y_ref.data(), d); }, reps);
  double tp = time_best([&] { psd::kernels::conv2d_forward(x.data(), k.data(), y.data(), d); },
                        reps);
  bool eq = bitwise_equal(y, y_ref);
  all_equal = all_equal && eq;
  std::printf("%-16s %12.3f %12.3f %8.2fx  %s\n", "conv_forward", ts * 1e3, tp * 1e3, ts / tp,
              eq ? "equal" : "MISMATCH");

  std::fill(dx.begin(), dx.end(), 0.0);
  std::fill(dx_ref.begin(), dx_ref.end(), 0.0);
  ts = time_best([&] {
    std::fill(dx_ref.begin(), dx_ref.end(), 0.0);
    psd::kernels::serial::conv2d_input_grad(dy.data(), k.data(), dx_ref.data(), d);
  }, reps);
  tp = time_best([&] {
    std::fill(dx.begin(), dx.end(), 0.0);
    psd::kernels::conv2d_input_grad(dy.data(), k.data(), dx.data(), d);
  }, reps);
  eq = bitwise_equal(dx, dx_ref);
  all_equal = all_equal && eq;
  std::printf("%-16s %12.3f %12.3f %8.2fx  %s\n", "conv_input_grad", ts * 1e3, tp * 1e3, ts / tp,
              eq ? "equal" : "MISMATCH");

  ts = time_best([&] {
    std::fill(dk_ref.begin(), dk_ref.end(), 0.0);
    psd::kernels::serial::conv2d_kernel_grad(x.data(), dy.data(), dk_ref.data(), d);
  }, reps);
  tp = time_best([&] {
    std::fill(dk.begin(), dk.end(), 0.0);
    psd::kernels::conv2d_kernel_grad(x.data(), dy.data(), dk.data(), d);
  }, reps);
  eq = bitwise_equal(dk, dk_ref);
  all_equal = all_equal && eq;
  std::printf("%-16s %12.3f %12.3f %8.2fx  %s\n", "conv_kernel_grad", ts * 1e3, tp * 1e3, ts / tp,
              eq ? "equal" : "MISMATCH");

  const std::int64_t m = 256, kk = 256, n = 256;
  std::vector<double> a(m * kk), bmat(kk * n), c(m * n), c_ref(m * n);
  fill_random(a, rng);
  fill_random(bmat, rng);
  ts = time_best([&] { psd::kernels::serial::matmul(a.data(), bmat.data(), c_ref.data(), m, kk, n,
                                                    false, false, false); }, reps);
  tp = time_best([&] { psd::kernels::matmul(a.data(), bmat.data(), c.data(), m, kk, n, false,
                                            false, false); }, reps);
  eq = bitwise_equal(c, c_ref);
  all_equal = all_equal && eq;
  std::printf("%-16s %12.3f %12.3f %8.2fx  %s\n", "matmul_256", ts * 1e3, tp * 1e3, ts / tp,
              eq ? "equal" : "MISMATCH");

  std::printf("%s\n", all_equal ? "all kernels bitwise equal" : "BITWISE MISMATCH DETECTED");
  return all_equal ? 0 : 1;
}
