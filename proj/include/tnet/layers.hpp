#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tnet/error.hpp"
#include "tnet/rng.hpp"
#include "tnet/tensor.hpp"

namespace tnet {

enum class Mode { Train, Eval };
enum class Padding { Same, Valid };

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

inline void relu_inplace(Tensor& t) {
  for (double& v : t.data) v = v > 0.0 ? v : 0.0;
}

enum class Act { ReLU, Sigmoid };

inline Tensor activation_forward(const Tensor& x, Act kind) {
  Tensor y = x;
  if (kind == Act::ReLU) {
    relu_inplace(y);
  } else {
    for (double& v : y.data) v = sigmoid(v);
  }
  return y;
}

// Backward from the cached forward output: ReLU masks on y > 0, sigmoid
// uses y * (1 - y).
inline Tensor activation_backward(const Tensor& grad, const Tensor& output, Act kind) {
  if (!grad.same_shape(output))
    fail(ErrorCategory::dimension, "activation backward shape mismatch: " +
                                       grad.shape_str() + " vs " + output.shape_str());
  Tensor gx = grad;
  if (kind == Act::ReLU) {
    for (std::size_t i = 0; i < gx.data.size(); ++i)
      if (!(output.data[i] > 0.0)) gx.data[i] = 0.0;
  } else {
    for (std::size_t i = 0; i < gx.data.size(); ++i)
      gx.data[i] *= output.data[i] * (1.0 - output.data[i]);
  }
  return gx;
}

namespace detail {

// y += a * x. The restrict-qualified helpers below keep the hot loops
// vectorizable; callers guarantee the spans do not overlap.
inline void axpy(std::size_t n, double a, const double* __restrict x, double* __restrict y) {
  for (std::size_t j = 0; j < n; ++j) y[j] += a * x[j];
}

// Eight-wide double vectors via the GCC/Clang vector extension. Values
// of this type are ordinary SSA values that the register allocator
// keeps in SIMD registers; accumulator arrays written as plain C arrays
// tend to bounce through the stack instead. Every reduction combines
// its lanes in one fixed order, so results are reproducible run to run.
#if defined(__GNUC__) || defined(__clang__)
#define TNET_VEC 1
typedef double v8d __attribute__((vector_size(64), aligned(8), may_alias));

inline v8d vload(const double* p) { return *reinterpret_cast<const v8d*>(p); }
inline void vstore(double* p, v8d v) { *reinterpret_cast<v8d*>(p) = v; }
inline v8d vsplat(double x) { return v8d{x, x, x, x, x, x, x, x}; }
inline double hsum(v8d v) {
  return ((v[0] + v[1]) + (v[2] + v[3])) + ((v[4] + v[5]) + (v[6] + v[7]));
}
#endif

// Lane-parallel dot product. Four independent accumulators hide the
// multiply-add latency; the combination order is fixed.
inline double dot(std::size_t n, const double* __restrict a, const double* __restrict b) {
#ifdef TNET_VEC
  v8d s0 = {}, s1 = {}, s2 = {}, s3 = {};
  std::size_t p = 0;
  for (; p + 32 <= n; p += 32) {
    s0 += vload(a + p) * vload(b + p);
    s1 += vload(a + p + 8) * vload(b + p + 8);
    s2 += vload(a + p + 16) * vload(b + p + 16);
    s3 += vload(a + p + 24) * vload(b + p + 24);
  }
  for (; p + 8 <= n; p += 8) s0 += vload(a + p) * vload(b + p);
  double out = hsum((s0 + s1) + (s2 + s3));
  for (; p < n; ++p) out += a[p] * b[p];
  return out;
#else
  double acc[8] = {};
  std::size_t nv = n & ~std::size_t(7);
  for (std::size_t p = 0; p < nv; p += 8)
    for (int j = 0; j < 8; ++j) acc[j] += a[p + j] * b[p + j];
  double out = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
  for (std::size_t p = nv; p < n; ++p) out += a[p] * b[p];
  return out;
#endif
}

// Eight-lane sum with the same fixed combination order as dot().
inline double lane_sum(std::size_t n, const double* __restrict a) {
  double acc[8] = {};
  std::size_t nv = n & ~std::size_t(7);
  for (std::size_t p = 0; p < nv; p += 8)
    for (int j = 0; j < 8; ++j) acc[j] += a[p + j];
  double out = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
  for (std::size_t p = nv; p < n; ++p) out += a[p];
  return out;
}

// C[M x N] += A . B with row-major matrices: B is [K x N] with row
// stride ldb, C is [M x N] with row stride ldc. A is [M x K] with row
// stride lda, or its transpose when trans_a is set. A 4x16 register
// tile keeps the accumulators out of memory across the K loop; per C
// element the K terms are always added in ascending order, so results
// do not depend on the tiling.
template <bool TransA>
inline void gemm_acc(std::size_t M, std::size_t N, std::size_t K, const double* __restrict a,
                     std::size_t lda, const double* __restrict b, std::size_t ldb,
                     double* __restrict c, std::size_t ldc) {
  auto a_at = [&](std::size_t m, std::size_t k) { return TransA ? a[k * lda + m] : a[m * lda + k]; };
  constexpr std::size_t MR = 4, NR = 16, KB = 512;
  // K is blocked so the active slice of B stays cache-resident while
  // every row tile passes over it. The 4x16 accumulator tile stays in
  // registers across the K loop; per C element the K terms are added in
  // ascending order, so results do not depend on the tiling.
  for (std::size_t k0 = 0; k0 < K; k0 += KB) {
    std::size_t k1 = std::min(K, k0 + KB);
    std::size_t m0 = 0;
    for (; m0 + MR <= M; m0 += MR) {
      std::size_t n0 = 0;
      for (; n0 + NR <= N; n0 += NR) {
#ifdef TNET_VEC
        v8d c00 = {}, c01 = {}, c10 = {}, c11 = {};
        v8d c20 = {}, c21 = {}, c30 = {}, c31 = {};
        for (std::size_t k = k0; k < k1; ++k) {
          const double* brow = b + k * ldb + n0;
          v8d bl = vload(brow), bh = vload(brow + 8);
          v8d a0 = vsplat(a_at(m0 + 0, k)), a1 = vsplat(a_at(m0 + 1, k));
          v8d a2 = vsplat(a_at(m0 + 2, k)), a3 = vsplat(a_at(m0 + 3, k));
          c00 += a0 * bl;
          c01 += a0 * bh;
          c10 += a1 * bl;
          c11 += a1 * bh;
          c20 += a2 * bl;
          c21 += a2 * bh;
          c30 += a3 * bl;
          c31 += a3 * bh;
        }
        double* r0 = c + (m0 + 0) * ldc + n0;
        double* r1 = c + (m0 + 1) * ldc + n0;
        double* r2 = c + (m0 + 2) * ldc + n0;
        double* r3 = c + (m0 + 3) * ldc + n0;
        vstore(r0, vload(r0) + c00);
        vstore(r0 + 8, vload(r0 + 8) + c01);
        vstore(r1, vload(r1) + c10);
        vstore(r1 + 8, vload(r1 + 8) + c11);
        vstore(r2, vload(r2) + c20);
        vstore(r2 + 8, vload(r2 + 8) + c21);
        vstore(r3, vload(r3) + c30);
        vstore(r3 + 8, vload(r3 + 8) + c31);
#else
        double acc[MR][NR] = {};
        for (std::size_t k = k0; k < k1; ++k) {
          const double* brow = b + k * ldb + n0;
          double a0 = a_at(m0 + 0, k), a1 = a_at(m0 + 1, k);
          double a2 = a_at(m0 + 2, k), a3 = a_at(m0 + 3, k);
          for (std::size_t j = 0; j < NR; ++j) {
            double bv = brow[j];
            acc[0][j] += a0 * bv;
            acc[1][j] += a1 * bv;
            acc[2][j] += a2 * bv;
            acc[3][j] += a3 * bv;
          }
        }
        for (std::size_t r = 0; r < MR; ++r) {
          double* crow = c + (m0 + r) * ldc + n0;
          for (std::size_t j = 0; j < NR; ++j) crow[j] += acc[r][j];
        }
#endif
      }
      for (; n0 < N; ++n0) {
        double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
        for (std::size_t k = k0; k < k1; ++k) {
          double bv = b[k * ldb + n0];
          s0 += a_at(m0 + 0, k) * bv;
          s1 += a_at(m0 + 1, k) * bv;
          s2 += a_at(m0 + 2, k) * bv;
          s3 += a_at(m0 + 3, k) * bv;
        }
        c[(m0 + 0) * ldc + n0] += s0;
        c[(m0 + 1) * ldc + n0] += s1;
        c[(m0 + 2) * ldc + n0] += s2;
        c[(m0 + 3) * ldc + n0] += s3;
      }
    }
    for (; m0 < M; ++m0)
      for (std::size_t k = k0; k < k1; ++k) axpy(N, a_at(m0, k), b + k * ldb, c + m0 * ldc);
  }
}

// C[M x N] += A . B^T where both A [M x K] and B [N x K] have
// contiguous K. Used when the reduction axis is the fast axis of both
// operands; lane sums use a fixed order, so results are reproducible.
inline void gemm_dot_acc(std::size_t M, std::size_t N, std::size_t K, const double* __restrict a,
                         std::size_t lda, const double* __restrict b, std::size_t ldb,
                         double* __restrict c, std::size_t ldc) {
  constexpr std::size_t MR = 2, NR = 4, KV = 8;
  std::size_t kv = K & ~(KV - 1);
  // N-major order: each block of B rows is loaded once and reused by
  // every row of A, which is the smaller operand here.
  std::size_t n0 = 0;
  for (; n0 + NR <= N; n0 += NR) {
    const double* b0 = b + (n0 + 0) * ldb;
    const double* b1 = b + (n0 + 1) * ldb;
    const double* b2 = b + (n0 + 2) * ldb;
    const double* b3 = b + (n0 + 3) * ldb;
    std::size_t m0 = 0;
    for (; m0 + MR <= M; m0 += MR) {
      const double* a0 = a + (m0 + 0) * lda;
      const double* a1 = a + (m0 + 1) * lda;
#ifdef TNET_VEC
      v8d d00 = {}, d01 = {}, d02 = {}, d03 = {};
      v8d d10 = {}, d11 = {}, d12 = {}, d13 = {};
      for (std::size_t k = 0; k < kv; k += KV) {
        v8d va0 = vload(a0 + k), va1 = vload(a1 + k);
        v8d vb0 = vload(b0 + k), vb1 = vload(b1 + k);
        v8d vb2 = vload(b2 + k), vb3 = vload(b3 + k);
        d00 += va0 * vb0;
        d01 += va0 * vb1;
        d02 += va0 * vb2;
        d03 += va0 * vb3;
        d10 += va1 * vb0;
        d11 += va1 * vb1;
        d12 += va1 * vb2;
        d13 += va1 * vb3;
      }
      double s00 = hsum(d00), s01 = hsum(d01), s02 = hsum(d02), s03 = hsum(d03);
      double s10 = hsum(d10), s11 = hsum(d11), s12 = hsum(d12), s13 = hsum(d13);
      for (std::size_t k = kv; k < K; ++k) {
        double av0 = a0[k], av1 = a1[k];
        s00 += av0 * b0[k];
        s01 += av0 * b1[k];
        s02 += av0 * b2[k];
        s03 += av0 * b3[k];
        s10 += av1 * b0[k];
        s11 += av1 * b1[k];
        s12 += av1 * b2[k];
        s13 += av1 * b3[k];
      }
      double* crow0 = c + (m0 + 0) * ldc + n0;
      double* crow1 = c + (m0 + 1) * ldc + n0;
      crow0[0] += s00;
      crow0[1] += s01;
      crow0[2] += s02;
      crow0[3] += s03;
      crow1[0] += s10;
      crow1[1] += s11;
      crow1[2] += s12;
      crow1[3] += s13;
#else
      const double* rows[MR] = {a0, a1};
      const double* cols[NR] = {b0, b1, b2, b3};
      double acc[MR][NR][KV] = {};
      for (std::size_t k = 0; k < kv; k += KV)
        for (std::size_t r = 0; r < MR; ++r)
          for (std::size_t s = 0; s < NR; ++s)
            for (std::size_t j = 0; j < KV; ++j) acc[r][s][j] += rows[r][k + j] * cols[s][k + j];
      for (std::size_t r = 0; r < MR; ++r)
        for (std::size_t s = 0; s < NR; ++s) {
          const double* v = acc[r][s];
          double sum = ((v[0] + v[1]) + (v[2] + v[3])) + ((v[4] + v[5]) + (v[6] + v[7]));
          for (std::size_t k = kv; k < K; ++k) sum += rows[r][k] * cols[s][k];
          c[(m0 + r) * ldc + n0 + s] += sum;
        }
#endif
    }
    for (; m0 < M; ++m0)
      for (std::size_t s = 0; s < NR; ++s)
        c[m0 * ldc + n0 + s] += dot(K, a + m0 * lda, b + (n0 + s) * ldb);
  }
  for (; n0 < N; ++n0)
    for (std::size_t m0 = 0; m0 < M; ++m0) c[m0 * ldc + n0] += dot(K, a + m0 * lda, b + n0 * ldb);
}

}  // namespace detail

// 1D cross-correlation over [channels x length] inputs.
struct Conv1D {
  int in_channels = 0;
  int out_channels = 0;
  int kernel_size = 0;
  Padding padding = Padding::Same;
  Tensor weights;  // [out_channels x in_channels x kernel_size]
  Tensor bias;     // [out_channels]

  struct Cache {
    Tensor input;
    bool ready = false;
  };

  struct Grads {
    Tensor input, weights, bias;
  };

  Conv1D() = default;

  Conv1D(int in_ch, int out_ch, int k, Padding pad) {
    if (in_ch < 1 || out_ch < 1)
      fail(ErrorCategory::argument, "conv needs at least one input and output channel");
    if (k < 1 || k % 2 == 0)
      fail(ErrorCategory::argument,
           "conv kernel size must be odd and positive, got " + std::to_string(k));
    in_channels = in_ch;
    out_channels = out_ch;
    kernel_size = k;
    padding = pad;
    weights = Tensor::zeros({std::size_t(out_ch), std::size_t(in_ch), std::size_t(k)});
    bias = Tensor::zeros({std::size_t(out_ch)});
  }

  static Conv1D glorot(int in_ch, int out_ch, int k, Padding pad, Rng& rng) {
    Conv1D c(in_ch, out_ch, k, pad);
    std::size_t fan_in = std::size_t(in_ch) * std::size_t(k);
    std::size_t fan_out = std::size_t(out_ch) * std::size_t(k);
    c.weights = glorot_uniform(fan_in, fan_out,
                               {std::size_t(out_ch), std::size_t(in_ch), std::size_t(k)}, rng);
    return c;
  }

  int left_pad() const { return padding == Padding::Same ? (kernel_size - 1) / 2 : 0; }

  int out_len(int in_len) const {
    if (padding == Padding::Same) {
      if (in_len < 1)
        fail(ErrorCategory::dimension, "conv needs input length >= 1");
      return in_len;
    }
    if (in_len < kernel_size)
      fail(ErrorCategory::dimension,
           "valid conv needs input length >= kernel size, got length " +
               std::to_string(in_len) + " with kernel " + std::to_string(kernel_size));
    return in_len - kernel_size + 1;
  }

  void check_input(const Tensor& x) const {
    if (x.rank() != 2 || x.shape[0] != std::size_t(in_channels))
      fail(ErrorCategory::dimension,
           "conv expects input [" + std::to_string(in_channels) + " x L], got " + x.shape_str());
  }

  void forward_into(const Tensor& x, Tensor& out) const {
    check_input(x);
    int L = int(x.shape[1]);
    int Lo = out_len(L);
    out.shape = {std::size_t(out_channels), std::size_t(Lo)};
    out.data.resize(std::size_t(out_channels) * std::size_t(Lo));
    int K = kernel_size, lp = left_pad();
    for (int o = 0; o < out_channels; ++o) {
      double* orow = out.data.data() + std::size_t(o) * Lo;
      std::fill(orow, orow + Lo, bias.data[o]);
    }
    const double* W = weights.data.data();
    std::size_t wstride = std::size_t(in_channels) * K;
    int o = 0;
    if (K == 5) {
      // Four output channels share each input load.
      for (; o + 4 <= out_channels; o += 4) {
        double* r0 = out.data.data() + std::size_t(o) * Lo;
        for (int i = 0; i < in_channels; ++i) {
          const double* xrow = x.data.data() + std::size_t(i) * L;
          const double* w0 = W + std::size_t(o) * wstride + std::size_t(i) * 5;
          corr5_x4(r0, r0 + Lo, r0 + 2 * Lo, r0 + 3 * Lo, xrow, w0, w0 + wstride,
                   w0 + 2 * wstride, w0 + 3 * wstride, L, Lo, lp);
        }
      }
    }
    for (; o < out_channels; ++o) {
      double* orow = out.data.data() + std::size_t(o) * Lo;
      for (int i = 0; i < in_channels; ++i) {
        const double* xrow = x.data.data() + std::size_t(i) * L;
        const double* w = W + std::size_t(o) * wstride + std::size_t(i) * K;
        if (K == 5)
          corr5(orow, xrow, w, L, Lo, lp);
        else
          corr_generic(orow, xrow, w, L, Lo, lp, K);
      }
    }
  }

  Tensor forward(const Tensor& x, Cache& cache) const {
    Tensor out;
    forward_into(x, out);
    cache.input = x;
    cache.ready = true;
    return out;
  }

  // Accumulates into the provided gradient buffers; callers zero them.
  void backward_into(const Tensor& grad_out, const Tensor& x, Tensor* grad_x,
                     double* grad_w, double* grad_b) const {
    check_input(x);
    int L = int(x.shape[1]);
    int Lo = out_len(L);
    if (grad_out.rank() != 2 || grad_out.shape[0] != std::size_t(out_channels) ||
        grad_out.shape[1] != std::size_t(Lo))
      fail(ErrorCategory::dimension,
           "conv backward expects grad [" + std::to_string(out_channels) + " x " +
               std::to_string(Lo) + "], got " + grad_out.shape_str());
    int K = kernel_size, lp = left_pad();
    const double* W = weights.data.data();
    for (int o = 0; o < out_channels; ++o) {
      const double* grow = grad_out.data.data() + std::size_t(o) * Lo;
      grad_b[o] += detail::lane_sum(std::size_t(Lo), grow);
      if (K == 5) {
        int i = 0;
        for (; i + 2 <= in_channels; i += 2) {
          const double* xa = x.data.data() + std::size_t(i) * L;
          corr5_gw2(grad_w + (std::size_t(o) * in_channels + i) * 5,
                    grad_w + (std::size_t(o) * in_channels + i + 1) * 5, xa, xa + L, grow, L, Lo,
                    lp);
        }
        for (; i < in_channels; ++i) {
          const double* xa = x.data.data() + std::size_t(i) * L;
          corr5_gw1(grad_w + (std::size_t(o) * in_channels + i) * 5, xa, grow, L, Lo, lp);
        }
      } else {
        for (int i = 0; i < in_channels; ++i) {
          const double* xrow = x.data.data() + std::size_t(i) * L;
          double* gw = grad_w + (std::size_t(o) * in_channels + i) * K;
          for (int t = 0; t < K; ++t) {
            int shift = t - lp;
            int p0 = std::max(0, -shift);
            int p1 = std::min(Lo - 1, L - 1 - shift);
            if (p1 >= p0)
              gw[t] += detail::dot(std::size_t(p1 - p0 + 1), grow + p0, xrow + p0 + shift);
          }
        }
      }
    }
    if (!grad_x) return;
    grad_x_accum(grad_out, *grad_x, L, Lo);
  }

  Grads backward(const Tensor& grad_out, const Cache& cache) const {
    if (!cache.ready)
      fail(ErrorCategory::state, "conv backward called before forward");
    Grads g;
    g.input = Tensor::zeros(cache.input.shape);
    g.weights = Tensor::zeros(weights.shape);
    g.bias = Tensor::zeros(bias.shape);
    backward_into(grad_out, cache.input, &g.input, g.weights.data.data(), g.bias.data.data());
    return g;
  }

  // Reusable packing buffers for the batched backward path below. One
  // instance may be shared across layers; buffers are resized per call.
  struct BatchScratch {
    std::vector<double> xpack, gpack;
  };

  // Batched forward over B same-shaped examples. The forward stencil
  // carries no lane reductions, so the per-example kernels are already
  // at their throughput bound and each example runs through
  // forward_into unchanged.
  void forward_batch(std::size_t B, const Tensor* const* xs, Tensor* const* outs,
                     BatchScratch&) const {
    for (std::size_t b = 0; b < B; ++b) forward_into(*xs[b], *outs[b]);
  }

  // Batched backward counterpart: accumulates into grad_w/grad_b and,
  // when grad_xs is non-null, into the caller-zeroed per-example input
  // gradients. Gradient sums run over the whole batch in one fixed
  // order.
  void backward_batch(std::size_t B, const Tensor* const* grad_outs, const Tensor* const* xs,
                      Tensor* const* grad_xs, double* grad_w, double* grad_b,
                      BatchScratch& s) const {
    if (B == 0) return;
    if (kernel_size != 5 || B == 1) {
      for (std::size_t b = 0; b < B; ++b)
        backward_into(*grad_outs[b], *xs[b], grad_xs ? grad_xs[b] : nullptr, grad_w, grad_b);
      return;
    }
    check_input(*xs[0]);
    int L = int(xs[0]->shape[1]);
    int Lo = out_len(L);
    for (std::size_t b = 0; b < B; ++b) {
      if (!xs[b]->same_shape(*xs[0]))
        fail(ErrorCategory::dimension, "batched conv expects same-shaped inputs, got " +
                                           xs[0]->shape_str() + " and " + xs[b]->shape_str());
      if (grad_outs[b]->rank() != 2 || grad_outs[b]->shape[0] != std::size_t(out_channels) ||
          grad_outs[b]->shape[1] != std::size_t(Lo))
        fail(ErrorCategory::dimension,
             "conv backward expects grad [" + std::to_string(out_channels) + " x " +
                 std::to_string(Lo) + "], got " + grad_outs[b]->shape_str());
    }
    int S = pack_stride(L, Lo);
    int lp = left_pad();
    for (int o = 0; o < out_channels; ++o)
      for (std::size_t b = 0; b < B; ++b)
        grad_b[o] += detail::lane_sum(std::size_t(Lo),
                                      grad_outs[b]->data.data() + std::size_t(o) * Lo);
    // Weight gradients: examples are packed into zero-margined panels
    // sized to stay cache-resident, so the fused tap kernels run
    // edge-free and their lane reductions amortize over the panel.
    // Each gradient element accumulates panel-ascending.
    std::size_t Bp = panel_examples(S, B);
    for (std::size_t p0 = 0; p0 < B; p0 += Bp) {
      std::size_t Bpp = std::min(Bp, B - p0);
      int NP = int(Bpp) * S;
      pack_rows(s.xpack, in_channels, NP, S, 8, L, [&](std::size_t b, int i) {
        return xs[p0 + b]->data.data() + std::size_t(i) * L;
      });
      pack_rows(s.gpack, out_channels, NP, S, 4 - lp, Lo, [&](std::size_t b, int o) {
        return grad_outs[p0 + b]->data.data() + std::size_t(o) * Lo;
      });
      constexpr int OB = 16;
      for (int ob = 0; ob < out_channels; ob += OB) {
        int oe = std::min(out_channels, ob + OB);
        int i = 0;
        for (; i + 4 <= in_channels; i += 4) {
          const double* x0 = s.xpack.data() + std::size_t(i) * NP + 8;
          for (int o = ob; o < oe; ++o) {
            double* gw = grad_w + (std::size_t(o) * in_channels + i) * 5;
            corr5_gw4(gw, gw + 5, gw + 10, gw + 15, x0, x0 + NP, x0 + 2 * NP, x0 + 3 * NP,
                      s.gpack.data() + std::size_t(o) * NP, NP - 8, NP - 4, 4);
          }
        }
        for (; i + 2 <= in_channels; i += 2) {
          const double* x0 = s.xpack.data() + std::size_t(i) * NP + 8;
          for (int o = ob; o < oe; ++o) {
            double* gw = grad_w + (std::size_t(o) * in_channels + i) * 5;
            corr5_gw2(gw, gw + 5, x0, x0 + NP, s.gpack.data() + std::size_t(o) * NP, NP - 8,
                      NP - 4, 4);
          }
        }
        for (; i < in_channels; ++i) {
          const double* x0 = s.xpack.data() + std::size_t(i) * NP + 8;
          for (int o = ob; o < oe; ++o)
            corr5_gw1(grad_w + (std::size_t(o) * in_channels + i) * 5, x0,
                      s.gpack.data() + std::size_t(o) * NP, NP - 8, NP - 4, 4);
        }
      }
    }
    if (!grad_xs) return;
    // Input gradients carry no lane reductions, so the per-example path
    // is already load-balanced; packing buys nothing there.
    for (std::size_t b = 0; b < B; ++b) grad_x_accum(*grad_outs[b], *grad_xs[b], L, Lo);
  }

 private:
  // Smallest multiple of eight that holds a row plus front and rear
  // zero margins for the shifted five-tap reads.
  static int pack_stride(int L, int Lo) { return (std::max(L, Lo) + 16 + 7) & ~7; }

  // Examples per packed panel: ~64 KiB rows keep a sixteen-row gradient
  // block plus four input rows inside L2 while the tap reductions still
  // amortize across the panel.
  static std::size_t panel_examples(int S, std::size_t B) {
    std::size_t cap = std::size_t(65536) / (std::size_t(S) * sizeof(double));
    return std::min(B, std::max<std::size_t>(std::size_t(1), cap));
  }

  // dX is the correlation of dOut with the reversed kernel; accumulates
  // into gx with output channels ascending.
  void grad_x_accum(const Tensor& grad_out, Tensor& gx, int L, int Lo) const {
    int K = kernel_size, lp = left_pad();
    int lpr = K - 1 - lp;
    const double* W = weights.data.data();
    for (int o = 0; o < out_channels; ++o) {
      const double* grow = grad_out.data.data() + std::size_t(o) * Lo;
      if (K == 5) {
        int i = 0;
        for (; i + 4 <= in_channels; i += 4) {
          double wr[4][5];
          for (int r = 0; r < 4; ++r)
            for (int t = 0; t < 5; ++t)
              wr[r][t] = W[(std::size_t(o) * in_channels + i + r) * 5 + 4 - std::size_t(t)];
          double* g0 = gx.data.data() + std::size_t(i) * L;
          corr5_x4(g0, g0 + L, g0 + 2 * L, g0 + 3 * L, grow, wr[0], wr[1], wr[2], wr[3], Lo, L,
                   lpr);
        }
        for (; i < in_channels; ++i) {
          const double* w = W + (std::size_t(o) * in_channels + i) * 5;
          double wr[5] = {w[4], w[3], w[2], w[1], w[0]};
          corr5(gx.data.data() + std::size_t(i) * L, grow, wr, Lo, L, lpr);
        }
      } else {
        for (int i = 0; i < in_channels; ++i) {
          const double* w = W + (std::size_t(o) * in_channels + i) * K;
          double* gxrow = gx.data.data() + std::size_t(i) * L;
          for (int t = 0; t < K; ++t) {
            int shift = t - lp;
            int p0 = std::max(0, -shift);
            int p1 = std::min(Lo - 1, L - 1 - shift);
            if (p1 >= p0)
              detail::axpy(std::size_t(p1 - p0 + 1), w[t], grow + p0, gxrow + p0 + shift);
          }
        }
      }
    }
  }

  // Copies per-example rows into [rows x B*S] panels at `front` offset
  // inside each example segment, zero-filling the margins.
  template <typename RowFn>
  static void pack_rows(std::vector<double>& buf, int rows, int NB, int S, int front, int len,
                        RowFn row) {
    std::size_t B = std::size_t(NB) / std::size_t(S);
    buf.resize(std::size_t(rows) * NB + 8);
    std::fill(buf.end() - 8, buf.end(), 0.0);
    for (int r = 0; r < rows; ++r) {
      double* dst = buf.data() + std::size_t(r) * NB;
      for (std::size_t b = 0; b < B; ++b) {
        double* seg = dst + b * std::size_t(S);
        std::fill(seg, seg + front, 0.0);
        std::copy(row(b, r), row(b, r) + len, seg + front);
        std::fill(seg + front + len, seg + S, 0.0);
      }
    }
  }


  static void corr5(double* __restrict out, const double* __restrict x,
                    const double* __restrict w, int L, int Lo, int lp) {
    double w0 = w[0], w1 = w[1], w2 = w[2], w3 = w[3], w4 = w[4];
    int main_lo = std::max(0, lp);
    int main_hi = std::min(Lo - 1, L - 1 - (4 - lp));
    for (int p = 0; p < std::min(Lo, main_lo); ++p) out[p] += point(x, w, L, lp, 5, p);
    const double* xs = x + (main_lo - lp);
    for (int p = main_lo; p <= main_hi; ++p) {
      int q = p - main_lo;
      out[p] += w0 * xs[q] + w1 * xs[q + 1] + w2 * xs[q + 2] + w3 * xs[q + 3] + w4 * xs[q + 4];
    }
    for (int p = std::max(main_hi + 1, main_lo); p < Lo; ++p)
      out[p] += point(x, w, L, lp, 5, p);
  }

  // Four-row variant of corr5: one pass over x updates four output rows,
  // so each input load feeds twenty multiply-adds.
  static void corr5_x4(double* __restrict o0, double* __restrict o1, double* __restrict o2,
                       double* __restrict o3, const double* __restrict x,
                       const double* __restrict wa, const double* __restrict wb,
                       const double* __restrict wc, const double* __restrict wd, int L, int Lo,
                       int lp) {
    int main_lo = std::max(0, lp);
    int main_hi = std::min(Lo - 1, L - 1 - (4 - lp));
    for (int p = 0; p < std::min(Lo, main_lo); ++p) {
      o0[p] += point(x, wa, L, lp, 5, p);
      o1[p] += point(x, wb, L, lp, 5, p);
      o2[p] += point(x, wc, L, lp, 5, p);
      o3[p] += point(x, wd, L, lp, 5, p);
    }
    double a0 = wa[0], a1 = wa[1], a2 = wa[2], a3 = wa[3], a4 = wa[4];
    double b0 = wb[0], b1 = wb[1], b2 = wb[2], b3 = wb[3], b4 = wb[4];
    double c0 = wc[0], c1 = wc[1], c2 = wc[2], c3 = wc[3], c4 = wc[4];
    double d0 = wd[0], d1 = wd[1], d2 = wd[2], d3 = wd[3], d4 = wd[4];
    const double* xs = x + (main_lo - lp);
    for (int p = main_lo; p <= main_hi; ++p) {
      int q = p - main_lo;
      double x0 = xs[q], x1 = xs[q + 1], x2 = xs[q + 2], x3 = xs[q + 3], x4 = xs[q + 4];
      o0[p] += a0 * x0 + a1 * x1 + a2 * x2 + a3 * x3 + a4 * x4;
      o1[p] += b0 * x0 + b1 * x1 + b2 * x2 + b3 * x3 + b4 * x4;
      o2[p] += c0 * x0 + c1 * x1 + c2 * x2 + c3 * x3 + c4 * x4;
      o3[p] += d0 * x0 + d1 * x1 + d2 * x2 + d3 * x3 + d4 * x4;
    }
    for (int p = std::max(main_hi + 1, main_lo); p < Lo; ++p) {
      o0[p] += point(x, wa, L, lp, 5, p);
      o1[p] += point(x, wb, L, lp, 5, p);
      o2[p] += point(x, wc, L, lp, 5, p);
      o3[p] += point(x, wd, L, lp, 5, p);
    }
  }

  // Weight-gradient kernel for K = 5: accumulates all five tap sums for
  // one input row in a single pass, sharing the shifted loads of the
  // output gradient. Tap t touches x positions u with grow[u + lp - t]
  // in range; [ulo, uhi] is where all five taps are in range at once.
  static void corr5_gw1(double* __restrict gw, const double* __restrict x,
                        const double* __restrict grow, int L, int Lo, int lp) {
    int ulo = std::max(0, 4 - lp);
    int uhi = std::min(L - 1, Lo - 1 - lp);
    double sum[5] = {};
    for (int t = 0; t < 5; ++t) {
      int own_lo = std::max(0, t - lp);
      int own_hi = std::min(L - 1, Lo - 1 + t - lp);
      for (int u = own_lo; u <= std::min(ulo - 1, own_hi); ++u) sum[t] += x[u] * grow[u + lp - t];
    }
    int n = uhi - ulo + 1;
    int nv = n > 0 ? (n & ~7) : 0;
#ifdef TNET_VEC
    if (nv > 0) {
      detail::v8d t0 = {}, t1 = {}, t2 = {}, t3 = {}, t4 = {};
      for (int v = 0; v < nv; v += 8) {
        detail::v8d xu = detail::vload(x + ulo + v);
        const double* gu = grow + ulo + v + lp;
        t0 += xu * detail::vload(gu);
        t1 += xu * detail::vload(gu - 1);
        t2 += xu * detail::vload(gu - 2);
        t3 += xu * detail::vload(gu - 3);
        t4 += xu * detail::vload(gu - 4);
      }
      sum[0] += detail::hsum(t0);
      sum[1] += detail::hsum(t1);
      sum[2] += detail::hsum(t2);
      sum[3] += detail::hsum(t3);
      sum[4] += detail::hsum(t4);
    }
#else
    if (nv > 0) {
      double acc[5][8] = {};
      for (int v = 0; v < nv; v += 8) {
        const double* xu = x + ulo + v;
        const double* gu = grow + ulo + v + lp;
        for (int t = 0; t < 5; ++t)
          for (int j = 0; j < 8; ++j) acc[t][j] += xu[j] * gu[j - t];
      }
      for (int t = 0; t < 5; ++t) {
        const double* v = acc[t];
        sum[t] += ((v[0] + v[1]) + (v[2] + v[3])) + ((v[4] + v[5]) + (v[6] + v[7]));
      }
    }
#endif
    for (int t = 0; t < 5; ++t) {
      int own_hi = std::min(L - 1, Lo - 1 + t - lp);
      for (int u = ulo + nv; u <= own_hi; ++u) sum[t] += x[u] * grow[u + lp - t];
    }
    for (int t = 0; t < 5; ++t) gw[t] += sum[t];
  }

  // Two-row variant of corr5_gw1: both input rows reuse the same shifted
  // loads of the output gradient.
  static void corr5_gw2(double* __restrict gwa, double* __restrict gwb,
                        const double* __restrict xa, const double* __restrict xb,
                        const double* __restrict grow, int L, int Lo, int lp) {
    int ulo = std::max(0, 4 - lp);
    int uhi = std::min(L - 1, Lo - 1 - lp);
    double suma[5] = {}, sumb[5] = {};
    for (int t = 0; t < 5; ++t) {
      int own_lo = std::max(0, t - lp);
      int own_hi = std::min(L - 1, Lo - 1 + t - lp);
      for (int u = own_lo; u <= std::min(ulo - 1, own_hi); ++u) {
        suma[t] += xa[u] * grow[u + lp - t];
        sumb[t] += xb[u] * grow[u + lp - t];
      }
    }
    int n = uhi - ulo + 1;
    int nv = n > 0 ? (n & ~7) : 0;
#ifdef TNET_VEC
    if (nv > 0) {
      detail::v8d t0 = {}, t1 = {}, t2 = {}, t3 = {}, t4 = {};
      detail::v8d u0 = {}, u1 = {}, u2 = {}, u3 = {}, u4 = {};
      for (int v = 0; v < nv; v += 8) {
        detail::v8d xu = detail::vload(xa + ulo + v);
        detail::v8d yu = detail::vload(xb + ulo + v);
        const double* gu = grow + ulo + v + lp;
        detail::v8d g0 = detail::vload(gu), g1 = detail::vload(gu - 1);
        detail::v8d g2 = detail::vload(gu - 2), g3 = detail::vload(gu - 3);
        detail::v8d g4 = detail::vload(gu - 4);
        t0 += xu * g0;
        t1 += xu * g1;
        t2 += xu * g2;
        t3 += xu * g3;
        t4 += xu * g4;
        u0 += yu * g0;
        u1 += yu * g1;
        u2 += yu * g2;
        u3 += yu * g3;
        u4 += yu * g4;
      }
      suma[0] += detail::hsum(t0);
      suma[1] += detail::hsum(t1);
      suma[2] += detail::hsum(t2);
      suma[3] += detail::hsum(t3);
      suma[4] += detail::hsum(t4);
      sumb[0] += detail::hsum(u0);
      sumb[1] += detail::hsum(u1);
      sumb[2] += detail::hsum(u2);
      sumb[3] += detail::hsum(u3);
      sumb[4] += detail::hsum(u4);
    }
#else
    if (nv > 0) {
      double acca[5][8] = {}, accb[5][8] = {};
      for (int v = 0; v < nv; v += 8) {
        const double* xu = xa + ulo + v;
        const double* yu = xb + ulo + v;
        const double* gu = grow + ulo + v + lp;
        for (int t = 0; t < 5; ++t)
          for (int j = 0; j < 8; ++j) {
            acca[t][j] += xu[j] * gu[j - t];
            accb[t][j] += yu[j] * gu[j - t];
          }
      }
      for (int t = 0; t < 5; ++t) {
        const double* v = acca[t];
        suma[t] += ((v[0] + v[1]) + (v[2] + v[3])) + ((v[4] + v[5]) + (v[6] + v[7]));
        const double* w = accb[t];
        sumb[t] += ((w[0] + w[1]) + (w[2] + w[3])) + ((w[4] + w[5]) + (w[6] + w[7]));
      }
    }
#endif
    for (int t = 0; t < 5; ++t) {
      int own_hi = std::min(L - 1, Lo - 1 + t - lp);
      for (int u = ulo + nv; u <= own_hi; ++u) {
        suma[t] += xa[u] * grow[u + lp - t];
        sumb[t] += xb[u] * grow[u + lp - t];
      }
    }
    for (int t = 0; t < 5; ++t) {
      gwa[t] += suma[t];
      gwb[t] += sumb[t];
    }
  }

  // Four-row variant: four input rows reuse one set of shifted loads of
  // the output gradient, which moves the loop from load-bound toward
  // FMA-bound.
  static void corr5_gw4(double* __restrict gwa, double* __restrict gwb, double* __restrict gwc,
                        double* __restrict gwd, const double* __restrict xa,
                        const double* __restrict xb, const double* __restrict xc,
                        const double* __restrict xd, const double* __restrict grow, int L, int Lo,
                        int lp) {
    int ulo = std::max(0, 4 - lp);
    int uhi = std::min(L - 1, Lo - 1 - lp);
    double suma[5] = {}, sumb[5] = {}, sumc[5] = {}, sumd[5] = {};
    for (int t = 0; t < 5; ++t) {
      int own_lo = std::max(0, t - lp);
      int own_hi = std::min(L - 1, Lo - 1 + t - lp);
      for (int u = own_lo; u <= std::min(ulo - 1, own_hi); ++u) {
        double g = grow[u + lp - t];
        suma[t] += xa[u] * g;
        sumb[t] += xb[u] * g;
        sumc[t] += xc[u] * g;
        sumd[t] += xd[u] * g;
      }
    }
    int n = uhi - ulo + 1;
    int nv = n > 0 ? (n & ~7) : 0;
#ifdef TNET_VEC
    if (nv > 0) {
      detail::v8d a0 = {}, a1 = {}, a2 = {}, a3 = {}, a4 = {};
      detail::v8d b0 = {}, b1 = {}, b2 = {}, b3 = {}, b4 = {};
      detail::v8d c0 = {}, c1 = {}, c2 = {}, c3 = {}, c4 = {};
      detail::v8d d0 = {}, d1 = {}, d2 = {}, d3 = {}, d4 = {};
      for (int v = 0; v < nv; v += 8) {
        const double* gu = grow + ulo + v + lp;
        detail::v8d g0 = detail::vload(gu), g1 = detail::vload(gu - 1);
        detail::v8d g2 = detail::vload(gu - 2), g3 = detail::vload(gu - 3);
        detail::v8d g4 = detail::vload(gu - 4);
        detail::v8d xu = detail::vload(xa + ulo + v);
        a0 += xu * g0;
        a1 += xu * g1;
        a2 += xu * g2;
        a3 += xu * g3;
        a4 += xu * g4;
        xu = detail::vload(xb + ulo + v);
        b0 += xu * g0;
        b1 += xu * g1;
        b2 += xu * g2;
        b3 += xu * g3;
        b4 += xu * g4;
        xu = detail::vload(xc + ulo + v);
        c0 += xu * g0;
        c1 += xu * g1;
        c2 += xu * g2;
        c3 += xu * g3;
        c4 += xu * g4;
        xu = detail::vload(xd + ulo + v);
        d0 += xu * g0;
        d1 += xu * g1;
        d2 += xu * g2;
        d3 += xu * g3;
        d4 += xu * g4;
      }
      suma[0] += detail::hsum(a0);
      suma[1] += detail::hsum(a1);
      suma[2] += detail::hsum(a2);
      suma[3] += detail::hsum(a3);
      suma[4] += detail::hsum(a4);
      sumb[0] += detail::hsum(b0);
      sumb[1] += detail::hsum(b1);
      sumb[2] += detail::hsum(b2);
      sumb[3] += detail::hsum(b3);
      sumb[4] += detail::hsum(b4);
      sumc[0] += detail::hsum(c0);
      sumc[1] += detail::hsum(c1);
      sumc[2] += detail::hsum(c2);
      sumc[3] += detail::hsum(c3);
      sumc[4] += detail::hsum(c4);
      sumd[0] += detail::hsum(d0);
      sumd[1] += detail::hsum(d1);
      sumd[2] += detail::hsum(d2);
      sumd[3] += detail::hsum(d3);
      sumd[4] += detail::hsum(d4);
    }
#else
    if (nv > 0) {
      double acca[5][8] = {}, accb[5][8] = {}, accc[5][8] = {}, accd[5][8] = {};
      for (int v = 0; v < nv; v += 8) {
        const double* pa = xa + ulo + v;
        const double* pb = xb + ulo + v;
        const double* pc = xc + ulo + v;
        const double* pd = xd + ulo + v;
        const double* gu = grow + ulo + v + lp;
        for (int t = 0; t < 5; ++t)
          for (int j = 0; j < 8; ++j) {
            acca[t][j] += pa[j] * gu[j - t];
            accb[t][j] += pb[j] * gu[j - t];
            accc[t][j] += pc[j] * gu[j - t];
            accd[t][j] += pd[j] * gu[j - t];
          }
      }
      for (int t = 0; t < 5; ++t) {
        const double* v = acca[t];
        suma[t] += ((v[0] + v[1]) + (v[2] + v[3])) + ((v[4] + v[5]) + (v[6] + v[7]));
        const double* w = accb[t];
        sumb[t] += ((w[0] + w[1]) + (w[2] + w[3])) + ((w[4] + w[5]) + (w[6] + w[7]));
        const double* y = accc[t];
        sumc[t] += ((y[0] + y[1]) + (y[2] + y[3])) + ((y[4] + y[5]) + (y[6] + y[7]));
        const double* z = accd[t];
        sumd[t] += ((z[0] + z[1]) + (z[2] + z[3])) + ((z[4] + z[5]) + (z[6] + z[7]));
      }
    }
#endif
    for (int t = 0; t < 5; ++t) {
      int own_hi = std::min(L - 1, Lo - 1 + t - lp);
      for (int u = ulo + nv; u <= own_hi; ++u) {
        double g = grow[u + lp - t];
        suma[t] += xa[u] * g;
        sumb[t] += xb[u] * g;
        sumc[t] += xc[u] * g;
        sumd[t] += xd[u] * g;
      }
    }
    for (int t = 0; t < 5; ++t) {
      gwa[t] += suma[t];
      gwb[t] += sumb[t];
      gwc[t] += sumc[t];
      gwd[t] += sumd[t];
    }
  }

  static void corr_generic(double* __restrict out, const double* __restrict x,
                           const double* __restrict w, int L, int Lo, int lp, int K) {
    for (int t = 0; t < K; ++t) {
      int shift = t - lp;
      int p0 = std::max(0, -shift);
      int p1 = std::min(Lo - 1, L - 1 - shift);
      double wt = w[t];
      for (int p = p0; p <= p1; ++p) out[p] += wt * x[p + shift];
    }
  }

  static double point(const double* x, const double* w, int L, int lp, int K, int p) {
    double acc = 0.0;
    for (int t = 0; t < K; ++t) {
      int q = p + t - lp;
      if (q >= 0 && q < L) acc += w[t] * x[q];
    }
    return acc;
  }
};

// Max pooling with valid windows only; remainder positions are dropped.
struct MaxPool1D {
  int window = 0;
  int stride = 0;

  struct Cache {
    std::vector<std::int32_t> argmax;  // input index per output position
    std::size_t channels = 0;
    std::size_t in_len = 0;
    std::size_t out_len = 0;
    bool ready = false;
  };

  MaxPool1D() = default;

  MaxPool1D(int window_in, int stride_in) {
    if (stride_in < 1 || window_in < stride_in)
      fail(ErrorCategory::argument,
           "pool needs window >= stride >= 1, got window " + std::to_string(window_in) +
               ", stride " + std::to_string(stride_in));
    window = window_in;
    stride = stride_in;
  }

  int out_len(int in_len) const {
    if (in_len < window)
      fail(ErrorCategory::dimension,
           "pool needs input length >= window, got length " + std::to_string(in_len) +
               " with window " + std::to_string(window));
    return (in_len - window) / stride + 1;
  }

  Tensor forward(const Tensor& x, Cache& cache) const {
    if (x.rank() != 2)
      fail(ErrorCategory::dimension, "pool expects input [C x L], got " + x.shape_str());
    int C = int(x.shape[0]);
    int L = int(x.shape[1]);
    int Lo = out_len(L);
    Tensor out = Tensor::zeros({std::size_t(C), std::size_t(Lo)});
    cache.argmax.assign(std::size_t(C) * Lo, 0);
    cache.channels = std::size_t(C);
    cache.in_len = std::size_t(L);
    cache.out_len = std::size_t(Lo);
    cache.ready = true;
    for (int c = 0; c < C; ++c) {
      const double* xrow = x.data.data() + std::size_t(c) * L;
      double* orow = out.data.data() + std::size_t(c) * Lo;
      std::int32_t* arow = cache.argmax.data() + std::size_t(c) * Lo;
      for (int p = 0; p < Lo; ++p) {
        int start = p * stride;
        double best = xrow[start];
        int best_q = start;
        for (int q = start + 1; q < start + window; ++q)
          if (xrow[q] > best) {
            best = xrow[q];
            best_q = q;
          }
        orow[p] = best;
        arow[p] = best_q;
      }
    }
    return out;
  }

  // Routes each output gradient to the cached argmax position.
  Tensor backward(const Tensor& grad_out, const Cache& cache) const {
    if (!cache.ready)
      fail(ErrorCategory::state, "pool backward called before forward");
    if (grad_out.rank() != 2 || grad_out.shape[0] != cache.channels ||
        grad_out.shape[1] != cache.out_len)
      fail(ErrorCategory::dimension,
           "pool backward expects grad [" + std::to_string(cache.channels) + " x " +
               std::to_string(cache.out_len) + "], got " + grad_out.shape_str());
    Tensor gx = Tensor::zeros({cache.channels, cache.in_len});
    for (std::size_t c = 0; c < cache.channels; ++c) {
      const double* grow = grad_out.data.data() + c * cache.out_len;
      const std::int32_t* arow = cache.argmax.data() + c * cache.out_len;
      double* gxrow = gx.data.data() + c * cache.in_len;
      for (std::size_t p = 0; p < cache.out_len; ++p) gxrow[arow[p]] += grow[p];
    }
    return gx;
  }
};

// Fully connected layer over [batch x features] inputs.
struct Dense {
  int in_size = 0;
  int out_size = 0;
  Tensor weights;  // [in_size x out_size]
  Tensor bias;     // [out_size]

  struct Cache {
    Tensor input;
    bool ready = false;
  };

  struct Grads {
    Tensor input, weights, bias;
  };

  Dense() = default;

  Dense(int in, int out) {
    if (in < 1 || out < 1)
      fail(ErrorCategory::argument, "dense needs positive sizes");
    in_size = in;
    out_size = out;
    weights = Tensor::zeros({std::size_t(in), std::size_t(out)});
    bias = Tensor::zeros({std::size_t(out)});
  }

  static Dense glorot(int in, int out, Rng& rng) {
    Dense d(in, out);
    d.weights = glorot_uniform(std::size_t(in), std::size_t(out), rng);
    return d;
  }

  void check_input(const Tensor& x) const {
    if (x.rank() != 2 || x.shape[1] != std::size_t(in_size))
      fail(ErrorCategory::dimension,
           "dense expects input [B x " + std::to_string(in_size) + "], got " + x.shape_str());
  }

  void forward_into(const Tensor& x, Tensor& out) const {
    check_input(x);
    std::size_t B = x.shape[0];
    std::size_t I = std::size_t(in_size), O = std::size_t(out_size);
    out.shape = {B, O};
    out.data.resize(B * O);
    for (std::size_t b = 0; b < B; ++b)
      std::copy(bias.data.begin(), bias.data.end(), out.data.data() + b * O);
    detail::gemm_acc<false>(B, O, I, x.data.data(), I, weights.data.data(), O, out.data.data(),
                            O);
  }

  Tensor forward(const Tensor& x, Cache& cache) const {
    Tensor out;
    forward_into(x, out);
    cache.input = x;
    cache.ready = true;
    return out;
  }

  // Accumulates into the provided gradient buffers; callers zero them.
  void backward_into(const Tensor& grad_out, const Tensor& x, Tensor* grad_x,
                     double* grad_w, double* grad_b) const {
    check_input(x);
    std::size_t B = x.shape[0];
    std::size_t I = std::size_t(in_size), O = std::size_t(out_size);
    if (grad_out.rank() != 2 || grad_out.shape[0] != B || grad_out.shape[1] != O)
      fail(ErrorCategory::dimension,
           "dense backward expects grad [" + std::to_string(B) + " x " + std::to_string(O) +
               "], got " + grad_out.shape_str());
    for (std::size_t b = 0; b < B; ++b)
      detail::axpy(O, 1.0, grad_out.data.data() + b * O, grad_b);
    // dW += X^T . dOut, and dX += dOut . W^T.
    detail::gemm_acc<true>(I, O, B, x.data.data(), I, grad_out.data.data(), O, grad_w, O);
    if (grad_x)
      detail::gemm_dot_acc(B, I, O, grad_out.data.data(), O, weights.data.data(), O,
                           grad_x->data.data(), I);
  }

  Grads backward(const Tensor& grad_out, const Cache& cache) const {
    if (!cache.ready)
      fail(ErrorCategory::state, "dense backward called before forward");
    Grads g;
    g.input = Tensor::zeros(cache.input.shape);
    g.weights = Tensor::zeros(weights.shape);
    g.bias = Tensor::zeros(bias.shape);
    backward_into(grad_out, cache.input, &g.input, g.weights.data.data(), g.bias.data.data());
    return g;
  }
};

// Inverted dropout: kept units are scaled by 1/(1-rate) at train time so
// eval needs no rescaling.
struct Dropout {
  double rate = 0.0;

  struct Cache {
    Tensor mask;
    bool identity = true;
    bool ready = false;
  };

  Dropout() = default;

  explicit Dropout(double rate_in) {
    if (!(rate_in >= 0.0 && rate_in < 1.0))
      fail(ErrorCategory::argument, "dropout rate must be in [0, 1)");
    rate = rate_in;
  }

  Tensor apply(const Tensor& x, Mode mode, Rng& rng, Cache& cache) const {
    Tensor y = x;
    apply_inplace(y, mode, rng, cache);
    return y;
  }

  void apply_inplace(Tensor& x, Mode mode, Rng& rng, Cache& cache) const {
    cache.ready = true;
    if (mode == Mode::Eval || rate == 0.0) {
      cache.identity = true;
      return;
    }
    cache.identity = false;
    cache.mask.shape = x.shape;
    cache.mask.data.resize(x.data.size());
    double scale = 1.0 / (1.0 - rate);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
      double m = rng.uniform01() < rate ? 0.0 : scale;
      cache.mask.data[i] = m;
      x.data[i] *= m;
    }
  }

  Tensor backward(const Tensor& grad_out, const Cache& cache) const {
    if (!cache.ready)
      fail(ErrorCategory::state, "dropout backward called before apply");
    if (cache.identity) return grad_out;
    if (!grad_out.same_shape(cache.mask))
      fail(ErrorCategory::dimension, "dropout backward shape mismatch: " +
                                         grad_out.shape_str() + " vs " + cache.mask.shape_str());
    Tensor gx = grad_out;
    for (std::size_t i = 0; i < gx.data.size(); ++i) gx.data[i] *= cache.mask.data[i];
    return gx;
  }
};

}  // namespace tnet
