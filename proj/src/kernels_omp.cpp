#include "hournas/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cstdlib>

namespace hournas::kernels {

namespace {

// Below this many multiply-adds the fork/join cost dominates.
constexpr std::size_t kParallelWork = 1 << 15;

int initial_threads() {
  int n = omp_get_max_threads();
  if (const char* env = std::getenv("HOURNAS_THREADS")) {
    const int cap = std::atoi(env);
    if (cap > 0) n = std::min(n, cap);
  }
  return std::max(n, 1);
}

int& thread_setting() {
  static int threads = initial_threads();
  return threads;
}

}  // namespace

int num_threads() { return thread_setting(); }

void set_num_threads(int n) { thread_setting() = std::max(n, 1); }

void gemm(std::size_t m, std::size_t n, std::size_t k, MatView a, MatView b,
          Real beta, Real* c, std::size_t ldc) {
  const bool parallel = m > 1 && m * n * k >= kParallelWork;
  const long rows = static_cast<long>(m);

#pragma omp parallel for schedule(static) num_threads(num_threads()) if (parallel)
  for (long ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    Real* crow = c + i * ldc;
    if (beta == Real(0)) {
      std::fill(crow, crow + n, Real(0));
    } else if (beta != Real(1)) {
      for (std::size_t j = 0; j < n; ++j) crow[j] *= beta;
    }
    if (!b.transposed) {
      for (std::size_t p = 0; p < k; ++p) {
        const Real av = a.transposed ? a.data[p * a.ld + i] : a.data[i * a.ld + p];
        if (av == Real(0)) continue;
        const Real* brow = b.data + p * b.ld;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    } else if (!a.transposed) {
      const Real* arow = a.data + i * a.ld;
      for (std::size_t j = 0; j < n; ++j) {
        const Real* bcol = b.data + j * b.ld;
        Real acc = 0;
        for (std::size_t p = 0; p < k; ++p) acc += arow[p] * bcol[p];
        crow[j] += acc;
      }
    } else {
      for (std::size_t p = 0; p < k; ++p) {
        const Real av = a.data[p * a.ld + i];
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * b.data[j * b.ld + p];
      }
    }
  }
}

void im2col(const Real* image, const ConvGeometry& g, Real* col) {
  const std::size_t ho = g.out_height(), wo = g.out_width();
  const long rows = static_cast<long>(g.col_rows());
  const bool parallel = g.col_rows() * g.col_cols() >= kParallelWork;

#pragma omp parallel for schedule(static) num_threads(num_threads()) if (parallel)
  for (long rr = 0; rr < rows; ++rr) {
    const auto row = static_cast<std::size_t>(rr);
    const std::size_t kx = row % g.kernel;
    const std::size_t ky = (row / g.kernel) % g.kernel;
    const std::size_t ch = row / (g.kernel * g.kernel);
    const Real* plane = image + ch * g.height * g.width;
    Real* out = col + row * ho * wo;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
      if (iy < 0 || iy >= static_cast<long>(g.height)) {
        std::fill(out + oy * wo, out + (oy + 1) * wo, Real(0));
        continue;
      }
      const Real* src = plane + static_cast<std::size_t>(iy) * g.width;
      for (std::size_t ox = 0; ox < wo; ++ox) {
        const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
        out[oy * wo + ox] = (ix >= 0 && ix < static_cast<long>(g.width)) ? src[ix] : Real(0);
      }
    }
  }
}

void col2im(const Real* col, const ConvGeometry& g, Real* image) {
  const std::size_t ho = g.out_height(), wo = g.out_width();
  const long channels = static_cast<long>(g.channels);
  const bool parallel = g.col_rows() * g.col_cols() >= kParallelWork;

  // Channels own disjoint image planes, so the scatter is race-free.
#pragma omp parallel for schedule(static) num_threads(num_threads()) if (parallel)
  for (long cc = 0; cc < channels; ++cc) {
    const auto ch = static_cast<std::size_t>(cc);
    Real* plane = image + ch * g.height * g.width;
    for (std::size_t ky = 0; ky < g.kernel; ++ky)
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const std::size_t row = (ch * g.kernel + ky) * g.kernel + kx;
        const Real* in = col + row * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
          if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
          Real* dst = plane + static_cast<std::size_t>(iy) * g.width;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
            if (ix >= 0 && ix < static_cast<long>(g.width)) dst[ix] += in[oy * wo + ox];
          }
        }
      }
  }
}

}  // namespace hournas::kernels
