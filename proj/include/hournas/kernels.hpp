#pragma once

// Dense kernels behind conv2d and linear.
//
// Two implementations share one signature set:
//   kernels::            OpenMP-parallel, cache-friendly loop order
//   kernels::reference:: serial textbook loops, kept as the test oracle
// Parallel paths split over output rows only, so each output element is
// accumulated by a single thread in a fixed order.

#include <cstddef>

#include "hournas/common.hpp"

namespace hournas::kernels {

/// Row-major matrix operand: `data[r * ld + c]`, optionally transposed.
struct MatView {
  const Real* data;
  std::size_t ld;
  bool transposed = false;
};

/// C[M,N] = beta * C + op(A)[M,K] * op(B)[K,N]
void gemm(std::size_t m, std::size_t n, std::size_t k, MatView a, MatView b,
          Real beta, Real* c, std::size_t ldc);

/// Geometry of one image plane set for im2col / col2im.
struct ConvGeometry {
  std::size_t channels;
  std::size_t height, width;
  std::size_t kernel;
  std::size_t stride;
  std::size_t padding;
  std::size_t out_height() const { return (height + 2 * padding - kernel) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * padding - kernel) / stride + 1; }
  std::size_t col_rows() const { return channels * kernel * kernel; }
  std::size_t col_cols() const { return out_height() * out_width(); }
};

/// Unfold `image[channels,H,W]` into `col[channels*k*k, Ho*Wo]`.
void im2col(const Real* image, const ConvGeometry& g, Real* col);

/// Fold back, accumulating into `image` (inverse of im2col's scatter).
void col2im(const Real* col, const ConvGeometry& g, Real* image);

/// Threads used by the parallel kernels (HOURNAS_THREADS caps it).
int num_threads();
void set_num_threads(int n);

namespace reference {

void gemm(std::size_t m, std::size_t n, std::size_t k, MatView a, MatView b,
          Real beta, Real* c, std::size_t ldc);
void im2col(const Real* image, const ConvGeometry& g, Real* col);
void col2im(const Real* col, const ConvGeometry& g, Real* image);

}  // namespace reference

}  // namespace hournas::kernels
