#include "hournas/kernels.hpp"

namespace hournas::kernels::reference {

namespace {

Real at(const MatView& v, std::size_t r, std::size_t c) {
  return v.transposed ? v.data[c * v.ld + r] : v.data[r * v.ld + c];
}

}  // namespace

void gemm(std::size_t m, std::size_t n, std::size_t k, MatView a, MatView b,
          Real beta, Real* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      Real acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += at(a, i, p) * at(b, p, j);
      Real& out = c[i * ldc + j];
      out = (beta == Real(0) ? Real(0) : beta * out) + acc;
    }
  }
}

void im2col(const Real* image, const ConvGeometry& g, Real* col) {
  const std::size_t ho = g.out_height(), wo = g.out_width();
  for (std::size_t ch = 0; ch < g.channels; ++ch)
    for (std::size_t ky = 0; ky < g.kernel; ++ky)
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const std::size_t row = (ch * g.kernel + ky) * g.kernel + kx;
        for (std::size_t oy = 0; oy < ho; ++oy)
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
            Real v = 0;
            if (iy >= 0 && ix >= 0 && iy < static_cast<long>(g.height) && ix < static_cast<long>(g.width))
              v = image[(ch * g.height + iy) * g.width + ix];
            col[row * ho * wo + oy * wo + ox] = v;
          }
      }
}

void col2im(const Real* col, const ConvGeometry& g, Real* image) {
  const std::size_t ho = g.out_height(), wo = g.out_width();
  for (std::size_t ch = 0; ch < g.channels; ++ch)
    for (std::size_t ky = 0; ky < g.kernel; ++ky)
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const std::size_t row = (ch * g.kernel + ky) * g.kernel + kx;
        for (std::size_t oy = 0; oy < ho; ++oy)
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
            if (iy >= 0 && ix >= 0 && iy < static_cast<long>(g.height) && ix < static_cast<long>(g.width))
              image[(ch * g.height + iy) * g.width + ix] += col[row * ho * wo + oy * wo + ox];
          }
      }
}

}  // namespace hournas::kernels::reference
