#include "hournas/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hournas/kernels.hpp"

namespace hournas::ops {

namespace {

thread_local std::uint64_t g_macs = 0;

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* name) {
  if (t.rank() != rank)
    throw ShapeError(std::string(op) + ": " + name + " must have rank " + std::to_string(rank) +
                     ", got shape " + to_string(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
}

}  // namespace

std::uint64_t mac_count() { return g_macs; }
void reset_mac_count() { g_macs = 0; }

Tensor conv2d(Graph& g, Tensor x, Tensor w, Conv2dOptions opt) {
  require_rank(x, 4, "conv2d", "input");
  require_rank(w, 4, "conv2d", "weight");
  const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t cout = w.dim(0), k = w.dim(2);
  const std::size_t groups = opt.groups;
  if (groups == 0 || cin % groups != 0)
    throw ShapeError("conv2d: input channels C_in=" + std::to_string(cin) +
                     " not divisible by groups=" + std::to_string(groups));
  if (cout % groups != 0)
    throw ShapeError("conv2d: output channels C_out=" + std::to_string(cout) +
                     " not divisible by groups=" + std::to_string(groups));
  if (w.dim(1) != cin / groups)
    throw ShapeError("conv2d: weight dim 1 is " + std::to_string(w.dim(1)) + ", expected C_in/groups=" +
                     std::to_string(cin / groups));
  if (w.dim(3) != k) throw ShapeError("conv2d: non-square kernel " + to_string(w.shape()));
  if (k % 2 == 0) throw ShapeError("conv2d: kernel size must be odd, got k=" + std::to_string(k));
  if (opt.stride == 0) throw ShapeError("conv2d: stride must be positive");
  if (h + 2 * opt.padding < k || wd + 2 * opt.padding < k)
    throw ShapeError("conv2d: kernel k=" + std::to_string(k) + " larger than padded input " +
                     std::to_string(h) + "x" + std::to_string(wd));

  const std::size_t cig = cin / groups, cog = cout / groups;
  const kernels::ConvGeometry geom{cig, h, wd, k, opt.stride, opt.padding};
  const std::size_t ho = geom.out_height(), wo = geom.out_width();
  const std::size_t plane = ho * wo, ckk = geom.col_rows();

  Tensor y(Shape{n, cout, ho, wo});
  auto cols = std::make_shared<std::vector<Real>>(n * groups * ckk * plane);
  {
    const Real* xd = x.data().data();
    const Real* wdp = w.data().data();
    Real* yd = y.data().data();
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t gi = 0; gi < groups; ++gi) {
        Real* col = cols->data() + (s * groups + gi) * ckk * plane;
        kernels::im2col(xd + (s * cin + gi * cig) * h * wd, geom, col);
        kernels::gemm(cog, plane, ckk, {wdp + gi * cog * ckk, ckk}, {col, plane}, Real(0),
                      yd + (s * cout + gi * cog) * plane, plane);
      }
  }
  g_macs += static_cast<std::uint64_t>(n) * cout * plane * ckk;

  g.record({x, w}, y, [x, w, y, cols, n, cin, cout, h, wd, groups, cig, cog, geom, plane, ckk]() mutable {
    const Real* gy = y.grad().data();
    if (w.tracked()) {
      Real* gw = w.grad().data();
      for (std::size_t s = 0; s < n; ++s)
        for (std::size_t gi = 0; gi < groups; ++gi) {
          const Real* col = cols->data() + (s * groups + gi) * ckk * plane;
          kernels::gemm(cog, ckk, plane, {gy + (s * cout + gi * cog) * plane, plane},
                        {col, plane, true}, Real(1), gw + gi * cog * ckk, ckk);
        }
    }
    if (x.tracked()) {
      Real* gx = x.grad().data();
      const Real* wdp = w.data().data();
      std::vector<Real> dcol(ckk * plane);
      for (std::size_t s = 0; s < n; ++s)
        for (std::size_t gi = 0; gi < groups; ++gi) {
          kernels::gemm(ckk, plane, cog, {wdp + gi * cog * ckk, ckk, true},
                        {gy + (s * cout + gi * cog) * plane, plane}, Real(0), dcol.data(), plane);
          kernels::col2im(dcol.data(), geom, gx + (s * cin + gi * cig) * h * wd);
        }
    }
  });
  return y;
}

Tensor batchnorm2d(Graph& g, Tensor x, Tensor gamma, Tensor beta,
                   const BatchNormOptions& opt) {
  require_rank(x, 4, "batchnorm2d", "input");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (gamma.numel() != c || beta.numel() != c)
    throw ShapeError("batchnorm2d: gamma/beta need " + std::to_string(c) + " channels, got " +
                     std::to_string(gamma.numel()) + "/" + std::to_string(beta.numel()));
  if (opt.training && n < 2)
    throw ShapeError("batchnorm2d: batch size " + std::to_string(n) + " in training mode (need >= 2)");

  const bool fixed = !opt.training && opt.stats && !opt.stats->empty();
  if (fixed && (opt.stats->mean.size() != c || opt.stats->var.size() != c))
    throw ShapeError("batchnorm2d: stored statistics have " + std::to_string(opt.stats->mean.size()) +
                     " channels, input has " + std::to_string(c));

  const Real count = static_cast<Real>(n * hw);
  const auto xd = x.data();
  std::vector<Real> mean(c), var(c);
  if (fixed) {
    mean = opt.stats->mean;
    var = opt.stats->var;
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      Real s = 0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < hw; ++p) s += xd[(i * c + ch) * hw + p];
      const Real mu = s / count;
      Real v = 0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < hw; ++p) {
          const Real d = xd[(i * c + ch) * hw + p] - mu;
          v += d * d;
        }
      mean[ch] = mu;
      var[ch] = v / count;
    }
  }
  if (opt.capture) {
    opt.capture->mean = mean;
    opt.capture->var = var;
  }

  auto inv_std = std::make_shared<std::vector<Real>>(c);
  for (std::size_t ch = 0; ch < c; ++ch) (*inv_std)[ch] = Real(1) / std::sqrt(var[ch] + opt.eps);

  Tensor y(x.shape());
  auto xhat = std::make_shared<std::vector<Real>>(x.numel());
  const auto gd = gamma.data(), bd = beta.data();
  auto yd = y.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < hw; ++p) {
        const std::size_t idx = (i * c + ch) * hw + p;
        const Real xh = (xd[idx] - mean[ch]) * (*inv_std)[ch];
        (*xhat)[idx] = xh;
        yd[idx] = gd[ch] * xh + bd[ch];
      }

  g.record({x, gamma, beta}, y, [x, gamma, beta, y, xhat, inv_std, n, c, hw, count, fixed]() mutable {
    const auto gy = y.grad();
    const auto gd = gamma.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
      Real sum_gy = 0, sum_gy_xh = 0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < hw; ++p) {
          const std::size_t idx = (i * c + ch) * hw + p;
          sum_gy += gy[idx];
          sum_gy_xh += gy[idx] * (*xhat)[idx];
        }
      if (gamma.tracked()) gamma.grad()[ch] += sum_gy_xh;
      if (beta.tracked()) beta.grad()[ch] += sum_gy;
      if (!x.tracked()) continue;
      auto gx = x.grad();
      const Real scale = gd[ch] * (*inv_std)[ch];
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < hw; ++p) {
          const std::size_t idx = (i * c + ch) * hw + p;
          if (fixed) {
            gx[idx] += scale * gy[idx];
          } else {
            gx[idx] += scale / count * (count * gy[idx] - sum_gy - (*xhat)[idx] * sum_gy_xh);
          }
        }
    }
  });
  return y;
}

Tensor relu(Graph& g, Tensor x) {
  Tensor y(x.shape());
  const auto xd = x.data();
  auto yd = y.data();
  for (std::size_t i = 0; i < xd.size(); ++i) yd[i] = xd[i] > Real(0) ? xd[i] : Real(0);
  g.record({x}, y, [x, y]() mutable {
    const auto gy = y.grad();
    const auto xd = x.data();
    auto gx = x.grad();
    for (std::size_t i = 0; i < gx.size(); ++i)
      if (xd[i] > Real(0)) gx[i] += gy[i];
  });
  return y;
}

Tensor linear(Graph& g, Tensor x, Tensor w, Tensor b) {
  require_rank(x, 2, "linear", "input");
  require_rank(w, 2, "linear", "weight");
  const std::size_t n = x.dim(0), in = x.dim(1), out = w.dim(0);
  if (w.dim(1) != in)
    throw ShapeError("linear: weight has " + std::to_string(w.dim(1)) + " input features, input has " +
                     std::to_string(in));
  const bool has_bias = b.defined();
  if (has_bias && b.numel() != out)
    throw ShapeError("linear: bias has " + std::to_string(b.numel()) + " entries, expected " +
                     std::to_string(out));

  Tensor y(Shape{n, out});
  kernels::gemm(n, out, in, {x.data().data(), in}, {w.data().data(), in, true}, Real(0),
                y.data().data(), out);
  if (has_bias) {
    auto yd = y.data();
    const auto bd = b.data();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t o = 0; o < out; ++o) yd[i * out + o] += bd[o];
  }
  g_macs += static_cast<std::uint64_t>(n) * in * out;

  auto rule = [x, w, b, y, n, in, out, has_bias]() mutable {
    const Real* gy = y.grad().data();
    if (x.tracked())
      kernels::gemm(n, in, out, {gy, out}, {w.data().data(), in}, Real(1), x.grad().data(), in);
    if (w.tracked())
      kernels::gemm(out, in, n, {gy, out, true}, {x.data().data(), in}, Real(1), w.grad().data(), in);
    if (has_bias && b.tracked()) {
      auto gb = b.grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < out; ++o) gb[o] += gy[i * out + o];
    }
  };
  if (has_bias)
    g.record({x, w, b}, y, rule);
  else
    g.record({x, w}, y, rule);
  return y;
}

Tensor global_avg_pool(Graph& g, Tensor x) {
  require_rank(x, 4, "global_avg_pool", "input");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor y(Shape{n, c});
  const auto xd = x.data();
  auto yd = y.data();
  for (std::size_t i = 0; i < n * c; ++i) {
    Real s = 0;
    for (std::size_t p = 0; p < hw; ++p) s += xd[i * hw + p];
    yd[i] = s / static_cast<Real>(hw);
  }
  g.record({x}, y, [x, y, n, c, hw]() mutable {
    const auto gy = y.grad();
    auto gx = x.grad();
    for (std::size_t i = 0; i < n * c; ++i) {
      const Real v = gy[i] / static_cast<Real>(hw);
      for (std::size_t p = 0; p < hw; ++p) gx[i * hw + p] += v;
    }
  });
  return y;
}

Tensor flatten(Graph& g, Tensor x) {
  if (x.rank() < 2) throw ShapeError("flatten: need rank >= 2, got shape " + to_string(x.shape()));
  const std::size_t n = x.dim(0);
  const auto xd = x.data();
  Tensor y(Shape{n, x.numel() / std::max<std::size_t>(n, 1)}, std::vector<Real>(xd.begin(), xd.end()));
  g.record({x}, y, [x, y]() mutable {
    const auto gy = y.grad();
    auto gx = x.grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
  });
  return y;
}

Tensor softmax(Graph& g, Tensor logits) {
  require_rank(logits, 2, "softmax", "input");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  Tensor y(logits.shape());
  const auto zd = logits.data();
  auto yd = y.data();
  for (std::size_t i = 0; i < n; ++i) {
    const Real* z = zd.data() + i * k;
    Real* p = yd.data() + i * k;
    const Real mx = *std::max_element(z, z + k);
    Real s = 0;
    for (std::size_t j = 0; j < k; ++j) s += (p[j] = std::exp(z[j] - mx));
    for (std::size_t j = 0; j < k; ++j) p[j] /= s;
  }
  g.record({logits}, y, [logits, y, n, k]() mutable {
    const auto gy = y.grad();
    const auto yd = y.data();
    auto gz = logits.grad();
    for (std::size_t i = 0; i < n; ++i) {
      Real dot = 0;
      for (std::size_t j = 0; j < k; ++j) dot += gy[i * k + j] * yd[i * k + j];
      for (std::size_t j = 0; j < k; ++j) gz[i * k + j] += yd[i * k + j] * (gy[i * k + j] - dot);
    }
  });
  return y;
}

Tensor cross_entropy(Graph& g, Tensor logits, std::span<const int> labels) {
  require_rank(logits, 2, "cross_entropy", "logits");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n)
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(n));
  for (std::size_t i = 0; i < n; ++i)
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k)
      throw Error("cross_entropy: label " + std::to_string(labels[i]) + " at position " + std::to_string(i) +
                  " out of range [0," + std::to_string(k) + ")");

  auto probs = std::make_shared<std::vector<Real>>(n * k);
  const auto zd = logits.data();
  Real loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Real* z = zd.data() + i * k;
    const Real mx = *std::max_element(z, z + k);
    Real s = 0;
    for (std::size_t j = 0; j < k; ++j) s += ((*probs)[i * k + j] = std::exp(z[j] - mx));
    for (std::size_t j = 0; j < k; ++j) (*probs)[i * k + j] /= s;
    loss += std::log(s) + mx - z[labels[i]];
  }
  Tensor y = Tensor::scalar(loss / static_cast<Real>(n));
  std::vector<int> lab(labels.begin(), labels.end());
  g.record({logits}, y, [logits, y, probs, lab = std::move(lab), n, k]() mutable {
    const Real scale = y.grad()[0] / static_cast<Real>(n);
    auto gz = logits.grad();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < k; ++j)
        gz[i * k + j] += scale * ((*probs)[i * k + j] - (static_cast<int>(j) == lab[i] ? Real(1) : Real(0)));
  });
  return y;
}

Tensor residual_add(Graph& g, Tensor x, Tensor fx) {
  require_same_shape(x, fx, "residual_add");
  Tensor y(x.shape());
  const auto a = x.data(), b = fx.data();
  auto yd = y.data();
  for (std::size_t i = 0; i < yd.size(); ++i) yd[i] = a[i] + b[i];
  g.record({x, fx}, y, [x, fx, y]() mutable {
    const auto gy = y.grad();
    for (Tensor* t : {&x, &fx}) {
      if (!t->tracked()) continue;
      auto gt = t->grad();
      for (std::size_t i = 0; i < gt.size(); ++i) gt[i] += gy[i];
    }
  });
  return y;
}

Tensor scale(Graph& g, Tensor x, Tensor s) {
  if (s.numel() != 1) throw ShapeError("scale: factor must have one element, got " + to_string(s.shape()));
  const Real sv = s.data()[0];
  Tensor y(x.shape());
  const auto xd = x.data();
  auto yd = y.data();
  for (std::size_t i = 0; i < yd.size(); ++i) yd[i] = sv * xd[i];
  g.record({x, s}, y, [x, s, y]() mutable {
    const auto gy = y.grad();
    const auto xd = x.data();
    if (x.tracked()) {
      const Real sv = s.data()[0];
      auto gx = x.grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += sv * gy[i];
    }
    if (s.tracked()) {
      Real acc = 0;
      for (std::size_t i = 0; i < gy.size(); ++i) acc += gy[i] * xd[i];
      s.grad()[0] += acc;
    }
  });
  return y;
}

Tensor channel_mask(Graph& g, Tensor x, std::span<const Real> mask) {
  if (x.rank() < 2) throw ShapeError("channel_mask: need rank >= 2, got " + to_string(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), inner = x.numel() / std::max<std::size_t>(n * c, 1);
  if (mask.size() != c)
    throw ShapeError("channel_mask: mask has " + std::to_string(mask.size()) + " entries, input has " +
                     std::to_string(c) + " channels");
  std::vector<Real> m(mask.begin(), mask.end());
  Tensor y(x.shape());
  const auto xd = x.data();
  auto yd = y.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < inner; ++p) {
        const std::size_t idx = (i * c + ch) * inner + p;
        yd[idx] = xd[idx] * m[ch];
      }
  g.record({x}, y, [x, y, m = std::move(m), n, c, inner]() mutable {
    const auto gy = y.grad();
    auto gx = x.grad();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < inner; ++p) {
          const std::size_t idx = (i * c + ch) * inner + p;
          gx[idx] += gy[idx] * m[ch];
        }
  });
  return y;
}

Tensor weighted_sum(Graph& g, Tensor x, std::span<const Real> weights) {
  if (weights.size() != x.numel())
    throw ShapeError("weighted_sum: " + std::to_string(weights.size()) + " weights for " +
                     std::to_string(x.numel()) + " elements");
  std::vector<Real> w(weights.begin(), weights.end());
  const auto xd = x.data();
  Real acc = 0;
  for (std::size_t i = 0; i < w.size(); ++i) acc += xd[i] * w[i];
  Tensor y = Tensor::scalar(acc);
  g.record({x}, y, [x, y, w = std::move(w)]() mutable {
    const Real gy = y.grad()[0];
    auto gx = x.grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy * w[i];
  });
  return y;
}

std::vector<int> argmax_rows(const Tensor& scores) {
  require_rank(scores, 2, "argmax_rows", "scores");
  const std::size_t n = scores.dim(0), k = scores.dim(1);
  const auto d = scores.data();
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (d[i * k + j] > d[i * k + best]) best = j;
    out[i] = static_cast<int>(best);
  }
  return out;
}

}  // namespace hournas::ops
