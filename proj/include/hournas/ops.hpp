#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hournas/tensor.hpp"

namespace hournas::ops {

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
};

/// Cross-correlation of x[N,Cin,H,W] with w[Cout,Cin/groups,k,k] (no bias),
/// computed as im2col + GEMM per sample and group.
Tensor conv2d(Graph& g, Tensor x, Tensor w, Conv2dOptions opt);

/// Per-channel mean and biased variance.
struct ChannelStats {
  std::vector<Real> mean;
  std::vector<Real> var;
  bool empty() const { return mean.empty(); }
};

struct BatchNormOptions {
  /// Training: batch statistics, batch size must be >= 2.
  bool training = true;
  /// Evaluation: fixed statistics when set, otherwise current-batch ones.
  const ChannelStats* stats = nullptr;
  /// When set, the batch statistics used are copied here (calibration).
  ChannelStats* capture = nullptr;
  Real eps = Real(1e-5);
};

/// y = gamma * (x - mean) / sqrt(var + eps) + beta over channels of x[N,C,H,W].
Tensor batchnorm2d(Graph& g, Tensor x, Tensor gamma, Tensor beta,
                   const BatchNormOptions& opt);

Tensor relu(Graph& g, Tensor x);

/// y[N,out] = x[N,in] * w[out,in]^T + b[out]; `b` may be undefined.
Tensor linear(Graph& g, Tensor x, Tensor w, Tensor b);

/// [N,C,H,W] -> [N,C]
Tensor global_avg_pool(Graph& g, Tensor x);

/// [N,...] -> [N, prod(...)]
Tensor flatten(Graph& g, Tensor x);

/// Row-wise softmax of a [N,K] tensor.
Tensor softmax(Graph& g, Tensor logits);

/// Mean over the batch of -log softmax(logits)[label].
Tensor cross_entropy(Graph& g, Tensor logits, std::span<const int> labels);

/// y = F(x, w) + x
Tensor residual_add(Graph& g, Tensor x, Tensor fx);

/// y = s * x, with s a one-element tensor.
Tensor scale(Graph& g, Tensor x, Tensor s);

/// Multiplies channel c of x[N,C,...] by mask[c] for every sample.
Tensor channel_mask(Graph& g, Tensor x, std::span<const Real> mask);

/// Scalar sum_i x_i * weights_i.
Tensor weighted_sum(Graph& g, Tensor x, std::span<const Real> weights);

/// Row-wise argmax of [N,K]; ties resolve to the lowest index.
std::vector<int> argmax_rows(const Tensor& scores);

/// Multiply-accumulates issued by conv2d and linear on this thread since the
/// last reset. Used to check FLOP tables against executed work.
std::uint64_t mac_count();
void reset_mac_count();

}  // namespace hournas::ops
