#pragma once

#include <cstddef>

#include "hsgnet/autodiff.hpp"

namespace hsg {

/// Evaluation flags threaded through every module forward.
struct ForwardContext {
  bool training = false;
  /// Running BN statistics move only when the trainer asks for it, so
  /// training-mode forwards stay pure for gradient checking.
  bool update_running_stats = false;
};

/// Per-channel batch normalization over the last axis.
struct BatchNorm {
  Var gamma;
  Var beta;
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  static BatchNorm create(std::size_t channels, double gamma_init = 1.0);
  std::size_t channels() const { return running_mean.size(); }
};

/// Normalizes `x` (any rank, channels last) with batch statistics in
/// training mode or running statistics in eval mode, then applies the
/// affine map. Training mode needs at least two values per channel.
Var batch_norm(const Var& x, BatchNorm& bn, const ForwardContext& ctx);

/// NHWC convolution, square kernel, zero padding, no bias.
/// `weight` has shape {out, k, k, in}.
Var conv2d(const Var& x, const Var& weight, std::size_t stride, std::size_t padding);

/// x (N x D) times weightᵀ (K x D) -> N x K, no bias.
Var linear(const Var& x, const Var& weight);

/// N x H x W x C -> N x C, maximum over spatial positions. The first
/// maximal position receives the gradient on ties.
Var global_max_pool(const Var& x);

/// Non-overlapping `factor` x `factor` average pooling on N x H x W x C.
Var avg_pool2d(const Var& x, std::size_t factor);

/// Nearest-neighbour up-sampling by an integer factor on N x H x W x C.
Var upsample_nearest(const Var& x, std::size_t factor);

}  // namespace hsg
