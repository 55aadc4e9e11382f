#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "hsgnet/graph_primitives.hpp"

namespace hsg {

enum class AggregationMode {
  /// Processed stripes are concatenated back to full height and the levels
  /// are averaged elementwise.
  stripe_concat,
  /// Level l is average-pooled by 2^l before processing and the levels are
  /// merged coarse-to-fine with nearest-neighbour up-sampling by 2.
  pyramid,
};

struct HsgmConfig {
  std::vector<std::size_t> scales{1, 2, 3};
  std::vector<std::size_t> hierarchy_splits{1, 2, 4};
  NeighborSpec neighbor_spec{};
  EdgeVariant edge_variant = EdgeVariant::neighbor_softmax;
  AggregationMode aggregation_mode = AggregationMode::stripe_concat;
  double leaky_slope = kDefaultLeakySlope;

  /// Shape-independent checks: non-empty scales >= 1, strictly increasing
  /// splits, at most three levels, valid neighbour spec.
  void validate() const;
  /// Additionally checks that an h x w map divides evenly at every level.
  void validate_for(std::size_t h, std::size_t w) const;
  std::size_t levels() const { return hierarchy_splits.size(); }
  bool operator==(const HsgmConfig&) const = default;
};

/// Learnable state of one stripe: one theta per pooling scale (length
/// piece_h * piece_w), the channel weights delta and the stripe's BN.
struct PieceParams {
  std::vector<Var> thetas;
  Var delta;
  BatchNorm bn;
  std::size_t height = 0;
  std::size_t width = 0;
};

/// Independent parameters for every piece of every level; nothing is shared.
struct HsgmParams {
  std::vector<std::vector<PieceParams>> levels;

  /// Theta and delta start at one, BN shift at zero and BN scale at
  /// `bn_gamma_init`; the default of zero makes the module an identity.
  static HsgmParams create(const HsgmConfig& cfg, std::size_t h, std::size_t w, std::size_t c,
                           double bn_gamma_init = 0.0);

  std::size_t piece_count() const;
  /// Learnable tensors with stable hierarchical names.
  std::vector<std::pair<std::string, Var>> named_parameters() const;
  /// Running-statistic buffers, named like the parameters.
  std::vector<std::pair<std::string, Tensor*>> named_buffers();
  /// Runtime count of allocated learnable scalars.
  std::size_t enumerate_parameters() const;
};

/// Copies `x` once per level and cuts each copy into `splits[l]` horizontal
/// stripes of equal height.
std::vector<std::vector<Var>> hierarchical_divide(const Var& x, const std::vector<std::size_t>& splits);

/// One stripe through the spatial and channel graphs, fusion, enhancement
/// and the stripe's own residual.
Var process_piece(const Var& piece, const HsgmConfig& cfg, PieceParams& params, const ForwardContext& ctx);

/// The full module on an N x h x w x c map. Output shape equals input shape.
Var hsgm_forward(const Var& x, const HsgmConfig& cfg, HsgmParams& params, const ForwardContext& ctx);

struct ParamCount {
  /// per_piece[l][p] = sum_k (h_p * w_p) + c + 2c
  std::vector<std::vector<std::size_t>> per_piece;
  std::size_t total = 0;
};

/// Closed-form learnable-parameter count for an h x w x c insertion point.
ParamCount count_params(const HsgmConfig& cfg, std::size_t c, std::size_t h, std::size_t w);

/// Rough per-sample floating-point operation count of one forward pass.
double estimate_flops(const HsgmConfig& cfg, std::size_t c, std::size_t h, std::size_t w);

}  // namespace hsg
