#pragma once

// Glue between library types and the plain-vector oracles.

#include <random>
#include <vector>

#include "hsgnet/hsgm.hpp"
#include "oracles/oracles.hpp"

namespace testing_support {

inline hsg::Tensor random_tensor(hsg::Shape shape, std::mt19937_64& rng, double sd = 1.0, double mean = 0.0) {
  std::normal_distribution<double> d(mean, sd);
  hsg::Tensor t(std::move(shape));
  for (auto& v : t.mutable_data()) v = d(rng);
  return t;
}

inline oracle::Map to_map(const hsg::Tensor& t) {
  oracle::Map m(t.dim(0), t.dim(1), t.dim(2), t.dim(3));
  m.v.assign(t.data().begin(), t.data().end());
  return m;
}

inline oracle::Vec values(const hsg::Tensor& t) { return {t.data().begin(), t.data().end()}; }

inline oracle::Norm to_norm(const hsg::BatchNorm& bn) {
  return {values(bn.gamma->value()), values(bn.beta->value()), values(bn.running_mean), values(bn.running_var), bn.eps};
}

inline oracle::PieceWeights to_weights(const hsg::PieceParams& p) {
  oracle::PieceWeights w;
  for (const auto& t : p.thetas) w.thetas.push_back(values(t->value()));
  w.delta = values(p.delta->value());
  w.bn = to_norm(p.bn);
  return w;
}

inline std::vector<std::vector<oracle::PieceWeights>> to_weights(const hsg::HsgmParams& params) {
  std::vector<std::vector<oracle::PieceWeights>> out;
  for (const auto& level : params.levels) {
    out.emplace_back();
    for (const auto& p : level) out.back().push_back(to_weights(p));
  }
  return out;
}

inline oracle::ModuleSpec to_spec(const hsg::HsgmConfig& cfg) {
  oracle::ModuleSpec s;
  s.scales = cfg.scales;
  s.splits = cfg.hierarchy_splits;
  s.spatial_window = cfg.neighbor_spec.spatial_window;
  s.channel_window = cfg.neighbor_spec.channel_window;
  s.channel_stride = cfg.neighbor_spec.channel_stride;
  s.as_written = cfg.edge_variant == hsg::EdgeVariant::as_written;
  s.pyramid = cfg.aggregation_mode == hsg::AggregationMode::pyramid;
  s.slope = cfg.leaky_slope;
  return s;
}

/// Perturbs every learnable value so nothing sits at its initial constant.
inline void jitter(hsg::HsgmParams& params, std::mt19937_64& rng, double sd = 0.3) {
  std::normal_distribution<double> d(0.0, sd);
  for (auto& [name, var] : params.named_parameters())
    for (auto& v : var->mutable_value().mutable_data()) v += d(rng);
}

inline double max_abs(const oracle::Vec& a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Largest |a - b| / max(1, |a|).
inline double max_rel(const oracle::Vec& a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]) / std::max(1.0, std::abs(a[i])));
  return m;
}

}  // namespace testing_support
