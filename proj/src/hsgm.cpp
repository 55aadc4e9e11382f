#include "hsgnet/hsgm.hpp"

#include <fmt/format.h>

namespace hsg {

namespace {

std::size_t pool_factor(const HsgmConfig& cfg, std::size_t level) {
  return cfg.aggregation_mode == AggregationMode::pyramid ? std::size_t{1} << level : 1;
}

std::pair<std::size_t, std::size_t> piece_shape(const HsgmConfig& cfg, std::size_t level, std::size_t h,
                                                std::size_t w) {
  const std::size_t f = pool_factor(cfg, level);
  return {h / cfg.hierarchy_splits[level] / f, w / f};
}

std::size_t neighbor_pairs(const Neighborhood& nb) {
  std::size_t e = 0;
  for (const auto& l : nb.lists) e += l.size();
  return e;
}

}  // namespace

void HsgmConfig::validate() const {
  if (scales.empty()) throw Error("hsgm: scales must not be empty");
  for (auto k : scales) {
    if (k < 1) throw Error("hsgm: pooling scales must be >= 1");
  }
  if (hierarchy_splits.empty() || hierarchy_splits.size() > 3) {
    throw Error(fmt::format("hsgm: expected 1 to 3 hierarchy levels, got {}", hierarchy_splits.size()));
  }
  for (std::size_t l = 0; l < hierarchy_splits.size(); ++l) {
    if (hierarchy_splits[l] < 1) throw Error("hsgm: split counts must be >= 1");
    if (l > 0 && hierarchy_splits[l] <= hierarchy_splits[l - 1]) {
      throw Error("hsgm: hierarchy_splits must be strictly increasing");
    }
  }
  neighbor_spec.validate();
}

void HsgmConfig::validate_for(std::size_t h, std::size_t w) const {
  validate();
  for (std::size_t l = 0; l < levels(); ++l) {
    const std::size_t f = pool_factor(*this, l);
    if (h % (hierarchy_splits[l] * f) != 0) {
      throw Error(fmt::format("hsgm: height {} is not divisible by split {}{}", h, hierarchy_splits[l],
                              f > 1 ? fmt::format(" times pooling factor {}", f) : std::string{}));
    }
    if (w % f != 0) throw Error(fmt::format("hsgm: width {} is not divisible by pooling factor {}", w, f));
  }
}

HsgmParams HsgmParams::create(const HsgmConfig& cfg, std::size_t h, std::size_t w, std::size_t c,
                              double bn_gamma_init) {
  cfg.validate_for(h, w);
  HsgmParams params;
  for (std::size_t l = 0; l < cfg.levels(); ++l) {
    const auto [ph, pw] = piece_shape(cfg, l, h, w);
    std::vector<PieceParams> pieces;
    for (std::size_t p = 0; p < cfg.hierarchy_splits[l]; ++p) {
      PieceParams piece;
      for (std::size_t k = 0; k < cfg.scales.size(); ++k) piece.thetas.push_back(parameter(Tensor(Shape{ph * pw}, 1.0)));
      piece.delta = parameter(Tensor(Shape{c}, 1.0));
      piece.bn = BatchNorm::create(c, bn_gamma_init);
      piece.height = ph;
      piece.width = pw;
      pieces.push_back(std::move(piece));
    }
    params.levels.push_back(std::move(pieces));
  }
  return params;
}

std::size_t HsgmParams::piece_count() const {
  std::size_t n = 0;
  for (const auto& l : levels) n += l.size();
  return n;
}

std::vector<std::pair<std::string, Var>> HsgmParams::named_parameters() const {
  std::vector<std::pair<std::string, Var>> out;
  for (std::size_t l = 0; l < levels.size(); ++l)
    for (std::size_t p = 0; p < levels[l].size(); ++p) {
      const auto& piece = levels[l][p];
      const std::string prefix = fmt::format("l{}.p{}.", l + 1, p);
      for (std::size_t k = 0; k < piece.thetas.size(); ++k) out.emplace_back(prefix + fmt::format("theta{}", k), piece.thetas[k]);
      out.emplace_back(prefix + "delta", piece.delta);
      out.emplace_back(prefix + "bn.gamma", piece.bn.gamma);
      out.emplace_back(prefix + "bn.beta", piece.bn.beta);
    }
  return out;
}

std::vector<std::pair<std::string, Tensor*>> HsgmParams::named_buffers() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (std::size_t l = 0; l < levels.size(); ++l)
    for (std::size_t p = 0; p < levels[l].size(); ++p) {
      auto& piece = levels[l][p];
      const std::string prefix = fmt::format("l{}.p{}.", l + 1, p);
      out.emplace_back(prefix + "bn.running_mean", &piece.bn.running_mean);
      out.emplace_back(prefix + "bn.running_var", &piece.bn.running_var);
    }
  return out;
}

std::size_t HsgmParams::enumerate_parameters() const {
  std::size_t n = 0;
  for (const auto& [name, v] : named_parameters()) n += v->value().size();
  return n;
}

std::vector<std::vector<Var>> hierarchical_divide(const Var& x, const std::vector<std::size_t>& splits) {
  const Tensor& in = x->value();
  if (in.rank() != 4) throw Error(fmt::format("hierarchical_divide needs N x h x w x c, got {}", shape_str(in.shape())));
  const std::size_t h = in.dim(1);
  std::vector<std::vector<Var>> levels;
  for (auto s : splits) {
    if (s == 0 || h % s != 0) throw Error(fmt::format("hierarchical_divide: height {} is not divisible by split {}", h, s));
    const std::size_t ph = h / s;
    std::vector<Var> pieces;
    for (std::size_t p = 0; p < s; ++p) pieces.push_back(s == 1 ? x : slice(x, 1, p * ph, (p + 1) * ph));
    levels.push_back(std::move(pieces));
  }
  return levels;
}

Var process_piece(const Var& piece, const HsgmConfig& cfg, PieceParams& params, const ForwardContext& ctx) {
  const Tensor& v = piece->value();
  if (v.dim(1) != params.height || v.dim(2) != params.width) {
    throw Error(fmt::format("hsgm piece of shape {} does not match parameters for {}x{}", shape_str(v.shape()),
                            params.height, params.width));
  }
  Var a_ms = spatial_branch(piece, cfg.neighbor_spec, cfg.scales, params.thetas, cfg.edge_variant);
  Var a_c = channel_branch(piece, cfg.neighbor_spec, params.delta, cfg.edge_variant);
  return fuse_and_enhance(a_ms, a_c, piece, params.bn, ctx, cfg.leaky_slope);
}

Var hsgm_forward(const Var& x, const HsgmConfig& cfg, HsgmParams& params, const ForwardContext& ctx) {
  const Tensor& in = x->value();
  if (in.rank() != 4) throw Error(fmt::format("hsgm_forward needs N x h x w x c, got {}", shape_str(in.shape())));
  cfg.validate_for(in.dim(1), in.dim(2));
  if (params.levels.size() != cfg.levels()) throw Error("hsgm: parameters were built for a different hierarchy");

  const auto divided = hierarchical_divide(x, cfg.hierarchy_splits);
  std::vector<Var> merged;  // one full-extent map per level
  for (std::size_t l = 0; l < divided.size(); ++l) {
    if (params.levels[l].size() != divided[l].size()) throw Error("hsgm: piece count differs from parameters");
    const std::size_t f = pool_factor(cfg, l);
    std::vector<Var> outs;
    for (std::size_t p = 0; p < divided[l].size(); ++p) {
      Var piece = f > 1 ? avg_pool2d(divided[l][p], f) : divided[l][p];
      outs.push_back(process_piece(piece, cfg, params.levels[l][p], ctx));
    }
    merged.push_back(outs.size() == 1 ? outs.front() : concat(outs, 1));
  }

  const double inv_levels = 1.0 / static_cast<double>(merged.size());
  Var out;
  if (cfg.aggregation_mode == AggregationMode::stripe_concat) {
    // mean(D1, ..., DL) written as D1 + sum_l (Dl - D1) / L, so identical
    // levels reproduce D1 bit for bit.
    out = merged.front();
    if (merged.size() > 1) {
      Var spread;
      for (std::size_t l = 1; l < merged.size(); ++l) {
        Var d = sub(merged[l], merged.front());
        spread = spread ? add(spread, d) : d;
      }
      out = add(out, scale(spread, inv_levels));
    }
  } else {
    out = merged.back();
    for (std::size_t l = merged.size() - 1; l-- > 0;) out = add(upsample_nearest(out, 2), merged[l]);
    if (merged.size() > 1) out = scale(out, inv_levels);
  }
  if (out->value().shape() != in.shape()) {
    throw Error(fmt::format("hsgm: internal shape drift {} -> {}", shape_str(in.shape()), shape_str(out->value().shape())));
  }
  return out;
}

ParamCount count_params(const HsgmConfig& cfg, std::size_t c, std::size_t h, std::size_t w) {
  cfg.validate_for(h, w);
  ParamCount count;
  for (std::size_t l = 0; l < cfg.levels(); ++l) {
    const auto [ph, pw] = piece_shape(cfg, l, h, w);
    const std::size_t per_piece = cfg.scales.size() * ph * pw + c + 2 * c;
    count.per_piece.emplace_back(cfg.hierarchy_splits[l], per_piece);
    count.total += per_piece * cfg.hierarchy_splits[l];
  }
  return count;
}

double estimate_flops(const HsgmConfig& cfg, std::size_t c, std::size_t h, std::size_t w) {
  cfg.validate_for(h, w);
  const auto channel_pairs = static_cast<double>(
      neighbor_pairs(channel_neighborhood(c, cfg.neighbor_spec.channel_window, cfg.neighbor_spec.channel_stride)));
  const double cd = static_cast<double>(c);
  double flops = 0.0;
  for (std::size_t l = 0; l < cfg.levels(); ++l) {
    const auto [ph, pw] = piece_shape(cfg, l, h, w);
    const double d = static_cast<double>(ph * pw);
    const auto pairs = static_cast<double>(neighbor_pairs(spatial_neighborhood(ph, pw, cfg.neighbor_spec.spatial_window)));
    double piece = d * cd;  // channel squeeze
    for (auto k : cfg.scales) {
      piece += d * static_cast<double>(k * k);  // pooling
      piece += 3.0 * pairs + d;                 // exp, normaliser, division
      piece += 2.0 * pairs + d;                 // (I + E) V
      piece += d;                               // theta
    }
    piece += static_cast<double>(cfg.scales.size() - 1) * d;  // scale sum
    piece += d * cd + 3.0 * channel_pairs + cd + 2.0 * channel_pairs + cd + cd;
    piece += d * cd * 5.0;  // outer product, BN (2), LeakyReLU, residual
    if (pool_factor(cfg, l) > 1) piece += static_cast<double>(h / cfg.hierarchy_splits[l] * w) * cd;
    flops += piece * static_cast<double>(cfg.hierarchy_splits[l]);
  }
  flops += 2.0 * static_cast<double>(cfg.levels() - 1) * static_cast<double>(h * w) * cd;  // level merge
  return flops;
}

}  // namespace hsg
