#include "hsgnet/graph_primitives.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

namespace hsg {

void NeighborSpec::validate() const {
  auto odd3 = [](std::size_t w) { return w >= 3 && w % 2 == 1; };
  if (!odd3(spatial_window)) throw Error(fmt::format("spatial_window must be odd and >= 3, got {}", spatial_window));
  if (!odd3(channel_window)) throw Error(fmt::format("channel_window must be odd and >= 3, got {}", channel_window));
  if (channel_stride < 1) throw Error("channel_stride must be >= 1");
}

Neighborhood spatial_neighborhood(std::size_t h, std::size_t w, std::size_t window) {
  const long r = static_cast<long>(window / 2);
  Neighborhood nb;
  nb.lists.resize(h * w);
  for (long i = 0; i < static_cast<long>(h); ++i)
    for (long j = 0; j < static_cast<long>(w); ++j) {
      auto& list = nb.lists[i * w + j];
      for (long y = std::max(0L, i - r); y <= std::min(static_cast<long>(h) - 1, i + r); ++y)
        for (long x = std::max(0L, j - r); x <= std::min(static_cast<long>(w) - 1, j + r); ++x)
          if (y != i || x != j) list.push_back(static_cast<std::size_t>(y * static_cast<long>(w) + x));
    }
  return nb;
}

Neighborhood channel_neighborhood(std::size_t c, std::size_t window, std::size_t stride) {
  const long r = static_cast<long>(window / 2);
  const long s = static_cast<long>(stride);
  Neighborhood nb;
  nb.lists.resize(c);
  for (long m = 0; m < static_cast<long>(c); ++m)
    for (long t = -r; t <= r; ++t) {
      const long other = m + t * s;
      if (t != 0 && other >= 0 && other < static_cast<long>(c)) nb.lists[m].push_back(static_cast<std::size_t>(other));
    }
  return nb;
}

Tensor neighbor_mask(const Neighborhood& nb) {
  const std::size_t d = nb.size();
  Tensor mask(Shape{d, d});
  for (std::size_t i = 0; i < d; ++i)
    for (auto j : nb.lists[i]) mask[i * d + j] = 1.0;
  return mask;
}

// ---------------------------------------------------------------------------

Var channel_squeeze(const Var& x) {
  const Tensor& in = x->value();
  if (in.rank() != 4) throw Error(fmt::format("channel_squeeze needs N x h x w x c, got {}", shape_str(in.shape())));
  const std::size_t n = in.dim(0), h = in.dim(1), w = in.dim(2), c = in.dim(3);
  const std::size_t positions = n * h * w;
  Tensor out(Shape{n, h, w});
  for (std::size_t p = 0; p < positions; ++p) {
    double s = 0.0;
    for (std::size_t m = 0; m < c; ++m) s += in[p * c + m];
    out[p] = s / static_cast<double>(c);
  }
  return make_op("channel_squeeze", std::move(out), {x}, [positions, c](const Node& self) {
    const Tensor g = self.grad();
    Tensor dx(self.parents()[0]->value().shape());
    const double inv = 1.0 / static_cast<double>(c);
    for (std::size_t p = 0; p < positions; ++p)
      for (std::size_t m = 0; m < c; ++m) dx[p * c + m] = g[p] * inv;
    self.parents()[0]->accumulate_grad(dx);
  });
}

Var multiscale_avg_pool(const Var& s, std::size_t k) {
  if (k < 1) throw Error("pooling window must be >= 1");
  const Tensor& in = s->value();
  if (in.rank() != 3) throw Error(fmt::format("multiscale_avg_pool needs N x h x w, got {}", shape_str(in.shape())));
  const std::size_t n = in.dim(0), h = in.dim(1), w = in.dim(2);
  Tensor out(in.shape());
  Tensor inv_count(Shape{h, w});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const std::size_t rows = std::min(k, h - i), cols = std::min(k, w - j);
      inv_count[i * w + j] = 1.0 / static_cast<double>(rows * cols);
    }
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        double acc = 0.0;
        for (std::size_t y = i; y < std::min(h, i + k); ++y)
          for (std::size_t x = j; x < std::min(w, j + k); ++x) acc += in[(b * h + y) * w + x];
        out[(b * h + i) * w + j] = acc * inv_count[i * w + j];
      }
  return make_op("multiscale_avg_pool", std::move(out), {s}, [n, h, w, k, inv_count](const Node& self) {
    const Tensor g = self.grad();
    Tensor ds(Shape{n, h, w});
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          const double gv = g[(b * h + i) * w + j] * inv_count[i * w + j];
          for (std::size_t y = i; y < std::min(h, i + k); ++y)
            for (std::size_t x = j; x < std::min(w, j + k); ++x) ds[(b * h + y) * w + x] += gv;
        }
    self.parents()[0]->accumulate_grad(ds);
  });
}

Var build_edges(const Var& v, const Neighborhood& nb, EdgeVariant variant) {
  const Tensor& in = v->value();
  if (in.rank() != 2 || in.dim(1) != nb.size()) {
    throw Error(fmt::format("build_edges: nodes {} do not match a neighbourhood of {} nodes", shape_str(in.shape()),
                            nb.size()));
  }
  const std::size_t n = in.dim(0), d = nb.size();
  Tensor edges(Shape{n, d, d});
  // For as_written, prob holds the neighbour softmax used by the backward rule.
  Tensor prob(Shape{n, d, d});
  for (std::size_t b = 0; b < n; ++b) {
    const double* vb = &in[b * d];
    for (std::size_t i = 0; i < d; ++i) {
      const auto& list = nb.lists[i];
      if (list.empty()) continue;
      double top = -std::numeric_limits<double>::infinity();
      for (auto j : list) top = std::max(top, vb[j]);
      double z = 0.0;
      for (auto j : list) z += std::exp(vb[j] - top);
      double* row = &edges[(b * d + i) * d];
      double* prow = &prob[(b * d + i) * d];
      for (auto j : list) prow[j] = std::exp(vb[j] - top) / z;
      if (variant == EdgeVariant::neighbor_softmax) {
        for (auto j : list) row[j] = prow[j];
      } else {
        const double r = std::exp(vb[i] - top) / z;
        for (auto j : list) row[j] = r;
      }
    }
  }
  for (double e : edges.data()) {
    if (!std::isfinite(e)) throw Error("build_edges produced a non-finite edge weight");
  }
  return make_op("build_edges", edges, {v}, [n, d, nb, variant, prob = std::move(prob)](const Node& self) {
    const Tensor g = self.grad();
    const Tensor& e = self.value();
    Tensor dv(Shape{n, d});
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t i = 0; i < d; ++i) {
        const auto& list = nb.lists[i];
        if (list.empty()) continue;
        const std::size_t row = (b * d + i) * d;
        if (variant == EdgeVariant::neighbor_softmax) {
          double s = 0.0;
          for (auto j : list) s += g[row + j] * e[row + j];
          for (auto j : list) dv[b * d + j] += e[row + j] * (g[row + j] - s);
        } else {
          double gs = 0.0;
          for (auto j : list) gs += g[row + j];
          const double r = e[row + list.front()];
          dv[b * d + i] += gs * r;
          for (auto j : list) dv[b * d + j] -= gs * r * prob[row + j];
        }
      }
    self.parents()[0]->accumulate_grad(dv);
  });
}

Var aggregate_nodes(const Var& edges, const Var& v) {
  const Tensor& e = edges->value();
  const Tensor& x = v->value();
  if (x.rank() != 2 || e.rank() != 3 || e.dim(0) != x.dim(0) || e.dim(1) != x.dim(1) || e.dim(2) != x.dim(1)) {
    throw Error(fmt::format("aggregate_nodes: edges {} incompatible with nodes {}", shape_str(e.shape()),
                            shape_str(x.shape())));
  }
  const std::size_t n = x.dim(0), d = x.dim(1);
  Tensor out(Shape{n, d});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < d; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += e[(b * d + i) * d + j] * x[b * d + j];
      out[b * d + i] = x[b * d + i] + s;
    }
  return make_op("aggregate_nodes", std::move(out), {edges, v}, [n, d](const Node& self) {
    const Tensor g = self.grad();
    const auto& pe = self.parents()[0];
    const auto& pv = self.parents()[1];
    const Tensor& e = pe->value();
    const Tensor& x = pv->value();
    if (pe->requires_grad()) {
      Tensor de(Shape{n, d, d});
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < d; ++i)
          for (std::size_t j = 0; j < d; ++j) de[(b * d + i) * d + j] = g[b * d + i] * x[b * d + j];
      pe->accumulate_grad(de);
    }
    if (pv->requires_grad()) {
      Tensor dv = g;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < d; ++i)
          for (std::size_t j = 0; j < d; ++j) dv[b * d + j] += g[b * d + i] * e[(b * d + i) * d + j];
      pv->accumulate_grad(dv);
    }
  });
}

Var apply_node_weights(const Var& u, const Var& theta) {
  const Tensor& uv = u->value();
  const Tensor& t = theta->value();
  if (t.rank() != 1 || uv.shape().back() != t.dim(0)) {
    throw Error(fmt::format("node weights of length {} applied to nodes {}", t.size(), shape_str(uv.shape())));
  }
  return mul(u, theta);
}

Var spatial_branch(const Var& x, const NeighborSpec& spec, std::span<const std::size_t> scales,
                   std::span<const Var> thetas, EdgeVariant variant) {
  spec.validate();
  if (scales.empty()) throw Error("spatial_branch needs at least one pooling scale");
  if (scales.size() != thetas.size()) {
    throw Error(fmt::format("spatial_branch: {} scales but {} theta vectors", scales.size(), thetas.size()));
  }
  const Tensor& in = x->value();
  if (in.rank() != 4) throw Error(fmt::format("spatial_branch needs N x h x w x c, got {}", shape_str(in.shape())));
  const std::size_t n = in.dim(0), h = in.dim(1), w = in.dim(2);
  const Neighborhood nb = spatial_neighborhood(h, w, spec.spatial_window);

  Var squeezed = channel_squeeze(x);
  Var total;
  for (std::size_t s = 0; s < scales.size(); ++s) {
    Var nodes = reshape(multiscale_avg_pool(squeezed, scales[s]), Shape{n, h * w});
    Var weighted = apply_node_weights(aggregate_nodes(build_edges(nodes, nb, variant), nodes), thetas[s]);
    total = total ? add(total, weighted) : weighted;
  }
  return reshape(total, Shape{n, h, w, 1});
}

Var spatial_squeeze(const Var& x) {
  const Tensor& in = x->value();
  if (in.rank() != 4) throw Error(fmt::format("spatial_squeeze needs N x h x w x c, got {}", shape_str(in.shape())));
  const std::size_t n = in.dim(0), hw = in.dim(1) * in.dim(2), c = in.dim(3);
  Tensor out(Shape{n, c});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t m = 0; m < c; ++m) out[b * c + m] += in[(b * hw + p) * c + m];
  for (auto& v : out.mutable_data()) v /= static_cast<double>(hw);
  return make_op("spatial_squeeze", std::move(out), {x}, [n, hw, c](const Node& self) {
    const Tensor g = self.grad();
    Tensor dx(self.parents()[0]->value().shape());
    const double inv = 1.0 / static_cast<double>(hw);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t p = 0; p < hw; ++p)
        for (std::size_t m = 0; m < c; ++m) dx[(b * hw + p) * c + m] = g[b * c + m] * inv;
    self.parents()[0]->accumulate_grad(dx);
  });
}

Var channel_branch(const Var& x, const NeighborSpec& spec, const Var& delta_w, EdgeVariant variant) {
  spec.validate();
  const Tensor& in = x->value();
  if (in.rank() != 4) throw Error(fmt::format("channel_branch needs N x h x w x c, got {}", shape_str(in.shape())));
  const Neighborhood nb = channel_neighborhood(in.dim(3), spec.channel_window, spec.channel_stride);
  Var nodes = spatial_squeeze(x);
  return apply_node_weights(aggregate_nodes(build_edges(nodes, nb, variant), nodes), delta_w);
}

Var fuse_and_enhance(const Var& a_ms, const Var& a_c, const Var& x, BatchNorm& bn, const ForwardContext& ctx,
                     double slope) {
  const Tensor& xv = x->value();
  if (xv.rank() != 4) throw Error(fmt::format("fuse_and_enhance needs N x h x w x c, got {}", shape_str(xv.shape())));
  const std::size_t n = xv.dim(0), h = xv.dim(1), w = xv.dim(2), c = xv.dim(3);
  if (a_ms->value().shape() != Shape{n, h, w, 1} || a_c->value().shape() != Shape{n, c}) {
    throw Error(fmt::format("fuse_and_enhance: spatial map {} and channel weights {} do not fit input {}",
                            shape_str(a_ms->value().shape()), shape_str(a_c->value().shape()), shape_str(xv.shape())));
  }
  Var a_msc = mul(a_ms, reshape(a_c, Shape{n, 1, 1, c}));
  Var o = leaky_relu(batch_norm(a_msc, bn, ctx), slope);
  return add(o, x);
}

// ---------------------------------------------------------------------------

SimilarityGraph build_graph(const Tensor& nodes, const NeighborSpec& spec, GraphKind kind, EdgeVariant variant) {
  spec.validate();
  Neighborhood nb;
  if (kind == GraphKind::spatial) {
    if (nodes.rank() != 2) throw Error(fmt::format("spatial graph needs an h x w node map, got {}", shape_str(nodes.shape())));
    nb = spatial_neighborhood(nodes.dim(0), nodes.dim(1), spec.spatial_window);
  } else {
    if (nodes.rank() != 1) throw Error(fmt::format("channel graph needs a node vector, got {}", shape_str(nodes.shape())));
    nb = channel_neighborhood(nodes.dim(0), spec.channel_window, spec.channel_stride);
  }
  for (double v : nodes.data()) {
    if (!std::isfinite(v)) throw Error("graph nodes must be finite");
  }
  const std::size_t d = nb.size();
  Var e = build_edges(constant(nodes.reshaped(Shape{1, d})), nb, variant);
  return SimilarityGraph{nodes.reshaped(Shape{d}), e->value().reshaped(Shape{d, d}), kind};
}

Tensor aggregate(const SimilarityGraph& g) {
  const std::size_t d = g.nodes.size();
  Var u = aggregate_nodes(constant(g.edges.reshaped(Shape{1, d, d})), constant(g.nodes.reshaped(Shape{1, d})));
  return u->value().reshaped(Shape{d});
}

}  // namespace hsg
