#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "hsgnet/autodiff.hpp"
#include "hsgnet/nn_ops.hpp"

namespace hsg {

// Similarity-graph pipeline applied to one feature map (batched along a
// leading axis). Feature maps are N x h x w x c, channels last; a spatial
// node index is the row-major position i*w + j.

enum class GraphKind { spatial, channel };

/// Edge rule. `neighbor_softmax` weights edge i->j by exp(V_j) normalised
/// over i's neighbours. `as_written` uses exp(V_i) in the numerator, which
/// gives every edge leaving i the same weight.
enum class EdgeVariant { neighbor_softmax, as_written };

struct NeighborSpec {
  std::size_t spatial_window = 3;
  std::size_t channel_window = 3;
  /// Spacing between channel neighbours (a dilated window).
  std::size_t channel_stride = 1;

  /// Throws unless both windows are odd and >= 3 and the stride is >= 1.
  void validate() const;
  bool operator==(const NeighborSpec&) const = default;
};

/// Adjacency lists; `lists[i]` holds the neighbours of node i in ascending
/// order, never i itself.
struct Neighborhood {
  std::vector<std::vector<std::size_t>> lists;
  std::size_t size() const { return lists.size(); }
};

Neighborhood spatial_neighborhood(std::size_t h, std::size_t w, std::size_t window);
Neighborhood channel_neighborhood(std::size_t c, std::size_t window, std::size_t stride);
/// d x d indicator of the neighbour relation.
Tensor neighbor_mask(const Neighborhood& nb);

/// Single-sample graph: node values V (length d) and the d x d edge matrix.
struct SimilarityGraph {
  Tensor nodes;
  Tensor edges;
  GraphKind kind = GraphKind::spatial;
};

/// Builds a graph from one sample's nodes: an h x w map for spatial graphs
/// (flattened row-major) or a length-c vector for channel graphs.
SimilarityGraph build_graph(const Tensor& nodes, const NeighborSpec& spec, GraphKind kind,
                            EdgeVariant variant = EdgeVariant::neighbor_softmax);
/// (I + E) V for a single-sample graph.
Tensor aggregate(const SimilarityGraph& g);

// ---------------------------------------------------------------------------
// Differentiable, batched operations.

/// N x h x w x c -> N x h x w, mean over channels.
Var channel_squeeze(const Var& x);
/// N x h x w -> N x h x w; mean over the k x k window anchored at (i, j),
/// clipped to the map and averaged over valid entries only.
Var multiscale_avg_pool(const Var& s, std::size_t k);
/// N x d node values -> N x d x d edge weights, zero off the neighbourhood.
/// Rows are stabilised by subtracting the neighbourhood maximum.
Var build_edges(const Var& v, const Neighborhood& nb, EdgeVariant variant = EdgeVariant::neighbor_softmax);
/// U = (I + E) V per sample: N x d x d, N x d -> N x d.
Var aggregate_nodes(const Var& edges, const Var& v);
/// A = U ⊙ theta with theta of length d shared across the batch.
Var apply_node_weights(const Var& u, const Var& theta);

/// Channel squeeze, then per pooling scale: pool, build edges, aggregate,
/// weight by that scale's theta; the scales are summed. Output is
/// N x h x w x 1, the row-major rearrangement of the 1 x h x w map.
Var spatial_branch(const Var& x, const NeighborSpec& spec, std::span<const std::size_t> scales,
                   std::span<const Var> thetas, EdgeVariant variant = EdgeVariant::neighbor_softmax);

/// N x h x w x c -> N x c, mean over spatial positions.
Var spatial_squeeze(const Var& x);

/// Spatial squeeze, channel-axis graph, aggregation and weighting by
/// `delta_w` (length c). Output N x c.
Var channel_branch(const Var& x, const NeighborSpec& spec, const Var& delta_w,
                   EdgeVariant variant = EdgeVariant::neighbor_softmax);

/// A^msc = A^ms ⊗ A^c, O = LeakyReLU(BN(A^msc)), returns O + X.
Var fuse_and_enhance(const Var& a_ms, const Var& a_c, const Var& x, BatchNorm& bn, const ForwardContext& ctx,
                     double slope = kDefaultLeakySlope);

}  // namespace hsg
