#include "hsgnet/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include <fmt/format.h>

namespace hsg {

Node::Node(std::string op, Tensor value, std::vector<Var> parents, BackwardFn backward, bool requires_grad)
    : op_(std::move(op)),
      value_(std::move(value)),
      parents_(std::move(parents)),
      backward_(std::move(backward)),
      requires_grad_(requires_grad) {}

Tensor Node::grad() const { return grad_.empty() ? Tensor::zeros_like(value_) : grad_; }

void Node::accumulate_grad(const Tensor& g) {
  if (!requires_grad_) return;
  if (g.shape() != value_.shape()) {
    throw Error(fmt::format("gradient of shape {} pushed into '{}' of shape {}", shape_str(g.shape()), op_,
                            shape_str(value_.shape())));
  }
  if (grad_.empty()) {
    grad_ = g;
    return;
  }
  auto dst = grad_.mutable_data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

Var constant(Tensor value) { return std::make_shared<Node>("constant", std::move(value), std::vector<Var>{}, nullptr, false); }

Var parameter(Tensor value) { return std::make_shared<Node>("parameter", std::move(value), std::vector<Var>{}, nullptr, true); }

Var make_op(std::string op, Tensor value, std::vector<Var> parents, Node::BackwardFn backward_fn) {
  bool needs = false;
  for (const auto& p : parents) {
    if (!p) throw Error(fmt::format("null input to '{}'", op));
    needs = needs || p->requires_grad();
  }
  if (!needs) {
    return std::make_shared<Node>(std::move(op), std::move(value), std::move(parents), nullptr, false);
  }
  return std::make_shared<Node>(std::move(op), std::move(value), std::move(parents), std::move(backward_fn), true);
}

void backward(const Var& root) {
  if (root->value().size() != 1) {
    throw Error(fmt::format("backward without a seed needs a scalar root, '{}' has shape {}", root->op(),
                            shape_str(root->value().shape())));
  }
  backward(root, Tensor::ones_like(root->value()));
}

void backward(const Var& root, const Tensor& seed) {
  if (!root->requires_grad()) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents_.size()) {
      Node* p = node->parents_[next++].get();
      if (p->requires_grad() && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (!n->is_leaf()) n->zero_grad();
  }
  root->accumulate_grad(seed);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_ && n->has_grad()) n->backward_(*n);
  }
}

// ---------------------------------------------------------------------------

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      throw Error(fmt::format("shapes {} and {} are not broadcastable", shape_str(a), shape_str(b)));
    }
    out[i] = std::max(ea, eb);
  }
  return out;
}

namespace {

// Flat offsets into an operand for every element of the broadcast output.
std::vector<std::size_t> broadcast_offsets(const Shape& in, const Shape& out) {
  const std::size_t rank = out.size();
  const std::size_t pad = rank - in.size();
  std::vector<std::size_t> stride(rank, 0);
  std::size_t s = 1;
  for (std::size_t i = rank; i-- > pad;) {
    const std::size_t e = in[i - pad];
    stride[i] = e == 1 ? 0 : s;
    s *= e;
  }
  const std::size_t n = numel(out);
  std::vector<std::size_t> offsets(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t off = 0;
  for (std::size_t k = 0; k < n; ++k) {
    offsets[k] = off;
    for (std::size_t ax = rank; ax-- > 0;) {
      ++idx[ax];
      off += stride[ax];
      if (idx[ax] < out[ax]) break;
      off -= stride[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  return offsets;
}

struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> ia;
  std::vector<std::size_t> ib;
  bool trivial;
};

std::shared_ptr<const BroadcastPlan> plan_broadcast(const Tensor& a, const Tensor& b) {
  auto plan = std::make_shared<BroadcastPlan>();
  plan->out = broadcast_shape(a.shape(), b.shape());
  plan->trivial = a.shape() == b.shape();
  if (!plan->trivial) {
    plan->ia = broadcast_offsets(a.shape(), plan->out);
    plan->ib = broadcast_offsets(b.shape(), plan->out);
  }
  return plan;
}

template <typename F>
Tensor apply_binary(const BroadcastPlan& plan, const Tensor& a, const Tensor& b, F f) {
  Tensor out(plan.out);
  auto o = out.mutable_data();
  if (plan.trivial) {
    for (std::size_t k = 0; k < o.size(); ++k) o[k] = f(a[k], b[k]);
  } else {
    for (std::size_t k = 0; k < o.size(); ++k) o[k] = f(a[plan.ia[k]], b[plan.ib[k]]);
  }
  return out;
}

// Scatter-add an output-shaped gradient back onto an operand's shape.
Tensor reduce_to(const BroadcastPlan& plan, const std::vector<std::size_t>& offsets, const Shape& shape,
                 const Tensor& g) {
  if (plan.trivial) return g;
  Tensor r(shape);
  for (std::size_t k = 0; k < g.size(); ++k) r[offsets[k]] += g[k];
  return r;
}

}  // namespace

Var add(const Var& a, const Var& b) {
  auto plan = plan_broadcast(a->value(), b->value());
  Tensor out = apply_binary(*plan, a->value(), b->value(), [](double x, double y) { return x + y; });
  return make_op("add", std::move(out), {a, b}, [plan](const Node& self) {
    const Tensor g = self.grad();
    const auto& pa = self.parents()[0];
    const auto& pb = self.parents()[1];
    if (pa->requires_grad()) pa->accumulate_grad(reduce_to(*plan, plan->ia, pa->value().shape(), g));
    if (pb->requires_grad()) pb->accumulate_grad(reduce_to(*plan, plan->ib, pb->value().shape(), g));
  });
}

Var sub(const Var& a, const Var& b) {
  auto plan = plan_broadcast(a->value(), b->value());
  Tensor out = apply_binary(*plan, a->value(), b->value(), [](double x, double y) { return x - y; });
  return make_op("sub", std::move(out), {a, b}, [plan](const Node& self) {
    const Tensor g = self.grad();
    const auto& pa = self.parents()[0];
    const auto& pb = self.parents()[1];
    if (pa->requires_grad()) pa->accumulate_grad(reduce_to(*plan, plan->ia, pa->value().shape(), g));
    if (pb->requires_grad()) {
      Tensor neg = g;
      for (auto& v : neg.mutable_data()) v = -v;
      pb->accumulate_grad(reduce_to(*plan, plan->ib, pb->value().shape(), neg));
    }
  });
}

Var mul(const Var& a, const Var& b) {
  auto plan = plan_broadcast(a->value(), b->value());
  Tensor out = apply_binary(*plan, a->value(), b->value(), [](double x, double y) { return x * y; });
  return make_op("mul", std::move(out), {a, b}, [plan](const Node& self) {
    const Tensor g = self.grad();
    const auto& pa = self.parents()[0];
    const auto& pb = self.parents()[1];
    const Tensor& va = pa->value();
    const Tensor& vb = pb->value();
    if (pa->requires_grad()) {
      Tensor ga(plan->out);
      for (std::size_t k = 0; k < g.size(); ++k) ga[k] = g[k] * (plan->trivial ? vb[k] : vb[plan->ib[k]]);
      pa->accumulate_grad(reduce_to(*plan, plan->ia, va.shape(), ga));
    }
    if (pb->requires_grad()) {
      Tensor gb(plan->out);
      for (std::size_t k = 0; k < g.size(); ++k) gb[k] = g[k] * (plan->trivial ? va[k] : va[plan->ia[k]]);
      pb->accumulate_grad(reduce_to(*plan, plan->ib, vb.shape(), gb));
    }
  });
}

Var exp(const Var& a) {
  Tensor out(a->value().shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a->value()[i]);
  return make_op("exp", std::move(out), {a}, [](const Node& self) {
    Tensor g = self.grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= self.value()[i];
    self.parents()[0]->accumulate_grad(g);
  });
}

Var leaky_relu(const Var& a, double slope) {
  Tensor out(a->value().shape());
  const auto& x = a->value();
  // Plain ReLU writes +0 rather than slope * x, which would be -0 for
  // negative inputs and break bitwise comparisons after a residual add.
  // NaN still propagates.
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = x[i] > 0.0 ? x[i] : (slope == 0.0 && !std::isnan(x[i]) ? 0.0 : slope * x[i]);
  return make_op(slope == 0.0 ? "relu" : "leaky_relu", std::move(out), {a}, [slope](const Node& self) {
    Tensor g = self.grad();
    const auto& x = self.parents()[0]->value();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!(x[i] > 0.0)) g[i] *= slope;
    }
    self.parents()[0]->accumulate_grad(g);
  });
}

Var relu(const Var& a) { return leaky_relu(a, 0.0); }

Var scale(const Var& a, double factor) {
  Tensor out(a->value().shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value()[i] * factor;
  return make_op("scale", std::move(out), {a}, [factor](const Node& self) {
    Tensor g = self.grad();
    for (auto& v : g.mutable_data()) v *= factor;
    self.parents()[0]->accumulate_grad(g);
  });
}

Var elementwise(ElementwiseOp op, const Var& a, const Var& b, double slope) {
  switch (op) {
    case ElementwiseOp::add:
    case ElementwiseOp::sub:
    case ElementwiseOp::mul:
      if (!b) throw Error("binary elementwise op needs a second operand");
      return op == ElementwiseOp::add ? add(a, b) : op == ElementwiseOp::sub ? sub(a, b) : mul(a, b);
    case ElementwiseOp::exp:
      return exp(a);
    case ElementwiseOp::leaky_relu:
      return leaky_relu(a, slope);
  }
  throw Error("unknown elementwise op");
}

// ---------------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  const Tensor& va = a->value();
  const Tensor& vb = b->value();
  if (va.rank() != 2 || vb.rank() != 2) {
    throw Error(fmt::format("matmul needs 2-d operands, got {} and {}", shape_str(va.shape()), shape_str(vb.shape())));
  }
  const std::size_t m = va.dim(0), k = va.dim(1), n = vb.dim(1);
  if (vb.dim(0) != k) {
    throw Error(fmt::format("matmul inner extents differ: {} vs {}", shape_str(va.shape()), shape_str(vb.shape())));
  }
  Tensor out(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double x = va[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += x * vb[p * n + j];
    }
  }
  return make_op("matmul", std::move(out), {a, b}, [m, k, n](const Node& self) {
    const Tensor g = self.grad();
    const auto& pa = self.parents()[0];
    const auto& pb = self.parents()[1];
    if (pa->requires_grad()) {
      // dA = G · Bᵀ
      const Tensor& vb = pb->value();
      Tensor ga(Shape{m, k});
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * vb[p * n + j];
          ga[i * k + p] = s;
        }
      pa->accumulate_grad(ga);
    }
    if (pb->requires_grad()) {
      // dB = Aᵀ · G
      const Tensor& va = pa->value();
      Tensor gb(Shape{k, n});
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double x = va[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += x * g[i * n + j];
        }
      pb->accumulate_grad(gb);
    }
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a->value().reshaped(std::move(shape));
  return make_op("reshape", std::move(out), {a}, [](const Node& self) {
    self.parents()[0]->accumulate_grad(self.grad().reshaped(self.parents()[0]->value().shape()));
  });
}

namespace {

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) throw Error(fmt::format("axis {} out of range for shape {}", axis, shape_str(shape)));
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Tensor& x = a->value();
  const AxisSplit s = split_at(x.shape(), axis);
  if (begin >= end || end > s.extent) {
    throw Error(fmt::format("slice [{}, {}) invalid on axis {} of shape {}", begin, end, axis, shape_str(x.shape())));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  Tensor out(out_shape);
  const std::size_t len = end - begin;
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < len; ++e)
      for (std::size_t i = 0; i < s.inner; ++i)
        out[(o * len + e) * s.inner + i] = x[(o * s.extent + begin + e) * s.inner + i];
  return make_op("slice", std::move(out), {a}, [s, begin, len](const Node& self) {
    const Tensor g = self.grad();
    Tensor ga(self.parents()[0]->value().shape());
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t e = 0; e < len; ++e)
        for (std::size_t i = 0; i < s.inner; ++i)
          ga[(o * s.extent + begin + e) * s.inner + i] = g[(o * len + e) * s.inner + i];
    self.parents()[0]->accumulate_grad(ga);
  });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw Error("concat of zero tensors");
  const Shape& first = parts.front()->value().shape();
  Shape out_shape = first;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& sh = p->value().shape();
    bool ok = sh.size() == first.size() && axis < sh.size();
    for (std::size_t i = 0; ok && i < sh.size(); ++i) ok = i == axis || sh[i] == first[i];
    if (!ok) throw Error(fmt::format("concat along axis {}: {} incompatible with {}", axis, shape_str(sh), shape_str(first)));
    total += sh[axis];
  }
  out_shape[axis] = total;
  const AxisSplit s = split_at(out_shape, axis);
  Tensor out(out_shape);
  std::size_t base = 0;
  for (const auto& p : parts) {
    const Tensor& x = p->value();
    const std::size_t len = x.dim(axis);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t e = 0; e < len; ++e)
        for (std::size_t i = 0; i < s.inner; ++i)
          out[(o * total + base + e) * s.inner + i] = x[(o * len + e) * s.inner + i];
    base += len;
  }
  return make_op("concat", std::move(out), parts, [s, total, axis](const Node& self) {
    const Tensor g = self.grad();
    std::size_t base = 0;
    for (const auto& p : self.parents()) {
      const std::size_t len = p->value().dim(axis);
      if (p->requires_grad()) {
        Tensor gp(p->value().shape());
        for (std::size_t o = 0; o < s.outer; ++o)
          for (std::size_t e = 0; e < len; ++e)
            for (std::size_t i = 0; i < s.inner; ++i)
              gp[(o * len + e) * s.inner + i] = g[(o * total + base + e) * s.inner + i];
        p->accumulate_grad(gp);
      }
      base += len;
    }
  });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a->value().data()) s += v;
  return make_op("sum", Tensor::scalar(s), {a}, [](const Node& self) {
    self.parents()[0]->accumulate_grad(Tensor(self.parents()[0]->value().shape(), self.grad()[0]));
  });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a->value().size())); }

}  // namespace hsg
