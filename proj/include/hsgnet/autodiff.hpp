#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "hsgnet/tensor.hpp"

namespace hsg {

class Node;
using Var = std::shared_ptr<Node>;

/// One vertex of a static operation graph: a value, its producing rule and,
/// after `backward`, the gradient of the root with respect to it.
///
/// Graphs are built per evaluation and dropped afterwards. Leaves created
/// with `parameter` outlive graphs and accumulate gradients across
/// `backward` calls until `zero_grad`.
class Node {
 public:
  /// Vector-Jacobian product: reads `self.grad()` and pushes contributions
  /// into each parent through `accumulate_grad`.
  using BackwardFn = std::function<void(const Node& self)>;

  Node(std::string op, Tensor value, std::vector<Var> parents, BackwardFn backward, bool requires_grad);

  const std::string& op() const { return op_; }
  const Tensor& value() const { return value_; }
  const std::vector<Var>& parents() const { return parents_; }
  bool requires_grad() const { return requires_grad_; }
  bool is_leaf() const { return parents_.empty(); }

  bool has_grad() const { return !grad_.empty(); }
  /// Gradient; zeros of the value's shape if nothing has been accumulated.
  Tensor grad() const;
  void accumulate_grad(const Tensor& g);
  void zero_grad() { grad_ = Tensor(); }

  /// Only the optimizer and the gradient checker rewrite leaf values.
  Tensor& mutable_value() { return value_; }

 private:
  friend void backward(const Var& root, const Tensor& seed);

  std::string op_;
  Tensor value_;
  Tensor grad_;
  std::vector<Var> parents_;
  BackwardFn backward_;
  bool requires_grad_;
};

/// Leaf that never receives a gradient.
Var constant(Tensor value);
/// Leaf that accumulates gradients.
Var parameter(Tensor value);

/// Creates an interior node. The node requires a gradient iff some parent
/// does; otherwise `backward_fn` is dropped.
Var make_op(std::string op, Tensor value, std::vector<Var> parents, Node::BackwardFn backward_fn);

/// Reverse-mode accumulation from a scalar root (seed 1).
void backward(const Var& root);
/// Reverse-mode accumulation with an explicit seed of the root's shape.
/// Interior gradients are recomputed on every call; leaf gradients add up.
void backward(const Var& root, const Tensor& seed);

// ---------------------------------------------------------------------------
// Elementwise arithmetic. Binary ops broadcast numpy-style: shapes are
// right-aligned and an extent of 1 stretches.

enum class ElementwiseOp { add, sub, mul, exp, leaky_relu };

inline constexpr double kDefaultLeakySlope = 0.01;

Shape broadcast_shape(const Shape& a, const Shape& b);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var exp(const Var& a);
Var leaky_relu(const Var& a, double slope = kDefaultLeakySlope);
Var relu(const Var& a);
Var scale(const Var& a, double factor);

/// Dispatcher over the elementwise family; `b` is ignored for unary ops.
Var elementwise(ElementwiseOp op, const Var& a, const Var& b = nullptr, double slope = kDefaultLeakySlope);

// ---------------------------------------------------------------------------
// Linear algebra and structural ops.

Var matmul(const Var& a, const Var& b);
Var reshape(const Var& a, Shape shape);
/// Half-open slice [begin, end) along `axis`.
Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end);
Var concat(const std::vector<Var>& parts, std::size_t axis);
/// Sum of all elements, shape {1}.
Var sum(const Var& a);
Var mean(const Var& a);

}  // namespace hsg
