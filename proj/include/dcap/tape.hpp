#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "dcap/tensor.hpp"

namespace dcap {

/// Handle to a node on a Tape.
struct Var {
  std::uint32_t id = 0;
};

/// Append-only record of a computation with per-node backward rules.
/// Nodes are created in topological order by construction; backward()
/// walks them in reverse and accumulates gradients into every node that
/// has a differentiable leaf among its ancestors.
///
/// A tape has a single writer. Independent tapes may run concurrently.
/// Node values live in a deque, so references returned by value() stay
/// valid while further nodes are appended.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& upstream)>;

  /// Differentiable leaf (a parameter or input).
  Var leaf(Tensor value);

  /// Non-differentiable input; gradients never flow into it.
  Var constant(Tensor value);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  std::size_t node_count() const { return nodes_.size(); }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  // -- primitives ---------------------------------------------------------

  Var matmul(Var a, Var b);
  /// a * b^T
  Var matmul_nt(Var a, Var b);
  Var elementwise(Var a, Var b, Elementwise kind);
  Var add(Var a, Var b) { return elementwise(a, b, Elementwise::add); }
  Var sub(Var a, Var b) { return elementwise(a, b, Elementwise::sub); }
  Var mul(Var a, Var b) { return elementwise(a, b, Elementwise::mul); }
  Var softmax_rows(Var a);
  Var reduce(Var a, std::size_t axis, Reduce kind);
  Var concat(std::span<const Var> parts, std::size_t axis);
  Var scale(Var a, double c);
  /// Elementwise product with a fixed tensor (no gradient to the mask).
  Var scale_by(Var a, Tensor mask);
  Var reshape(Var a, std::vector<std::size_t> shape);
  Var relu(Var a);
  Var sigmoid(Var a);
  /// Selects rows of a rank-2 tensor; gradients scatter back into the
  /// selected rows only.
  Var gather_rows(Var table, std::vector<std::uint32_t> ids);
  /// Binary cross entropy of a probability against a 0/1 label, with the
  /// probability clamped to [eps, 1-eps]. Scalar in, scalar out.
  Var bce(Var prob, double label, double eps = 1e-7);

  /// Custom node. `backward` receives the upstream gradient and must
  /// accumulate into this node's parents via accumulate_grad/grad_buffer.
  Var make_node(Tensor value, std::span<const Var> parents, BackwardFn backward);

  // -- backward pass ------------------------------------------------------

  /// Runs reverse accumulation from a scalar root. Gradients of earlier
  /// backward() calls on the same tape are discarded first.
  void backward(Var root);

  /// Gradient of the last backward() root w.r.t. v (zeros if v was not
  /// reached).
  Tensor grad(Var v) const;

  /// In-place gradient accumulator for v; null when v needs no gradient.
  /// Allocated zero-filled on first use.
  Tensor* grad_buffer(Var v);

  void accumulate_grad(Var v, const Tensor& delta);

 private:
  struct Node {
    Tensor value;
    BackwardFn backprop;  // empty for leaves and constants
    bool requires_grad = false;
  };

  Var push(Tensor value, bool requires_grad, BackwardFn fn);

  std::deque<Node> nodes_;
  std::vector<std::optional<Tensor>> grads_;
};

}  // namespace dcap
