#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string_view>
#include <vector>

#include "douap/tensor.hpp"

namespace douap {

using NodeId = std::size_t;

enum class Op {
  kLeaf,
  kAffine,
  kTanh,
  kAdd,
  kSub,
  kMul,
  kScale,
  kMean,
  kL2Normalize,
  kRowDot,
  kSoftmaxXent,
  kConcatRows,
  kTranspose,
  kReshape,
};

std::string_view to_string(Op op);

/// Tape of primitive applications. Nodes are appended in evaluation order, so
/// the order is topological by construction and backward walks it in reverse.
///
/// Leaves whose tensor has requires_grad set receive dL/dleaf after
/// backward(); every interior node that depends on such a leaf also holds its
/// gradient, which callers may read (e.g. per-token embedding saliency).
class Graph {
 public:
  /// Adds a leaf. Gradients are tracked iff `value.requires_grad()`.
  NodeId leaf(Tensor value);
  NodeId param(Tensor value);
  NodeId constant(Tensor value);

  /// x·W (+ b). x is (..., k), W is (k, n), b is (n). Leading dims of x are rows.
  NodeId affine(NodeId x, NodeId w);
  NodeId affine(NodeId x, NodeId w, NodeId b);
  NodeId tanh(NodeId x);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId x, double factor);
  /// Mean over `axis`; the axis is removed from the shape.
  NodeId mean(NodeId x, std::size_t axis);
  /// Rows of the last axis scaled to unit L2 norm.
  NodeId l2_normalize(NodeId x);
  /// Dot product over the last axis: (..., d), (..., d) -> (...).
  NodeId row_dot(NodeId a, NodeId b);
  /// Mean over rows of -log softmax(logits[r])[targets[r]]; logits are (n, c).
  NodeId softmax_xent(NodeId logits, std::vector<std::size_t> targets);
  /// Concatenation along axis 0.
  NodeId concat_rows(std::span<const NodeId> parts);
  NodeId concat_rows(std::initializer_list<NodeId> parts) {
    return concat_rows(std::span<const NodeId>(parts.begin(), parts.size()));
  }
  NodeId transpose(NodeId x);
  /// Same data, new shape with equal element count.
  NodeId reshape(NodeId x, Shape shape);

  /// Reverse sweep from a scalar node. Gradients from earlier sweeps are cleared.
  void backward(NodeId seed);

  const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
  std::span<const double> grad(NodeId id) const { return nodes_.at(id).value.grad(); }
  Op op(NodeId id) const { return nodes_.at(id).op; }
  std::span<const NodeId> inputs(NodeId id) const { return nodes_.at(id).inputs; }
  bool tracks_grad(NodeId id) const { return nodes_.at(id).needs_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Op op = Op::kLeaf;
    std::vector<NodeId> inputs;
    Tensor value;
    bool needs_grad = false;
    double factor = 0.0;
    std::size_t axis = 0;
    std::vector<std::size_t> targets;
    // softmax probabilities or inverse norms kept from the forward pass
    std::vector<double> saved;
  };

  NodeId push(Node node);
  bool any_needs_grad(std::initializer_list<NodeId> ids) const;
  void backward_node(const Node& node);

  std::vector<Node> nodes_;
};

/// Sum of all entries, composed from mean and scale.
NodeId sum_all(Graph& g, NodeId x);

}  // namespace douap
