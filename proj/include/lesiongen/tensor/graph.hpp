#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lesiongen/tensor/tensor.hpp"

namespace lesiongen {

/// Handle to a node in a BasicGraph. Only meaningful for the graph that issued it.
struct NodeId {
  std::uint32_t index = 0;
  auto operator<=>(const NodeId&) const = default;
};

enum class OpKind {
  Leaf,
  Add,
  Sub,
  Mul,
  Div,
  Scale,
  AddScalar,
  MatMul,
  Transpose,
  Conv2d,
  UpsampleNearest,
  MeanPool2x2,
  SiLU,
  Sigmoid,
  Relu,
  Abs,
  Sqrt,
  GroupNorm,
  Reshape,
  Expand,
  Concat,
  Slice,
  IndexSelect,
  Sum,
  Mean,
  SumAxis,
  SoftmaxCrossEntropy,
};

std::string_view op_name(OpKind kind);
/// Throws ValidationError for an unknown tag.
OpKind parse_op_kind(std::string_view tag);

/// Attributes for `record`. Each op reads only the fields it needs.
struct OpAttrs {
  double scalar = 0.0;      // Scale, AddScalar
  int axis = 0;             // Concat, Slice, IndexSelect, SumAxis
  int begin = 0;            // Slice
  int end = 0;              // Slice
  int stride = 1;           // Conv2d
  int pad = 0;              // Conv2d
  int factor = 2;           // UpsampleNearest
  int groups = 0;           // GroupNorm; 0 selects min(8, channels)
  double eps = 1e-5;        // GroupNorm
  bool keepdim = true;      // SumAxis
  Shape shape;              // Reshape, Expand
  std::vector<int> indices; // IndexSelect indices, SoftmaxCrossEntropy targets
};

/// Gradients produced by BasicGraph::backward. Nodes not on a differentiable
/// path to the loss have no entry.
template <typename T>
class Gradients {
 public:
  explicit Gradients(std::vector<std::optional<BasicTensor<T>>> slots) : slots_(std::move(slots)) {}

  bool has(NodeId id) const { return id.index < slots_.size() && slots_[id.index].has_value(); }
  const BasicTensor<T>& at(NodeId id) const;

 private:
  std::vector<std::optional<BasicTensor<T>>> slots_;
};

/// Append-only tape with eager forward evaluation and reverse-mode backward.
///
/// Every recorded node has one output. Inputs always precede outputs, so node
/// order is a topological order. Broadcasting only exists between a tensor and
/// a scalar attribute; anything else needs an explicit Reshape/Expand.
template <typename T>
class BasicGraph {
 public:
  using TensorT = BasicTensor<T>;
  using BackwardFn =
      std::function<void(const BasicGraph& graph, const TensorT& grad_out, std::span<TensorT* const> grad_in)>;

  NodeId leaf(TensorT value, bool requires_grad = false);
  NodeId constant(TensorT value) { return leaf(std::move(value), false); }
  NodeId variable(TensorT value) { return leaf(std::move(value), true); }

  /// Generic entry point used by tooling and tests; the typed helpers below
  /// are what model code calls.
  NodeId record(OpKind kind, std::span<const NodeId> inputs, const OpAttrs& attrs = {});

  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId div(NodeId a, NodeId b);
  NodeId scale(NodeId a, double s);
  NodeId add_scalar(NodeId a, double s);
  NodeId matmul(NodeId a, NodeId b);
  NodeId transpose(NodeId a);
  /// NCHW input, OIHW weight, optional [O] bias.
  NodeId conv2d(NodeId x, NodeId w, std::optional<NodeId> bias, int stride, int pad);
  NodeId upsample_nearest(NodeId x, int factor = 2);
  NodeId mean_pool2x2(NodeId x);
  NodeId silu(NodeId x);
  NodeId sigmoid(NodeId x);
  NodeId relu(NodeId x);
  NodeId abs(NodeId x);
  NodeId sqrt(NodeId x);
  /// gamma and beta have dims [C].
  NodeId group_norm(NodeId x, NodeId gamma, NodeId beta, int groups = 0, double eps = 1e-5);
  NodeId reshape(NodeId x, Shape dims);
  /// Repeats size-1 axes up to `dims` (same rank).
  NodeId expand(NodeId x, Shape dims);
  NodeId concat(std::span<const NodeId> xs, int axis);
  NodeId slice(NodeId x, int axis, int begin, int end);
  NodeId index_select(NodeId x, int axis, std::vector<int> indices);
  NodeId sum(NodeId x);
  NodeId mean(NodeId x);
  NodeId sum_axis(NodeId x, int axis, bool keepdim = true);
  /// Mean over rows of -log softmax(logits[i])[targets[i]]; logits are [N, K].
  NodeId softmax_cross_entropy(NodeId logits, std::vector<int> targets);

  const TensorT& value(NodeId id) const { return node(id).value; }
  const Shape& dims(NodeId id) const { return node(id).value.dims(); }
  bool requires_grad(NodeId id) const { return node(id).requires_grad; }
  OpKind kind(NodeId id) const { return node(id).kind; }
  const std::vector<NodeId>& inputs(NodeId id) const { return node(id).inputs; }
  std::size_t size() const { return nodes_.size(); }

  /// Requires a single-element loss node with a finite value.
  Gradients<T> backward(NodeId loss) const;

 private:
  struct Node {
    OpKind kind = OpKind::Leaf;
    std::vector<NodeId> inputs;
    TensorT value;
    bool requires_grad = false;
    BackwardFn backward;
  };

  const Node& node(NodeId id) const;
  NodeId push(OpKind kind, std::vector<NodeId> inputs, TensorT value, BackwardFn backward);
  bool any_requires_grad(std::span<const NodeId> ids) const;

  std::vector<Node> nodes_;
};

using Graph = BasicGraph<float>;
using GraphD = BasicGraph<double>;

extern template class Gradients<float>;
extern template class Gradients<double>;
extern template class BasicGraph<float>;
extern template class BasicGraph<double>;

}  // namespace lesiongen
