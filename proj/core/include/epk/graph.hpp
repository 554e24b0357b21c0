#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "epk/tensor.hpp"

namespace epk {

enum class OpKind : std::uint8_t {
  parameter,
  constant,
  matmul,
  add,
  relu,
  embedding_lookup,
  scaled_dot_attention,
  log_softmax,
  reshape,
  slice,
  scale,
};

std::string_view op_name(OpKind kind);

/// Opaque handle to a node of a ComputeGraph.
struct NodeId {
  std::uint32_t index = UINT32_MAX;
  bool valid() const { return index != UINT32_MAX; }
  friend bool operator==(NodeId, NodeId) = default;
};

/// Eager reverse-mode tape over a flat parameter vector.
///
/// Every builder evaluates its op immediately and records it; node ids are
/// issued in topological order. Parameter leaves are views into the flat
/// vector passed at construction, so backward returns gradients in the same
/// flat layout. The graph is kept after backward, which lets callers run any
/// number of seeds against one forward pass.
class ComputeGraph {
 public:
  explicit ComputeGraph(std::span<const double> parameters);

  NodeId parameter(std::size_t offset, Shape shape);
  NodeId constant(Tensor value);

  /// [..., n, k] x [k, m] -> [..., n, m]; the right operand must be rank 2.
  NodeId matmul(NodeId a, NodeId b);
  /// Elementwise add of equal shapes, or bias-add of a rank-1 tensor along the last axis.
  NodeId add(NodeId a, NodeId b);
  NodeId relu(NodeId x);
  /// Gathers rows of a [vocab, d] table -> [ids.size(), d].
  NodeId embedding_lookup(NodeId table, std::vector<std::size_t> ids);
  /// Multi-head softmax(q k^T / sqrt(d_head)) v over [batch, len, d] (or [len, d]) operands.
  NodeId scaled_dot_attention(NodeId q, NodeId k, NodeId v, std::size_t heads);
  /// Log-softmax over the last axis.
  NodeId log_softmax(NodeId x);
  NodeId reshape(NodeId x, Shape shape);
  /// Takes [begin, end) along `axis`.
  NodeId slice(NodeId x, std::size_t axis, std::size_t begin, std::size_t end);
  NodeId scale(NodeId x, double factor);

  const Tensor& value(NodeId id) const;
  OpKind kind(NodeId id) const;
  std::size_t num_nodes() const { return nodes_.size(); }
  std::size_t num_parameters() const { return parameters_.size(); }

  /// Vector-Jacobian product: g[i] = sum_o seed[o] * d out_o / d theta_i.
  std::vector<double> backward(NodeId output, const Tensor& seed) const;

  /// Runs `count` seeds at once. `seeds` holds count * size(output) values;
  /// the result is a count x D matrix, row c being backward with seed c.
  Matrix backward_batch(NodeId output, std::span<const double> seeds, std::size_t count) const;

  /// Full O x D Jacobian of a length-O output (any shape, flattened).
  Matrix output_jacobian(NodeId output) const;

 private:
  struct Node {
    OpKind kind;
    std::vector<NodeId> inputs;
    Tensor value;
    bool needs_grad = false;
    std::size_t offset = 0;                // parameter leaves
    double factor = 1.0;                   // scale
    std::size_t axis = 0, begin = 0;       // slice
    std::size_t heads = 0;                 // attention
    std::vector<std::size_t> ids;          // embedding rows
    std::vector<double> cache;             // attention probabilities
  };

  static Node make_node(OpKind kind, std::vector<NodeId> inputs = {});
  NodeId push(Node node);
  const Node& node(NodeId id) const;
  void check_finite(const Node& n) const;
  void propagate(const Node& n, const std::vector<double>& grad, std::size_t count,
                 std::vector<std::vector<double>>& grads, Matrix& out) const;

  std::span<const double> parameters_;
  std::vector<Node> nodes_;
};

}  // namespace epk
