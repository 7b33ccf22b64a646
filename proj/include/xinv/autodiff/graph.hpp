#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "xinv/autodiff/tensor.hpp"

namespace xinv {

enum class OpKind {
  MatMul,
  AddBias,
  Conv2d,
  Relu,
  Sigmoid,
  AvgPool2,
  GlobalAvgPool,
  Add,
  Mul,
  Scale,
  Log,
  Sum,
  GradientReversal,
  Custom,
};

std::string_view op_name(OpKind kind);

/// One recorded operation. `backward` reads output's gradient and
/// accumulates into the gradients of those inputs that require them.
struct Node {
  OpKind kind;
  std::string_view label;
  std::vector<Tensor> inputs;
  Tensor output;
  std::function<void()> backward;
};

/**
 * Tape of operations in construction order.
 *
 * Nodes are appended only when at least one input requires a gradient, so
 * inputs always precede their consumers. backward() walks the tape in exact
 * reverse order. Gradients of leaves accumulate across calls; the caller
 * resets them explicitly.
 */
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  /// A graph that never records; ops evaluate forward only.
  static Graph inference();

  bool recording() const noexcept { return recording_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  std::span<const Node> nodes() const noexcept { return nodes_; }

  /// True if any input requires a gradient and this graph records.
  bool should_record(std::span<const Tensor> inputs) const;

  /// Appends a node if should_record(inputs); marks `output` as requiring
  /// a gradient in that case. Returns `output`.
  Tensor record(OpKind kind, std::string_view label, std::vector<Tensor> inputs,
                Tensor output, std::function<void()> backward);

  /// Reverse-mode sweep from a scalar loss produced by this graph.
  void backward(const Tensor& loss);

 private:
  std::vector<Node> nodes_;
  bool recording_ = true;
};

}  // namespace xinv
