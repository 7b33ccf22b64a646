#include "xinv/autodiff/graph.hpp"

#include <algorithm>

#include "xinv/error.hpp"

namespace xinv {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::MatMul: return "matmul";
    case OpKind::AddBias: return "add_bias";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::Relu: return "relu";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::AvgPool2: return "avg_pool2";
    case OpKind::GlobalAvgPool: return "global_avg_pool";
    case OpKind::Add: return "add";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::Log: return "log";
    case OpKind::Sum: return "sum";
    case OpKind::GradientReversal: return "gradient_reversal";
    case OpKind::Custom: return "custom";
  }
  return "unknown";
}

Graph Graph::inference() {
  Graph g;
  g.recording_ = false;
  return g;
}

bool Graph::should_record(std::span<const Tensor> inputs) const {
  if (!recording_) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor& t) { return t.requires_grad(); });
}

Tensor Graph::record(OpKind kind, std::string_view label, std::vector<Tensor> inputs,
                     Tensor output, std::function<void()> backward) {
  if (!should_record(inputs)) return output;
  output.set_requires_grad(true);
  nodes_.push_back(Node{kind, label, std::move(inputs), output, std::move(backward)});
  return output;
}

void Graph::backward(const Tensor& loss) {
  if (!loss.defined()) throw Error("backward: undefined loss tensor");
  if (loss.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + to_string(loss.shape()));
  }
  const auto producer = std::find_if(nodes_.begin(), nodes_.end(),
                                     [&](const Node& n) { return n.output.is(loss); });
  if (producer == nodes_.end()) {
    throw Error("backward: loss is detached from this graph");
  }

  // Intermediate gradients are per-sweep; only leaves accumulate across calls.
  for (auto& node : nodes_) node.output.zero_grad();
  grad_buffer(loss)[0] = 1.0;

  const auto last = std::distance(nodes_.begin(), producer);
  for (auto i = last; i >= 0; --i) {
    nodes_[static_cast<std::size_t>(i)].backward();
  }
}

}  // namespace xinv
