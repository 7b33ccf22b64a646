#pragma once

#include "xinv/autodiff/graph.hpp"
#include "xinv/autodiff/tensor.hpp"

namespace xinv::ops {

/// (N×K)·(K×M) → N×M.
Tensor matmul(Graph& g, const Tensor& a, const Tensor& b);

/// Adds a length-M bias to every row of an N×M matrix.
Tensor add_bias(Graph& g, const Tensor& x, const Tensor& bias);

/// 2-D convolution, stride 1, zero padding that preserves H and W.
/// x: N×C×H×W, weight: O×C×K×K with K odd, bias: O.
Tensor conv2d(Graph& g, const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor relu(Graph& g, const Tensor& x);
Tensor sigmoid(Graph& g, const Tensor& x);

/// Non-overlapping 2×2 mean pooling of N×C×H×W (H, W even).
Tensor avg_pool2(Graph& g, const Tensor& x);

/// N×C×H×W → N×C spatial mean.
Tensor global_avg_pool(Graph& g, const Tensor& x);

Tensor add(Graph& g, const Tensor& a, const Tensor& b);
Tensor mul(Graph& g, const Tensor& a, const Tensor& b);
Tensor scale(Graph& g, const Tensor& x, double factor);

/// Natural log; DomainError on any non-positive entry.
Tensor log(Graph& g, const Tensor& x);

/// Sum of all entries as a 1-element tensor.
Tensor sum(Graph& g, const Tensor& x);

/// Identity forward; backward multiplies the incoming gradient by -lambda.
Tensor gradient_reversal(Graph& g, const Tensor& x, double lambda);

/// Copy of x that does not take part in differentiation.
Tensor detach(const Tensor& x);

}  // namespace xinv::ops
