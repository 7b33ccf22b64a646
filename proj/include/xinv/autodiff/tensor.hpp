#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace xinv {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class Graph;

/**
 * Dense row-major array of doubles with an optional gradient buffer.
 *
 * A Tensor is a shared handle: copies alias the same storage, which is how a
 * parameter and the graph nodes that consume it agree on where gradients
 * accumulate. Use clone() for an independent deep copy.
 */
class Tensor {
 public:
  /// Null handle; most operations on it throw.
  Tensor() = default;

  /// Zero-filled tensor of the given shape.
  explicit Tensor(Shape shape, bool requires_grad = false);

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return static_cast<bool>(impl_); }

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  std::span<const double> data() const;
  std::span<double> data();

  /// Value of a single-element tensor.
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);

  /// True once a gradient buffer has been allocated (by backward or zero_grad).
  bool has_grad() const;
  std::span<const double> grad() const;
  /// Allocates the gradient buffer if needed and fills it with zeros.
  void zero_grad();

  /// Independent copy of shape and data; gradient state is not copied and
  /// requires_grad is cleared.
  Tensor clone() const;

  /// Same storage as `other`.
  bool is(const Tensor& other) const noexcept { return impl_ == other.impl_; }

 private:
  friend class Graph;
  friend std::span<double> grad_buffer(const Tensor& t);

  struct Impl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
  };

  const Impl& impl() const;
  Impl& impl();

  std::shared_ptr<Impl> impl_;
};

/// Mutable gradient storage of `t`, allocated zero-filled on first use.
/// Intended for backward closures of graph nodes.
std::span<double> grad_buffer(const Tensor& t);

}  // namespace xinv
