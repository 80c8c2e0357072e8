#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "scoresync/errors.hpp"

namespace scoresync {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {

struct Node;
using BackwardFn = std::function<void(Node& self)>;

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::string op;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;

  /// Gradient buffer, allocated as zeros on first use.
  std::vector<double>& grad_buffer();
};

}  // namespace detail

/// Dense row-major float64 array with an optional gradient.
///
/// A Tensor is a handle: copies share the same storage and graph node, the
/// way activations flow between layers. Use clone() for an independent copy.
class Tensor {
 public:
  Tensor();

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor from(const Shape& shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  std::span<double> mutable_data() { return node_->data; }
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool value) { node_->requires_grad = value; }
  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient values; zeros when no gradient has been accumulated yet.
  std::vector<double> grad() const;
  void zero_grad();

  /// Reverse-mode sweep from this scalar. Gradients accumulate into every
  /// reachable tensor that requires a gradient.
  void backward() const;

  /// Independent copy of the values, detached from the graph.
  Tensor clone() const;
  Tensor detach() const { return clone(); }

  bool is_leaf() const { return node_->parents.empty(); }
  const std::string& op_name() const { return node_->op; }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

  /// Builds an op result. When any input requires a gradient the result is
  /// recorded with `backward`; otherwise it is a constant. Throws NumericError
  /// when `values` contains NaN or Inf.
  static Tensor make_result(std::string op, Shape shape, std::vector<double> values,
                            std::vector<Tensor> inputs, detail::BackwardFn backward);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// Throws NumericError naming `where` if any value is non-finite.
void require_finite(std::span<const double> values, const std::string& where);

}  // namespace scoresync
