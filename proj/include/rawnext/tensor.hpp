#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rawnext {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Invalid tensor geometry: mismatched dimensions, bad axis, indivisible groups.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite values or a degenerate numeric state.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unreadable, unwritable, or malformed files.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Rejected configuration values or keys.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <typename T>
struct TensorNode;

template <typename T>
using NodePtr = std::shared_ptr<TensorNode<T>>;

/// Graph node: values, lazily allocated gradient, and the closure that
/// pushes this node's gradient into its parents.
template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<NodePtr<T>> parents;
  std::function<void(TensorNode&)> backward;

  bool is_leaf() const { return !backward; }
  /// Gradient buffer, zero-initialised on first use.
  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

/// Rank <= 3 dense array (batch x channel x time) with reverse-mode support.
/// Copies share the underlying node.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr<T> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false) { return from({1}, {value}, requires_grad); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> values() const { return node_->value; }
  std::span<T> mutable_values() { return node_->value; }
  T item() const;
  T at(std::size_t i) const { return node_->value.at(i); }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }

  /// Copy of the values with no graph history.
  Tensor detach() const { return from(shape(), node_->value, false); }

  const NodePtr<T>& node() const { return node_; }

 private:
  NodePtr<T> node_;
};

/// Graph recording switch (thread-local). Evaluation code disables it.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Reverse sweep from a scalar. Leaf gradients accumulate across calls;
/// intermediate gradients are released once propagated.
template <typename T>
void backward(const Tensor<T>& loss);

/// Named trainable tensors plus non-trainable buffers (batch-norm running
/// statistics). std::map keeps enumeration lexicographic.
template <typename T>
class ParameterSet {
 public:
  void add_parameter(const std::string& name, Tensor<T> tensor, bool decay);
  void add_buffer(const std::string& name, Tensor<T> tensor);

  const std::map<std::string, Tensor<T>>& parameters() const { return params_; }
  const std::map<std::string, Tensor<T>>& buffers() const { return buffers_; }
  Tensor<T>& parameter(const std::string& name);
  Tensor<T>& buffer(const std::string& name);
  bool has_parameter(const std::string& name) const { return params_.count(name) != 0; }
  /// Decoupled weight decay applies to convolution and linear weights only.
  bool decays(const std::string& name) const { return decay_.at(name); }

  std::size_t parameter_count() const;
  void zero_grad();

 private:
  std::map<std::string, Tensor<T>> params_;
  std::map<std::string, Tensor<T>> buffers_;
  std::map<std::string, bool> decay_;
};

}  // namespace rawnext
