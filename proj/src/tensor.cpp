#include "rawnext/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace rawnext {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ')';
  return os.str();
}

namespace {
thread_local bool g_grad_enabled = true;

void check_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > 3)
    throw ShapeError("tensor rank must be 1..3, got " + std::to_string(shape.size()));
  for (std::size_t i = 0; i < shape.size(); ++i)
    if (shape[i] == 0) throw ShapeError("dimension " + std::to_string(i) + " is zero in " + shape_str(shape));
}
}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  check_shape(shape);
  auto node = std::make_shared<TensorNode<T>>();
  node->value.assign(rawnext::numel(shape), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  check_shape(shape);
  if (rawnext::numel(shape) != values.size())
    throw ShapeError("shape " + shape_str(shape) + " holds " + std::to_string(rawnext::numel(shape)) +
                     " values, got " + std::to_string(values.size()));
  auto node = std::make_shared<TensorNode<T>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= rank())
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  return node_->shape[axis];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ShapeError("backward() needs a scalar loss, got " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<TensorNode<T>*> order;
  std::unordered_set<TensorNode<T>*> visited;
  std::vector<std::pair<TensorNode<T>*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (auto* node : order)
    if (!node->is_leaf()) node->grad.clear();

  TensorNode<T>* root = loss.node().get();
  root->grad_buffer()[0] += T(1);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode<T>* node = *it;
    if (node->is_leaf() || node->grad.empty()) continue;
    node->backward(*node);
    if (node != root) {
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }
}

template <typename T>
void ParameterSet<T>::add_parameter(const std::string& name, Tensor<T> tensor, bool decay) {
  if (params_.count(name) || buffers_.count(name)) throw std::logic_error("duplicate parameter name: " + name);
  tensor.set_requires_grad(true);
  params_.emplace(name, std::move(tensor));
  decay_.emplace(name, decay);
}

template <typename T>
void ParameterSet<T>::add_buffer(const std::string& name, Tensor<T> tensor) {
  if (params_.count(name) || buffers_.count(name)) throw std::logic_error("duplicate buffer name: " + name);
  tensor.set_requires_grad(false);
  buffers_.emplace(name, std::move(tensor));
}

template <typename T>
Tensor<T>& ParameterSet<T>::parameter(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

template <typename T>
Tensor<T>& ParameterSet<T>::buffer(const std::string& name) {
  auto it = buffers_.find(name);
  if (it == buffers_.end()) throw std::out_of_range("unknown buffer: " + name);
  return it->second;
}

template <typename T>
std::size_t ParameterSet<T>::parameter_count() const {
  std::size_t total = 0;
  for (const auto& [name, t] : params_) total += t.numel();
  return total;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

template class Tensor<float>;
template class Tensor<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);
template class ParameterSet<float>;
template class ParameterSet<double>;

}  // namespace rawnext
