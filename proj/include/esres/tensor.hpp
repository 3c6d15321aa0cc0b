#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "esres/error.hpp"

namespace esres::nn {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

template <typename T>
class Tensor;

// One recorded value in the autodiff graph. Op nodes keep handles to their
// parents and a closure that scatters this node's gradient into theirs.
template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated on first contribution
  bool requires_grad = false;
  bool consumed = false;
  std::vector<Tensor<T>> parents;
  std::function<void(Node<T>&)> backward_fn;

  int64_t numel() const { return static_cast<int64_t>(value.size()); }

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false) {
    return from(shape, std::vector<T>(shape_numel(shape), T(0)), requires_grad);
  }

  static Tensor from(const Shape& shape, std::vector<T> data, bool requires_grad = false) {
    if (static_cast<int64_t>(data.size()) != shape_numel(shape))
      throw ShapeError("tensor: " + std::to_string(data.size()) +
                       " values for shape " + shape_str(shape));
    auto node = std::make_shared<Node<T>>();
    node->shape = shape;
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  // Records an op node. Parents and the backward closure are kept only when
  // a gradient will actually flow.
  static Tensor make_op(Shape shape, std::vector<T> value, std::vector<Tensor<T>> parents,
                        std::function<void(Node<T>&)> backward_fn) {
    bool needs = false;
    for (const auto& p : parents) needs = needs || p.requires_grad();
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->requires_grad = needs;
    if (needs) {
      node->parents = std::move(parents);
      node->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(node));
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[i]; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int64_t numel() const { return node_->numel(); }
  std::vector<T>& value() { return node_->value; }
  const std::vector<T>& value() const { return node_->value; }
  std::vector<T>& grad() { return node_->grad; }
  const std::vector<T>& grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  bool requires_grad() const { return node_->requires_grad; }

  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  Node<T>* node() const { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}
  std::shared_ptr<Node<T>> node_;
};

// Reverse-mode sweep from a scalar loss. Nodes are visited in exact reverse
// topological order; fan-out contributions accumulate additively. A graph
// can be walked only once; rebuild the forward pass to differentiate again.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined()) throw GraphError("backward: undefined tensor");
  Node<T>* root = loss.node();
  if (root->numel() != 1) throw GraphError("backward: loss must be a scalar");
  if (root->consumed)
    throw GraphError("backward: graph already consumed; run the forward pass again");
  if (!root->requires_grad || !root->backward_fn)
    throw GraphError("backward: loss is detached from any recorded operation");

  std::vector<Node<T>*> topo;
  std::vector<Tensor<T>> keepalive;  // holds intermediates until the sweep ends
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, size_t>> stack;
  visited.insert(root);
  stack.emplace_back(root, 0);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      const Tensor<T>& parent = node->parents[next++];
      if (parent.requires_grad() && !visited.count(parent.node())) {
        visited.insert(parent.node());
        keepalive.push_back(parent);
        stack.emplace_back(parent.node(), 0);
      }
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad()[0] = T(1);
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    node->consumed = true;
    node->backward_fn = nullptr;
    node->parents.clear();
  }
}

}  // namespace esres::nn
