#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace cbct {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

// One vertex of the reverse-mode graph. backward_fn reads `grad` of the node
// it is called on and accumulates into the grads of its parents.
template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  std::string op = "leaf";
  std::string label;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

/// Dense N-dimensional array with an optional gradient slot.
///
/// A Tensor is a shared handle: copies alias the same storage. Tensors made
/// by operations are treated as immutable; only leaves (parameters, inputs)
/// may be written through mutable_data().
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using Node = detail::Node<T>;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : node_(std::make_shared<Node>()) {
    node_->data.assign(shape_numel(shape), fill);
    node_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<Node>()) {
    if (shape_numel(shape) != values.size())
      throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match " +
                                  std::to_string(values.size()) + " values");
    node_->shape = std::move(shape);
    node_->data = std::move(values);
  }

  static Tensor scalar(T value) { return Tensor(Shape{1}, std::vector<T>{value}); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  std::span<T> mutable_data() {
    if (node_->op != "leaf")
      throw std::logic_error("tensor: results of operations are immutable");
    return node_->data;
  }
  std::vector<T> to_vector() const { return node_->data; }
  T item() const {
    if (numel() != 1) throw std::invalid_argument("tensor: item() needs exactly one element");
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    node_->requires_grad = on;
    return *this;
  }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  const std::string& op() const { return node_->op; }
  const std::string& label() const { return node_->label; }
  Tensor& set_label(std::string label) {
    node_->label = std::move(label);
    return *this;
  }
  std::vector<Tensor> parents() const {
    std::vector<Tensor> out;
    for (const auto& p : node_->parents) out.push_back(Tensor(p));
    return out;
  }
  const void* id() const { return node_.get(); }
  bool same(const Tensor& other) const { return node_ == other.node_; }

  /// Copy of the values with no graph history.
  Tensor detach() const { return Tensor(node_->shape, node_->data); }

  /// Reverse-mode sweep from this scalar; accumulates into every reachable
  /// leaf with requires_grad. Intermediate gradients are released after use.
  void backward() const;

  /// Builds the result node of an operation. The backward closure is kept only
  /// when some parent needs a gradient; parent links are kept regardless so
  /// the graph can be inspected.
  static Tensor from_op(Shape shape, std::vector<T> values, std::string op,
                        std::vector<Tensor> parents, std::function<void(Node&)> backward_fn) {
    Tensor out(std::move(shape), std::move(values));
    out.node_->op = std::move(op);
    bool needs = false;
    for (auto& p : parents) {
      needs = needs || p.node_->requires_grad;
      out.node_->parents.push_back(p.node_);
    }
    out.node_->requires_grad = needs;
    if (needs) out.node_->backward_fn = std::move(backward_fn);
    return out;
  }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;
};

template <typename T>
void Tensor<T>::backward() const {
  if (numel() != 1)
    throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                shape_str(shape()));
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents before children).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.push_back({parent, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (!node->backward_fn || node->grad.empty()) continue;
    node->backward_fn(*node);
    node->grad.clear();
    node->grad.shrink_to_fit();
  }
}

/// All nodes reachable from `root` through parent links, root first.
template <typename T>
std::vector<Tensor<T>> graph_nodes(const Tensor<T>& root) {
  std::vector<Tensor<T>> out{root};
  std::unordered_set<const void*> seen{root.id()};
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (auto& p : out[i].parents()) {
      if (seen.insert(p.id()).second) out.push_back(p);
    }
  }
  return out;
}

// Layout helpers. Volumetric tensors are [C,D,H,W] or [N,C,D,H,W] with W
// fastest; anything before the channel axis is folded into a batch count.
struct VolLayout {
  std::size_t batch = 1, channels = 1, depth = 1, height = 1, width = 1;
  std::size_t spatial() const { return depth * height * width; }
};

inline VolLayout vol_layout(const Shape& shape, const char* who) {
  if (shape.size() < 4)
    throw std::invalid_argument(std::string(who) + ": expected [C,D,H,W] or [N,C,D,H,W], got " +
                                shape_str(shape));
  VolLayout l;
  const std::size_t r = shape.size();
  for (std::size_t i = 0; i + 4 < r; ++i) l.batch *= shape[i];
  l.channels = shape[r - 4];
  l.depth = shape[r - 3];
  l.height = shape[r - 2];
  l.width = shape[r - 1];
  return l;
}

inline Shape with_channels(Shape shape, std::size_t channels) {
  shape[shape.size() - 4] = channels;
  return shape;
}

inline Shape with_spatial(Shape shape, std::size_t d, std::size_t h, std::size_t w) {
  const std::size_t r = shape.size();
  shape[r - 3] = d;
  shape[r - 2] = h;
  shape[r - 1] = w;
  return shape;
}

}  // namespace cbct
