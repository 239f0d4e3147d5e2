#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

namespace lgnet {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using ColVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

namespace detail {
inline thread_local bool grad_mode = true;
}

inline bool grad_enabled() { return detail::grad_mode; }

template <typename Scalar>
class Var;
template <typename Scalar>
void backward(const Var<Scalar>& root);

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode) { detail::grad_mode = false; }
  ~NoGradGuard() { detail::grad_mode = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// One value in the computation graph. Leaves either own their value or
/// alias an external matrix (parameters), which must outlive the node.
template <typename Scalar>
class Node {
 public:
  using BackwardFn = std::function<void(const Matrix<Scalar>&)>;

  explicit Node(Matrix<Scalar> value) : value_(std::move(value)) {}
  Node(const Matrix<Scalar>* external, bool requires_grad)
      : external_(external), requires_grad_(requires_grad) {}

  const Matrix<Scalar>& value() const { return external_ ? *external_ : value_; }
  const Matrix<Scalar>& grad() const { return grad_; }
  bool has_grad() const { return grad_.size() != 0; }
  bool requires_grad() const { return requires_grad_; }

  template <typename Derived>
  void add_grad(const Eigen::MatrixBase<Derived>& g) {
    if (grad_.size() == 0) {
      grad_ = g;
    } else {
      grad_.noalias() += g;
    }
  }

  void zero_grad() { grad_.resize(0, 0); }

 private:
  template <typename S>
  friend class Var;
  template <typename S>
  friend void backward(const Var<S>& root);

  const Matrix<Scalar>* external_ = nullptr;
  Matrix<Scalar> value_;
  Matrix<Scalar> grad_;
  bool requires_grad_ = false;
  std::vector<std::shared_ptr<Node>> parents_;
  BackwardFn backward_;
};

/// Handle to a graph node. Copies share the node.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  explicit Var(Matrix<Scalar> value) : node_(std::make_shared<Node<Scalar>>(std::move(value))) {}

  /// Leaf aliasing `external` (no copy). Gradients accumulate only when
  /// `requires_grad` is set and grad mode is on.
  static Var leaf(const Matrix<Scalar>& external, bool requires_grad) {
    Var v;
    v.node_ = std::make_shared<Node<Scalar>>(&external, requires_grad && grad_enabled());
    return v;
  }

  template <typename Fn>
  static Var from_op(Matrix<Scalar> value, std::initializer_list<Var> parents, Fn&& backward_fn) {
    return from_op_range(std::move(value), parents.begin(), parents.end(), std::forward<Fn>(backward_fn));
  }

  template <typename Fn>
  static Var from_op(Matrix<Scalar> value, const std::vector<Var>& parents, Fn&& backward_fn) {
    return from_op_range(std::move(value), parents.begin(), parents.end(), std::forward<Fn>(backward_fn));
  }

  const Matrix<Scalar>& value() const { return node_->value(); }
  const Matrix<Scalar>& grad() const { return node_->grad(); }
  bool has_grad() const { return node_->has_grad(); }
  bool requires_grad() const { return node_ && node_->requires_grad(); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Scalar item() const { return value()(0, 0); }
  bool valid() const { return static_cast<bool>(node_); }
  const Node<Scalar>* node() const { return node_.get(); }

  template <typename Derived>
  void add_grad(const Eigen::MatrixBase<Derived>& g) const {
    node_->add_grad(g);
  }

 private:
  template <typename S>
  friend void backward(const Var<S>& root);

  template <typename It, typename Fn>
  static Var from_op_range(Matrix<Scalar> value, It first, It last, Fn&& backward_fn) {
    Var out(std::move(value));
    if (!grad_enabled()) return out;
    for (It it = first; it != last; ++it) {
      if (it->requires_grad()) out.node_->parents_.push_back(it->node_);
    }
    if (!out.node_->parents_.empty()) {
      out.node_->requires_grad_ = true;
      out.node_->backward_ = std::forward<Fn>(backward_fn);
    }
    return out;
  }

  std::shared_ptr<Node<Scalar>> node_;
};

/// Reverse-mode sweep from a scalar root. Seeds d(root)/d(root) = 1.
template <typename Scalar>
void backward(const Var<Scalar>& root) {
  if (!root.requires_grad()) return;
  std::vector<Node<Scalar>*> order;
  std::unordered_set<Node<Scalar>*> visited;
  std::vector<std::pair<Node<Scalar>*, std::size_t>> stack;
  stack.emplace_back(root.node_.get(), 0);
  visited.insert(root.node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents_.size()) {
      Node<Scalar>* parent = node->parents_[next++].get();
      if (visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node_->add_grad(Matrix<Scalar>::Ones(root.rows(), root.cols()));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Scalar>* node = *it;
    if (node->backward_ && node->has_grad()) node->backward_(node->grad_);
  }
}

}  // namespace lgnet
