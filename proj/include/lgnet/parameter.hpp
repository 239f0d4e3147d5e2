#pragma once

#include "lgnet/autograd.hpp"
#include "lgnet/rng.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace lgnet {

template <typename Scalar>
struct Parameter {
  std::string name;
  Matrix<Scalar> value;
  bool frozen = false;
};

/// Owns every parameter of a model. Addresses are stable for the store's
/// lifetime, so modules keep raw pointers into it.
template <typename Scalar>
class ParameterStore {
 public:
  Parameter<Scalar>* add(std::string name, Matrix<Scalar> value, bool frozen = false) {
    if (index_.count(name) != 0) throw std::invalid_argument("duplicate parameter name: " + name);
    index_.emplace(name, params_.size());
    params_.push_back(std::make_unique<Parameter<Scalar>>(Parameter<Scalar>{std::move(name), std::move(value), frozen}));
    return params_.back().get();
  }

  std::size_t size() const { return params_.size(); }
  Parameter<Scalar>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<Scalar>& operator[](std::size_t i) const { return *params_[i]; }

  Parameter<Scalar>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
  }
  const Parameter<Scalar>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
  }

  std::size_t index_of(const Parameter<Scalar>* p) const { return index_.at(p->name); }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
    return n;
  }
  std::size_t trainable_elements() const {
    std::size_t n = 0;
    for (const auto& p : params_)
      if (!p->frozen) n += static_cast<std::size_t>(p->value.size());
    return n;
  }

 private:
  std::vector<std::unique_ptr<Parameter<Scalar>>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Per-forward-pass view of parameters as graph leaves. With tracking on,
/// non-frozen parameters become gradient-accumulating leaves.
template <typename Scalar>
class Binding {
 public:
  explicit Binding(bool track = false) : track_(track) {}

  Var<Scalar> operator()(const Parameter<Scalar>* p) {
    auto it = leaves_.find(p);
    if (it != leaves_.end()) return it->second;
    Var<Scalar> leaf = Var<Scalar>::leaf(p->value, track_ && !p->frozen);
    leaves_.emplace(p, leaf);
    return leaf;
  }

  bool tracking() const { return track_; }

  /// Visits (parameter, gradient) for every leaf that received a gradient.
  template <typename Fn>
  void for_each_grad(Fn&& fn) const {
    for (const auto& [p, leaf] : leaves_) {
      if (leaf.requires_grad() && leaf.has_grad()) fn(*p, leaf.grad());
    }
  }

 private:
  bool track_;
  std::unordered_map<const Parameter<Scalar>*, Var<Scalar>> leaves_;
};

namespace init {

template <typename Scalar>
Matrix<Scalar> normal(Eigen::Index rows, Eigen::Index cols, double stddev, CounterRng& rng) {
  Matrix<Scalar> m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = static_cast<Scalar>(rng.normal() * stddev);
  return m;
}

/// He-normal for a weight whose columns are the fan-in.
template <typename Scalar>
Matrix<Scalar> he(Eigen::Index fan_out, Eigen::Index fan_in, CounterRng& rng) {
  return normal<Scalar>(fan_out, fan_in, std::sqrt(2.0 / static_cast<double>(fan_in)), rng);
}

template <typename Scalar>
Matrix<Scalar> xavier(Eigen::Index rows, Eigen::Index cols, CounterRng& rng) {
  return normal<Scalar>(rows, cols, std::sqrt(2.0 / static_cast<double>(rows + cols)), rng);
}

}  // namespace init

}  // namespace lgnet
