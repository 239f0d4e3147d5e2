#pragma once

// Central-difference gradient checks at double precision.

#include "lgnet/ops.hpp"
#include "lgnet/parameter.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

namespace lgnet::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  int checked = 0;
  std::string worst;  // "name[index] analytic vs numeric" of the largest error
};

inline double rel_error(double a, double n, double floor) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

inline void record(GradCheckResult& r, double a, double n, double floor, const std::string& what) {
  const double e = rel_error(a, n, floor);
  ++r.checked;
  if (e >= r.max_rel_error) {
    r.max_rel_error = e;
    r.worst = what + " analytic " + std::to_string(a) + " numeric " + std::to_string(n);
  }
}

/// Checks d loss / d parameter on `n_samples` random trainable entries.
/// `loss(binding)` must rebuild the scalar loss from the current parameter
/// values each time it is called.
template <typename Loss>
GradCheckResult check_parameter_gradients(ParameterStore<double>& store, Loss&& loss, int n_samples,
                                          std::uint64_t seed, double h = 1e-4, double floor = 1e-6) {
  std::unordered_map<const Parameter<double>*, Matrix<double>> grads;
  {
    Binding<double> b(true);
    const Var<double> l = loss(b);
    backward(l);
    b.for_each_grad([&](const Parameter<double>& p, const Matrix<double>& g) { grads[&p] = g; });
  }
  std::vector<std::pair<std::size_t, Eigen::Index>> entries;
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (store[i].frozen) continue;
    for (Eigen::Index e = 0; e < store[i].value.size(); ++e) entries.emplace_back(i, e);
  }
  CounterRng rng(seed, 0);
  std::set<std::size_t> picked;
  const std::size_t want = std::min<std::size_t>(static_cast<std::size_t>(n_samples), entries.size());
  while (picked.size() < want) picked.insert(static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(entries.size()) - 1)));

  GradCheckResult r;
  auto eval = [&] {
    NoGradGuard no_grad;
    Binding<double> b(false);
    return loss(b).item();
  };
  for (std::size_t k : picked) {
    auto& p = store[entries[k].first];
    const Eigen::Index e = entries[k].second;
    const double saved = p.value(e);
    p.value(e) = saved + h;
    const double up = eval();
    p.value(e) = saved - h;
    const double down = eval();
    p.value(e) = saved;
    const double numeric = (up - down) / (2 * h);
    auto it = grads.find(&p);
    const double analytic = it == grads.end() ? 0.0 : it->second(e);
    record(r, analytic, numeric, floor, p.name + "[" + std::to_string(e) + "]");
  }
  return r;
}

/// Checks every input entry of f(inputs) through the scalar sum(f .* R)
/// with a fixed random R.
inline GradCheckResult check_input_gradients(std::vector<Matrix<double>> inputs,
                                             const std::function<Var<double>(const std::vector<Var<double>>&)>& f,
                                             std::uint64_t seed = 7, double h = 1e-5, double floor = 1e-6) {
  Matrix<double> weights;
  auto scalar = [&](const std::vector<Var<double>>& vars) {
    const Var<double> out = f(vars);
    if (weights.size() == 0) {
      CounterRng rng(seed, 1);
      weights = init::normal<double>(out.rows(), out.cols(), 1.0, rng);
    }
    return sum(mul(out, Var<double>(weights)));
  };
  std::vector<Var<double>> leaves;
  for (auto& m : inputs) leaves.push_back(Var<double>::leaf(m, true));
  backward(scalar(leaves));

  GradCheckResult r;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (Eigen::Index e = 0; e < inputs[i].size(); ++e) {
      auto eval = [&] {
        NoGradGuard no_grad;
        std::vector<Var<double>> vs;
        for (auto& m : inputs) vs.emplace_back(m);
        return scalar(vs).item();
      };
      const double saved = inputs[i](e);
      inputs[i](e) = saved + h;
      const double up = eval();
      inputs[i](e) = saved - h;
      const double down = eval();
      inputs[i](e) = saved;
      const double analytic = leaves[i].has_grad() ? leaves[i].grad()(e) : 0.0;
      record(r, analytic, (up - down) / (2 * h), floor, "input" + std::to_string(i) + "[" + std::to_string(e) + "]");
    }
  }
  return r;
}

}  // namespace lgnet::testing
