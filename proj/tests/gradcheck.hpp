#pragma once

#include <functional>
#include <vector>

#include "rbae/autograd.hpp"

namespace rbae::testutil {

// Central finite differences against the analytic gradient, double precision.
// `f` rebuilds the scalar expression from fresh leaves on every call so the
// perturbed evaluations share no graph state with the analytic pass.
inline double max_rel_grad_error(
    std::vector<Tensor<double>> inputs,
    const std::function<Var<double>(const std::vector<Var<double>>&)>& f, double h = 1e-5) {
  std::vector<Var<double>> leaves;
  leaves.reserve(inputs.size());
  for (auto& t : inputs) leaves.push_back(variable(t));
  Var<double> root = f(leaves);
  backward(root);

  auto eval = [&](const std::vector<Tensor<double>>& ins) {
    std::vector<Var<double>> ls;
    ls.reserve(ins.size());
    for (const auto& t : ins) ls.push_back(constant(t));
    return scalar_value(f(ls));
  };

  double worst = 0;
  for (size_t k = 0; k < inputs.size(); ++k) {
    for (int i = 0; i < inputs[k].size(); ++i) {
      std::vector<Tensor<double>> plus = inputs, minus = inputs;
      plus[k].v[i] += h;
      minus[k].v[i] -= h;
      double numeric = (eval(plus) - eval(minus)) / (2 * h);
      double analytic = leaves[k]->grad.size() ? leaves[k]->grad.v[i] : 0.0;
      double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-4});
      worst = std::max(worst, std::abs(numeric - analytic) / denom);
    }
  }
  return worst;
}

template <typename S>
inline Tensor<S> random_tensor(int c, int h, int w, std::mt19937& rng, double lo = -1.0,
                               double hi = 1.0) {
  Tensor<S> t(c, h, w);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& x : t.v) x = static_cast<S>(dist(rng));
  return t;
}

}  // namespace rbae::testutil
