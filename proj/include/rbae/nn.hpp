#pragma once

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "rbae/autograd.hpp"

namespace rbae {

template <typename S>
using NamedParams = std::vector<std::pair<std::string, Var<S>>>;

// He-normal initialization for conv weights feeding a rectifier.
template <typename S>
inline Tensor<S> he_normal(int cout, int cin, int k, std::mt19937& rng) {
  Tensor<S> w(cout, cin, k * k);
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (cin * k * k)));
  for (auto& x : w.v) x = static_cast<S>(dist(rng));
  return w;
}

// 3x3/5x5 convolution layer owning its weight and bias parameters.
template <typename S>
struct Conv2d {
  int cin = 0, cout = 0, k = 3, stride = 1, pad = 1;
  Var<S> w, b;

  Conv2d() = default;
  Conv2d(int cin_, int cout_, int k_, int stride_, int pad_, std::mt19937& rng)
      : cin(cin_), cout(cout_), k(k_), stride(stride_), pad(pad_) {
    w = make_param(he_normal<S>(cout, cin, k, rng));
    b = make_param(Tensor<S>(cout, 1, 1));
  }

  Var<S> operator()(const Var<S>& x) const { return conv2d(x, w, b, stride, pad); }

  void collect(NamedParams<S>& out, const std::string& prefix) const {
    out.push_back({prefix + ".w", w});
    out.push_back({prefix + ".b", b});
  }
};

template <typename S>
inline void set_trainable(const NamedParams<S>& params, bool trainable) {
  for (auto& [name, p] : params) p->requires_grad = trainable;
}

// Classic Adam with L2-coupled weight decay (decay added to the gradient).
template <typename S>
class Adam {
 public:
  Adam() = default;
  Adam(NamedParams<S> params, double lr, double weight_decay, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
    for (auto& [name, p] : params_)
      slots_.push_back({Tensor<S>(p->val.c, p->val.h, p->val.w), Tensor<S>(p->val.c, p->val.h, p->val.w)});
  }

  void step() {
    ++t_;
    double bc1 = 1.0 - std::pow(b1_, t_);
    double bc2 = 1.0 - std::pow(b2_, t_);
    for (size_t pi = 0; pi < params_.size(); ++pi) {
      auto& p = params_[pi].second;
      if (p->grad.size() != p->val.size()) continue;  // never touched by backward
      auto& slot = slots_[pi];
      for (int i = 0; i < p->val.size(); ++i) {
        double g = static_cast<double>(p->grad.v[i]) + wd_ * static_cast<double>(p->val.v[i]);
        double m = b1_ * slot.m.v[i] + (1.0 - b1_) * g;
        double v = b2_ * slot.v.v[i] + (1.0 - b2_) * g * g;
        slot.m.v[i] = static_cast<S>(m);
        slot.v.v[i] = static_cast<S>(v);
        p->val.v[i] -= static_cast<S>(lr_ * (m / bc1) / (std::sqrt(v / bc2) + eps_));
      }
    }
  }

  const NamedParams<S>& params() const { return params_; }
  long steps_taken() const { return t_; }

 private:
  struct Slot {
    Tensor<S> m, v;
  };
  NamedParams<S> params_;
  std::vector<Slot> slots_;
  double lr_ = 1e-4, wd_ = 0, b1_ = 0.9, b2_ = 0.999, eps_ = 1e-8;
  long t_ = 0;
};

// Byte hash over a parameter set; the trainer uses it to assert freeze
// contracts (phase-2 encoder must stay bit-identical).
template <typename S>
inline uint64_t params_digest(const NamedParams<S>& params) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, p] : params) {
    h = fnv1a(name.data(), name.size(), h);
    h = fnv1a(p->val.data(), p->val.size() * sizeof(S), h);
  }
  return h;
}

}  // namespace rbae
