#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "rbae/tensor.hpp"

namespace rbae {

// Reverse-mode autodiff over Tensor<S>. Each op appends a node holding the
// value, the parent links and a pull-style backprop closure. Graphs are built
// per step and freed when the root goes out of scope; parameter nodes persist
// across steps.
template <typename S>
struct Node {
  Tensor<S> val;
  Tensor<S> grad;
  std::vector<std::shared_ptr<Node<S>>> parents;
  std::function<void(Node<S>&)> backprop;
  bool requires_grad = false;
  bool is_param = false;
};

template <typename S>
using Var = std::shared_ptr<Node<S>>;

template <typename S>
inline Var<S> constant(Tensor<S> t) {
  auto n = std::make_shared<Node<S>>();
  n->val = std::move(t);
  return n;
}

template <typename S>
inline Var<S> variable(Tensor<S> t) {
  auto n = std::make_shared<Node<S>>();
  n->val = std::move(t);
  n->requires_grad = true;
  return n;
}

template <typename S>
inline Var<S> make_param(Tensor<S> t) {
  auto n = variable(std::move(t));
  n->is_param = true;
  return n;
}

template <typename S>
inline Var<S> scalar_const(S x) {
  Tensor<S> t(1, 1, 1);
  t.v[0] = x;
  return constant(std::move(t));
}

template <typename S>
inline S scalar_value(const Var<S>& v) {
  return v->val.v[0];
}

namespace detail {

template <typename S>
inline Var<S> make_op(Tensor<S> val, std::vector<Var<S>> parents,
                      std::function<void(Node<S>&)> bp) {
  auto n = std::make_shared<Node<S>>();
  n->val = std::move(val);
  n->parents = std::move(parents);
  for (const auto& p : n->parents) n->requires_grad = n->requires_grad || p->requires_grad;
  if (n->requires_grad) n->backprop = std::move(bp);
  return n;
}

}  // namespace detail

// Backpropagate from a scalar root. Gradients of every reachable
// grad-requiring node are zeroed first, so each call yields fresh gradients.
template <typename S>
inline void backward(const Var<S>& root) {
  if (root->val.size() != 1) throw std::logic_error("backward: root must be scalar");
  if (!root->requires_grad) return;

  std::vector<Node<S>*> order;
  std::unordered_set<Node<S>*> seen;
  std::vector<std::pair<Node<S>*, size_t>> stack;
  stack.push_back({root.get(), 0});
  seen.insert(root.get());
  while (!stack.empty()) {
    auto [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      ++stack.back().second;
      Node<S>* p = node->parents[idx].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node<S>* n : order) n->grad.resize_like(n->val);
  root->grad.v[0] = S(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backprop) (*it)->backprop(**it);
}

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

template <typename S>
inline Var<S> add(const Var<S>& a, const Var<S>& b) {
  check_same_shape(a->val, b->val, "add");
  Tensor<S> out = a->val;
  for (int i = 0; i < out.size(); ++i) out.v[i] += b->val.v[i];
  return detail::make_op<S>(std::move(out), {a, b}, [](Node<S>& self) {
    for (int k = 0; k < 2; ++k) {
      Node<S>* p = self.parents[k].get();
      if (!p->requires_grad) continue;
      for (int i = 0; i < self.grad.size(); ++i) p->grad.v[i] += self.grad.v[i];
    }
  });
}

template <typename S>
inline Var<S> sub(const Var<S>& a, const Var<S>& b) {
  check_same_shape(a->val, b->val, "sub");
  Tensor<S> out = a->val;
  for (int i = 0; i < out.size(); ++i) out.v[i] -= b->val.v[i];
  return detail::make_op<S>(std::move(out), {a, b}, [](Node<S>& self) {
    Node<S>* a = self.parents[0].get();
    Node<S>* b = self.parents[1].get();
    for (int i = 0; i < self.grad.size(); ++i) {
      if (a->requires_grad) a->grad.v[i] += self.grad.v[i];
      if (b->requires_grad) b->grad.v[i] -= self.grad.v[i];
    }
  });
}

template <typename S>
inline Var<S> mul(const Var<S>& a, const Var<S>& b) {
  check_same_shape(a->val, b->val, "mul");
  Tensor<S> out = a->val;
  for (int i = 0; i < out.size(); ++i) out.v[i] *= b->val.v[i];
  return detail::make_op<S>(std::move(out), {a, b}, [](Node<S>& self) {
    Node<S>* a = self.parents[0].get();
    Node<S>* b = self.parents[1].get();
    for (int i = 0; i < self.grad.size(); ++i) {
      if (a->requires_grad) a->grad.v[i] += self.grad.v[i] * b->val.v[i];
      if (b->requires_grad) b->grad.v[i] += self.grad.v[i] * a->val.v[i];
    }
  });
}

template <typename S>
inline Var<S> scale(const Var<S>& a, double k) {
  Tensor<S> out = a->val;
  for (auto& x : out.v) x = static_cast<S>(x * k);
  return detail::make_op<S>(std::move(out), {a}, [k](Node<S>& self) {
    Node<S>* a = self.parents[0].get();
    for (int i = 0; i < self.grad.size(); ++i) a->grad.v[i] += static_cast<S>(self.grad.v[i] * k);
  });
}

// Weighted sum of scalar nodes; realizes the weighted joint losses.
template <typename S>
inline Var<S> weighted_sum(const std::vector<Var<S>>& terms, const std::vector<double>& ws) {
  if (terms.size() != ws.size() || terms.empty())
    throw std::invalid_argument("weighted_sum: terms/weights mismatch");
  Tensor<S> out(1, 1, 1);
  double acc = 0;
  for (size_t i = 0; i < terms.size(); ++i) {
    if (terms[i]->val.size() != 1) throw std::invalid_argument("weighted_sum: non-scalar term");
    acc += ws[i] * static_cast<double>(terms[i]->val.v[0]);
  }
  out.v[0] = static_cast<S>(acc);
  return detail::make_op<S>(std::move(out), terms, [ws](Node<S>& self) {
    for (size_t i = 0; i < self.parents.size(); ++i) {
      Node<S>* p = self.parents[i].get();
      if (p->requires_grad) p->grad.v[0] += static_cast<S>(ws[i] * self.grad.v[0]);
    }
  });
}

template <typename S>
inline Var<S> relu(const Var<S>& a) {
  Tensor<S> out = a->val;
  for (auto& x : out.v)
    if (x < S(0)) x = S(0);
  return detail::make_op<S>(std::move(out), {a}, [](Node<S>& self) {
    Node<S>* a = self.parents[0].get();
    for (int i = 0; i < self.grad.size(); ++i)
      if (a->val.v[i] > S(0)) a->grad.v[i] += self.grad.v[i];
  });
}

template <typename S>
inline Var<S> sigmoid(const Var<S>& a) {
  Tensor<S> out = a->val;
  for (auto& x : out.v) {
    double z = static_cast<double>(x);
    x = static_cast<S>(z >= 0 ? 1.0 / (1.0 + std::exp(-z))
                              : std::exp(z) / (1.0 + std::exp(z)));
  }
  Tensor<S> saved = out;
  return detail::make_op<S>(std::move(out), {a}, [saved](Node<S>& self) {
    Node<S>* a = self.parents[0].get();
    for (int i = 0; i < self.grad.size(); ++i) {
      S y = saved.v[i];
      a->grad.v[i] += self.grad.v[i] * y * (S(1) - y);
    }
  });
}

// ---------------------------------------------------------------------------
// structural ops
// ---------------------------------------------------------------------------

template <typename S>
inline Var<S> concat_c(const Var<S>& a, const Var<S>& b) {
  if (a->val.h != b->val.h || a->val.w != b->val.w)
    throw std::invalid_argument("concat_c: spatial shape mismatch");
  Tensor<S> out(a->val.c + b->val.c, a->val.h, a->val.w);
  std::copy(a->val.v.begin(), a->val.v.end(), out.v.begin());
  std::copy(b->val.v.begin(), b->val.v.end(), out.v.begin() + a->val.size());
  return detail::make_op<S>(std::move(out), {a, b}, [](Node<S>& self) {
    Node<S>* a = self.parents[0].get();
    Node<S>* b = self.parents[1].get();
    int na = a->val.size();
    if (a->requires_grad)
      for (int i = 0; i < na; ++i) a->grad.v[i] += self.grad.v[i];
    if (b->requires_grad)
      for (int i = 0; i < b->val.size(); ++i) b->grad.v[i] += self.grad.v[na + i];
  });
}

// Mean over the channel dimension: (C,H,W) -> (1,H,W).
template <typename S>
inline Var<S> channel_mean(const Var<S>& a) {
  int C = a->val.c, H = a->val.h, W = a->val.w;
  Tensor<S> out(1, H, W);
  for (int ci = 0; ci < C; ++ci)
    for (int i = 0; i < H * W; ++i) out.v[i] += a->val.channel(ci)[i];
  for (auto& x : out.v) x /= static_cast<S>(C);
  return detail::make_op<S>(std::move(out), {a}, [C, H, W](Node<S>& self) {
    Node<S>* a = self.parents[0].get();
    for (int ci = 0; ci < C; ++ci)
      for (int i = 0; i < H * W; ++i) a->grad.channel(ci)[i] += self.grad.v[i] / static_cast<S>(C);
  });
}

// Min-max normalization to [0,1] over all elements. A constant input (max ==
// min) maps to the all-zeros tensor and bumps the optional counter.
template <typename S>
inline Var<S> minmax_norm(const Var<S>& a, long* degenerate_counter = nullptr) {
  int n = a->val.size();
  int imin = 0, imax = 0;
  for (int i = 1; i < n; ++i) {
    if (a->val.v[i] < a->val.v[imin]) imin = i;
    if (a->val.v[i] > a->val.v[imax]) imax = i;
  }
  S mn = a->val.v[imin], mx = a->val.v[imax];
  Tensor<S> out(a->val.c, a->val.h, a->val.w);
  bool degenerate = !(mx > mn);
  if (degenerate) {
    if (degenerate_counter) ++*degenerate_counter;
    return detail::make_op<S>(std::move(out), {a}, [](Node<S>&) {});
  }
  S d = mx - mn;
  for (int i = 0; i < n; ++i) out.v[i] = (a->val.v[i] - mn) / d;
  return detail::make_op<S>(std::move(out), {a}, [imin, imax, mn, d](Node<S>& self) {
    Node<S>* a = self.parents[0].get();
    double gsum = 0, wsum = 0;
    for (int i = 0; i < self.grad.size(); ++i) {
      gsum += static_cast<double>(self.grad.v[i]);
      wsum += static_cast<double>(self.grad.v[i]) * (a->val.v[i] - mn);
    }
    for (int i = 0; i < self.grad.size(); ++i) a->grad.v[i] += self.grad.v[i] / d;
    a->grad.v[imin] -= static_cast<S>(gsum / d);
    a->grad.v[imax] -= static_cast<S>(wsum / (static_cast<double>(d) * d));
    a->grad.v[imin] += static_cast<S>(wsum / (static_cast<double>(d) * d));
  });
}

// 2x2 max pooling, stride 2 (used by the perceptual extractor).
template <typename S>
inline Var<S> maxpool2(const Var<S>& a) {
  int C = a->val.c, H = a->val.h, W = a->val.w;
  if (H % 2 || W % 2) throw std::invalid_argument("maxpool2: odd input");
  int OH = H / 2, OW = W / 2;
  Tensor<S> out(C, OH, OW);
  std::vector<int> arg(static_cast<size_t>(C) * OH * OW);
  for (int ci = 0; ci < C; ++ci)
    for (int y = 0; y < OH; ++y)
      for (int x = 0; x < OW; ++x) {
        int best = -1;
        S bv = S(0);
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            int idx = (ci * H + 2 * y + dy) * W + 2 * x + dx;
            if (best < 0 || a->val.v[idx] > bv) {
              best = idx;
              bv = a->val.v[idx];
            }
          }
        out.at(ci, y, x) = bv;
        arg[(static_cast<size_t>(ci) * OH + y) * OW + x] = best;
      }
  return detail::make_op<S>(std::move(out), {a}, [arg](Node<S>& self) {
    Node<S>* a = self.parents[0].get();
    for (size_t i = 0; i < arg.size(); ++i) a->grad.v[arg[i]] += self.grad.v[i];
  });
}

// Bilinear upsample with half-pixel centers; matches resize_bilinear.
template <typename S>
inline Var<S> upsample_bilinear(const Var<S>& a, int oh, int ow) {
  int C = a->val.c, H = a->val.h, W = a->val.w;
  Tensor<S> out(C, oh, ow);
  // Precompute the 1-D source taps once per axis.
  struct Tap {
    int i0, i1;
    S f;
  };
  std::vector<Tap> ty(oh), tx(ow);
  for (int y = 0; y < oh; ++y) {
    double sy = (y + 0.5) * H / oh - 0.5;
    int y0 = static_cast<int>(std::floor(sy));
    ty[y] = {std::clamp(y0, 0, H - 1), std::clamp(y0 + 1, 0, H - 1), static_cast<S>(sy - y0)};
  }
  for (int x = 0; x < ow; ++x) {
    double sx = (x + 0.5) * W / ow - 0.5;
    int x0 = static_cast<int>(std::floor(sx));
    tx[x] = {std::clamp(x0, 0, W - 1), std::clamp(x0 + 1, 0, W - 1), static_cast<S>(sx - x0)};
  }
  for (int ci = 0; ci < C; ++ci)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        const Tap &a_y = ty[y], &a_x = tx[x];
        S top = (S(1) - a_x.f) * a->val.at(ci, a_y.i0, a_x.i0) + a_x.f * a->val.at(ci, a_y.i0, a_x.i1);
        S bot = (S(1) - a_x.f) * a->val.at(ci, a_y.i1, a_x.i0) + a_x.f * a->val.at(ci, a_y.i1, a_x.i1);
        out.at(ci, y, x) = (S(1) - a_y.f) * top + a_y.f * bot;
      }
  return detail::make_op<S>(std::move(out), {a}, [ty, tx, C, oh, ow](Node<S>& self) {
    Node<S>* a = self.parents[0].get();
    for (int ci = 0; ci < C; ++ci)
      for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
          S g = self.grad.at(ci, y, x);
          const Tap &a_y = ty[y], &a_x = tx[x];
          a->grad.at(ci, a_y.i0, a_x.i0) += g * (S(1) - a_y.f) * (S(1) - a_x.f);
          a->grad.at(ci, a_y.i0, a_x.i1) += g * (S(1) - a_y.f) * a_x.f;
          a->grad.at(ci, a_y.i1, a_x.i0) += g * a_y.f * (S(1) - a_x.f);
          a->grad.at(ci, a_y.i1, a_x.i1) += g * a_y.f * a_x.f;
        }
  });
}

// ---------------------------------------------------------------------------
// convolution (im2col + GEMM)
// ---------------------------------------------------------------------------

namespace detail {

template <typename S>
using EMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using EMatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename S>
inline void im2col(const Tensor<S>& x, int k, int stride, int pad, EMat<S>& col) {
  int oh = (x.h + 2 * pad - k) / stride + 1;
  int ow = (x.w + 2 * pad - k) / stride + 1;
  col.setZero(x.c * k * k, oh * ow);
  for (int ci = 0; ci < x.c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        int row = (ci * k + ky) * k + kx;
        for (int y = 0; y < oh; ++y) {
          int sy = y * stride + ky - pad;
          if (sy < 0 || sy >= x.h) continue;
          for (int xo = 0; xo < ow; ++xo) {
            int sx = xo * stride + kx - pad;
            if (sx < 0 || sx >= x.w) continue;
            col(row, y * ow + xo) = x.at(ci, sy, sx);
          }
        }
      }
}

template <typename S>
inline void col2im_add(const EMat<S>& col, int k, int stride, int pad, Tensor<S>& dx) {
  int oh = (dx.h + 2 * pad - k) / stride + 1;
  int ow = (dx.w + 2 * pad - k) / stride + 1;
  for (int ci = 0; ci < dx.c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        int row = (ci * k + ky) * k + kx;
        for (int y = 0; y < oh; ++y) {
          int sy = y * stride + ky - pad;
          if (sy < 0 || sy >= dx.h) continue;
          for (int xo = 0; xo < ow; ++xo) {
            int sx = xo * stride + kx - pad;
            if (sx < 0 || sx >= dx.w) continue;
            dx.at(ci, sy, sx) += col(row, y * ow + xo);
          }
        }
      }
}

}  // namespace detail

// 2-D convolution. Weight layout (Cout, Cin, k*k), bias (Cout,1,1).
template <typename S>
inline Var<S> conv2d(const Var<S>& x, const Var<S>& w, const Var<S>& b, int stride, int pad) {
  int cin = x->val.c;
  if (w->val.h != cin) throw std::invalid_argument("conv2d: weight Cin mismatch");
  int k = static_cast<int>(std::lround(std::sqrt(static_cast<double>(w->val.w))));
  if (k * k != w->val.w) throw std::invalid_argument("conv2d: weight last dim must be k*k");
  int cout = w->val.c;
  if (b->val.c != cout) throw std::invalid_argument("conv2d: bias mismatch");
  int oh = (x->val.h + 2 * pad - k) / stride + 1;
  int ow = (x->val.w + 2 * pad - k) / stride + 1;
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv2d: empty output");

  detail::EMat<S> col;
  detail::im2col(x->val, k, stride, pad, col);
  Tensor<S> out(cout, oh, ow);
  Eigen::Map<const detail::EMatRM<S>> W(w->val.data(), cout, cin * k * k);
  Eigen::Map<detail::EMatRM<S>> Y(out.data(), cout, oh * ow);
  Y.noalias() = W * col;
  for (int co = 0; co < cout; ++co) Y.row(co).array() += b->val.v[co];

  // im2col is recomputed in backward; keeping it alive would dominate memory
  // on full-resolution runs.
  return detail::make_op<S>(std::move(out), {x, w, b},
                            [k, stride, pad, cin, cout, oh, ow](Node<S>& self) {
    Node<S>* x = self.parents[0].get();
    Node<S>* w = self.parents[1].get();
    Node<S>* b = self.parents[2].get();
    Eigen::Map<const detail::EMatRM<S>> dY(self.grad.data(), cout, oh * ow);
    if (b->requires_grad)
      for (int co = 0; co < cout; ++co) {
        // fixed-order scalar accumulation: Eigen's redux peels to runtime
        // alignment, which breaks bit-reproducibility across allocations
        double acc = 0;
        const S* row = self.grad.data() + static_cast<size_t>(co) * oh * ow;
        for (int i = 0; i < oh * ow; ++i) acc += row[i];
        b->grad.v[co] += static_cast<S>(acc);
      }
    if (w->requires_grad) {
      detail::EMat<S> col;
      detail::im2col(x->val, k, stride, pad, col);
      Eigen::Map<detail::EMatRM<S>> dW(w->grad.data(), cout, cin * k * k);
      dW.noalias() += dY * col.transpose();
    }
    if (x->requires_grad) {
      Eigen::Map<const detail::EMatRM<S>> W(w->val.data(), cout, cin * k * k);
      detail::EMat<S> dcol = W.transpose() * dY;
      detail::col2im_add(dcol, k, stride, pad, x->grad);
    }
  });
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

// Mean squared error over all elements.
template <typename S>
inline Var<S> mse(const Var<S>& a, const Var<S>& b) {
  check_same_shape(a->val, b->val, "mse");
  int n = a->val.size();
  double acc = 0;
  for (int i = 0; i < n; ++i) {
    double d = static_cast<double>(a->val.v[i]) - static_cast<double>(b->val.v[i]);
    acc += d * d;
  }
  Tensor<S> out(1, 1, 1);
  out.v[0] = static_cast<S>(acc / n);
  return detail::make_op<S>(std::move(out), {a, b}, [n](Node<S>& self) {
    Node<S>* a = self.parents[0].get();
    Node<S>* b = self.parents[1].get();
    S g = self.grad.v[0];
    for (int i = 0; i < n; ++i) {
      S d = a->val.v[i] - b->val.v[i];
      S u = g * S(2) * d / static_cast<S>(n);
      if (a->requires_grad) a->grad.v[i] += u;
      if (b->requires_grad) b->grad.v[i] -= u;
    }
  });
}

// Mean absolute error over all elements.
template <typename S>
inline Var<S> l1(const Var<S>& a, const Var<S>& b) {
  check_same_shape(a->val, b->val, "l1");
  int n = a->val.size();
  double acc = 0;
  for (int i = 0; i < n; ++i)
    acc += std::abs(static_cast<double>(a->val.v[i]) - static_cast<double>(b->val.v[i]));
  Tensor<S> out(1, 1, 1);
  out.v[0] = static_cast<S>(acc / n);
  return detail::make_op<S>(std::move(out), {a, b}, [n](Node<S>& self) {
    Node<S>* a = self.parents[0].get();
    Node<S>* b = self.parents[1].get();
    S g = self.grad.v[0];
    for (int i = 0; i < n; ++i) {
      S d = a->val.v[i] - b->val.v[i];
      S sgn = d > S(0) ? S(1) : (d < S(0) ? S(-1) : S(0));
      S u = g * sgn / static_cast<S>(n);
      if (a->requires_grad) a->grad.v[i] += u;
      if (b->requires_grad) b->grad.v[i] -= u;
    }
  });
}

// Binary focal loss against a hard {0,1} target, averaged over elements.
// Predictions are clamped away from 0/1 before the logs.
template <typename S>
inline Var<S> focal_loss(const Var<S>& pred, const Tensor<S>& target, double gamma, double alpha,
                         double clamp_eps) {
  check_same_shape(pred->val, target, "focal_loss");
  int n = pred->val.size();
  double acc = 0;
  for (int i = 0; i < n; ++i) {
    double p = std::clamp(static_cast<double>(pred->val.v[i]), clamp_eps, 1.0 - clamp_eps);
    if (target.v[i] > S(0.5))
      acc += alpha * std::pow(1.0 - p, gamma) * (-std::log(p));
    else
      acc += (1.0 - alpha) * std::pow(p, gamma) * (-std::log(1.0 - p));
  }
  Tensor<S> out(1, 1, 1);
  out.v[0] = static_cast<S>(acc / n);
  Tensor<S> tgt = target;
  return detail::make_op<S>(std::move(out), {pred}, [n, gamma, alpha, clamp_eps, tgt](Node<S>& self) {
    Node<S>* pr = self.parents[0].get();
    double g = static_cast<double>(self.grad.v[0]) / n;
    for (int i = 0; i < n; ++i) {
      double raw = static_cast<double>(pr->val.v[i]);
      if (raw <= clamp_eps || raw >= 1.0 - clamp_eps) continue;  // clamped: zero slope
      double p = raw, d;
      if (tgt.v[i] > S(0.5))
        d = alpha * (gamma * std::pow(1.0 - p, gamma - 1.0) * std::log(p) -
                     std::pow(1.0 - p, gamma) / p);
      else
        d = (1.0 - alpha) * (gamma * std::pow(p, gamma - 1.0) * (-std::log(1.0 - p)) +
                             std::pow(p, gamma) / (1.0 - p));
      pr->grad.v[i] += static_cast<S>(g * d);
    }
  });
}

}  // namespace rbae
