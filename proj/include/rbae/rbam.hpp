#pragma once

#include <array>
#include <map>
#include <stdexcept>

#include "rbae/backbone.hpp"

namespace rbae {

// ---------------------------------------------------------------------------
// patch grid: non-overlapping KxK decomposition of a feature map
// ---------------------------------------------------------------------------

// Row i of the matrix is patch i flattened to length K*K*C; patches are
// scanned row-major over the (H/K, W/K) grid. decompose/compose round-trip
// exactly.
template <typename S>
struct PatchGrid {
  int k = 1, c = 0, h = 0, w = 0;

  PatchGrid(int k_, int c_, int h_, int w_) : k(k_), c(c_), h(h_), w(w_) {
    if (k <= 0 || h % k != 0 || w % k != 0)
      throw std::invalid_argument("patch grid: feature map " + std::to_string(h) + "x" +
                                  std::to_string(w) + " not divisible by K=" + std::to_string(k));
  }

  int count() const { return (h / k) * (w / k); }
  int dim() const { return k * k * c; }

  detail::EMat<S> decompose(const Tensor<S>& f) const {
    detail::EMat<S> rows(count(), dim());
    int gw = w / k;
    for (int i = 0; i < count(); ++i) {
      int py = i / gw, px = i % gw;
      for (int ci = 0; ci < c; ++ci)
        for (int dy = 0; dy < k; ++dy)
          for (int dx = 0; dx < k; ++dx)
            rows(i, (ci * k + dy) * k + dx) = f.at(ci, py * k + dy, px * k + dx);
    }
    return rows;
  }

  Tensor<S> compose(const detail::EMat<S>& rows) const {
    Tensor<S> f(c, h, w);
    int gw = w / k;
    for (int i = 0; i < count(); ++i) {
      int py = i / gw, px = i % gw;
      for (int ci = 0; ci < c; ++ci)
        for (int dy = 0; dy < k; ++dy)
          for (int dx = 0; dx < k; ++dx)
            f.at(ci, py * k + dy, px * k + dx) = rows(i, (ci * k + dy) * k + dx);
    }
    return f;
  }

  void scatter_add(const detail::EMat<S>& rows, Tensor<S>& f) const {
    int gw = w / k;
    for (int i = 0; i < count(); ++i) {
      int py = i / gw, px = i % gw;
      for (int ci = 0; ci < c; ++ci)
        for (int dy = 0; dy < k; ++dy)
          for (int dx = 0; dx < k; ++dx)
            f.at(ci, py * k + dy, px * k + dx) += rows(i, (ci * k + dy) * k + dx);
    }
  }
};

namespace detail {

// Row-normalize with an epsilon inside the square root so all-zero patches
// stay finite. Returns norms.
template <typename S>
inline Eigen::Matrix<S, Eigen::Dynamic, 1> normalize_rows(const EMat<S>& m, double eps,
                                                          EMat<S>& out, long* zero_counter) {
  Eigen::Matrix<S, Eigen::Dynamic, 1> norms(m.rows());
  out.resize(m.rows(), m.cols());
  for (int i = 0; i < m.rows(); ++i) {
    double ss = m.row(i).template cast<double>().squaredNorm();
    if (ss == 0.0 && zero_counter) ++*zero_counter;
    double n = std::sqrt(ss + eps);
    norms[i] = static_cast<S>(n);
    out.row(i) = m.row(i) / static_cast<S>(n);
  }
  return norms;
}

// Row-wise softmax with max subtraction.
template <typename S>
inline EMat<S> softmax_rows(const EMat<S>& s) {
  EMat<S> out(s.rows(), s.cols());
  for (int i = 0; i < s.rows(); ++i) {
    S mx = s.row(i).maxCoeff();
    double denom = 0;
    for (int j = 0; j < s.cols(); ++j) denom += std::exp(static_cast<double>(s(i, j) - mx));
    for (int j = 0; j < s.cols(); ++j)
      out(i, j) = static_cast<S>(std::exp(static_cast<double>(s(i, j) - mx)) / denom);
  }
  return out;
}

}  // namespace detail

// Cosine-similarity map between the patch rows of a defective map and a
// reference map: S_ij = <p_i/|p_i|, b_j/|b_j|>, plus the row-softmax of it.
template <typename S>
struct SimilarityMap {
  detail::EMat<S> sim;       // raw cosine similarities, entries in [-1, 1]
  detail::EMat<S> sim_norm;  // row-stochastic
};

template <typename S>
inline SimilarityMap<S> rbfrm_similarity(const Tensor<S>& f_def, const Tensor<S>& f_ref, int k,
                                         double eps = 1e-8, long* zero_counter = nullptr) {
  check_same_shape(f_def, f_ref, "rbfrm_similarity");
  PatchGrid<S> grid(k, f_def.c, f_def.h, f_def.w);
  detail::EMat<S> p = grid.decompose(f_def), b = grid.decompose(f_ref);
  detail::EMat<S> ph, bh;
  detail::normalize_rows(p, eps, ph, zero_counter);
  detail::normalize_rows(b, eps, bh, zero_counter);
  SimilarityMap<S> out;
  out.sim = ph * bh.transpose();
  out.sim_norm = detail::softmax_rows(out.sim);
  return out;
}

// Reference-based feature repair: every patch of the defective map is rebuilt
// as the similarity-softmax-weighted combination of reference patches. The
// output therefore lies patch-wise in the convex hull of reference patches.
template <typename S>
inline Var<S> rbfrm_repair(const Var<S>& f_def, const Var<S>& f_ref, int k, double eps = 1e-8,
                           long* zero_counter = nullptr) {
  check_same_shape(f_def->val, f_ref->val, "rbfrm_repair");
  PatchGrid<S> grid(k, f_def->val.c, f_def->val.h, f_def->val.w);

  detail::EMat<S> p = grid.decompose(f_def->val), b = grid.decompose(f_ref->val);
  detail::EMat<S> ph, bh;
  auto np = detail::normalize_rows(p, eps, ph, zero_counter);
  auto nb = detail::normalize_rows(b, eps, bh, zero_counter);
  detail::EMat<S> sim = ph * bh.transpose();
  detail::EMat<S> sbar = detail::softmax_rows(sim);
  Tensor<S> out = grid.compose(sbar * b);

  return detail::make_op<S>(
      std::move(out), {f_def, f_ref}, [grid, p, b, ph, bh, np, nb, sbar](Node<S>& self) {
        Node<S>* fd = self.parents[0].get();
        Node<S>* fr = self.parents[1].get();
        detail::EMat<S> g = grid.decompose(self.grad);

        // out rows = sbar * b
        detail::EMat<S> d_sbar = g * b.transpose();
        detail::EMat<S> d_b = sbar.transpose() * g;

        // softmax rows backward
        detail::EMat<S> d_sim(d_sbar.rows(), d_sbar.cols());
        for (int i = 0; i < d_sbar.rows(); ++i) {
          S dot = d_sbar.row(i).dot(sbar.row(i));
          d_sim.row(i) = sbar.row(i).cwiseProduct((d_sbar.row(i).array() - dot).matrix());
        }

        // sim = ph * bh^T
        detail::EMat<S> d_ph = d_sim * bh;
        detail::EMat<S> d_bh = d_sim.transpose() * ph;

        if (fd->requires_grad) {
          detail::EMat<S> d_p(p.rows(), p.cols());
          for (int i = 0; i < p.rows(); ++i) {
            S dot = p.row(i).dot(d_ph.row(i));
            d_p.row(i) = d_ph.row(i) / np[i] - p.row(i) * (dot / (np[i] * np[i] * np[i]));
          }
          grid.scatter_add(d_p, fd->grad);
        }
        if (fr->requires_grad) {
          for (int j = 0; j < b.rows(); ++j) {
            S dot = b.row(j).dot(d_bh.row(j));
            d_b.row(j) += d_bh.row(j) / nb[j] - b.row(j) * (dot / (nb[j] * nb[j] * nb[j]));
          }
          grid.scatter_add(d_b, fr->grad);
        }
      });
}

// ---------------------------------------------------------------------------
// feature fusion module
// ---------------------------------------------------------------------------

// Per-element softmax over three logits; shared by the graph op and the
// inspection helper so both paths agree bit-for-bit.
template <typename S>
inline std::array<S, 3> softmax3_elem(S a, S b, S c) {
  S mx = std::max({a, b, c});
  double ea = std::exp(static_cast<double>(a - mx));
  double eb = std::exp(static_cast<double>(b - mx));
  double ec = std::exp(static_cast<double>(c - mx));
  double denom = ea + eb + ec;
  return {static_cast<S>(ea / denom), static_cast<S>(eb / denom), static_cast<S>(ec / denom)};
}

template <typename S>
inline std::array<Tensor<S>, 3> ffm_attention_maps(const Tensor<S>& a_rep4,
                                                   const Tensor<S>& a_rep2,
                                                   const Tensor<S>& a_orig) {
  check_same_shape(a_rep4, a_rep2, "ffm_attention_maps");
  check_same_shape(a_rep4, a_orig, "ffm_attention_maps");
  std::array<Tensor<S>, 3> out{a_rep4, a_rep2, a_orig};
  for (int i = 0; i < a_rep4.size(); ++i) {
    auto w = softmax3_elem(a_rep4.v[i], a_rep2.v[i], a_orig.v[i]);
    out[0].v[i] = w[0];
    out[1].v[i] = w[1];
    out[2].v[i] = w[2];
  }
  return out;
}

// Fused attention-weighted selection: out = A4*F4 + A2*F2 + Ao*Fo with the
// attention triple softmax-normalized per element (so it sums to 1).
template <typename S>
inline Var<S> ffm_attend(const Var<S>& a4, const Var<S>& a2, const Var<S>& ao, const Var<S>& f4,
                         const Var<S>& f2, const Var<S>& fo) {
  check_same_shape(a4->val, f4->val, "ffm_attend");
  int n = f4->val.size();
  Tensor<S> w4(f4->val.c, f4->val.h, f4->val.w), w2 = w4, wo = w4, out = w4;
  for (int i = 0; i < n; ++i) {
    auto w = softmax3_elem(a4->val.v[i], a2->val.v[i], ao->val.v[i]);
    w4.v[i] = w[0];
    w2.v[i] = w[1];
    wo.v[i] = w[2];
    out.v[i] = w[0] * f4->val.v[i] + w[1] * f2->val.v[i] + w[2] * fo->val.v[i];
  }
  Tensor<S> saved_out = out;
  return detail::make_op<S>(std::move(out), {a4, a2, ao, f4, f2, fo},
                            [w4, w2, wo, saved_out, n](Node<S>& self) {
    Node<S>* a4 = self.parents[0].get();
    Node<S>* a2 = self.parents[1].get();
    Node<S>* ao = self.parents[2].get();
    Node<S>* f4 = self.parents[3].get();
    Node<S>* f2 = self.parents[4].get();
    Node<S>* fo = self.parents[5].get();
    for (int i = 0; i < n; ++i) {
      S g = self.grad.v[i];
      if (f4->requires_grad) f4->grad.v[i] += g * w4.v[i];
      if (f2->requires_grad) f2->grad.v[i] += g * w2.v[i];
      if (fo->requires_grad) fo->grad.v[i] += g * wo.v[i];
      if (a4->requires_grad) a4->grad.v[i] += g * w4.v[i] * (f4->val.v[i] - saved_out.v[i]);
      if (a2->requires_grad) a2->grad.v[i] += g * w2.v[i] * (f2->val.v[i] - saved_out.v[i]);
      if (ao->requires_grad) ao->grad.v[i] += g * wo.v[i] * (fo->val.v[i] - saved_out.v[i]);
    }
  });
}

// Learned channel-wise attention that blends the original feature map with
// its two repaired variants. Channel compression to 64 ahead of the three
// attention convolutions follows the selective-kernel pattern.
template <typename S>
class Ffm {
 public:
  Ffm() = default;
  Ffm(int channels, int m, int compress, std::mt19937& rng) {
    int pad = m / 2;
    compress_ = Conv2d<S>(channels, compress, m, 1, pad, rng);
    att_rep4_ = Conv2d<S>(compress, channels, m, 1, pad, rng);
    att_rep2_ = Conv2d<S>(compress, channels, m, 1, pad, rng);
    att_orig_ = Conv2d<S>(compress, channels, m, 1, pad, rng);
  }

  Var<S> operator()(const Var<S>& f_orig, const Var<S>& f_rep2, const Var<S>& f_rep4) const {
    Var<S> fu = add(add(f_orig, f_rep2), f_rep4);
    Var<S> z = relu(compress_(fu));
    return ffm_attend(att_rep4_(z), att_rep2_(z), att_orig_(z), f_rep4, f_rep2, f_orig);
  }

  NamedParams<S> params(const std::string& prefix) const {
    NamedParams<S> out;
    compress_.collect(out, prefix + ".compress");
    att_rep4_.collect(out, prefix + ".att_rep4");
    att_rep2_.collect(out, prefix + ".att_rep2");
    att_orig_.collect(out, prefix + ".att_orig");
    return out;
  }

 private:
  Conv2d<S> compress_, att_rep4_, att_rep2_, att_orig_;
};

// ---------------------------------------------------------------------------
// full reference-based attention module over levels 3..5
// ---------------------------------------------------------------------------

// F_rep2/F_rep4 hold the repairs for the two configured patch sizes of the
// level (defaults 2 and 4).
template <typename S>
struct RepairBundle {
  Var<S> orig, rep2, rep4, fused;
};

template <typename S>
class Rbam {
 public:
  static constexpr int kFirstLevel = 3;
  static constexpr int kLastLevel = 5;

  Rbam() = default;
  Rbam(const std::array<int, 5>& widths, const std::array<std::array<int, 2>, 3>& k_values, int m,
       int compress, std::mt19937& rng)
      : k_values_(k_values) {
    for (int i = 0; i < 3; ++i)
      ffm_[i] = Ffm<S>(widths[kFirstLevel - 1 + i], m, compress, rng);
  }

  RepairBundle<S> repair_level(int level, const Var<S>& f_def, const Var<S>& f_ref) const {
    const auto& ks = k_values_.at(level - kFirstLevel);
    RepairBundle<S> bundle;
    bundle.orig = f_def;
    bundle.rep2 = rbfrm_repair(f_def, f_ref, ks[0], eps_, &zero_patches_);
    bundle.rep4 = rbfrm_repair(f_def, f_ref, ks[1], eps_, &zero_patches_);
    bundle.fused = ffm_[level - kFirstLevel](bundle.orig, bundle.rep2, bundle.rep4);
    return bundle;
  }

  // Repairs levels 3..5; levels 1-2 pass through untouched by contract.
  std::map<int, RepairBundle<S>> repair_pyramid(const FeaturePyramid<S>& pyr_def,
                                                const FeaturePyramid<S>& pyr_ref) const {
    std::map<int, RepairBundle<S>> out;
    for (int l = kFirstLevel; l <= kLastLevel; ++l) {
      if (!pyr_def.level(l)->val.same_shape(pyr_ref.level(l)->val))
        throw std::invalid_argument("repair_pyramid: pyramids from different schedules");
      out.emplace(l, repair_level(l, pyr_def.level(l), pyr_ref.level(l)));
    }
    return out;
  }

  NamedParams<S> params(const std::string& prefix = "rbam") const {
    NamedParams<S> out;
    for (int i = 0; i < 3; ++i) {
      auto sub = ffm_[i].params(prefix + ".ffm" + std::to_string(kFirstLevel + i));
      out.insert(out.end(), sub.begin(), sub.end());
    }
    return out;
  }

  long zero_patch_warnings() const { return zero_patches_; }

 private:
  std::array<std::array<int, 2>, 3> k_values_{{{2, 4}, {2, 4}, {2, 4}}};
  std::array<Ffm<S>, 3> ffm_;
  double eps_ = 1e-8;
  mutable long zero_patches_ = 0;
};

// Mean over the repaired levels of the squared feature gap to the clean
// pyramid. Each level contributes the spatial mean of the channel-summed
// squared difference; the sum is divided by (l2 - l1) = 2.
template <typename S>
inline Var<S> feature_repair_loss(const std::map<int, RepairBundle<S>>& bundles,
                                  const FeaturePyramid<S>& pyr_clean, int l1 = 3, int l2 = 5) {
  std::vector<Var<S>> terms;
  std::vector<double> ws;
  for (const auto& [level, bundle] : bundles) {
    const Var<S>& clean = pyr_clean.level(level);
    check_same_shape(bundle.fused->val, clean->val, "feature_repair_loss");
    terms.push_back(scale(mse(bundle.fused, clean), bundle.fused->val.c));
    ws.push_back(1.0 / (l2 - l1));
  }
  if (terms.empty()) throw std::invalid_argument("feature_repair_loss: no bundles");
  return weighted_sum(terms, ws);
}

}  // namespace rbae
