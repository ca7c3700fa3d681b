#pragma once

#include <optional>
#include <stdexcept>
#include <string>

#include "rbae/backbone.hpp"

namespace rbae {

enum class PixelDisNorm { kMinMax, kZScore };

inline PixelDisNorm pixel_dis_norm_from_string(const std::string& s) {
  if (s == "minmax") return PixelDisNorm::kMinMax;
  if (s == "zscore") return PixelDisNorm::kZScore;
  throw std::invalid_argument("unknown pixel_dis normalization: " + s);
}

// Z-score standardization over all elements; the alternative normalization
// for the pixel-discrimination loss. Output is not range-bounded.
template <typename S>
inline Var<S> zscore_norm(const Var<S>& a, long* degenerate_counter = nullptr) {
  int n = a->val.size();
  double mu = a->val.mean();
  double var = 0;
  for (int i = 0; i < n; ++i) {
    double d = a->val.v[i] - mu;
    var += d * d;
  }
  var /= n;
  double sd = std::sqrt(var);
  Tensor<S> out(a->val.c, a->val.h, a->val.w);
  if (!(a->val.max() > a->val.min())) {  // constant input
    if (degenerate_counter) ++*degenerate_counter;
    return detail::make_op<S>(std::move(out), {a}, [](Node<S>&) {});
  }
  double sde = sd + 1e-8;
  for (int i = 0; i < n; ++i) out.v[i] = static_cast<S>((a->val.v[i] - mu) / sde);
  return detail::make_op<S>(std::move(out), {a}, [n, mu, sd, sde](Node<S>& self) {
    Node<S>* a = self.parents[0].get();
    double gsum = 0, gdot = 0;
    for (int i = 0; i < n; ++i) {
      gsum += static_cast<double>(self.grad.v[i]);
      gdot += static_cast<double>(self.grad.v[i]) * (a->val.v[i] - mu);
    }
    for (int i = 0; i < n; ++i) {
      double d = a->val.v[i] - mu;
      a->grad.v[i] += static_cast<S>(self.grad.v[i] / sde - gsum / (n * sde) -
                                     d * gdot / (n * sd * sde * sde));
    }
  });
}

// One level of the pixel-discrimination loss: channel-mean M of the squared
// feature residual, normalization N, squared error against the level target,
// averaged over the level's pixels.
template <typename S>
inline Var<S> pixel_dis_level_term(const Var<S>& f_o, const Var<S>& f_ad,
                                   const Tensor<S>& level_target,
                                   PixelDisNorm norm = PixelDisNorm::kMinMax,
                                   long* degenerate_counter = nullptr) {
  check_same_shape(f_o->val, f_ad->val, "pixel_dis_level_term");
  Var<S> d = sub(f_o, f_ad);
  Var<S> residual = channel_mean(mul(d, d));
  Var<S> normed = norm == PixelDisNorm::kMinMax ? minmax_norm(residual, degenerate_counter)
                                                : zscore_norm(residual, degenerate_counter);
  return mse(normed, constant(level_target));
}

// Pixel-level discrimination loss: per level, the normalized channel-mean of
// the squared feature residual between the clean and defect-injected image is
// pulled toward the (area-resized, soft) injection mask; averaged over the
// five levels, each level averaged over its pixels.
template <typename S>
inline Var<S> pixel_discrimination_loss(const FeaturePyramid<S>& pyr_o,
                                        const FeaturePyramid<S>& pyr_ad, const Tensor<S>& mask,
                                        PixelDisNorm norm = PixelDisNorm::kMinMax,
                                        long* degenerate_counter = nullptr) {
  if (mask.c != 1) throw std::invalid_argument("pixel_discrimination_loss: mask must be 1-channel");
  std::vector<Var<S>> terms;
  for (int l = 1; l <= 5; ++l) {
    const Var<S>& fo = pyr_o.level(l);
    Tensor<S> target = downsample_area(mask, fo->val.h, fo->val.w);
    terms.push_back(pixel_dis_level_term(fo, pyr_ad.level(l), target, norm, degenerate_counter));
  }
  return weighted_sum(terms, std::vector<double>(5, 1.0 / 5.0));
}

// Mean squared error between an image and its reconstruction (per-element).
template <typename S>
inline Var<S> reconstruction_loss(const Var<S>& target, const Var<S>& recon) {
  return mse(target, recon);
}

// ---------------------------------------------------------------------------
// weighted joint losses
// ---------------------------------------------------------------------------

struct LossWeights {
  double rec = 100.0;
  double per = 1.0;
  double pixel_dis = 1.0;
  double fea_rep = 1.0;
  double seg = 1.0;
};

// Named scalar terms of one optimization step plus the weighted total.
struct LossBreakdown {
  int phase = 1;
  std::optional<double> rec, per, pixel_dis, fea_rep, seg;
  double total = 0;
};

inline double joint_total(const LossBreakdown& t, const LossWeights& w) {
  auto need = [&](const std::optional<double>& v, const char* name) {
    if (!v)
      throw std::invalid_argument(std::string("joint loss: phase ") + std::to_string(t.phase) +
                                  " requires term '" + name + "'");
    return *v;
  };
  if (t.phase == 1)
    return w.rec * need(t.rec, "rec") + w.per * need(t.per, "per") +
           w.pixel_dis * need(t.pixel_dis, "pixel_dis");
  if (t.phase == 2)
    return w.rec * need(t.rec, "rec") + w.per * need(t.per, "per") +
           w.fea_rep * need(t.fea_rep, "fea_rep") + w.seg * need(t.seg, "seg");
  throw std::invalid_argument("joint loss: phase must be 1 or 2");
}

}  // namespace rbae
