#pragma once

#include <array>

#include "rbae/backbone.hpp"

namespace rbae {

// One per-scale feature discriminator: three 3x3 convolution blocks taking
// the concatenated (input, reconstruction) features down to a single-channel
// anomaly map squashed to [0,1].
template <typename S>
class Fdm {
 public:
  Fdm() = default;
  Fdm(int level_channels, std::mt19937& rng) {
    int c = level_channels;
    int mid = std::max(c / 2, 1);
    a_ = Conv2d<S>(2 * c, c, 3, 1, 1, rng);
    b_ = Conv2d<S>(c, mid, 3, 1, 1, rng);
    out_ = Conv2d<S>(mid, 1, 3, 1, 1, rng);
  }

  Var<S> operator()(const Var<S>& concat_features) const {
    return sigmoid(out_(relu(b_(relu(a_(concat_features))))));
  }

  NamedParams<S> params(const std::string& prefix) const {
    NamedParams<S> out;
    a_.collect(out, prefix + ".a");
    b_.collect(out, prefix + ".b");
    out_.collect(out, prefix + ".out");
    return out;
  }

 private:
  Conv2d<S> a_, b_, out_;
};

// Multi-scale feature discrimination module: FDM1..FDM3 over encoder levels
// 1..3, with separate weights per scale (channel counts differ).
template <typename S>
class Msfdm {
 public:
  Msfdm() = default;
  Msfdm(const std::array<int, 5>& widths, std::mt19937& rng) {
    for (int i = 0; i < 3; ++i) fdm_[i] = Fdm<S>(widths[i], rng);
  }

  // Channel concatenation of input and reconstruction features, levels 1..3.
  static std::array<Var<S>, 3> build_concat_features(const FeaturePyramid<S>& pyr_input,
                                                     const FeaturePyramid<S>& pyr_recon) {
    std::array<Var<S>, 3> out;
    for (int l = 1; l <= 3; ++l) out[l - 1] = concat_c(pyr_input.level(l), pyr_recon.level(l));
    return out;
  }

  Var<S> discriminate(int level, const Var<S>& concat_features) const {
    return fdm_.at(level - 1)(concat_features);
  }

  std::array<Var<S>, 3> anomaly_maps(const FeaturePyramid<S>& pyr_input,
                                     const FeaturePyramid<S>& pyr_recon) const {
    auto cf = build_concat_features(pyr_input, pyr_recon);
    std::array<Var<S>, 3> maps;
    for (int l = 1; l <= 3; ++l) maps[l - 1] = discriminate(l, cf[l - 1]);
    return maps;
  }

  NamedParams<S> params(const std::string& prefix = "msfdm") const {
    NamedParams<S> out;
    for (int i = 0; i < 3; ++i) {
      auto sub = fdm_[i].params(prefix + ".fdm" + std::to_string(i + 1));
      out.insert(out.end(), sub.begin(), sub.end());
    }
    return out;
  }

 private:
  std::array<Fdm<S>, 3> fdm_;
};

struct FocalParams {
  double gamma = 2.0;
  double alpha = 0.25;
  double clamp = 1e-6;
};

// Mean of the per-level focal losses against the nearest-resized (binary)
// mask targets.
template <typename S>
inline Var<S> segmentation_loss(const std::array<Var<S>, 3>& maps, const Tensor<S>& mask,
                                const FocalParams& fp = {}) {
  if (mask.c != 1) throw std::invalid_argument("segmentation_loss: mask must be 1-channel");
  std::vector<Var<S>> terms;
  for (const auto& m : maps) {
    Tensor<S> target = resize_nearest(mask, m->val.h, m->val.w);
    terms.push_back(focal_loss(m, target, fp.gamma, fp.alpha, fp.clamp));
  }
  return weighted_sum(terms, std::vector<double>(3, 1.0 / 3.0));
}

// The three scale maps plus the weighted fusion, all plain tensors (fusion
// and scoring run outside the autodiff graph).
template <typename S>
struct AnomalyMapSet {
  Tensor<S> am1, am2, am3, am_final;
};

// Weighted fusion: every map is bilinearly upsampled to the input resolution
// (AM_1 included) and blended with the lambda weights.
template <typename S>
inline Tensor<S> fuse_anomaly_maps(const Tensor<S>& am1, const Tensor<S>& am2,
                                   const Tensor<S>& am3, const std::array<double, 3>& lambda,
                                   int out_h, int out_w) {
  for (double l : lambda)
    if (l < 0) throw std::invalid_argument("fuse_anomaly_maps: negative lambda");
  Tensor<S> u1 = resize_bilinear(am1, out_h, out_w);
  Tensor<S> u2 = resize_bilinear(am2, out_h, out_w);
  Tensor<S> u3 = resize_bilinear(am3, out_h, out_w);
  Tensor<S> out(1, out_h, out_w);
  for (int i = 0; i < out.size(); ++i)
    out.v[i] = static_cast<S>(lambda[0] * u1.v[i] + lambda[1] * u2.v[i] + lambda[2] * u3.v[i]);
  return out;
}

// Image-level anomaly score: maximum of the Gaussian-smoothed final map.
template <typename S>
inline double image_score(const Tensor<S>& am_final, double sigma) {
  return static_cast<double>(gaussian_blur(am_final, sigma).max());
}

// Pixel-gap baseline head: channel-mean absolute difference between input
// and reconstruction (the one-subtraction ablation baseline).
template <typename S>
inline Tensor<S> pixel_gap_map(const Tensor<S>& input, const Tensor<S>& recon) {
  check_same_shape(input, recon, "pixel_gap_map");
  Tensor<S> out(1, input.h, input.w);
  for (int ci = 0; ci < input.c; ++ci)
    for (int i = 0; i < input.h * input.w; ++i)
      out.v[i] += std::abs(input.channel(ci)[i] - recon.channel(ci)[i]);
  for (auto& x : out.v) x /= static_cast<S>(input.c);
  return out;
}

}  // namespace rbae
