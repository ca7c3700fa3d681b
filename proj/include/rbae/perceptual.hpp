#pragma once

#include <array>
#include <map>
#include <string>

#include "rbae/nn.hpp"

namespace rbae {

// Frozen feature extractor exposing five taps, one per ReLU of a VGG-16-like
// prefix (conv64, conv64, pool, conv128, conv128, pool, conv256). Provenance
// is either seed-pinned random weights or weights loaded from a file; the tag
// travels with every checkpoint.
template <typename S>
class PerceptualExtractor {
 public:
  static constexpr std::array<int, 5> kVggWidths = {64, 64, 128, 128, 256};

  PerceptualExtractor() = default;
  PerceptualExtractor(unsigned seed, const std::array<int, 5>& widths = kVggWidths)
      : provenance_("fixed-random"), widths_(widths) {
    std::mt19937 rng(seed);
    c11_ = Conv2d<S>(3, widths[0], 3, 1, 1, rng);
    c12_ = Conv2d<S>(widths[0], widths[1], 3, 1, 1, rng);
    c21_ = Conv2d<S>(widths[1], widths[2], 3, 1, 1, rng);
    c22_ = Conv2d<S>(widths[2], widths[3], 3, 1, 1, rng);
    c31_ = Conv2d<S>(widths[3], widths[4], 3, 1, 1, rng);
    freeze();
  }

  void freeze() { set_trainable(params(), false); }

  void set_provenance(std::string p) { provenance_ = std::move(p); }
  const std::string& provenance() const { return provenance_; }
  const std::array<int, 5>& widths() const { return widths_; }

  std::array<Var<S>, 5> taps(const Var<S>& image) const {
    std::array<Var<S>, 5> d;
    d[0] = relu(c11_(image));
    d[1] = relu(c12_(d[0]));
    Var<S> x = maxpool2(d[1]);
    d[2] = relu(c21_(x));
    d[3] = relu(c22_(d[2]));
    x = maxpool2(d[3]);
    d[4] = relu(c31_(x));
    return d;
  }

  NamedParams<S> params(const std::string& prefix = "perceptual") const {
    NamedParams<S> out;
    c11_.collect(out, prefix + ".c11");
    c12_.collect(out, prefix + ".c12");
    c21_.collect(out, prefix + ".c21");
    c22_.collect(out, prefix + ".c22");
    c31_.collect(out, prefix + ".c31");
    return out;
  }

  // Overwrite weights from named tensors (e.g. converted pretrained VGG-16).
  void load_weights(const std::map<std::string, Tensor<S>>& tensors, const std::string& prefix,
                    const std::string& provenance) {
    for (auto& [name, p] : params(prefix)) {
      auto it = tensors.find(name);
      if (it == tensors.end())
        throw std::runtime_error("perceptual weights: missing tensor " + name);
      if (!it->second.same_shape(p->val))
        throw std::runtime_error("perceptual weights: shape mismatch for " + name);
      p->val = it->second;
    }
    provenance_ = provenance;
    freeze();
  }

 private:
  std::string provenance_ = "fixed-random";
  std::array<int, 5> widths_ = kVggWidths;
  Conv2d<S> c11_, c12_, c21_, c22_, c31_;
};

// Mean absolute tap difference, averaged over the five taps. Each tap is
// element-count normalized so the loss is resolution independent. Works with
// anything exposing taps(Var) -> array<Var,5>.
template <typename S, typename Extractor>
inline Var<S> perceptual_loss(const Extractor& extractor, const Var<S>& target,
                              const Var<S>& recon) {
  auto dt = extractor.taps(target);
  auto dr = extractor.taps(recon);
  std::vector<Var<S>> terms;
  for (int l = 0; l < 5; ++l) terms.push_back(l1(dt[l], dr[l]));
  return weighted_sum(terms, std::vector<double>(5, 1.0 / 5.0));
}

}  // namespace rbae
