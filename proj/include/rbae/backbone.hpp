#pragma once

#include <array>
#include <stdexcept>
#include <string>

#include "rbae/nn.hpp"

namespace rbae {

// Ordered per-level encoder features; levels[i] holds the i+1-th layer output
// at spatial size H/2^(i+1).
template <typename S>
struct FeaturePyramid {
  std::array<Var<S>, 5> levels;
  std::string provenance;

  const Var<S>& level(int l) const { return levels.at(l - 1); }  // l in 1..5
};

// Five-stage convolutional encoder. Each stage is a stride-2 3x3 convolution
// entering the stage followed by a stride-1 3x3 convolution, both rectified.
template <typename S>
class Encoder {
 public:
  Encoder() = default;
  Encoder(int resolution, const std::array<int, 5>& widths, std::mt19937& rng) : widths_(widths) {
    if (resolution % 32 != 0)
      throw std::invalid_argument("encoder: resolution must be divisible by 32, got " +
                                  std::to_string(resolution));
    int cin = 3;
    for (int l = 0; l < 5; ++l) {
      down_[l] = Conv2d<S>(cin, widths[l], 3, 2, 1, rng);
      same_[l] = Conv2d<S>(widths[l], widths[l], 3, 1, 1, rng);
      cin = widths[l];
    }
  }

  FeaturePyramid<S> operator()(const Var<S>& image, std::string provenance = "") const {
    FeaturePyramid<S> pyr;
    pyr.provenance = std::move(provenance);
    Var<S> x = image;
    for (int l = 0; l < 5; ++l) {
      x = relu(same_[l](relu(down_[l](x))));
      pyr.levels[l] = x;
    }
    return pyr;
  }

  const std::array<int, 5>& widths() const { return widths_; }

  NamedParams<S> params(const std::string& prefix = "encoder") const {
    NamedParams<S> out;
    for (int l = 0; l < 5; ++l) {
      down_[l].collect(out, prefix + ".down" + std::to_string(l + 1));
      same_[l].collect(out, prefix + ".same" + std::to_string(l + 1));
    }
    return out;
  }

 private:
  std::array<int, 5> widths_{};
  std::array<Conv2d<S>, 5> down_, same_;
};

// Decoder mirroring the encoder with bilinear upsampling + convolution.
// By construction it only accepts the bottleneck (level 5) and skips from
// levels 3 and 4; levels 1-2 have no path into the decoder.
template <typename S>
class Decoder {
 public:
  Decoder() = default;
  Decoder(const std::array<int, 5>& widths, std::mt19937& rng) : widths_(widths) {
    auto [c1, c2, c3, c4, c5] = std::tuple{widths[0], widths[1], widths[2], widths[3], widths[4]};
    s5a_ = Conv2d<S>(c5 + c4, c4, 3, 1, 1, rng);
    s5b_ = Conv2d<S>(c4, c4, 3, 1, 1, rng);
    s4a_ = Conv2d<S>(c4 + c3, c3, 3, 1, 1, rng);
    s4b_ = Conv2d<S>(c3, c3, 3, 1, 1, rng);
    s3a_ = Conv2d<S>(c3, c2, 3, 1, 1, rng);
    s3b_ = Conv2d<S>(c2, c2, 3, 1, 1, rng);
    s2a_ = Conv2d<S>(c2, c1, 3, 1, 1, rng);
    s2b_ = Conv2d<S>(c1, c1, 3, 1, 1, rng);
    s1a_ = Conv2d<S>(c1, c1, 3, 1, 1, rng);
    out_ = Conv2d<S>(c1, 3, 3, 1, 1, rng);
  }

  // bottleneck: level-5 features; skip4/skip3: level-4/level-3 features.
  Var<S> operator()(const Var<S>& bottleneck, const Var<S>& skip3, const Var<S>& skip4) const {
    auto up2 = [](const Var<S>& x) { return upsample_bilinear(x, x->val.h * 2, x->val.w * 2); };
    Var<S> x = up2(bottleneck);
    if (x->val.h != skip4->val.h || x->val.w != skip4->val.w)
      throw std::invalid_argument("decoder: skip4 shape mismatch");
    x = relu(s5b_(relu(s5a_(concat_c(x, skip4)))));
    x = up2(x);
    if (x->val.h != skip3->val.h || x->val.w != skip3->val.w)
      throw std::invalid_argument("decoder: skip3 shape mismatch");
    x = relu(s4b_(relu(s4a_(concat_c(x, skip3)))));
    x = relu(s3b_(relu(s3a_(up2(x)))));
    x = relu(s2b_(relu(s2a_(up2(x)))));
    x = relu(s1a_(up2(x)));
    return sigmoid(out_(x));
  }

  NamedParams<S> params(const std::string& prefix = "decoder") const {
    NamedParams<S> out;
    s5a_.collect(out, prefix + ".s5a");
    s5b_.collect(out, prefix + ".s5b");
    s4a_.collect(out, prefix + ".s4a");
    s4b_.collect(out, prefix + ".s4b");
    s3a_.collect(out, prefix + ".s3a");
    s3b_.collect(out, prefix + ".s3b");
    s2a_.collect(out, prefix + ".s2a");
    s2b_.collect(out, prefix + ".s2b");
    s1a_.collect(out, prefix + ".s1a");
    out_.collect(out, prefix + ".out");
    return out;
  }

 private:
  std::array<int, 5> widths_{};
  Conv2d<S> s5a_, s5b_, s4a_, s4b_, s3a_, s3b_, s2a_, s2b_, s1a_, out_;
};

}  // namespace rbae
