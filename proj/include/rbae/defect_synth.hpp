#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "rbae/tensor.hpp"

namespace rbae::synth {

struct MaskParams {
  double min_area = 0.002;  // fraction of image pixels
  double max_area = 0.2;
  int octaves = 3;
  double rect_prob = 0.5;  // chance of intersecting with a rotated rectangle
  int max_retries = 64;
  // Absolute threshold on the noise field instead of a random quantile.
  std::optional<double> threshold_override;
};

struct MaskStats {
  int retries = 0;
};

// DRAEM-style random mask: a multi-octave value-noise field thresholded at a
// random quantile, optionally intersected with a random rotated rectangle,
// retried until the area fraction lands inside [min_area, max_area].
Tensor<float> make_random_mask(int h, int w, std::mt19937& rng, const MaskParams& params = {},
                               MaskStats* stats = nullptr);

// A defect-free image, an anomaly source, the binary mask relating them and
// the composed artificial-defect image.
struct MaskedTriplet {
  Tensor<float> i_o, i_n, i_m, i_ad;
};

// I_ad = I_o (1 - m) + I_n m, elementwise with the mask broadcast over
// channels. opacity < 1 blends the pasted source (the stored mask stays
// binary); the default 1 keeps the composition a hard paste.
MaskedTriplet compose(const Tensor<float>& i_o, const Tensor<float>& i_n, const Tensor<float>& i_m,
                      double opacity = 1.0);

// Pool of anomaly-source images: either a user-supplied directory or a
// procedural value-noise fallback for fully offline runs.
class AnomalySource {
 public:
  static AnomalySource procedural(int resolution);
  // Loads every readable image under dir, resized to the working resolution.
  static AnomalySource from_directory(const std::string& dir, int resolution);

  Tensor<float> sample(std::mt19937& rng) const;
  size_t pool_size() const { return pool_.size(); }
  bool is_procedural() const { return procedural_; }

 private:
  std::vector<Tensor<float>> pool_;
  int resolution_ = 0;
  bool procedural_ = false;
};

}  // namespace rbae::synth
