#pragma once

#include <random>

#include "rbae/tensor.hpp"

namespace rbae {

// Multi-octave value noise in [0,1]: random lattice values per octave,
// bilinearly interpolated, amplitudes halving per octave.
inline Tensor<float> value_noise(int h, int w, std::mt19937& rng, int octaves = 3,
                                 int base_cells = 4) {
  Tensor<float> out(1, h, w);
  std::uniform_real_distribution<float> uni(0.0f, 1.0f);
  float amp = 1.0f, amp_sum = 0.0f;
  for (int o = 0; o < octaves; ++o) {
    int cells = base_cells << o;
    std::vector<float> lattice(static_cast<size_t>(cells + 1) * (cells + 1));
    for (auto& v : lattice) v = uni(rng);
    auto lat = [&](int y, int x) { return lattice[static_cast<size_t>(y) * (cells + 1) + x]; };
    for (int y = 0; y < h; ++y) {
      float fy = static_cast<float>(y) * cells / h;
      int y0 = static_cast<int>(fy);
      float ty = fy - y0;
      for (int x = 0; x < w; ++x) {
        float fx = static_cast<float>(x) * cells / w;
        int x0 = static_cast<int>(fx);
        float tx = fx - x0;
        float top = (1 - tx) * lat(y0, x0) + tx * lat(y0, x0 + 1);
        float bot = (1 - tx) * lat(y0 + 1, x0) + tx * lat(y0 + 1, x0 + 1);
        out.at(0, y, x) += amp * ((1 - ty) * top + ty * bot);
      }
    }
    amp_sum += amp;
    amp *= 0.5f;
  }
  for (auto& v : out.v) v /= amp_sum;
  return out;
}

// Independent value noise per channel, for procedural anomaly sources.
inline Tensor<float> value_noise_rgb(int h, int w, std::mt19937& rng, int octaves = 3,
                                     int base_cells = 4) {
  Tensor<float> out(3, h, w);
  for (int c = 0; c < 3; ++c) {
    Tensor<float> plane = value_noise(h, w, rng, octaves, base_cells);
    std::copy(plane.v.begin(), plane.v.end(), out.v.begin() + static_cast<size_t>(c) * h * w);
  }
  return out;
}

}  // namespace rbae
