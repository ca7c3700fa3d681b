#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace rbae {

// Dense rank-3 tensor in CHW layout. Rank 3 covers everything the pipeline
// moves around: images (C,H,W), feature maps, conv weights (Cout,Cin,K*K)
// and scalars (1,1,1).
template <typename S>
struct Tensor {
  int c = 0, h = 0, w = 0;
  std::vector<S> v;

  Tensor() = default;
  Tensor(int c_, int h_, int w_, S fill = S(0))
      : c(c_), h(h_), w(w_), v(static_cast<size_t>(c_) * h_ * w_, fill) {}

  int size() const { return c * h * w; }
  bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }

  S& at(int ci, int y, int x) { return v[(static_cast<size_t>(ci) * h + y) * w + x]; }
  S at(int ci, int y, int x) const { return v[(static_cast<size_t>(ci) * h + y) * w + x]; }

  S* data() { return v.data(); }
  const S* data() const { return v.data(); }

  S* channel(int ci) { return v.data() + static_cast<size_t>(ci) * h * w; }
  const S* channel(int ci) const { return v.data() + static_cast<size_t>(ci) * h * w; }

  void fill(S s) { std::fill(v.begin(), v.end(), s); }

  void resize_like(const Tensor& o) {
    c = o.c;
    h = o.h;
    w = o.w;
    v.assign(o.v.size(), S(0));
  }

  S min() const { return *std::min_element(v.begin(), v.end()); }
  S max() const { return *std::max_element(v.begin(), v.end()); }

  double sum() const {
    double s = 0;
    for (S x : v) s += static_cast<double>(x);
    return s;
  }
  double mean() const { return v.empty() ? 0.0 : sum() / static_cast<double>(v.size()); }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> out(c, h, w);
    for (int i = 0; i < size(); ++i) out.v[i] = static_cast<T>(v[i]);
    return out;
  }

  std::string shape_str() const {
    return "(" + std::to_string(c) + "," + std::to_string(h) + "," + std::to_string(w) + ")";
  }
};

template <typename S>
inline void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* who) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(who) + ": shape mismatch " + a.shape_str() +
                                " vs " + b.shape_str());
}

// Largest absolute elementwise difference.
template <typename S>
inline double max_abs_diff(const Tensor<S>& a, const Tensor<S>& b) {
  assert(a.same_shape(b));
  double m = 0;
  for (int i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a.v[i]) - static_cast<double>(b.v[i])));
  return m;
}

// --- plain (non-differentiable) resampling used on masks and anomaly maps ---

// Nearest-neighbour resize; keeps binary masks binary.
template <typename S>
inline Tensor<S> resize_nearest(const Tensor<S>& in, int oh, int ow) {
  Tensor<S> out(in.c, oh, ow);
  for (int ci = 0; ci < in.c; ++ci)
    for (int y = 0; y < oh; ++y) {
      int sy = std::min(in.h - 1, static_cast<int>((y + 0.5) * in.h / oh));
      for (int x = 0; x < ow; ++x) {
        int sx = std::min(in.w - 1, static_cast<int>((x + 0.5) * in.w / ow));
        out.at(ci, y, x) = in.at(ci, sy, sx);
      }
    }
  return out;
}

// Block-mean downsample for exact dyadic factors; the soft mask targets of the
// pixel-discrimination loss use this so thin defects keep their mass.
template <typename S>
inline Tensor<S> downsample_area(const Tensor<S>& in, int oh, int ow) {
  if (in.h % oh != 0 || in.w % ow != 0)
    throw std::invalid_argument("downsample_area: output must divide input exactly");
  int fy = in.h / oh, fx = in.w / ow;
  Tensor<S> out(in.c, oh, ow);
  for (int ci = 0; ci < in.c; ++ci)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        double acc = 0;
        for (int dy = 0; dy < fy; ++dy)
          for (int dx = 0; dx < fx; ++dx) acc += in.at(ci, y * fy + dy, x * fx + dx);
        out.at(ci, y, x) = static_cast<S>(acc / (fy * fx));
      }
  return out;
}

// Bilinear resize with half-pixel centers (non-graph version; the autograd op
// mirrors this exactly). Preserves constants: the four weights sum to 1.
template <typename S>
inline Tensor<S> resize_bilinear(const Tensor<S>& in, int oh, int ow) {
  Tensor<S> out(in.c, oh, ow);
  for (int y = 0; y < oh; ++y) {
    double sy = (y + 0.5) * in.h / oh - 0.5;
    int y0 = static_cast<int>(std::floor(sy));
    double fy = sy - y0;
    int ya = std::clamp(y0, 0, in.h - 1), yb = std::clamp(y0 + 1, 0, in.h - 1);
    for (int x = 0; x < ow; ++x) {
      double sx = (x + 0.5) * in.w / ow - 0.5;
      int x0 = static_cast<int>(std::floor(sx));
      double fx = sx - x0;
      int xa = std::clamp(x0, 0, in.w - 1), xb = std::clamp(x0 + 1, 0, in.w - 1);
      for (int ci = 0; ci < in.c; ++ci) {
        double top = (1 - fx) * in.at(ci, ya, xa) + fx * in.at(ci, ya, xb);
        double bot = (1 - fx) * in.at(ci, yb, xa) + fx * in.at(ci, yb, xb);
        out.at(ci, y, x) = static_cast<S>((1 - fy) * top + fy * bot);
      }
    }
  }
  return out;
}

// Separable Gaussian blur with a normalized kernel (unit mass, so constants
// pass through exactly). Radius 3*sigma, reflected borders via clamping.
template <typename S>
inline Tensor<S> gaussian_blur(const Tensor<S>& in, double sigma) {
  if (sigma <= 0) return in;
  int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double ksum = 0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    ksum += k[i + radius];
  }
  for (double& x : k) x /= ksum;

  Tensor<S> tmp(in.c, in.h, in.w), out(in.c, in.h, in.w);
  for (int ci = 0; ci < in.c; ++ci) {
    for (int y = 0; y < in.h; ++y)
      for (int x = 0; x < in.w; ++x) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i)
          acc += k[i + radius] * in.at(ci, y, std::clamp(x + i, 0, in.w - 1));
        tmp.at(ci, y, x) = static_cast<S>(acc);
      }
    for (int y = 0; y < in.h; ++y)
      for (int x = 0; x < in.w; ++x) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i)
          acc += k[i + radius] * tmp.at(ci, std::clamp(y + i, 0, in.h - 1), x);
        out.at(ci, y, x) = static_cast<S>(acc);
      }
  }
  return out;
}

// FNV-1a over raw bytes; used for checkpoint/reference drift checks.
inline uint64_t fnv1a(const void* data, size_t n, uint64_t seed = 0xcbf29ce484222325ULL) {
  const uint8_t* p = static_cast<const uint8_t*>(data);
  uint64_t hash = seed;
  for (size_t i = 0; i < n; ++i) {
    hash ^= p[i];
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

// Digest of an image's pixels after quantization to 8 bits. Quantizing first
// makes the digest independent of intermediate float widths.
template <typename S>
inline uint64_t pixel_digest(const Tensor<S>& img) {
  std::vector<uint8_t> bytes(img.size());
  for (int i = 0; i < img.size(); ++i) {
    double x = std::clamp(static_cast<double>(img.v[i]), 0.0, 1.0);
    bytes[i] = static_cast<uint8_t>(std::lround(x * 255.0));
  }
  uint64_t h = fnv1a(bytes.data(), bytes.size());
  h = fnv1a(&img.c, sizeof(img.c), h);
  h = fnv1a(&img.h, sizeof(img.h), h);
  h = fnv1a(&img.w, sizeof(img.w), h);
  return h;
}

}  // namespace rbae
