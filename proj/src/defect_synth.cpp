#include "rbae/defect_synth.hpp"

#include <cmath>
#include <sstream>

#include "rbae/data_ingest.hpp"
#include "rbae/noise.hpp"

namespace rbae::synth {

namespace {

double quantile(std::vector<float> values, double q) {
  size_t k = static_cast<size_t>(q * (values.size() - 1));
  std::nth_element(values.begin(), values.begin() + k, values.end());
  return values[k];
}

void intersect_rotated_rect(Tensor<float>& mask, std::mt19937& rng) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  int h = mask.h, w = mask.w;
  double cx = uni(rng) * w, cy = uni(rng) * h;
  double half_w = (0.1 + 0.3 * uni(rng)) * w;
  double half_h = (0.1 + 0.3 * uni(rng)) * h;
  double angle = uni(rng) * M_PI;
  double ca = std::cos(angle), sa = std::sin(angle);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      double u = ca * dx + sa * dy, v = -sa * dx + ca * dy;
      if (std::abs(u) > half_w || std::abs(v) > half_h) mask.at(0, y, x) = 0.0f;
    }
}

}  // namespace

Tensor<float> make_random_mask(int h, int w, std::mt19937& rng, const MaskParams& params,
                               MaskStats* stats) {
  if (h < 16 || w < 16) throw std::invalid_argument("make_random_mask: image too small");
  if (params.max_area > 0.5)
    throw std::invalid_argument("make_random_mask: max_area > 0.5, defects must be localized");

  std::uniform_real_distribution<double> quant(0.80, 0.98);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (int attempt = 0; attempt <= params.max_retries; ++attempt) {
    Tensor<float> field = value_noise(h, w, rng, params.octaves);
    double thr = params.threshold_override ? *params.threshold_override
                                           : quantile(field.v, quant(rng));
    Tensor<float> mask(1, h, w);
    for (int i = 0; i < field.size(); ++i) mask.v[i] = field.v[i] > thr ? 1.0f : 0.0f;
    if (coin(rng) < params.rect_prob) intersect_rotated_rect(mask, rng);

    double area = mask.sum() / mask.size();
    if (area >= params.min_area && area <= params.max_area) {
      if (stats) stats->retries = attempt;
      return mask;
    }
  }
  std::ostringstream os;
  os << "make_random_mask: no mask satisfied area bounds [" << params.min_area << ", "
     << params.max_area << "] after " << params.max_retries << " retries";
  if (params.threshold_override) os << " (threshold_override=" << *params.threshold_override << ")";
  os << "; relax the area bounds or the threshold";
  throw std::runtime_error(os.str());
}

MaskedTriplet compose(const Tensor<float>& i_o, const Tensor<float>& i_n,
                      const Tensor<float>& i_m, double opacity) {
  check_same_shape(i_o, i_n, "compose");
  if (i_m.c != 1 || i_m.h != i_o.h || i_m.w != i_o.w)
    throw std::invalid_argument("compose: mask must be 1-channel and match the image size");
  if (opacity <= 0.0 || opacity > 1.0) throw std::invalid_argument("compose: opacity in (0,1]");

  MaskedTriplet t{i_o, i_n, i_m, Tensor<float>(i_o.c, i_o.h, i_o.w)};
  float beta = static_cast<float>(opacity);
  for (int c = 0; c < i_o.c; ++c) {
    const float* o = i_o.channel(c);
    const float* n = i_n.channel(c);
    float* ad = t.i_ad.channel(c);
    for (int i = 0; i < i_o.h * i_o.w; ++i) {
      float m = beta * i_m.v[i];
      ad[i] = o[i] * (1.0f - m) + n[i] * m;
    }
  }
  return t;
}

AnomalySource AnomalySource::procedural(int resolution) {
  AnomalySource src;
  src.resolution_ = resolution;
  src.procedural_ = true;
  return src;
}

AnomalySource AnomalySource::from_directory(const std::string& dir, int resolution) {
  AnomalySource src;
  src.resolution_ = resolution;
  src.pool_ = data::load_image_directory(dir, resolution);
  if (src.pool_.empty())
    throw std::runtime_error("anomaly source: no readable images under '" + dir +
                             "'; point at any image folder or enable the procedural source");
  return src;
}

Tensor<float> AnomalySource::sample(std::mt19937& rng) const {
  if (procedural_) {
    std::uniform_int_distribution<int> cells(2, 8);
    return value_noise_rgb(resolution_, resolution_, rng, 3, cells(rng));
  }
  std::uniform_int_distribution<size_t> pick(0, pool_.size() - 1);
  return pool_[pick(rng)];
}

}  // namespace rbae::synth
