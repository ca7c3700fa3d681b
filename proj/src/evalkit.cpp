#include "rbae/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace rbae::evalkit {

double roc_auc(const ScoredSet& set) {
  if (set.scores.size() != set.labels.size())
    throw std::invalid_argument("roc_auc: scores/labels length mismatch");
  size_t n = set.scores.size();
  long pos = std::count(set.labels.begin(), set.labels.end(), 1);
  long neg = static_cast<long>(n) - pos;
  if (pos == 0 || neg == 0)
    throw MetricUndefined("roc_auc undefined: both classes required (pos=" +
                          std::to_string(pos) + ", neg=" + std::to_string(neg) + ")");

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return set.scores[a] > set.scores[b]; });

  // Sweep distinct thresholds from high to low, trapezoid in raw counts.
  double auc = 0;
  long tp = 0, fp = 0, prev_tp = 0, prev_fp = 0;
  size_t i = 0;
  while (i < n) {
    double s = set.scores[order[i]];
    while (i < n && set.scores[order[i]] == s) {
      if (set.labels[order[i]] == 1)
        ++tp;
      else
        ++fp;
      ++i;
    }
    auc += static_cast<double>(fp - prev_fp) * (tp + prev_tp) / 2.0;
    prev_tp = tp;
    prev_fp = fp;
  }
  return auc / (static_cast<double>(pos) * neg);
}

PixelAucResult pixel_roc_auc(const std::vector<Tensor<float>>& maps,
                             const std::vector<Tensor<float>>& masks) {
  if (maps.size() != masks.size() || maps.empty())
    throw std::invalid_argument("pixel_roc_auc: maps/masks mismatch");
  ScoredSet pooled;
  for (size_t k = 0; k < maps.size(); ++k) {
    check_same_shape(maps[k], masks[k], "pixel_roc_auc");
    for (int i = 0; i < maps[k].size(); ++i) {
      pooled.scores.push_back(maps[k].v[i]);
      pooled.labels.push_back(masks[k].v[i] > 0.5f ? 1 : 0);
    }
  }
  double mn = *std::min_element(pooled.scores.begin(), pooled.scores.end());
  double mx = *std::max_element(pooled.scores.begin(), pooled.scores.end());
  if (mn == mx) {
    // all ties: every threshold ranks every pixel equally
    long pos = std::count(pooled.labels.begin(), pooled.labels.end(), 1);
    if (pos == 0 || pos == static_cast<long>(pooled.labels.size()))
      throw MetricUndefined("pixel_roc_auc undefined: single-class pixel population");
    return {0.5, true};
  }
  return {roc_auc(pooled), false};
}

std::vector<int> label_components(const Tensor<float>& mask, int connectivity, int* count) {
  if (mask.c != 1) throw std::invalid_argument("label_components: mask must be 1-channel");
  if (connectivity != 4 && connectivity != 8)
    throw std::invalid_argument("label_components: connectivity must be 4 or 8");
  int h = mask.h, w = mask.w;
  std::vector<int> labels(static_cast<size_t>(h) * w, 0);
  int next = 0;
  std::vector<int> stack;
  for (int start = 0; start < h * w; ++start) {
    if (mask.v[start] <= 0.5f || labels[start] != 0) continue;
    ++next;
    stack.push_back(start);
    labels[start] = next;
    while (!stack.empty()) {
      int idx = stack.back();
      stack.pop_back();
      int y = idx / w, x = idx % w;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          if (dy == 0 && dx == 0) continue;
          if (connectivity == 4 && dy != 0 && dx != 0) continue;
          int ny = y + dy, nx = x + dx;
          if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
          int nidx = ny * w + nx;
          if (mask.v[nidx] > 0.5f && labels[nidx] == 0) {
            labels[nidx] = next;
            stack.push_back(nidx);
          }
        }
    }
  }
  if (count) *count = next;
  return labels;
}

double pro_auc(const std::vector<Tensor<float>>& maps, const std::vector<Tensor<float>>& masks,
               double fpr_cap, int connectivity) {
  if (maps.size() != masks.size() || maps.empty())
    throw std::invalid_argument("pro_auc: maps/masks mismatch");
  if (fpr_cap <= 0 || fpr_cap > 1) throw std::invalid_argument("pro_auc: fpr_cap must be in (0,1]");

  // Global region ids across all images; -1 marks normal pixels.
  struct Pixel {
    float score;
    int region;  // -1 = normal
  };
  std::vector<Pixel> pixels;
  std::vector<long> region_size;
  long n_neg = 0;
  for (size_t k = 0; k < maps.size(); ++k) {
    check_same_shape(maps[k], masks[k], "pro_auc");
    int count = 0;
    auto labels = label_components(masks[k], connectivity, &count);
    int base = static_cast<int>(region_size.size());
    region_size.resize(base + count, 0);
    for (int i = 0; i < maps[k].size(); ++i) {
      int region = labels[i] == 0 ? -1 : base + labels[i] - 1;
      if (region < 0)
        ++n_neg;
      else
        ++region_size[region];
      pixels.push_back({maps[k].v[i], region});
    }
  }
  if (region_size.empty()) throw MetricUndefined("pro_auc undefined: no ground-truth regions");
  if (n_neg == 0) throw MetricUndefined("pro_auc undefined: no normal pixels");

  std::sort(pixels.begin(), pixels.end(),
            [](const Pixel& a, const Pixel& b) { return a.score > b.score; });

  // Each distinct score s yields the prediction {score > s}; the operating
  // point is recorded before the group at s is absorbed. The first point is
  // therefore the empty prediction (0,0).
  std::vector<long> region_hits(region_size.size(), 0);
  long fp = 0;
  std::vector<std::pair<double, double>> curve;  // (fpr, mean pro), fpr nondecreasing
  size_t i = 0;
  while (i < pixels.size()) {
    double mean_pro = 0;
    for (size_t r = 0; r < region_size.size(); ++r)
      mean_pro += static_cast<double>(region_hits[r]) / region_size[r];
    mean_pro /= static_cast<double>(region_size.size());
    double fpr = static_cast<double>(fp) / n_neg;
    if (!curve.empty() && curve.back().first == fpr)
      curve.back().second = mean_pro;  // same fpr, lower threshold: pro can only grow
    else
      curve.push_back({fpr, mean_pro});

    float s = pixels[i].score;
    while (i < pixels.size() && pixels[i].score == s) {
      if (pixels[i].region < 0)
        ++fp;
      else
        ++region_hits[pixels[i].region];
      ++i;
    }
  }
  // The all-inclusive prediction ({score > -inf}) is not an operating point:
  // thresholds are exactly the distinct scores.

  // Trapezoid on [0, fpr_cap]; beyond the last achieved fpr the curve is
  // extended as constant (only reachable in degenerate sweeps).
  double area = 0;
  for (size_t k = 0; k + 1 < curve.size(); ++k) {
    auto [x0, y0] = curve[k];
    auto [x1, y1] = curve[k + 1];
    if (x0 >= fpr_cap) break;
    if (x1 <= fpr_cap) {
      area += (x1 - x0) * (y0 + y1) / 2.0;
    } else {
      double t = (fpr_cap - x0) / (x1 - x0);
      double ycap = y0 + t * (y1 - y0);
      area += (fpr_cap - x0) * (y0 + ycap) / 2.0;
      return area / fpr_cap;
    }
  }
  double last_x = curve.back().first, last_y = curve.back().second;
  if (last_x < fpr_cap) area += (fpr_cap - last_x) * last_y;
  return area / fpr_cap;
}

namespace {

std::string fixed2(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", x);
  return buf;
}

}  // namespace

std::string render_report(const std::vector<CategoryResult>& rows) {
  if (rows.empty()) throw std::invalid_argument("report: no categories evaluated");
  std::ostringstream os;
  os << "Category        ImageROCAUC  PixelROCAUC  PROAUC\n";
  os << "--------------  -----------  -----------  ------\n";
  double si = 0, sp = 0, sr = 0;
  for (const auto& r : rows) {
    os << r.category;
    for (size_t pad = r.category.size(); pad < 16; ++pad) os << ' ';
    os << fixed2(r.image_auc) << "        " << fixed2(r.pixel_auc)
       << (r.pixel_degenerate ? "*" : " ") << "       " << fixed2(r.pro) << "\n";
    si += r.image_auc;
    sp += r.pixel_auc;
    sr += r.pro;
  }
  size_t n = rows.size();
  os << "Average         " << fixed2(si / n) << "        " << fixed2(sp / n) << "        "
     << fixed2(sr / n) << "\n";
  bool any_degenerate = std::any_of(rows.begin(), rows.end(),
                                    [](const CategoryResult& r) { return r.pixel_degenerate; });
  if (any_degenerate) os << "* constant anomaly map: pixel ROCAUC degenerate, reported as 0.50\n";
  return os.str();
}

std::string report_records(const std::vector<CategoryResult>& rows) {
  if (rows.empty()) throw std::invalid_argument("report: no categories evaluated");
  nlohmann::json out = nlohmann::json::array();
  double si = 0, sp = 0, sr = 0;
  for (const auto& r : rows) {
    out.push_back({{"category", r.category},
                   {"image_rocauc", r.image_auc},
                   {"pixel_rocauc", r.pixel_auc},
                   {"pro_auc", r.pro},
                   {"pixel_degenerate", r.pixel_degenerate}});
    si += r.image_auc;
    sp += r.pixel_auc;
    sr += r.pro;
  }
  size_t n = rows.size();
  out.push_back({{"category", "Average"},
                 {"image_rocauc", si / n},
                 {"pixel_rocauc", sp / n},
                 {"pro_auc", sr / n}});
  return out.dump(2);
}

}  // namespace rbae::evalkit
