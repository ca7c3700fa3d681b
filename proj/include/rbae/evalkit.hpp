#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "rbae/tensor.hpp"

namespace rbae::evalkit {

struct MetricUndefined : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Index-aligned scores and binary labels.
struct ScoredSet {
  std::vector<double> scores;
  std::vector<int> labels;  // 0 or 1
};

// Area under the ROC curve via a threshold sweep with trapezoidal tie
// handling; equals the Mann-Whitney statistic P(s+ > s-) + P(tie)/2.
// Throws MetricUndefined when only one class is present.
double roc_auc(const ScoredSet& set);

struct PixelAucResult {
  double value = 0;
  bool degenerate = false;  // constant score map: reported as 0.5 with flag
};

// Pooled per-pixel ROCAUC across all test images. Maps and masks are
// index-aligned single-channel tensors of equal shape; masks hold {0,1}.
PixelAucResult pixel_roc_auc(const std::vector<Tensor<float>>& maps,
                             const std::vector<Tensor<float>>& masks);

// Connected components of a binary mask. Returns per-pixel labels
// (0 = background, 1..count = component id).
std::vector<int> label_components(const Tensor<float>& mask, int connectivity, int* count);

// Normalized area under the per-region-overlap curve. Thresholds sweep the
// pooled score range; at each, mean per-region overlap is traded against the
// global false-positive rate over normal pixels; the curve is integrated by
// trapezoid on [0, fpr_cap] and normalized by the cap.
double pro_auc(const std::vector<Tensor<float>>& maps, const std::vector<Tensor<float>>& masks,
               double fpr_cap = 0.3, int connectivity = 8);

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

struct CategoryResult {
  std::string category;
  double image_auc = 0;
  double pixel_auc = 0;
  double pro = 0;
  bool pixel_degenerate = false;
};

// Per-category rows plus an unweighted Average row; two decimals, values on
// the usual 0-100 scale.
std::string render_report(const std::vector<CategoryResult>& rows);

// Machine-readable counterpart with full precision (serialized JSON).
std::string report_records(const std::vector<CategoryResult>& rows);

}  // namespace rbae::evalkit
