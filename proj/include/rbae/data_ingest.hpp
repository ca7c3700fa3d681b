#pragma once

#include <optional>
#include <string>
#include <vector>

#include "rbae/tensor.hpp"

namespace rbae::data {

struct ImageSample {
  Tensor<float> pixels;  // (3,H,W) in [0,1] at the working resolution
  std::string source_path;
  bool defective = false;
  std::optional<Tensor<float>> gt_mask;  // (1,H,W), values {0,1}
};

struct LoadReport {
  std::vector<std::string> warnings;
};

struct DatasetSplit {
  std::vector<ImageSample> train_normals;  // unsupervised contract: no defects
  std::vector<ImageSample> test_samples;
  std::string category;
  LoadReport report;
};

// Reads one category of an MVTec-AD-style tree:
//   <root>/<category>/train/good/*.png
//   <root>/<category>/test/<type>/*.png
//   <root>/<category>/ground_truth/<type>/<stem>_mask.png
// Images are bilinearly resized to the working resolution; masks use
// nearest-neighbour and are binarized by pixel > 0. Files are taken in
// lexicographic order so indices are reproducible across machines.
DatasetSplit load_mvtec_category(const std::string& root, const std::string& category,
                                 int resolution);

struct SyntheticSpec {
  std::string texture = "stripes";  // stripes | checkerboard | value-noise
  std::string defect = "blob";      // blob | scratch | mixed
  int train_count = 32;
  int test_normal = 16;
  int test_defect = 16;
  int resolution = 64;
  double texture_noise = 0.06;  // stochastic jitter amplitude of the texture
  double defect_contrast = 1.0;  // how far defect fills depart from mid-gray
  double defect_min_area = 0.005;
  double defect_max_area = 0.08;
};

// Procedural texture corpus for desk-scale runs. Deterministic for a fixed
// seed; every defective test sample carries the exact injected mask.
DatasetSplit generate_synthetic_corpus(const SyntheticSpec& spec, unsigned seed);

// Writes a split as an MVTec-layout tree (so every downstream tool is
// layout-agnostic). The category directory must not already contain files
// unless overwrite is set.
void write_corpus(const DatasetSplit& split, const std::string& out_root, bool overwrite = false);

struct ReferenceSelection {
  int index = 0;
  uint64_t checksum = 0;
  std::string source_path;
};

// Pins the fixed reference defect-free image by training-split index.
ReferenceSelection select_reference(const DatasetSplit& split, int index);

// ---------------------------------------------------------------------------
// image file I/O (OpenCV behind these; the rest of the project stays on
// Tensor)
// ---------------------------------------------------------------------------

Tensor<float> load_image_rgb(const std::string& path, int resolution);
Tensor<float> load_mask_png(const std::string& path, int resolution);
std::vector<Tensor<float>> load_image_directory(const std::string& dir, int resolution);

void save_image_png(const std::string& path, const Tensor<float>& img);
void save_mask_png(const std::string& path, const Tensor<float>& mask);

// Anomaly maps as 16-bit single-channel PNG, value = round(score * 65535).
void save_map_png16(const std::string& path, const Tensor<float>& map);
Tensor<float> load_map_png16(const std::string& path);

// 8-bit grayscale PNG of a single-channel [0,1] tensor (feature-map audits).
void save_gray_png(const std::string& path, const Tensor<float>& plane);

// Input blended with a heat colormap for visual audit.
void save_overlay_png(const std::string& path, const Tensor<float>& img,
                      const Tensor<float>& map);

// Side-by-side I_o | I_ad | I_m triptych dump.
void save_triptych_png(const std::string& path, const Tensor<float>& i_o,
                       const Tensor<float>& i_ad, const Tensor<float>& i_m);

// Quantize scores to the on-disk 16-bit grid. Metrics always run on this
// grid so rescoring saved maps reproduces identical numbers.
Tensor<float> quantize_map_u16(const Tensor<float>& map);

}  // namespace rbae::data
