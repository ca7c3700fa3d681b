#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rbae/config.hpp"
#include "rbae/msfdm.hpp"

namespace rbae {

// Invariant violations inside the pipeline itself (exit code 2 at the CLI).
struct InternalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Training aborted on a non-finite loss; the offending term is named and the
// generator state has been dumped.
struct TrainAbort : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct StepRecord {
  int phase = 1;
  long step = 0;  // 1-based, cumulative within the phase
  LossBreakdown losses;
};

struct CheckpointData {
  int phase = 0;
  long step = 0;
  nlohmann::json config;
  data::ReferenceSelection reference;
  Tensor<float> reference_image;  // embedded so inference is self-contained
  std::string perceptual_provenance;
  std::vector<std::pair<std::string, Tensor<float>>> weights;
};

struct InferenceResult {
  Tensor<float> recon;
  AnomalyMapSet<float> maps;
  double score = 0;
};

struct EvalResult {
  evalkit::CategoryResult category;
  std::vector<double> image_scores;
  std::vector<int> image_labels;
  int skipped_without_mask = 0;
};

}  // namespace rbae
