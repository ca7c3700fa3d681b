#pragma once

#include <fstream>
#include <optional>

#include "rbae/evalkit.hpp"
#include "rbae/model.hpp"
#include "rbae/serialize.hpp"
#include "rbae/trainer_types.hpp"

namespace rbae {

// Orchestrates the two-phase schedule: phase 1 trains encoder+decoder on
// reconstruction, perceptual and pixel-discrimination losses; phase 2 freezes
// the encoder and trains RBAM+decoder+MSFDM on reconstruction, perceptual,
// feature-repair and focal segmentation losses.
class Trainer {
 public:
  Trainer(const RunConfig& cfg, data::DatasetSplit split, std::string run_dir = "");

  // max_steps < 0 runs the configured epochs to completion.
  std::vector<StepRecord> train_phase1(int max_steps = -1);
  std::vector<StepRecord> train_phase2(int max_steps = -1);

  RbaeModel<float>& model() { return model_; }
  const data::DatasetSplit& split() const { return split_; }
  const data::ReferenceSelection& reference() const { return ref_sel_; }
  const Tensor<float>& reference_image() const;
  long reference_encode_count() const { return ref_encodes_; }
  int phase() const { return phase_; }
  long degenerate_normalizations() const { return degenerate_count_; }

  CheckpointData make_checkpoint() const;
  // Loads weights and the phase marker; refuses on reference drift.
  void restore(const CheckpointData& ckpt);

 private:
  struct SynthPair {
    Tensor<float> i_ad, i_m;
  };
  SynthPair synthesize(const Tensor<float>& i_o, std::mt19937& rng);
  const FeaturePyramid<float>& reference_pyramid();
  void log_step(const StepRecord& rec);
  void check_finite(const StepRecord& rec, const std::mt19937& rng);

  RunConfig cfg_;
  data::DatasetSplit split_;
  std::string run_dir_;
  RbaeModel<float> model_;
  synth::AnomalySource source_;
  data::ReferenceSelection ref_sel_;
  std::optional<FeaturePyramid<float>> ref_cache_;
  long ref_encodes_ = 0;
  int phase_ = 0;
  long degenerate_count_ = 0;
  std::ofstream loss_log_;
};

void save_checkpoint_file(const std::string& path, const CheckpointData& ckpt);
CheckpointData load_checkpoint_file(const std::string& path);

// ---------------------------------------------------------------------------
// inference and evaluation
// ---------------------------------------------------------------------------

// Full testing path (identical to the training-phase-2 forward): encode,
// repair levels 3..5 against the cached reference pyramid, decode, re-encode
// both images, discriminate, fuse, score. The final map is quantized to the
// on-disk 16-bit grid before scoring so saved maps rescore identically.
class InferencePipeline {
 public:
  InferencePipeline(RbaeModel<float>& model, Tensor<float> reference_image);

  // seg_head "msfdm" (default) or "pixel-gap" (ablation baseline).
  InferenceResult run(const Tensor<float>& image, const std::string& seg_head = "msfdm") const;

  // Per-level channel-mean PNGs of orig/rep2/rep4/fused feature maps.
  void dump_repair_features(const Tensor<float>& image, const std::string& dir,
                            const std::string& tag) const;

 private:
  RbaeModel<float>& model_;
  Tensor<float> reference_image_;
  FeaturePyramid<float> ref_pyr_;
};

struct EvalOptions {
  std::string seg_head = "msfdm";  // or "pixel-gap"
  std::string maps_dir;            // when set, 16-bit maps are written here
  std::string overlays_dir;        // when set, heat overlays are written here
};

// Stable per-sample file tag derived from the source path.
std::string sample_tag(const data::ImageSample& sample, size_t index);

EvalResult evaluate_split(const InferencePipeline& pipeline, const data::DatasetSplit& split,
                          const RunConfig& cfg, const EvalOptions& opts = {});

// Rescores previously saved maps (no model involved).
EvalResult evaluate_saved_maps(const std::string& maps_dir, const data::DatasetSplit& split,
                               const RunConfig& cfg);

}  // namespace rbae
