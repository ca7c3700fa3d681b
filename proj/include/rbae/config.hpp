#pragma once

#include <array>
#include <string>
#include <vector>

#include <json.hpp>

#include "rbae/data_ingest.hpp"
#include "rbae/defect_synth.hpp"
#include "rbae/losses.hpp"

namespace rbae {

// Every hyperparameter of a run. Defaults are the published values: Adam
// lr 1e-4 / weight decay 1e-5, epochs 400/200, loss weights 100/1/1 and
// 100/1/1/1, lambda 0.2/0.2/0.6, m = 5, K in {2,4} on levels 3..5.
struct RunConfig {
  int resolution = 256;
  std::array<int, 5> widths = {64, 128, 256, 512, 512};
  std::array<std::array<int, 2>, 3> k_values = {{{2, 4}, {2, 4}, {2, 4}}};  // levels 3,4,5
  int ffm_kernel = 5;  // m; must exceed the largest K
  int ffm_compress = 64;
  std::array<double, 3> lambda = {0.2, 0.2, 0.6};
  LossWeights weights;

  struct Optimizer {
    std::string name = "adam";
    double lr = 1e-4;
    double weight_decay = 1e-5;
  } optimizer;

  struct Epochs {
    int phase1 = 400;
    int phase2 = 200;
  } epochs;

  int batch_size = 8;
  unsigned seed = 0;
  int reference_index = 0;

  struct Perceptual {
    std::string provenance = "fixed-random";  // or "pretrained-vgg16"
    std::string weights_path;                 // tensor blob with converted weights
    bool require_pretrained = false;
    unsigned seed = 1234;
  } perceptual;

  struct Focal {
    double gamma = 2.0;
    double alpha = 0.25;
    double clamp = 1e-6;
  } focal;

  double smoothing_sigma = 4.0;  // image-score Gaussian, in pixels

  struct Eval {
    double fpr_cap = 0.3;
    int connectivity = 8;
    std::string pixel_auc_mode = "pooled";  // or "per_image_mean"
  } eval;

  synth::MaskParams mask;
  double synth_opacity = 1.0;  // Eq-exact hard paste by default
  std::string pixel_dis_norm = "minmax";
  bool deterministic = true;
  bool disable_rbam = false;  // ablation: decoder consumes raw encoder features

  data::SyntheticSpec synth;

  std::string data_root = "data";
  std::string category = "stripes";
  std::string out_dir = "runs/run";
  std::string anomaly_source_dir;  // empty -> procedural source
};

nlohmann::json to_json(const RunConfig& cfg);
RunConfig config_from_json(const nlohmann::json& j);

struct ResolvedConfig {
  RunConfig cfg;
  nlohmann::json resolved;  // echoed into every manifest
};

// Resolution order: built-in defaults < config file < RBAE_* environment
// variables < command-line overrides ("dotted.key=value"). Unknown keys are
// rejected.
ResolvedConfig resolve_config(const std::string& config_path,
                              const std::vector<std::string>& overrides, bool use_env = true);

// Re-applies overrides on top of an existing config snapshot (e.g. the one
// embedded in a checkpoint).
ResolvedConfig apply_overrides(nlohmann::json base, const std::vector<std::string>& overrides);

}  // namespace rbae
