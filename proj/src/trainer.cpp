#include "rbae/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <numeric>

namespace fs = std::filesystem;

namespace rbae {

namespace {

FeaturePyramid<float> wrap_constants(const FeaturePyramid<float>& pyr) {
  FeaturePyramid<float> out;
  out.provenance = pyr.provenance;
  for (int i = 0; i < 5; ++i) out.levels[i] = constant(pyr.levels[i]->val);
  return out;
}

NamedParams<float> concat_params(std::initializer_list<NamedParams<float>> groups) {
  NamedParams<float> out;
  for (const auto& g : groups) out.insert(out.end(), g.begin(), g.end());
  return out;
}

}  // namespace

Trainer::Trainer(const RunConfig& cfg, data::DatasetSplit split, std::string run_dir)
    : cfg_(cfg),
      split_(std::move(split)),
      run_dir_(std::move(run_dir)),
      model_(cfg),
      source_(cfg.anomaly_source_dir.empty()
                  ? synth::AnomalySource::procedural(cfg.resolution)
                  : synth::AnomalySource::from_directory(cfg.anomaly_source_dir, cfg.resolution)) {
  if (split_.train_normals.empty())
    throw std::runtime_error("training requires at least one defect-free sample");
  for (const auto& s : split_.train_normals)
    if (s.defective) throw std::runtime_error("train split contains a defective sample: " +
                                              s.source_path);
  if (cfg_.optimizer.name != "adam")
    throw std::runtime_error("unsupported optimizer: " + cfg_.optimizer.name);
  ref_sel_ = data::select_reference(split_, cfg_.reference_index);

  bool want_pretrained = cfg_.perceptual.provenance == "pretrained-vgg16";
  if (!cfg_.perceptual.weights_path.empty()) {
    TensorBlob blob = load_blob(cfg_.perceptual.weights_path);
    std::map<std::string, Tensor<float>> named(blob.tensors.begin(), blob.tensors.end());
    model_.perceptual.load_weights(named, "perceptual", "pretrained-vgg16");
  } else if (want_pretrained || cfg_.perceptual.require_pretrained) {
    throw std::runtime_error(
        "pretrained perceptual weights requested but perceptual.weights_path is empty; point it "
        "at a converted VGG-16 tensor blob or set perceptual.provenance=fixed-random");
  }

  if (!run_dir_.empty()) {
    fs::create_directories(run_dir_);
    loss_log_.open(run_dir_ + "/loss_log.jsonl", std::ios::app);
  }
}

const Tensor<float>& Trainer::reference_image() const {
  return split_.train_normals[ref_sel_.index].pixels;
}

Trainer::SynthPair Trainer::synthesize(const Tensor<float>& i_o, std::mt19937& rng) {
  Tensor<float> mask = synth::make_random_mask(cfg_.resolution, cfg_.resolution, rng, cfg_.mask);
  Tensor<float> src = source_.sample(rng);
  auto triplet = synth::compose(i_o, src, mask, cfg_.synth_opacity);
  return {std::move(triplet.i_ad), std::move(triplet.i_m)};
}

const FeaturePyramid<float>& Trainer::reference_pyramid() {
  if (!ref_cache_) {
    ++ref_encodes_;
    ref_cache_ = wrap_constants(model_.encoder(constant(reference_image()), "reference"));
  }
  return *ref_cache_;
}

void Trainer::log_step(const StepRecord& rec) {
  if (!loss_log_.is_open()) return;
  nlohmann::json j{{"phase", rec.phase}, {"step", rec.step}, {"total", rec.losses.total}};
  auto put = [&](const char* k, const std::optional<double>& v) {
    if (v) j[k] = *v;
  };
  put("rec", rec.losses.rec);
  put("per", rec.losses.per);
  put("pixel_dis", rec.losses.pixel_dis);
  put("fea_rep", rec.losses.fea_rep);
  put("seg", rec.losses.seg);
  loss_log_ << j.dump() << "\n";
  loss_log_.flush();
}

void Trainer::check_finite(const StepRecord& rec, const std::mt19937& rng) {
  const char* offender = nullptr;
  auto bad = [](const std::optional<double>& v) { return v && !std::isfinite(*v); };
  if (bad(rec.losses.rec)) offender = "rec";
  else if (bad(rec.losses.per)) offender = "per";
  else if (bad(rec.losses.pixel_dis)) offender = "pixel_dis";
  else if (bad(rec.losses.fea_rep)) offender = "fea_rep";
  else if (bad(rec.losses.seg)) offender = "seg";
  else if (!std::isfinite(rec.losses.total)) offender = "total";
  if (!offender) return;

  std::string dump = "(no run dir)";
  if (!run_dir_.empty()) {
    dump = run_dir_ + "/abort_rng_state.txt";
    std::ofstream f(dump);
    f << "phase " << rec.phase << " step " << rec.step << "\n" << rng << "\n";
  }
  throw TrainAbort("non-finite loss term '" + std::string(offender) + "' at phase " +
                   std::to_string(rec.phase) + " step " + std::to_string(rec.step) +
                   "; generator state dumped to " + dump);
}

std::vector<StepRecord> Trainer::train_phase1(int max_steps) {
  ref_cache_.reset();
  auto enc_params = model_.encoder_params();
  auto dec_params = model_.decoder_params();
  set_trainable(enc_params, true);
  set_trainable(dec_params, true);
  Adam<float> opt(concat_params({enc_params, dec_params}), cfg_.optimizer.lr,
                  cfg_.optimizer.weight_decay);

  const uint64_t rbam_digest = params_digest(model_.rbam_params());
  const uint64_t msfdm_digest = params_digest(model_.msfdm_params());
  const PixelDisNorm norm = pixel_dis_norm_from_string(cfg_.pixel_dis_norm);

  std::mt19937 rng(cfg_.seed + 1);
  std::vector<StepRecord> records;
  long step = 0;
  const int n = static_cast<int>(split_.train_normals.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg_.epochs.phase1; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (int start = 0; start < n; start += cfg_.batch_size) {
      int bsz = std::min(cfg_.batch_size, n - start);
      std::vector<Var<float>> terms;
      std::vector<double> ws;
      double rec_sum = 0, per_sum = 0, pd_sum = 0;
      for (int bi = 0; bi < bsz; ++bi) {
        const auto& sample = split_.train_normals[order[start + bi]];
        SynthPair pair = synthesize(sample.pixels, rng);
        Var<float> io = constant(sample.pixels);
        Var<float> iad = constant(pair.i_ad);
        auto pyr_o = model_.encoder(io, "I_o");
        auto pyr_ad = model_.encoder(iad, "I_ad");
        // only defect-free features reach the decoder in phase 1
        Var<float> recon = model_.decoder(pyr_o.level(5), pyr_o.level(3), pyr_o.level(4));
        Var<float> rec = reconstruction_loss(io, recon);
        Var<float> per = perceptual_loss(model_.perceptual, io, recon);
        Var<float> pd =
            pixel_discrimination_loss(pyr_o, pyr_ad, pair.i_m, norm, &degenerate_count_);
        rec_sum += scalar_value(rec);
        per_sum += scalar_value(per);
        pd_sum += scalar_value(pd);
        terms.insert(terms.end(), {rec, per, pd});
        ws.insert(ws.end(), {cfg_.weights.rec / bsz, cfg_.weights.per / bsz,
                             cfg_.weights.pixel_dis / bsz});
      }
      Var<float> total = weighted_sum(terms, ws);

      StepRecord record;
      record.phase = 1;
      record.step = ++step;
      record.losses.phase = 1;
      record.losses.rec = rec_sum / bsz;
      record.losses.per = per_sum / bsz;
      record.losses.pixel_dis = pd_sum / bsz;
      record.losses.total = joint_total(record.losses, cfg_.weights);
      check_finite(record, rng);

      backward(total);
      opt.step();

      if (params_digest(model_.rbam_params()) != rbam_digest)
        throw InternalError("phase-1 step touched RBAM parameters");
      if (params_digest(model_.msfdm_params()) != msfdm_digest)
        throw InternalError("phase-1 step touched MSFDM parameters");

      log_step(record);
      records.push_back(record);
      if (max_steps >= 0 && step >= max_steps) {
        phase_ = std::max(phase_, 1);
        return records;
      }
    }
  }
  phase_ = std::max(phase_, 1);
  return records;
}

std::vector<StepRecord> Trainer::train_phase2(int max_steps) {
  if (phase_ < 1)
    throw std::runtime_error("phase-2 training requires a completed phase-1 checkpoint");
  ref_cache_.reset();

  auto enc_params = model_.encoder_params();
  set_trainable(enc_params, false);
  const uint64_t enc_digest = params_digest(enc_params);

  auto rbam_params = model_.rbam_params();
  auto dec_params = model_.decoder_params();
  auto msfdm_params = model_.msfdm_params();
  set_trainable(rbam_params, true);
  set_trainable(dec_params, true);
  set_trainable(msfdm_params, true);
  Adam<float> opt(concat_params({rbam_params, dec_params, msfdm_params}), cfg_.optimizer.lr,
                  cfg_.optimizer.weight_decay);

  const FocalParams fp{cfg_.focal.gamma, cfg_.focal.alpha, cfg_.focal.clamp};

  std::mt19937 rng(cfg_.seed + 2);
  std::vector<StepRecord> records;
  long step = 0;
  const int n = static_cast<int>(split_.train_normals.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg_.epochs.phase2; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (int start = 0; start < n; start += cfg_.batch_size) {
      int bsz = std::min(cfg_.batch_size, n - start);
      std::vector<Var<float>> terms;
      std::vector<double> ws;
      double rec_sum = 0, per_sum = 0, fea_sum = 0, seg_sum = 0;
      for (int bi = 0; bi < bsz; ++bi) {
        const auto& sample = split_.train_normals[order[start + bi]];
        SynthPair pair = synthesize(sample.pixels, rng);
        Var<float> io = constant(sample.pixels);
        Var<float> iad = constant(pair.i_ad);

        auto pyr_ad = model_.encoder(iad, "I_ad");
        Var<float> recon, fea;
        if (cfg_.disable_rbam) {  // ablation: raw features straight into the decoder
          recon = model_.decoder(pyr_ad.level(5), pyr_ad.level(3), pyr_ad.level(4));
          fea = scalar_const(0.0f);
        } else {
          auto bundles = model_.rbam.repair_pyramid(pyr_ad, reference_pyramid());
          recon = model_.decoder(bundles.at(5).fused, bundles.at(3).fused, bundles.at(4).fused);
          fea = feature_repair_loss(bundles, model_.encoder(io, "I_o"));
        }
        Var<float> rec = reconstruction_loss(io, recon);
        Var<float> per = perceptual_loss(model_.perceptual, io, recon);

        auto pyr_recon = model_.encoder(recon, "I_adb");
        auto ams = model_.msfdm.anomaly_maps(pyr_ad, pyr_recon);
        Var<float> seg = segmentation_loss(ams, pair.i_m, fp);

        rec_sum += scalar_value(rec);
        per_sum += scalar_value(per);
        fea_sum += scalar_value(fea);
        seg_sum += scalar_value(seg);
        terms.insert(terms.end(), {rec, per, fea, seg});
        ws.insert(ws.end(), {cfg_.weights.rec / bsz, cfg_.weights.per / bsz,
                             cfg_.weights.fea_rep / bsz, cfg_.weights.seg / bsz});
      }
      Var<float> total = weighted_sum(terms, ws);

      StepRecord record;
      record.phase = 2;
      record.step = ++step;
      record.losses.phase = 2;
      record.losses.rec = rec_sum / bsz;
      record.losses.per = per_sum / bsz;
      record.losses.fea_rep = fea_sum / bsz;
      record.losses.seg = seg_sum / bsz;
      record.losses.total = joint_total(record.losses, cfg_.weights);
      check_finite(record, rng);

      backward(total);
      opt.step();

      if (params_digest(enc_params) != enc_digest)
        throw InternalError("phase-2 step modified the frozen encoder");

      log_step(record);
      records.push_back(record);
      if (max_steps >= 0 && step >= max_steps) {
        phase_ = 2;
        return records;
      }
    }
  }
  phase_ = 2;
  return records;
}

CheckpointData Trainer::make_checkpoint() const {
  CheckpointData ck;
  ck.phase = phase_;
  ck.config = to_json(cfg_);
  ck.reference = ref_sel_;
  ck.reference_image = reference_image();
  ck.perceptual_provenance = model_.perceptual.provenance();
  for (const auto& [name, p] : model_.all_params()) ck.weights.push_back({name, p->val});
  return ck;
}

void Trainer::restore(const CheckpointData& ckpt) {
  if (ckpt.reference.checksum != ref_sel_.checksum)
    throw std::runtime_error(
        "reference checksum mismatch (dataset reference drifted since training); refusing to run");
  model_.load_named(ckpt.weights);
  phase_ = ckpt.phase;
  ref_cache_.reset();
}

// ---------------------------------------------------------------------------
// checkpoint file round trip
// ---------------------------------------------------------------------------

void save_checkpoint_file(const std::string& path, const CheckpointData& ckpt) {
  TensorBlob blob;
  blob.meta = {{"kind", "rbae-checkpoint"},
               {"version", 1},
               {"phase", ckpt.phase},
               {"step", ckpt.step},
               {"config", ckpt.config},
               {"reference",
                {{"index", ckpt.reference.index},
                 {"checksum", ckpt.reference.checksum},
                 {"source_path", ckpt.reference.source_path}}},
               {"perceptual_provenance", ckpt.perceptual_provenance}};
  blob.tensors.emplace_back("reference.image", ckpt.reference_image);
  for (const auto& [name, t] : ckpt.weights) blob.tensors.emplace_back(name, t);
  save_blob(path, blob);
}

CheckpointData load_checkpoint_file(const std::string& path) {
  TensorBlob blob = load_blob(path);
  if (blob.meta.value("kind", "") != "rbae-checkpoint")
    throw std::runtime_error("not an rbae checkpoint: " + path);
  CheckpointData ck;
  ck.phase = blob.meta.at("phase").get<int>();
  ck.step = blob.meta.at("step").get<long>();
  ck.config = blob.meta.at("config");
  ck.reference.index = blob.meta.at("reference").at("index").get<int>();
  ck.reference.checksum = blob.meta.at("reference").at("checksum").get<uint64_t>();
  ck.reference.source_path = blob.meta.at("reference").at("source_path").get<std::string>();
  ck.perceptual_provenance = blob.meta.at("perceptual_provenance").get<std::string>();
  for (auto& [name, t] : blob.tensors) {
    if (name == "reference.image")
      ck.reference_image = std::move(t);
    else
      ck.weights.emplace_back(name, std::move(t));
  }
  uint64_t digest = pixel_digest(ck.reference_image);
  if (digest != ck.reference.checksum)
    throw std::runtime_error("checkpoint reference image fails its checksum; refusing to run");
  return ck;
}

// ---------------------------------------------------------------------------
// inference
// ---------------------------------------------------------------------------

InferencePipeline::InferencePipeline(RbaeModel<float>& model, Tensor<float> reference_image)
    : model_(model), reference_image_(std::move(reference_image)) {
  ref_pyr_ = wrap_constants(model_.encoder(constant(reference_image_), "reference"));
}

InferenceResult InferencePipeline::run(const Tensor<float>& image,
                                       const std::string& seg_head) const {
  auto img = constant(image);
  auto pyr_d = model_.encoder(img, "input");
  Var<float> recon;
  if (model_.cfg.disable_rbam) {
    recon = model_.decoder(pyr_d.level(5), pyr_d.level(3), pyr_d.level(4));
  } else {
    auto bundles = model_.rbam.repair_pyramid(pyr_d, ref_pyr_);
    recon = model_.decoder(bundles.at(5).fused, bundles.at(3).fused, bundles.at(4).fused);
  }

  InferenceResult out;
  out.recon = recon->val;
  Tensor<float> fused;
  if (seg_head == "msfdm") {
    auto pyr_rec = model_.encoder(recon, "recon");
    auto ams = model_.msfdm.anomaly_maps(pyr_d, pyr_rec);
    out.maps.am1 = ams[0]->val;
    out.maps.am2 = ams[1]->val;
    out.maps.am3 = ams[2]->val;
    fused = fuse_anomaly_maps(out.maps.am1, out.maps.am2, out.maps.am3, model_.cfg.lambda,
                              image.h, image.w);
  } else if (seg_head == "pixel-gap") {
    fused = pixel_gap_map(image, out.recon);
  } else {
    throw std::runtime_error("unknown seg head: " + seg_head);
  }
  out.maps.am_final = data::quantize_map_u16(fused);
  out.score = image_score(out.maps.am_final, model_.cfg.smoothing_sigma);
  return out;
}

void InferencePipeline::dump_repair_features(const Tensor<float>& image, const std::string& dir,
                                             const std::string& tag) const {
  auto pyr_d = model_.encoder(constant(image), "input");
  auto bundles = model_.rbam.repair_pyramid(pyr_d, ref_pyr_);
  for (const auto& [level, bundle] : bundles) {
    auto dump = [&](const char* name, const Var<float>& v) {
      auto mean = channel_mean(v);
      auto normed = minmax_norm(mean);
      data::save_gray_png(dir + "/" + tag + "_l" + std::to_string(level) + "_" + name + ".png",
                          normed->val);
    };
    dump("orig", bundle.orig);
    dump("rep2", bundle.rep2);
    dump("rep4", bundle.rep4);
    dump("fused", bundle.fused);
  }
}

// ---------------------------------------------------------------------------
// evaluation drivers
// ---------------------------------------------------------------------------

std::string sample_tag(const data::ImageSample& sample, size_t index) {
  std::string base = sample.source_path;
  size_t slash = base.find_last_of('/');
  if (slash != std::string::npos) {
    size_t prev = base.find_last_of('/', slash - 1);
    base = base.substr(prev == std::string::npos ? 0 : prev + 1);
  }
  if (size_t dot = base.find_last_of('.'); dot != std::string::npos) base = base.substr(0, dot);
  for (char& c : base)
    if (!std::isalnum(static_cast<unsigned char>(c))) c = '_';
  char prefix[16];
  std::snprintf(prefix, sizeof(prefix), "%04zu_", index);
  return prefix + base;
}

namespace {

EvalResult finish_eval(const data::DatasetSplit& split, const RunConfig& cfg,
                       EvalResult out, std::vector<Tensor<float>> maps,
                       std::vector<Tensor<float>> masks) {
  out.category.category = split.category;
  out.category.image_auc = 100.0 * evalkit::roc_auc({out.image_scores, out.image_labels});
  if (cfg.eval.pixel_auc_mode == "per_image_mean") {
    double sum = 0;
    int counted = 0;
    bool any_degenerate = false;
    for (size_t i = 0; i < maps.size(); ++i) {
      if (masks[i].max() <= 0.5f) continue;  // single-class image: skip in per-image mode
      auto r = evalkit::pixel_roc_auc({maps[i]}, {masks[i]});
      sum += r.value;
      any_degenerate = any_degenerate || r.degenerate;
      ++counted;
    }
    if (counted == 0) throw evalkit::MetricUndefined("per-image pixel AUC: no defective images");
    out.category.pixel_auc = 100.0 * sum / counted;
    out.category.pixel_degenerate = any_degenerate;
  } else {
    auto r = evalkit::pixel_roc_auc(maps, masks);
    out.category.pixel_auc = 100.0 * r.value;
    out.category.pixel_degenerate = r.degenerate;
  }
  out.category.pro = 100.0 * evalkit::pro_auc(maps, masks, cfg.eval.fpr_cap,
                                              cfg.eval.connectivity);
  return out;
}

}  // namespace

EvalResult evaluate_split(const InferencePipeline& pipeline, const data::DatasetSplit& split,
                          const RunConfig& cfg, const EvalOptions& opts) {
  EvalResult out;
  std::vector<Tensor<float>> maps, masks;
  for (size_t i = 0; i < split.test_samples.size(); ++i) {
    const auto& sample = split.test_samples[i];
    auto res = pipeline.run(sample.pixels, opts.seg_head);
    out.image_scores.push_back(res.score);
    out.image_labels.push_back(sample.defective ? 1 : 0);
    if (sample.defective && !sample.gt_mask) {
      ++out.skipped_without_mask;
    } else {
      maps.push_back(res.maps.am_final);
      masks.push_back(sample.defective ? *sample.gt_mask
                                       : Tensor<float>(1, sample.pixels.h, sample.pixels.w, 0.0f));
    }
    std::string tag = sample_tag(sample, i);
    if (!opts.maps_dir.empty())
      data::save_map_png16(opts.maps_dir + "/" + tag + "_amap.png", res.maps.am_final);
    if (!opts.overlays_dir.empty())
      data::save_overlay_png(opts.overlays_dir + "/" + tag + "_overlay.png", sample.pixels,
                             res.maps.am_final);
  }
  return finish_eval(split, cfg, std::move(out), std::move(maps), std::move(masks));
}

EvalResult evaluate_saved_maps(const std::string& maps_dir, const data::DatasetSplit& split,
                               const RunConfig& cfg) {
  EvalResult out;
  std::vector<Tensor<float>> maps, masks;
  for (size_t i = 0; i < split.test_samples.size(); ++i) {
    const auto& sample = split.test_samples[i];
    Tensor<float> map = data::load_map_png16(maps_dir + "/" + sample_tag(sample, i) + "_amap.png");
    out.image_scores.push_back(image_score(map, cfg.smoothing_sigma));
    out.image_labels.push_back(sample.defective ? 1 : 0);
    if (sample.defective && !sample.gt_mask) {
      ++out.skipped_without_mask;
    } else {
      maps.push_back(std::move(map));
      masks.push_back(sample.defective ? *sample.gt_mask
                                       : Tensor<float>(1, sample.pixels.h, sample.pixels.w, 0.0f));
    }
  }
  return finish_eval(split, cfg, std::move(out), std::move(maps), std::move(masks));
}

}  // namespace rbae
