// rbae: reference-based autoencoder pipeline for textured-surface defect
// detection. Subcommands: synth, train, infer, eval, ablate, report.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "rbae/trainer.hpp"

namespace fs = std::filesystem;
using namespace rbae;

namespace {

struct GlobalArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string device = "cpu";
};

ResolvedConfig resolve(const GlobalArgs& g) {
  if (g.device != "cpu")
    throw std::runtime_error("only --device cpu is supported by this build");
  return resolve_config(g.config_path, g.overrides);
}

void write_manifest(const std::string& out_dir, const std::string& verb,
                    const nlohmann::json& resolved, const nlohmann::json& extra) {
  fs::create_directories(out_dir);
  nlohmann::json manifest{{"command", verb}, {"config", resolved}, {"run", extra}};
  // the reference image doubles as a training normal; recorded for audit
  manifest["notes"] = {{"reference_participates_in_training", true}};
  std::ofstream f(out_dir + "/manifest.json");
  f << manifest.dump(2) << "\n";
}

data::DatasetSplit load_split(const RunConfig& cfg) {
  auto split = data::load_mvtec_category(cfg.data_root, cfg.category, cfg.resolution);
  for (const auto& w : split.report.warnings) std::cerr << "warning: " << w << "\n";
  return split;
}

void write_eval_outputs(const std::string& dir, const EvalResult& result) {
  fs::create_directories(dir);
  auto text = evalkit::render_report({result.category});
  std::ofstream(dir + "/report.txt") << text;
  std::ofstream(dir + "/report.json") << evalkit::report_records({result.category}) << "\n";
  nlohmann::json scores = nlohmann::json::array();
  for (size_t i = 0; i < result.image_scores.size(); ++i)
    scores.push_back({{"score", result.image_scores[i]}, {"label", result.image_labels[i]}});
  std::ofstream(dir + "/image_scores.json") << scores.dump(2) << "\n";
  std::cout << text;
  if (result.skipped_without_mask > 0)
    std::cout << "note: " << result.skipped_without_mask
              << " defective image(s) without ground truth excluded from pixel metrics\n";
}

int cmd_synth(const GlobalArgs& g, bool force, int dump_triptychs) {
  auto [cfg, resolved] = resolve(g);
  auto split = data::generate_synthetic_corpus(cfg.synth, cfg.seed);
  data::write_corpus(split, cfg.data_root, force);
  write_manifest(cfg.out_dir, "synth",
                 resolved, {{"category", split.category}, {"seed", cfg.seed}});
  std::cout << "wrote " << split.train_normals.size() << " train / " << split.test_samples.size()
            << " test images under " << (fs::path(cfg.data_root) / split.category).string()
            << "\n";
  if (dump_triptychs > 0) {
    std::mt19937 rng(cfg.seed + 7);
    auto source = cfg.anomaly_source_dir.empty()
                      ? synth::AnomalySource::procedural(cfg.synth.resolution)
                      : synth::AnomalySource::from_directory(cfg.anomaly_source_dir,
                                                             cfg.synth.resolution);
    std::string dir = cfg.out_dir + "/triptychs";
    for (int i = 0; i < dump_triptychs && i < static_cast<int>(split.train_normals.size()); ++i) {
      synth::MaskParams mp = cfg.mask;
      auto mask = synth::make_random_mask(cfg.synth.resolution, cfg.synth.resolution, rng, mp);
      auto triplet = synth::compose(split.train_normals[i].pixels, source.sample(rng), mask,
                                    cfg.synth_opacity);
      char name[32];
      std::snprintf(name, sizeof(name), "/triplet_%03d.png", i);
      data::save_triptych_png(dir + name, triplet.i_o, triplet.i_ad, triplet.i_m);
    }
    std::cout << "triptychs in " << dir << "\n";
  }
  return 0;
}

int cmd_train(const GlobalArgs& g, int phase, const std::string& resume) {
  auto [cfg, resolved] = resolve(g);
  auto split = load_split(cfg);
  Trainer trainer(cfg, std::move(split), cfg.out_dir);
  write_manifest(cfg.out_dir, "train", resolved,
                 {{"phase", phase},
                  {"resume", resume},
                  {"reference_index", trainer.reference().index},
                  {"reference_checksum", trainer.reference().checksum},
                  {"reference_path", trainer.reference().source_path}});

  if (!resume.empty()) trainer.restore(load_checkpoint_file(resume));

  if (phase == 1 || phase == 0) {
    auto records = trainer.train_phase1();
    auto ckpt = trainer.make_checkpoint();
    ckpt.step = records.empty() ? 0 : records.back().step;
    save_checkpoint_file(cfg.out_dir + "/phase1.ckpt", ckpt);
    std::cout << "phase 1 done: " << records.size() << " steps, final total "
              << (records.empty() ? 0.0 : records.back().losses.total) << "\n";
  }
  if (phase == 2 || phase == 0) {
    if (phase == 2 && resume.empty() && trainer.phase() < 1)
      throw std::runtime_error("--phase 2 requires --resume with a phase-1 checkpoint");
    auto records = trainer.train_phase2();
    auto ckpt = trainer.make_checkpoint();
    ckpt.step = records.empty() ? 0 : records.back().step;
    save_checkpoint_file(cfg.out_dir + "/phase2.ckpt", ckpt);
    std::cout << "phase 2 done: " << records.size() << " steps, final total "
              << (records.empty() ? 0.0 : records.back().losses.total) << "\n";
  }
  return 0;
}

int cmd_infer(const GlobalArgs& g, const std::string& ckpt_path, const std::string& image_path,
              const std::string& seg_head, const std::string& dump_features) {
  auto [cli_cfg, resolved] = resolve(g);
  auto ckpt = load_checkpoint_file(ckpt_path);
  if (ckpt.phase < 2)
    throw std::runtime_error("inference requires a phase-2 checkpoint (got phase " +
                             std::to_string(ckpt.phase) + ")");
  RunConfig cfg = config_from_json(ckpt.config);
  RbaeModel<float> model(cfg);
  model.load_named(ckpt.weights);
  InferencePipeline pipeline(model, ckpt.reference_image);

  Tensor<float> image = data::load_image_rgb(image_path, cfg.resolution);
  auto result = pipeline.run(image, seg_head);

  fs::create_directories(cli_cfg.out_dir);
  std::string stem = fs::path(image_path).stem().string();
  data::save_image_png(cli_cfg.out_dir + "/" + stem + "_recon.png", result.recon);
  data::save_map_png16(cli_cfg.out_dir + "/" + stem + "_amap.png", result.maps.am_final);
  data::save_overlay_png(cli_cfg.out_dir + "/" + stem + "_overlay.png", image,
                         result.maps.am_final);
  if (!dump_features.empty()) pipeline.dump_repair_features(image, dump_features, stem);
  std::cout << "image_score " << result.score << "\n";
  write_manifest(cli_cfg.out_dir, "infer", resolved,
                 {{"checkpoint", ckpt_path}, {"image", image_path}, {"score", result.score}});
  return 0;
}

int cmd_eval(const GlobalArgs& g, const std::string& ckpt_path, const std::string& from_maps,
             const std::string& seg_head) {
  auto [cli_cfg, resolved] = resolve(g);

  if (!from_maps.empty()) {
    auto split = load_split(cli_cfg);
    auto result = evaluate_saved_maps(from_maps, split, cli_cfg);
    write_eval_outputs(cli_cfg.out_dir, result);
    write_manifest(cli_cfg.out_dir, "eval", resolved, {{"from_maps", from_maps}});
    return 0;
  }

  auto ckpt = load_checkpoint_file(ckpt_path);
  if (ckpt.phase < 2) throw std::runtime_error("eval requires a phase-2 checkpoint");
  // checkpoint config is the base; command-line overrides still win
  RunConfig cfg = apply_overrides(ckpt.config, g.overrides).cfg;
  auto split = load_split(cfg);

  // reference drift check against the live dataset
  auto live_ref = data::select_reference(split, ckpt.reference.index);
  if (live_ref.checksum != ckpt.reference.checksum)
    throw std::runtime_error(
        "reference checksum mismatch between checkpoint and dataset; refusing to run");

  RbaeModel<float> model(cfg);
  model.load_named(ckpt.weights);
  InferencePipeline pipeline(model, ckpt.reference_image);

  EvalOptions opts;
  opts.seg_head = seg_head;
  opts.maps_dir = cfg.out_dir + "/maps";
  opts.overlays_dir = cfg.out_dir + "/overlays";
  auto result = evaluate_split(pipeline, split, cfg, opts);
  write_eval_outputs(cfg.out_dir, result);
  write_manifest(cfg.out_dir, "eval", resolved,
                 {{"checkpoint", ckpt_path}, {"seg_head", seg_head}});
  return 0;
}

int cmd_ablate(const GlobalArgs& g) {
  auto [base_cfg, resolved] = resolve(g);
  struct Variant {
    std::string name;
    std::vector<std::string> extra;
    std::string seg_head = "msfdm";
  };
  std::vector<Variant> variants = {
      {"full", {}},
      {"no_pixel_dis", {"weights.pixel_dis=0"}},
      {"no_rbam", {"disable_rbam=true"}},
      {"pixel_gap", {}, "pixel-gap"},  // reuses the full model with the baseline head
  };

  std::vector<evalkit::CategoryResult> rows;
  std::string full_ckpt;
  for (const auto& variant : variants) {
    GlobalArgs vg = g;
    vg.overrides.insert(vg.overrides.end(), variant.extra.begin(), variant.extra.end());
    auto [cfg, vresolved] = resolve(vg);
    cfg.out_dir = base_cfg.out_dir + "/" + variant.name;

    auto split = load_split(cfg);
    std::string ckpt_path = cfg.out_dir + "/phase2.ckpt";
    if (variant.name == "pixel_gap") {
      ckpt_path = full_ckpt;  // same checkpoint, different head
    } else {
      Trainer trainer(cfg, split, cfg.out_dir);
      trainer.train_phase1();
      trainer.train_phase2();
      auto ckpt = trainer.make_checkpoint();
      save_checkpoint_file(ckpt_path, ckpt);
      if (variant.name == "full") full_ckpt = ckpt_path;
    }

    auto ckpt = load_checkpoint_file(ckpt_path);
    RunConfig eval_cfg = config_from_json(ckpt.config);
    eval_cfg.out_dir = cfg.out_dir;
    RbaeModel<float> model(eval_cfg);
    model.load_named(ckpt.weights);
    InferencePipeline pipeline(model, ckpt.reference_image);
    EvalOptions opts;
    opts.seg_head = variant.seg_head;
    auto result = evaluate_split(pipeline, split, eval_cfg, opts);
    result.category.category = variant.name;
    fs::create_directories(cfg.out_dir);
    std::ofstream(cfg.out_dir + "/report.json")
        << evalkit::report_records({result.category}) << "\n";
    rows.push_back(result.category);
  }

  auto table = evalkit::render_report(rows);
  std::ofstream(base_cfg.out_dir + "/ablation_report.txt") << table;
  std::cout << table;
  write_manifest(base_cfg.out_dir, "ablate", resolved, {{"variants", variants.size()}});
  return 0;
}

int cmd_report(const std::vector<std::string>& record_files, const std::string& out) {
  std::vector<evalkit::CategoryResult> rows;
  for (const auto& path : record_files) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read records: " + path);
    nlohmann::json j = nlohmann::json::parse(f);
    for (const auto& row : j) {
      if (row.value("category", "") == "Average") continue;
      evalkit::CategoryResult r;
      r.category = row.at("category").get<std::string>();
      r.image_auc = row.at("image_rocauc").get<double>();
      r.pixel_auc = row.at("pixel_rocauc").get<double>();
      r.pro = row.at("pro_auc").get<double>();
      r.pixel_degenerate = row.value("pixel_degenerate", false);
      rows.push_back(r);
    }
  }
  auto table = evalkit::render_report(rows);
  std::cout << table;
  if (!out.empty()) std::ofstream(out) << table;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"reference-based autoencoder for textured-surface defect detection"};
  app.require_subcommand(1);
  app.fallthrough();  // global options may follow the subcommand

  GlobalArgs g;
  app.add_option("--config", g.config_path, "run config file (JSON)");
  app.add_option("-D,--set", g.overrides, "config override, dotted.key=value")->take_all();
  app.add_option("--device", g.device, "compute device (cpu)");
  std::optional<unsigned> seed;
  app.add_option("--seed", seed, "override config seed");
  std::optional<std::string> category;
  app.add_option("--category", category, "override dataset category");
  bool deterministic = false;
  app.add_flag("--deterministic", deterministic, "force deterministic mode");

  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic texture corpus");
  bool force = false;
  int triptychs = 0;
  synth_cmd->add_flag("--force", force, "overwrite a non-empty output directory");
  synth_cmd->add_option("--dump-triptychs", triptychs, "also write N audit triptychs");

  auto* train_cmd = app.add_subcommand("train", "run the two-phase training schedule");
  int phase = 0;
  std::string resume;
  train_cmd->add_option("--phase", phase, "1, 2, or 0 for both (default)");
  train_cmd->add_option("--resume", resume, "checkpoint to restore before training");

  auto* infer_cmd = app.add_subcommand("infer", "score one image with a trained model");
  std::string ckpt_path, image_path, seg_head = "msfdm", dump_features;
  infer_cmd->add_option("--checkpoint", ckpt_path, "phase-2 checkpoint")->required();
  infer_cmd->add_option("--image", image_path, "input image")->required();
  infer_cmd->add_option("--seg-head", seg_head, "msfdm | pixel-gap");
  infer_cmd->add_option("--dump-features", dump_features, "write repair-feature PNGs here");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  std::string eval_ckpt, from_maps, eval_head = "msfdm";
  eval_cmd->add_option("--checkpoint", eval_ckpt, "phase-2 checkpoint");
  eval_cmd->add_option("--from-maps", from_maps, "rescore previously saved maps (no model)");
  eval_cmd->add_option("--seg-head", eval_head, "msfdm | pixel-gap");

  auto* ablate_cmd = app.add_subcommand("ablate", "train and evaluate the ablation variants");

  auto* report_cmd = app.add_subcommand("report", "merge metric records into a table");
  std::vector<std::string> record_files;
  std::string report_out;
  report_cmd->add_option("--records", record_files, "report.json files")->required();
  report_cmd->add_option("--out", report_out, "also write the table here");

  CLI11_PARSE(app, argc, argv);

  if (seed) g.overrides.push_back("seed=" + std::to_string(*seed));
  if (category) g.overrides.push_back("category=" + *category);
  if (deterministic) g.overrides.push_back("deterministic=true");

  try {
    if (synth_cmd->parsed()) return cmd_synth(g, force, triptychs);
    if (train_cmd->parsed()) return cmd_train(g, phase, resume);
    if (infer_cmd->parsed()) return cmd_infer(g, ckpt_path, image_path, seg_head, dump_features);
    if (eval_cmd->parsed()) {
      if (from_maps.empty() && eval_ckpt.empty())
        throw std::runtime_error("eval needs --checkpoint or --from-maps");
      return cmd_eval(g, eval_ckpt, from_maps, eval_head);
    }
    if (ablate_cmd->parsed()) return cmd_ablate(g);
    if (report_cmd->parsed()) return cmd_report(record_files, report_out);
  } catch (const InternalError& e) {
    std::cerr << "internal invariant failure: " << e.what() << "\n";
    return 2;
  } catch (const TrainAbort& e) {
    std::cerr << "training aborted: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
