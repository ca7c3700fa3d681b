#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "rbae/trainer.hpp"

using namespace rbae;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_config() {
  RunConfig cfg;
  cfg.resolution = 32;
  cfg.widths = {4, 4, 8, 8, 8};
  cfg.k_values = {{{1, 2}, {1, 2}, {1, 1}}};  // level-5 maps are 1x1 at this scale
  cfg.ffm_compress = 8;
  cfg.batch_size = 2;
  cfg.epochs.phase1 = 4;
  cfg.epochs.phase2 = 4;
  cfg.seed = 3;
  cfg.synth = {};
  return cfg;
}

data::DatasetSplit tiny_split() {
  data::SyntheticSpec spec;
  spec.train_count = 4;
  spec.test_normal = 2;
  spec.test_defect = 2;
  spec.resolution = 32;
  return data::generate_synthetic_corpus(spec, 21);
}

std::vector<char> read_bytes(const std::string& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("phase-1 steps never touch RBAM or MSFDM parameters") {
  Trainer trainer(tiny_config(), tiny_split());
  auto rbam_before = params_digest(trainer.model().rbam_params());
  auto msfdm_before = params_digest(trainer.model().msfdm_params());
  auto enc_before = params_digest(trainer.model().encoder_params());

  auto records = trainer.train_phase1(3);
  CHECK(records.size() == 3);
  CHECK(params_digest(trainer.model().rbam_params()) == rbam_before);
  CHECK(params_digest(trainer.model().msfdm_params()) == msfdm_before);
  CHECK(params_digest(trainer.model().encoder_params()) != enc_before);  // it did train
  for (const auto& r : records) {
    CHECK(r.losses.rec.has_value());
    CHECK(r.losses.per.has_value());
    CHECK(r.losses.pixel_dis.has_value());
    CHECK(std::isfinite(r.losses.total));
  }
}

TEST_CASE("deterministic replay: identical 10-step loss traces") {
  auto run = [&] {
    Trainer trainer(tiny_config(), tiny_split());
    return trainer.train_phase1(10);
  };
  auto a = run(), b = run();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].losses.total == b[i].losses.total);
    CHECK(*a[i].losses.rec == *b[i].losses.rec);
    CHECK(*a[i].losses.pixel_dis == *b[i].losses.pixel_dis);
  }
}

TEST_CASE("phase 2: encoder frozen, reference encoded exactly once") {
  Trainer trainer(tiny_config(), tiny_split());
  trainer.train_phase1(2);

  auto enc_digest = params_digest(trainer.model().encoder_params());
  auto records = trainer.train_phase2(4);
  CHECK(records.size() == 4);
  CHECK(params_digest(trainer.model().encoder_params()) == enc_digest);
  CHECK(trainer.reference_encode_count() == 1);
  for (const auto& r : records) {
    CHECK(r.losses.fea_rep.has_value());
    CHECK(r.losses.seg.has_value());
    CHECK(std::isfinite(r.losses.total));
  }

  // decoder and rbam did move
  CHECK(trainer.phase() == 2);
}

TEST_CASE("phase 2 without phase 1 is rejected") {
  Trainer trainer(tiny_config(), tiny_split());
  CHECK_THROWS_WITH_AS(trainer.train_phase2(1), doctest::Contains("phase-1"), std::runtime_error);
}

TEST_CASE("checkpoint round-trip is byte-stable and restores the phase-2 start state") {
  auto dir = fs::temp_directory_path() / "rbae_ckpt_test";
  fs::remove_all(dir);
  fs::create_directories(dir);

  Trainer trainer(tiny_config(), tiny_split());
  trainer.train_phase1(4);
  auto ckpt = trainer.make_checkpoint();
  std::string p1 = (dir / "a.ckpt").string(), p2 = (dir / "b.ckpt").string();
  save_checkpoint_file(p1, ckpt);
  save_checkpoint_file(p2, load_checkpoint_file(p1));
  CHECK(read_bytes(p1) == read_bytes(p2));

  // resuming from the checkpoint reproduces the phase-2 trajectory
  auto direct = trainer.train_phase2(3);

  Trainer resumed(tiny_config(), tiny_split());
  resumed.restore(load_checkpoint_file(p1));
  auto replayed = resumed.train_phase2(3);
  REQUIRE(direct.size() == replayed.size());
  for (size_t i = 0; i < direct.size(); ++i)
    CHECK(direct[i].losses.total == replayed[i].losses.total);

  fs::remove_all(dir);
}

TEST_CASE("restore refuses on reference drift") {
  Trainer trainer(tiny_config(), tiny_split());
  trainer.train_phase1(1);
  auto ckpt = trainer.make_checkpoint();

  data::SyntheticSpec other;
  other.train_count = 4;
  other.test_normal = 2;
  other.test_defect = 2;
  other.resolution = 32;
  auto drifted = data::generate_synthetic_corpus(other, 99);  // different pixels
  Trainer fresh(tiny_config(), drifted);
  CHECK_THROWS_WITH_AS(fresh.restore(ckpt), doctest::Contains("checksum"), std::runtime_error);
}

TEST_CASE("non-finite loss aborts naming the offending term") {
  auto dir = fs::temp_directory_path() / "rbae_abort_test";
  fs::remove_all(dir);
  Trainer trainer(tiny_config(), tiny_split(), (dir / "run").string());
  // poison one encoder weight
  trainer.model().encoder_params()[0].second->val.v[0] =
      std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(trainer.train_phase1(1), TrainAbort);
  CHECK(fs::exists(dir / "run" / "abort_rng_state.txt"));
  fs::remove_all(dir);
}

TEST_CASE("inference: deterministic, correct shapes, saved maps rescore identically") {
  auto cfg = tiny_config();
  auto split = tiny_split();
  Trainer trainer(cfg, split);
  trainer.train_phase1(2);
  trainer.train_phase2(2);

  InferencePipeline pipeline(trainer.model(), trainer.reference_image());
  const auto& img = split.test_samples[0].pixels;
  auto a = pipeline.run(img);
  auto b = pipeline.run(img);
  CHECK(a.recon.c == 3);
  CHECK(a.recon.h == 32);
  CHECK(a.maps.am_final.c == 1);
  CHECK(a.maps.am_final.h == 32);
  CHECK(max_abs_diff(a.maps.am_final, b.maps.am_final) == 0.0);
  CHECK(a.score == b.score);
  CHECK(a.maps.am_final.min() >= 0.0f);
  CHECK(a.maps.am_final.max() <= 1.0f);

  // eval via the pipeline, then rescore the saved maps without the model
  auto dir = fs::temp_directory_path() / "rbae_eval_maps";
  fs::remove_all(dir);
  fs::create_directories(dir);
  EvalOptions opts;
  opts.maps_dir = dir.string();
  auto live = evaluate_split(pipeline, split, cfg, opts);
  auto saved = evaluate_saved_maps(dir.string(), split, cfg);
  CHECK(live.category.image_auc == saved.category.image_auc);
  CHECK(live.category.pixel_auc == saved.category.pixel_auc);
  CHECK(live.category.pro == saved.category.pro);
  fs::remove_all(dir);

  // pixel-gap head produces a different map than the discriminator head
  auto gap = pipeline.run(img, "pixel-gap");
  CHECK(max_abs_diff(gap.maps.am_final, a.maps.am_final) > 0.0);
  CHECK_THROWS(pipeline.run(img, "nonsense"));
}

TEST_CASE("config: paper defaults, file/env/override resolution") {
  RunConfig def;
  CHECK(def.optimizer.lr == 1e-4);
  CHECK(def.optimizer.weight_decay == 1e-5);
  CHECK(def.epochs.phase1 == 400);
  CHECK(def.epochs.phase2 == 200);
  CHECK(def.weights.rec == 100.0);
  CHECK(def.weights.per == 1.0);
  CHECK(def.weights.pixel_dis == 1.0);
  CHECK(def.weights.fea_rep == 1.0);
  CHECK(def.weights.seg == 1.0);
  CHECK(def.lambda == std::array<double, 3>{0.2, 0.2, 0.6});
  CHECK(def.ffm_kernel == 5);
  CHECK(def.k_values[0] == std::array<int, 2>{2, 4});
  CHECK(def.resolution == 256);
  CHECK(def.focal.gamma == 2.0);
  CHECK(def.focal.alpha == 0.25);
  CHECK(def.eval.fpr_cap == 0.3);

  // round trip
  auto j = to_json(def);
  auto back = config_from_json(j);
  CHECK(to_json(back) == j);

  // file < env < overrides
  auto dir = fs::temp_directory_path() / "rbae_cfg_test";
  fs::remove_all(dir);
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "cfg.json");
    f << R"({"batch_size": 4, "optimizer": {"lr": 0.5}})";
  }
  setenv("RBAE_OPTIMIZER_LR", "0.25", 1);
  auto resolved = resolve_config((dir / "cfg.json").string(), {"seed=9"});
  unsetenv("RBAE_OPTIMIZER_LR");
  CHECK(resolved.cfg.batch_size == 4);        // file
  CHECK(resolved.cfg.optimizer.lr == 0.25);   // env beats file
  CHECK(resolved.cfg.seed == 9);              // override
  CHECK(resolved.resolved["seed"] == 9);      // echoed

  CHECK_THROWS_WITH_AS(resolve_config("", {"no_such_key=1"}), doctest::Contains("unknown"),
                       std::runtime_error);
  fs::remove_all(dir);
}

TEST_CASE("model validation: bad K or resolution fails at construction") {
  auto cfg = tiny_config();
  cfg.k_values = {{{3, 4}, {1, 2}, {1, 1}}};  // 3 does not divide the level-3 size 4
  CHECK_THROWS(RbaeModel<float>(cfg));

  auto cfg2 = tiny_config();
  cfg2.resolution = 48;
  CHECK_THROWS(RbaeModel<float>(cfg2));

  auto cfg3 = tiny_config();
  cfg3.ffm_kernel = 2;  // must exceed the largest K
  cfg3.k_values = {{{1, 2}, {1, 2}, {1, 1}}};
  CHECK_THROWS(RbaeModel<float>(cfg3));
}

TEST_CASE("pretrained perceptual contract: missing weights are fatal with a hint") {
  auto cfg = tiny_config();
  cfg.perceptual.provenance = "pretrained-vgg16";
  CHECK_THROWS_WITH_AS(Trainer(cfg, tiny_split()), doctest::Contains("weights_path"),
                       std::runtime_error);
}
