#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "rbae/data_ingest.hpp"

using namespace rbae;
using namespace rbae::data;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<char> read_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

bool trees_byte_equal(const fs::path& a, const fs::path& b) {
  std::vector<fs::path> fa, fb;
  for (auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) fa.push_back(fs::relative(e.path(), a));
  for (auto& e : fs::recursive_directory_iterator(b))
    if (e.is_regular_file()) fb.push_back(fs::relative(e.path(), b));
  std::sort(fa.begin(), fa.end());
  std::sort(fb.begin(), fb.end());
  if (fa != fb) return false;
  for (const auto& rel : fa)
    if (read_bytes(a / rel) != read_bytes(b / rel)) return false;
  return true;
}

SyntheticSpec small_spec() {
  SyntheticSpec spec;
  spec.train_count = 6;
  spec.test_normal = 3;
  spec.test_defect = 3;
  spec.resolution = 64;
  return spec;
}

}  // namespace

TEST_CASE("synthetic corpus: deterministic for a fixed seed, byte-equal trees") {
  TempDir a("rbae_corpus_a"), b("rbae_corpus_b");
  auto split1 = generate_synthetic_corpus(small_spec(), 7);
  auto split2 = generate_synthetic_corpus(small_spec(), 7);
  write_corpus(split1, a.path.string());
  write_corpus(split2, b.path.string());
  CHECK(trees_byte_equal(a.path, b.path));

  TempDir c("rbae_corpus_c");
  write_corpus(generate_synthetic_corpus(small_spec(), 8), c.path.string());
  CHECK(!trees_byte_equal(a.path, c.path));  // distinct seeds differ
}

TEST_CASE("synthetic corpus: structure and exact masks") {
  auto split = generate_synthetic_corpus(small_spec(), 11);
  CHECK(split.train_normals.size() == 6);
  CHECK(split.test_samples.size() == 6);
  for (const auto& s : split.train_normals) CHECK(!s.defective);
  int defect_count = 0;
  for (const auto& s : split.test_samples)
    if (s.defective) {
      ++defect_count;
      REQUIRE(s.gt_mask.has_value());
      // generator owns the mask: defect pixels differ from mask support nowhere
      double area = s.gt_mask->sum();
      CHECK(area > 0);
      for (float v : s.gt_mask->v) CHECK((v == 0.0f || v == 1.0f));
    }
  CHECK(defect_count == 3);
}

TEST_CASE("corpus round-trips through the MVTec loader") {
  TempDir dir("rbae_corpus_rt");
  auto split = generate_synthetic_corpus(small_spec(), 13);
  write_corpus(split, dir.path.string());

  auto loaded = load_mvtec_category(dir.path.string(), split.category, 64);
  CHECK(loaded.report.warnings.empty());
  CHECK(loaded.train_normals.size() == split.train_normals.size());
  CHECK(loaded.test_samples.size() == split.test_samples.size());

  // loading is idempotent
  auto loaded2 = load_mvtec_category(dir.path.string(), split.category, 64);
  for (size_t i = 0; i < loaded.train_normals.size(); ++i)
    CHECK(max_abs_diff(loaded.train_normals[i].pixels, loaded2.train_normals[i].pixels) == 0.0);

  // pixels quantize to 8 bits on disk; loaded values match to 1/255
  CHECK(max_abs_diff(loaded.train_normals[0].pixels, split.train_normals[0].pixels) <= 0.5 / 255);

  // masks stay binary and identical through the round trip
  int defect_i = 0;
  for (const auto& s : loaded.test_samples) {
    if (!s.defective) continue;
    REQUIRE(s.gt_mask.has_value());
    for (float v : s.gt_mask->v) CHECK((v == 0.0f || v == 1.0f));
    // find the matching in-memory defect sample (writer preserves order)
    while (!split.test_samples[defect_i].defective) ++defect_i;
    CHECK(max_abs_diff(*s.gt_mask, *split.test_samples[defect_i].gt_mask) == 0.0);
    ++defect_i;
  }
}

TEST_CASE("writer refuses a non-empty output without overwrite") {
  TempDir dir("rbae_corpus_force");
  auto split = generate_synthetic_corpus(small_spec(), 17);
  write_corpus(split, dir.path.string());
  CHECK_THROWS_WITH_AS(write_corpus(split, dir.path.string()), doctest::Contains("--force"),
                       std::runtime_error);
  CHECK_NOTHROW(write_corpus(split, dir.path.string(), /*overwrite=*/true));
}

TEST_CASE("loader: missing directory is fatal, empty test dir is fine") {
  CHECK_THROWS(load_mvtec_category("/nonexistent/root", "x", 64));

  TempDir dir("rbae_train_only");
  auto split = generate_synthetic_corpus(small_spec(), 19);
  split.test_samples.clear();
  write_corpus(split, dir.path.string());
  auto loaded = load_mvtec_category(dir.path.string(), split.category, 64);
  CHECK(loaded.test_samples.empty());
  CHECK(loaded.train_normals.size() == 6);
}

TEST_CASE("loader: defective image without mask is flagged, not fatal") {
  TempDir dir("rbae_missing_mask");
  auto split = generate_synthetic_corpus(small_spec(), 23);
  write_corpus(split, dir.path.string());
  fs::remove(dir.path / split.category / "ground_truth" / "defect" / "000_mask.png");

  auto loaded = load_mvtec_category(dir.path.string(), split.category, 64);
  CHECK(loaded.report.warnings.size() == 1);
  int missing = 0;
  for (const auto& s : loaded.test_samples)
    if (s.defective && !s.gt_mask) ++missing;
  CHECK(missing == 1);
}

TEST_CASE("grayscale images are replicated to three channels") {
  TempDir dir("rbae_gray");
  // write an 8-bit grayscale png through the mask writer (single channel)
  Tensor<float> gray(1, 32, 32);
  for (int i = 0; i < gray.size(); ++i) gray.v[i] = (i % 7) ? 1.0f : 0.0f;
  save_mask_png((dir.path / "g.png").string(), gray);
  auto img = load_image_rgb((dir.path / "g.png").string(), 32);
  CHECK(img.c == 3);
  for (int i = 0; i < 32 * 32; ++i) {
    CHECK(img.channel(0)[i] == img.channel(1)[i]);
    CHECK(img.channel(1)[i] == img.channel(2)[i]);
  }
}

TEST_CASE("select_reference: stable checksum, ordering, bounds") {
  auto split = generate_synthetic_corpus(small_spec(), 29);
  auto a = select_reference(split, 0);
  auto b = select_reference(split, 0);
  CHECK(a.checksum == b.checksum);
  CHECK(a.source_path == split.train_normals[0].source_path);

  auto other = select_reference(split, 1);
  CHECK(other.checksum != a.checksum);

  CHECK_THROWS(select_reference(split, -1));
  CHECK_THROWS(select_reference(split, 6));
}

TEST_CASE("16-bit map round trip is exact on the quantized grid") {
  TempDir dir("rbae_map16");
  std::mt19937 rng(31);
  Tensor<float> map(1, 16, 16);
  std::uniform_real_distribution<float> uni(0.0f, 1.0f);
  for (auto& v : map.v) v = uni(rng);
  auto q = quantize_map_u16(map);
  save_map_png16((dir.path / "m.png").string(), map);
  auto back = load_map_png16((dir.path / "m.png").string());
  CHECK(max_abs_diff(q, back) == 0.0);
}
