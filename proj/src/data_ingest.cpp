#include "rbae/data_ingest.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <filesystem>
#include <random>

#include "rbae/defect_synth.hpp"
#include "rbae/noise.hpp"

namespace fs = std::filesystem;

namespace rbae::data {

namespace {

Tensor<float> mat_to_tensor_rgb(const cv::Mat& bgr) {
  Tensor<float> out(3, bgr.rows, bgr.cols);
  for (int y = 0; y < bgr.rows; ++y)
    for (int x = 0; x < bgr.cols; ++x) {
      const cv::Vec3b& px = bgr.at<cv::Vec3b>(y, x);
      out.at(0, y, x) = px[2] / 255.0f;
      out.at(1, y, x) = px[1] / 255.0f;
      out.at(2, y, x) = px[0] / 255.0f;
    }
  return out;
}

cv::Mat tensor_to_mat_bgr(const Tensor<float>& img) {
  cv::Mat out(img.h, img.w, CV_8UC3);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      auto q = [&](int c) {
        return static_cast<uchar>(std::lround(std::clamp(img.at(c, y, x), 0.0f, 1.0f) * 255.0f));
      };
      out.at<cv::Vec3b>(y, x) = cv::Vec3b(q(2), q(1), q(0));
    }
  return out;
}

std::vector<std::string> sorted_files(const fs::path& dir) {
  std::vector<std::string> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file()) out.push_back(e.path().string());
  std::sort(out.begin(), out.end());
  return out;
}

void ensure_parent(const std::string& path) {
  fs::create_directories(fs::path(path).parent_path());
}

}  // namespace

Tensor<float> load_image_rgb(const std::string& path, int resolution) {
  cv::Mat img = cv::imread(path, cv::IMREAD_COLOR);  // grayscale gets replicated to 3 channels
  if (img.empty()) throw std::runtime_error("failed to read image: " + path);
  if (img.rows != resolution || img.cols != resolution)
    cv::resize(img, img, cv::Size(resolution, resolution), 0, 0, cv::INTER_LINEAR);
  return mat_to_tensor_rgb(img);
}

Tensor<float> load_mask_png(const std::string& path, int resolution) {
  cv::Mat m = cv::imread(path, cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw std::runtime_error("failed to read mask: " + path);
  if (m.rows != resolution || m.cols != resolution)
    cv::resize(m, m, cv::Size(resolution, resolution), 0, 0, cv::INTER_NEAREST);
  Tensor<float> out(1, resolution, resolution);
  for (int y = 0; y < resolution; ++y)
    for (int x = 0; x < resolution; ++x)
      out.at(0, y, x) = m.at<uchar>(y, x) > 0 ? 1.0f : 0.0f;
  return out;
}

std::vector<Tensor<float>> load_image_directory(const std::string& dir, int resolution) {
  std::vector<Tensor<float>> out;
  for (const auto& f : sorted_files(dir)) {
    cv::Mat img = cv::imread(f, cv::IMREAD_COLOR);
    if (img.empty()) continue;  // skip non-images quietly
    if (img.rows != resolution || img.cols != resolution)
      cv::resize(img, img, cv::Size(resolution, resolution), 0, 0, cv::INTER_LINEAR);
    out.push_back(mat_to_tensor_rgb(img));
  }
  return out;
}

void save_image_png(const std::string& path, const Tensor<float>& img) {
  ensure_parent(path);
  if (!cv::imwrite(path, tensor_to_mat_bgr(img)))
    throw std::runtime_error("failed to write image: " + path);
}

void save_mask_png(const std::string& path, const Tensor<float>& mask) {
  ensure_parent(path);
  cv::Mat m(mask.h, mask.w, CV_8UC1);
  for (int y = 0; y < mask.h; ++y)
    for (int x = 0; x < mask.w; ++x) m.at<uchar>(y, x) = mask.at(0, y, x) > 0.5f ? 255 : 0;
  if (!cv::imwrite(path, m)) throw std::runtime_error("failed to write mask: " + path);
}

void save_map_png16(const std::string& path, const Tensor<float>& map) {
  ensure_parent(path);
  cv::Mat m(map.h, map.w, CV_16UC1);
  for (int y = 0; y < map.h; ++y)
    for (int x = 0; x < map.w; ++x)
      m.at<uint16_t>(y, x) =
          static_cast<uint16_t>(std::lround(std::clamp(map.at(0, y, x), 0.0f, 1.0f) * 65535.0f));
  if (!cv::imwrite(path, m)) throw std::runtime_error("failed to write map: " + path);
}

void save_gray_png(const std::string& path, const Tensor<float>& plane) {
  ensure_parent(path);
  cv::Mat m(plane.h, plane.w, CV_8UC1);
  for (int y = 0; y < plane.h; ++y)
    for (int x = 0; x < plane.w; ++x)
      m.at<uchar>(y, x) =
          static_cast<uchar>(std::lround(std::clamp(plane.at(0, y, x), 0.0f, 1.0f) * 255.0f));
  if (!cv::imwrite(path, m)) throw std::runtime_error("failed to write image: " + path);
}

Tensor<float> load_map_png16(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_UNCHANGED);
  if (m.empty() || m.type() != CV_16UC1)
    throw std::runtime_error("failed to read 16-bit map: " + path);
  Tensor<float> out(1, m.rows, m.cols);
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) out.at(0, y, x) = m.at<uint16_t>(y, x) / 65535.0f;
  return out;
}

Tensor<float> quantize_map_u16(const Tensor<float>& map) {
  Tensor<float> out = map;
  for (auto& v : out.v)
    v = static_cast<float>(std::lround(std::clamp(v, 0.0f, 1.0f) * 65535.0f)) / 65535.0f;
  return out;
}

void save_overlay_png(const std::string& path, const Tensor<float>& img,
                      const Tensor<float>& map) {
  ensure_parent(path);
  cv::Mat heat(map.h, map.w, CV_8UC1);
  for (int y = 0; y < map.h; ++y)
    for (int x = 0; x < map.w; ++x)
      heat.at<uchar>(y, x) =
          static_cast<uchar>(std::lround(std::clamp(map.at(0, y, x), 0.0f, 1.0f) * 255.0f));
  cv::Mat colored;
  cv::applyColorMap(heat, colored, cv::COLORMAP_JET);
  cv::Mat base = tensor_to_mat_bgr(img);
  if (base.size() != colored.size()) cv::resize(colored, colored, base.size());
  cv::Mat blended;
  cv::addWeighted(base, 0.6, colored, 0.4, 0.0, blended);
  if (!cv::imwrite(path, blended)) throw std::runtime_error("failed to write overlay: " + path);
}

void save_triptych_png(const std::string& path, const Tensor<float>& i_o,
                       const Tensor<float>& i_ad, const Tensor<float>& i_m) {
  ensure_parent(path);
  cv::Mat a = tensor_to_mat_bgr(i_o), b = tensor_to_mat_bgr(i_ad);
  cv::Mat m(i_m.h, i_m.w, CV_8UC3);
  for (int y = 0; y < i_m.h; ++y)
    for (int x = 0; x < i_m.w; ++x) {
      uchar v = i_m.at(0, y, x) > 0.5f ? 255 : 0;
      m.at<cv::Vec3b>(y, x) = cv::Vec3b(v, v, v);
    }
  cv::Mat out;
  cv::hconcat(std::vector<cv::Mat>{a, b, m}, out);
  if (!cv::imwrite(path, out)) throw std::runtime_error("failed to write triptych: " + path);
}

// ---------------------------------------------------------------------------
// MVTec-style loading
// ---------------------------------------------------------------------------

DatasetSplit load_mvtec_category(const std::string& root, const std::string& category,
                                 int resolution) {
  fs::path base = fs::path(root) / category;
  if (!fs::is_directory(base))
    throw std::runtime_error("dataset category directory missing: " + base.string());

  DatasetSplit split;
  split.category = category;

  fs::path train_good = base / "train" / "good";
  if (!fs::is_directory(train_good))
    throw std::runtime_error("train/good directory missing under " + base.string());
  for (const auto& f : sorted_files(train_good)) {
    ImageSample s;
    s.pixels = load_image_rgb(f, resolution);
    s.source_path = f;
    split.train_normals.push_back(std::move(s));
  }

  fs::path test_dir = base / "test";
  if (fs::is_directory(test_dir)) {
    std::vector<std::string> types;
    for (const auto& e : fs::directory_iterator(test_dir))
      if (e.is_directory()) types.push_back(e.path().filename().string());
    std::sort(types.begin(), types.end());
    for (const auto& type : types) {
      bool defective = type != "good";
      for (const auto& f : sorted_files(test_dir / type)) {
        ImageSample s;
        s.pixels = load_image_rgb(f, resolution);
        s.source_path = f;
        s.defective = defective;
        if (defective) {
          fs::path stem = fs::path(f).stem();
          fs::path mask_path = base / "ground_truth" / type / (stem.string() + "_mask.png");
          if (fs::exists(mask_path)) {
            s.gt_mask = load_mask_png(mask_path.string(), resolution);
          } else {
            split.report.warnings.push_back("defective test image without ground-truth mask: " +
                                            f);
          }
        }
        split.test_samples.push_back(std::move(s));
      }
    }
  }
  return split;
}

// ---------------------------------------------------------------------------
// synthetic corpus
// ---------------------------------------------------------------------------

namespace {

Tensor<float> make_texture(const std::string& family, int res, std::mt19937& rng,
                           double noise_amp) {
  std::uniform_real_distribution<float> uni(0.0f, 1.0f);
  Tensor<float> img(3, res, res);
  if (family == "stripes") {
    float phase = uni(rng);
    float freq = 5.0f;
    Tensor<float> jitter = value_noise(res, res, rng, 2, 4);
    for (int y = 0; y < res; ++y)
      for (int x = 0; x < res; ++x) {
        float v = 0.5f + 0.3f * std::sin(2.0f * static_cast<float>(M_PI) *
                                         (freq * y / res + phase));
        v += static_cast<float>(noise_amp) * (jitter.at(0, y, x) - 0.5f);
        for (int c = 0; c < 3; ++c) img.at(c, y, x) = std::clamp(v, 0.0f, 1.0f);
      }
  } else if (family == "checkerboard") {
    int period = std::max(4, res / 8);
    int oy = static_cast<int>(uni(rng) * period), ox = static_cast<int>(uni(rng) * period);
    Tensor<float> jitter = value_noise(res, res, rng, 2, 4);
    for (int y = 0; y < res; ++y)
      for (int x = 0; x < res; ++x) {
        bool odd = (((y + oy) / (period / 2)) + ((x + ox) / (period / 2))) % 2;
        float v = odd ? 0.65f : 0.35f;
        v += static_cast<float>(noise_amp) * (jitter.at(0, y, x) - 0.5f);
        for (int c = 0; c < 3; ++c) img.at(c, y, x) = std::clamp(v, 0.0f, 1.0f);
      }
  } else if (family == "value-noise") {
    Tensor<float> field = value_noise(res, res, rng, 3, 4);
    for (int i = 0; i < res * res; ++i) {
      float v = 0.2f + 0.6f * field.v[i];
      for (int c = 0; c < 3; ++c) img.channel(c)[i] = v;
    }
  } else {
    throw std::runtime_error("unknown texture family: " + family);
  }
  return img;
}

// Injects one defect; returns the composed image and its exact mask.
std::pair<Tensor<float>, Tensor<float>> inject_defect(const Tensor<float>& img,
                                                      const std::string& kind, std::mt19937& rng,
                                                      const SyntheticSpec& spec) {
  int res = img.h;
  Tensor<float> mask(1, res, res);
  std::uniform_real_distribution<float> uni(0.0f, 1.0f);

  if (kind == "blob") {
    synth::MaskParams mp;
    mp.min_area = spec.defect_min_area;
    mp.max_area = spec.defect_max_area;
    mp.rect_prob = 1.0;  // keep blobs compact
    mask = synth::make_random_mask(res, res, rng, mp);
  } else if (kind == "scratch") {
    // thin rotated segment across a random chord
    float x0 = uni(rng) * res, y0 = uni(rng) * res;
    float angle = uni(rng) * static_cast<float>(M_PI);
    float len = (0.4f + 0.4f * uni(rng)) * res;
    float thick = 1.0f + 1.5f * uni(rng);
    float dx = std::cos(angle), dy = std::sin(angle);
    for (int y = 0; y < res; ++y)
      for (int x = 0; x < res; ++x) {
        float px = x + 0.5f - x0, py = y + 0.5f - y0;
        float along = px * dx + py * dy;
        float ortho = std::abs(-px * dy + py * dx);
        if (along >= 0 && along <= len && ortho <= thick) mask.at(0, y, x) = 1.0f;
      }
    if (mask.sum() < 4) mask.at(0, res / 2, res / 2) = 1.0f;
  } else {
    throw std::runtime_error("unknown defect injector: " + kind);
  }

  // fill: value noise pushed away from mid-gray by the configured contrast
  Tensor<float> fill = value_noise_rgb(res, res, rng, 2, 3);
  bool bright = uni(rng) < 0.5f;
  float contrast = static_cast<float>(spec.defect_contrast);
  for (auto& v : fill.v) {
    float depth = contrast * (0.1f + 0.4f * v);
    v = std::clamp(bright ? 0.5f + depth : 0.5f - depth, 0.0f, 1.0f);
  }

  auto triplet = synth::compose(img, fill, mask);
  return {triplet.i_ad, mask};
}

}  // namespace

DatasetSplit generate_synthetic_corpus(const SyntheticSpec& spec, unsigned seed) {
  if (spec.defect_max_area > 0.5)
    throw std::runtime_error("synthetic corpus: defect area above half the image is rejected");
  std::mt19937 rng(seed);
  DatasetSplit split;
  split.category = spec.texture;

  for (int i = 0; i < spec.train_count; ++i) {
    ImageSample s;
    s.pixels = make_texture(spec.texture, spec.resolution, rng, spec.texture_noise);
    s.source_path = "synthetic:train:" + std::to_string(i);
    split.train_normals.push_back(std::move(s));
  }
  for (int i = 0; i < spec.test_normal; ++i) {
    ImageSample s;
    s.pixels = make_texture(spec.texture, spec.resolution, rng, spec.texture_noise);
    s.source_path = "synthetic:test_good:" + std::to_string(i);
    split.test_samples.push_back(std::move(s));
  }
  for (int i = 0; i < spec.test_defect; ++i) {
    std::string kind = spec.defect == "mixed" ? (i % 2 ? "scratch" : "blob") : spec.defect;
    Tensor<float> base = make_texture(spec.texture, spec.resolution, rng, spec.texture_noise);
    auto [img, mask] = inject_defect(base, kind, rng, spec);
    ImageSample s;
    s.pixels = std::move(img);
    s.source_path = "synthetic:test_defect:" + std::to_string(i);
    s.defective = true;
    s.gt_mask = std::move(mask);
    split.test_samples.push_back(std::move(s));
  }
  return split;
}

void write_corpus(const DatasetSplit& split, const std::string& out_root, bool overwrite) {
  fs::path base = fs::path(out_root) / split.category;
  if (fs::exists(base) && !fs::is_empty(base) && !overwrite)
    throw std::runtime_error("output directory not empty (use --force to overwrite): " +
                             base.string());
  char name[32];
  int train_i = 0, good_i = 0, defect_i = 0;
  for (const auto& s : split.train_normals) {
    std::snprintf(name, sizeof(name), "%03d.png", train_i++);
    save_image_png((base / "train" / "good" / name).string(), s.pixels);
  }
  for (const auto& s : split.test_samples) {
    if (!s.defective) {
      std::snprintf(name, sizeof(name), "%03d.png", good_i++);
      save_image_png((base / "test" / "good" / name).string(), s.pixels);
    } else {
      std::snprintf(name, sizeof(name), "%03d.png", defect_i);
      save_image_png((base / "test" / "defect" / name).string(), s.pixels);
      if (s.gt_mask) {
        std::snprintf(name, sizeof(name), "%03d_mask.png", defect_i);
        save_mask_png((base / "ground_truth" / "defect" / name).string(), *s.gt_mask);
      }
      ++defect_i;
    }
  }
}

ReferenceSelection select_reference(const DatasetSplit& split, int index) {
  if (index < 0 || index >= static_cast<int>(split.train_normals.size()))
    throw std::runtime_error("reference index " + std::to_string(index) +
                             " out of range (train size " +
                             std::to_string(split.train_normals.size()) + ")");
  ReferenceSelection sel;
  sel.index = index;
  sel.checksum = pixel_digest(split.train_normals[index].pixels);
  sel.source_path = split.train_normals[index].source_path;
  return sel;
}

}  // namespace rbae::data
