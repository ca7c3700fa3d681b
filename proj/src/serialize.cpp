#include "rbae/serialize.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

namespace rbae {

namespace {
constexpr char kMagic[8] = {'R', 'B', 'A', 'E', 'B', 'L', 'B', '1'};
}

void save_blob(const std::string& path, const TensorBlob& blob) {
  nlohmann::json header;
  header["meta"] = blob.meta;
  auto& dir = header["tensors"] = nlohmann::json::array();
  for (const auto& [name, t] : blob.tensors)
    dir.push_back({{"name", name}, {"c", t.c}, {"h", t.h}, {"w", t.w}});
  std::string header_text = header.dump();

  std::filesystem::create_directories(std::filesystem::path(path).parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.write(kMagic, sizeof(kMagic));
  uint64_t len = header_text.size();
  f.write(reinterpret_cast<const char*>(&len), sizeof(len));
  f.write(header_text.data(), static_cast<std::streamsize>(len));
  for (const auto& [name, t] : blob.tensors)
    f.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(sizeof(float) * t.size()));
  if (!f) throw std::runtime_error("write failed: " + path);
}

TensorBlob load_blob(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  char magic[8];
  f.read(magic, sizeof(magic));
  if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("not a tensor blob: " + path);
  uint64_t len = 0;
  f.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string header_text(len, '\0');
  f.read(header_text.data(), static_cast<std::streamsize>(len));
  nlohmann::json header = nlohmann::json::parse(header_text);

  TensorBlob blob;
  blob.meta = header.at("meta");
  for (const auto& entry : header.at("tensors")) {
    Tensor<float> t(entry.at("c").get<int>(), entry.at("h").get<int>(), entry.at("w").get<int>());
    f.read(reinterpret_cast<char*>(t.data()),
           static_cast<std::streamsize>(sizeof(float) * t.size()));
    blob.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(t));
  }
  if (!f) throw std::runtime_error("truncated tensor blob: " + path);
  return blob;
}

}  // namespace rbae
