#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rbae/tensor.hpp"

namespace rbae {

// Versioned container of named float32 tensors plus a JSON meta block.
// Save/load round-trips byte-identically: tensor order, meta and raw data are
// all preserved.
struct TensorBlob {
  nlohmann::json meta;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  const Tensor<float>* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

void save_blob(const std::string& path, const TensorBlob& blob);
TensorBlob load_blob(const std::string& path);

}  // namespace rbae
