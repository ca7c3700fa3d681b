#pragma once

#include <map>

#include "rbae/config.hpp"
#include "rbae/msfdm.hpp"
#include "rbae/perceptual.hpp"
#include "rbae/rbam.hpp"

namespace rbae {

// The assembled network: encoder, decoder, RBAM (levels 3..5), MSFDM
// (levels 1..3) and the frozen perceptual extractor. Module construction
// order is fixed so a seed fully determines the initialization.
template <typename S>
struct RbaeModel {
  RunConfig cfg;
  Encoder<S> encoder;
  Decoder<S> decoder;
  Rbam<S> rbam;
  Msfdm<S> msfdm;
  PerceptualExtractor<S> perceptual;

  explicit RbaeModel(const RunConfig& config) : cfg(config) {
    validate(config);
    std::mt19937 rng(config.seed);
    encoder = Encoder<S>(config.resolution, config.widths, rng);
    decoder = Decoder<S>(config.widths, rng);
    rbam = Rbam<S>(config.widths, config.k_values, config.ffm_kernel, config.ffm_compress, rng);
    msfdm = Msfdm<S>(config.widths, rng);
    perceptual = PerceptualExtractor<S>(config.perceptual.seed);
  }

  static void validate(const RunConfig& c) {
    if (c.resolution % 32 != 0)
      throw std::invalid_argument("resolution must be divisible by 32, got " +
                                  std::to_string(c.resolution));
    for (int l = 3; l <= 5; ++l) {
      int level_size = c.resolution >> l;
      for (int k : c.k_values[l - 3]) {
        if (k <= 0 || level_size % k != 0)
          throw std::invalid_argument("K=" + std::to_string(k) + " does not divide the level-" +
                                      std::to_string(l) + " feature size " +
                                      std::to_string(level_size));
        if (k >= c.ffm_kernel)
          throw std::invalid_argument("ffm kernel m must exceed the largest K");
      }
    }
  }

  NamedParams<S> encoder_params() const { return encoder.params("encoder"); }
  NamedParams<S> decoder_params() const { return decoder.params("decoder"); }
  NamedParams<S> rbam_params() const { return rbam.params("rbam"); }
  NamedParams<S> msfdm_params() const { return msfdm.params("msfdm"); }

  NamedParams<S> all_params() const {
    NamedParams<S> out;
    for (auto group : {encoder_params(), decoder_params(), rbam_params(), msfdm_params(),
                       perceptual.params("perceptual")})
      out.insert(out.end(), group.begin(), group.end());
    return out;
  }

  void load_named(const std::vector<std::pair<std::string, Tensor<S>>>& tensors) {
    std::map<std::string, const Tensor<S>*> index;
    for (const auto& [name, t] : tensors) index[name] = &t;
    for (auto& [name, p] : all_params()) {
      auto it = index.find(name);
      if (it == index.end()) throw std::runtime_error("checkpoint missing tensor: " + name);
      if (!it->second->same_shape(p->val))
        throw std::runtime_error("checkpoint shape mismatch for " + name + ": " +
                                 it->second->shape_str() + " vs " + p->val.shape_str());
      p->val = *it->second;
    }
  }
};

}  // namespace rbae
