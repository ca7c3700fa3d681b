#include "rbae/config.hpp"

#include <cstdlib>
#include <fstream>

namespace rbae {

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  j["resolution"] = c.resolution;
  j["widths"] = c.widths;
  j["k_values"] = c.k_values;
  j["ffm"] = {{"kernel", c.ffm_kernel}, {"compress", c.ffm_compress}};
  j["lambda"] = c.lambda;
  j["weights"] = {{"rec", c.weights.rec},
                  {"per", c.weights.per},
                  {"pixel_dis", c.weights.pixel_dis},
                  {"fea_rep", c.weights.fea_rep},
                  {"seg", c.weights.seg}};
  j["optimizer"] = {{"name", c.optimizer.name},
                    {"lr", c.optimizer.lr},
                    {"weight_decay", c.optimizer.weight_decay}};
  j["epochs"] = {{"phase1", c.epochs.phase1}, {"phase2", c.epochs.phase2}};
  j["batch_size"] = c.batch_size;
  j["seed"] = c.seed;
  j["reference_index"] = c.reference_index;
  j["perceptual"] = {{"provenance", c.perceptual.provenance},
                     {"weights_path", c.perceptual.weights_path},
                     {"require_pretrained", c.perceptual.require_pretrained},
                     {"seed", c.perceptual.seed}};
  j["focal"] = {{"gamma", c.focal.gamma}, {"alpha", c.focal.alpha}, {"clamp", c.focal.clamp}};
  j["smoothing_sigma"] = c.smoothing_sigma;
  j["eval"] = {{"fpr_cap", c.eval.fpr_cap},
               {"connectivity", c.eval.connectivity},
               {"pixel_auc_mode", c.eval.pixel_auc_mode}};
  j["mask"] = {{"min_area", c.mask.min_area},
               {"max_area", c.mask.max_area},
               {"octaves", c.mask.octaves},
               {"rect_prob", c.mask.rect_prob},
               {"max_retries", c.mask.max_retries},
               {"opacity", c.synth_opacity}};
  j["pixel_dis_norm"] = c.pixel_dis_norm;
  j["deterministic"] = c.deterministic;
  j["disable_rbam"] = c.disable_rbam;
  j["synth"] = {{"texture", c.synth.texture},
                {"defect", c.synth.defect},
                {"train_count", c.synth.train_count},
                {"test_normal", c.synth.test_normal},
                {"test_defect", c.synth.test_defect},
                {"resolution", c.synth.resolution},
                {"texture_noise", c.synth.texture_noise},
                {"defect_contrast", c.synth.defect_contrast},
                {"defect_min_area", c.synth.defect_min_area},
                {"defect_max_area", c.synth.defect_max_area}};
  j["data_root"] = c.data_root;
  j["category"] = c.category;
  j["out_dir"] = c.out_dir;
  j["anomaly_source_dir"] = c.anomaly_source_dir;
  return j;
}

RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig c;
  j.at("resolution").get_to(c.resolution);
  j.at("widths").get_to(c.widths);
  j.at("k_values").get_to(c.k_values);
  j.at("ffm").at("kernel").get_to(c.ffm_kernel);
  j.at("ffm").at("compress").get_to(c.ffm_compress);
  j.at("lambda").get_to(c.lambda);
  j.at("weights").at("rec").get_to(c.weights.rec);
  j.at("weights").at("per").get_to(c.weights.per);
  j.at("weights").at("pixel_dis").get_to(c.weights.pixel_dis);
  j.at("weights").at("fea_rep").get_to(c.weights.fea_rep);
  j.at("weights").at("seg").get_to(c.weights.seg);
  j.at("optimizer").at("name").get_to(c.optimizer.name);
  j.at("optimizer").at("lr").get_to(c.optimizer.lr);
  j.at("optimizer").at("weight_decay").get_to(c.optimizer.weight_decay);
  j.at("epochs").at("phase1").get_to(c.epochs.phase1);
  j.at("epochs").at("phase2").get_to(c.epochs.phase2);
  j.at("batch_size").get_to(c.batch_size);
  j.at("seed").get_to(c.seed);
  j.at("reference_index").get_to(c.reference_index);
  j.at("perceptual").at("provenance").get_to(c.perceptual.provenance);
  j.at("perceptual").at("weights_path").get_to(c.perceptual.weights_path);
  j.at("perceptual").at("require_pretrained").get_to(c.perceptual.require_pretrained);
  j.at("perceptual").at("seed").get_to(c.perceptual.seed);
  j.at("focal").at("gamma").get_to(c.focal.gamma);
  j.at("focal").at("alpha").get_to(c.focal.alpha);
  j.at("focal").at("clamp").get_to(c.focal.clamp);
  j.at("smoothing_sigma").get_to(c.smoothing_sigma);
  j.at("eval").at("fpr_cap").get_to(c.eval.fpr_cap);
  j.at("eval").at("connectivity").get_to(c.eval.connectivity);
  j.at("eval").at("pixel_auc_mode").get_to(c.eval.pixel_auc_mode);
  j.at("mask").at("min_area").get_to(c.mask.min_area);
  j.at("mask").at("max_area").get_to(c.mask.max_area);
  j.at("mask").at("octaves").get_to(c.mask.octaves);
  j.at("mask").at("rect_prob").get_to(c.mask.rect_prob);
  j.at("mask").at("max_retries").get_to(c.mask.max_retries);
  j.at("mask").at("opacity").get_to(c.synth_opacity);
  j.at("pixel_dis_norm").get_to(c.pixel_dis_norm);
  j.at("deterministic").get_to(c.deterministic);
  j.at("disable_rbam").get_to(c.disable_rbam);
  j.at("synth").at("texture").get_to(c.synth.texture);
  j.at("synth").at("defect").get_to(c.synth.defect);
  j.at("synth").at("train_count").get_to(c.synth.train_count);
  j.at("synth").at("test_normal").get_to(c.synth.test_normal);
  j.at("synth").at("test_defect").get_to(c.synth.test_defect);
  j.at("synth").at("resolution").get_to(c.synth.resolution);
  j.at("synth").at("texture_noise").get_to(c.synth.texture_noise);
  j.at("synth").at("defect_contrast").get_to(c.synth.defect_contrast);
  j.at("synth").at("defect_min_area").get_to(c.synth.defect_min_area);
  j.at("synth").at("defect_max_area").get_to(c.synth.defect_max_area);
  j.at("data_root").get_to(c.data_root);
  j.at("category").get_to(c.category);
  j.at("out_dir").get_to(c.out_dir);
  j.at("anomaly_source_dir").get_to(c.anomaly_source_dir);
  return c;
}

namespace {

void collect_paths(const nlohmann::json& j, const std::string& prefix,
                   std::vector<std::string>& out) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it)
      collect_paths(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), out);
  } else {
    out.push_back(prefix);
  }
}

nlohmann::json* walk(nlohmann::json& j, const std::string& dotted, bool create) {
  nlohmann::json* cur = &j;
  size_t pos = 0;
  while (pos < dotted.size()) {
    size_t dot = dotted.find('.', pos);
    std::string key = dotted.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    if (!cur->is_object()) return nullptr;
    if (!cur->contains(key)) {
      if (!create) return nullptr;
      (*cur)[key] = nlohmann::json::object();
    }
    cur = &(*cur)[key];
    if (dot == std::string::npos) break;
    pos = dot + 1;
  }
  return cur;
}

nlohmann::json parse_value(const std::string& text) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    return nlohmann::json(text);  // plain string
  }
}

void merge_checked(nlohmann::json& base, const nlohmann::json& patch, const std::string& prefix) {
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) throw std::runtime_error("unknown config key: " + path);
    if (it.value().is_object() && base[it.key()].is_object())
      merge_checked(base[it.key()], it.value(), path);
    else
      base[it.key()] = it.value();
  }
}

}  // namespace

ResolvedConfig apply_overrides(nlohmann::json base, const std::vector<std::string>& overrides) {
  for (const auto& ov : overrides) {
    size_t eq = ov.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("override must look like dotted.key=value: " + ov);
    std::string key = ov.substr(0, eq);
    nlohmann::json* slot = walk(base, key, false);
    if (!slot) throw std::runtime_error("unknown config key: " + key);
    *slot = parse_value(ov.substr(eq + 1));
  }
  return {config_from_json(base), base};
}

ResolvedConfig resolve_config(const std::string& config_path,
                              const std::vector<std::string>& overrides, bool use_env) {
  nlohmann::json resolved = to_json(RunConfig{});

  if (!config_path.empty()) {
    std::ifstream f(config_path);
    if (!f) throw std::runtime_error("cannot read config file: " + config_path);
    nlohmann::json file_json = nlohmann::json::parse(f);
    merge_checked(resolved, file_json, "");
  }

  if (use_env) {
    std::vector<std::string> paths;
    collect_paths(resolved, "", paths);
    for (const auto& path : paths) {
      std::string var = "RBAE_";
      for (char ch : path) var += ch == '.' ? '_' : static_cast<char>(std::toupper(ch));
      if (const char* value = std::getenv(var.c_str()))
        *walk(resolved, path, false) = parse_value(value);
    }
  }

  for (const auto& ov : overrides) {
    size_t eq = ov.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("override must look like dotted.key=value: " + ov);
    std::string key = ov.substr(0, eq);
    nlohmann::json* slot = walk(resolved, key, false);
    if (!slot) throw std::runtime_error("unknown config key: " + key);
    *slot = parse_value(ov.substr(eq + 1));
  }

  return {config_from_json(resolved), resolved};
}

}  // namespace rbae
