#include "mseg/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "mseg/errors.hpp"

namespace mseg {

using nlohmann::json;

namespace {

const char* tile_policy_name(TilePolicy p) { return p == TilePolicy::cover ? "cover" : "none"; }

DType parse_dtype(const std::string& s) {
  if (s == "f32") return DType::f32;
  if (s == "f64") return DType::f64;
  throw ValidationError("unknown dtype '" + s + "' (expected f32 or f64)");
}

// Reads keys of one section, rejecting anything not consumed.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ValidationError("config: section '" + name_ + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ValidationError("config: " + name_ + "." + key + ": " + e.what());
    }
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ValidationError("config: unknown key '" + name_ + "." + k + "'");
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!root.is_object()) throw ValidationError("config: top level must be an object");
  RunConfig c;
  static const std::set<std::string> sections{"model", "pretrain", "finetune", "augment", "normalize", "data"};
  for (const auto& [k, v] : root.items()) {
    if (!sections.count(k)) throw ValidationError("config: unknown section '" + k + "'");
  }

  if (root.contains("model")) {
    Section s(root["model"], "model");
    auto& m = c.model;
    std::string variant = variant_name(m.variant), dtype = dtype_name(m.dtype);
    s.get("variant", variant);
    s.get("input_size", m.input_size);
    s.get("patch", m.patch);
    s.get("embed_dim", m.embed_dim);
    s.get("depths", m.depths);
    s.get("heads", m.heads);
    s.get("window", m.window);
    s.get("num_classes", m.num_classes);
    s.get("cnn_channels", m.cnn_channels);
    s.get("mlp_ratio", m.mlp_ratio);
    s.get("attn_dropout", m.attn_dropout);
    s.get("mlp_dropout", m.mlp_dropout);
    s.get("fusion_norm", m.fusion_norm);
    s.get("dtype", dtype);
    s.finish();
    m.variant = parse_variant(variant);
    m.dtype = parse_dtype(dtype);
  }
  if (root.contains("pretrain")) {
    Section s(root["pretrain"], "pretrain");
    auto& p = c.pretrain;
    s.get("epochs", p.epochs);
    s.get("warmup_epochs", p.warmup_epochs);
    s.get("batch", p.batch);
    s.get("base_lr", p.base_lr);
    s.get("min_lr", p.min_lr);
    s.get("weight_decay", p.weight_decay);
    s.get("patience", p.patience);
    s.finish();
  }
  if (root.contains("finetune")) {
    Section s(root["finetune"], "finetune");
    auto& f = c.finetune;
    s.get("phase1_lr", f.phase1_lr);
    s.get("phase2_lr", f.phase2_lr);
    s.get("patience", f.patience);
    s.get("batch", f.batch);
    s.get("max_epochs_per_phase", f.max_epochs_per_phase);
    s.get("min_delta", f.min_delta);
    s.finish();
  }
  if (root.contains("augment")) {
    Section s(root["augment"], "augment");
    auto& a = c.augment;
    a = AugmentSpec{};
    s.get("hflip_p", a.hflip_p);
    s.get("vflip_p", a.vflip_p);
    s.get("rot90_p", a.rot90_p);
    s.get("contrast_p", a.contrast_p);
    s.get("contrast_lo", a.contrast_lo);
    s.get("contrast_hi", a.contrast_hi);
    s.get("brightness_p", a.brightness_p);
    s.get("brightness_delta", a.brightness_delta);
    s.get("gamma_p", a.gamma_p);
    s.get("gamma_lo", a.gamma_lo);
    s.get("gamma_hi", a.gamma_hi);
    s.get("blur_sharpen_p", a.blur_sharpen_p);
    s.get("noise_p", a.noise_p);
    s.get("noise_std", a.noise_std);
    s.get("crop_size", a.crop_size);
    s.finish();
  }
  if (root.contains("normalize")) {
    Section s(root["normalize"], "normalize");
    s.get("mean", c.normalize.mean);
    s.get("std", c.normalize.std);
    s.finish();
  }
  if (root.contains("data")) {
    Section s(root["data"], "data");
    std::string policy = tile_policy_name(c.tiling.policy);
    s.get("tile", c.tiling.tile);
    s.get("tile_policy", policy);
    s.get("scale_band", c.scale_band);
    s.finish();
    c.tiling.policy = parse_tile_policy(policy);
  }

  c.model.validate();
  c.pretrain.validate();
  c.finetune.validate();
  c.augment.validate();
  for (double sd : c.normalize.std) {
    if (!(sd > 0)) throw ValidationError("config: normalize.std entries must be > 0");
  }
  if (c.tiling.tile < 1) throw ValidationError("config: data.tile must be >= 1");
  if (!(c.scale_band >= 0 && c.scale_band < 1)) throw ValidationError("config: data.scale_band must be in [0, 1)");
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string run_config_json(const RunConfig& c) {
  const auto& m = c.model;
  const auto& a = c.augment;
  json j;
  j["model"] = {{"variant", variant_name(m.variant)},
                {"input_size", m.input_size},
                {"patch", m.patch},
                {"embed_dim", m.embed_dim},
                {"depths", m.depths},
                {"heads", m.heads},
                {"window", m.window},
                {"num_classes", m.num_classes},
                {"cnn_channels", m.cnn_channels},
                {"mlp_ratio", m.mlp_ratio},
                {"attn_dropout", m.attn_dropout},
                {"mlp_dropout", m.mlp_dropout},
                {"fusion_norm", m.fusion_norm},
                {"dtype", dtype_name(m.dtype)}};
  j["pretrain"] = {{"epochs", c.pretrain.epochs},         {"warmup_epochs", c.pretrain.warmup_epochs},
                   {"batch", c.pretrain.batch},           {"base_lr", c.pretrain.base_lr},
                   {"min_lr", c.pretrain.min_lr},         {"weight_decay", c.pretrain.weight_decay},
                   {"patience", c.pretrain.patience}};
  j["finetune"] = {{"phase1_lr", c.finetune.phase1_lr},
                   {"phase2_lr", c.finetune.phase2_lr},
                   {"patience", c.finetune.patience},
                   {"batch", c.finetune.batch},
                   {"max_epochs_per_phase", c.finetune.max_epochs_per_phase},
                   {"min_delta", c.finetune.min_delta}};
  j["augment"] = {{"hflip_p", a.hflip_p},         {"vflip_p", a.vflip_p},
                  {"rot90_p", a.rot90_p},         {"contrast_p", a.contrast_p},
                  {"contrast_lo", a.contrast_lo}, {"contrast_hi", a.contrast_hi},
                  {"brightness_p", a.brightness_p}, {"brightness_delta", a.brightness_delta},
                  {"gamma_p", a.gamma_p},         {"gamma_lo", a.gamma_lo},
                  {"gamma_hi", a.gamma_hi},       {"blur_sharpen_p", a.blur_sharpen_p},
                  {"noise_p", a.noise_p},         {"noise_std", a.noise_std},
                  {"crop_size", a.crop_size}};
  j["normalize"] = {{"mean", c.normalize.mean}, {"std", c.normalize.std}};
  j["data"] = {{"tile", c.tiling.tile}, {"tile_policy", tile_policy_name(c.tiling.policy)}, {"scale_band", c.scale_band}};
  return j.dump(2) + "\n";
}

}  // namespace mseg
