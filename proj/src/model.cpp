#include "mseg/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>

#include "mseg/checkpoint.hpp"
#include "mseg/errors.hpp"
#include "mseg/ops.hpp"

namespace mseg {

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::cs_unet: return "cs_unet";
    case Variant::swin_unet: return "swin_unet";
    case Variant::unet: return "unet";
    case Variant::classifier: return "classifier";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  for (auto v : {Variant::cs_unet, Variant::swin_unet, Variant::unet, Variant::classifier}) {
    if (name == variant_name(v)) return v;
  }
  throw ValidationError("unknown model variant '" + name + "'");
}

LoadPolicy parse_load_policy(const std::string& name) {
  if (name == "encoder_only") return LoadPolicy::encoder_only;
  if (name == "encoder_and_decoder") return LoadPolicy::encoder_and_decoder;
  if (name == "full") return LoadPolicy::full;
  throw ValidationError("unknown load policy '" + name + "'");
}

std::vector<std::int64_t> ModelConfig::resolved_cnn_channels() const {
  if (!cnn_channels.empty()) return cnn_channels;
  return {embed_dim, 2 * embed_dim, 4 * embed_dim, 8 * embed_dim};
}

SwinStageConfig ModelConfig::stage_config(int stage) const {
  SwinStageConfig s;
  s.embed_dim = stage_dim(stage);
  s.depth = depths.at(static_cast<std::size_t>(stage));
  s.num_heads = heads.at(static_cast<std::size_t>(stage));
  s.window = window;
  s.mlp_ratio = mlp_ratio;
  s.attn_dropout = attn_dropout;
  s.mlp_dropout = mlp_dropout;
  return s;
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.input_size = 64;
  c.embed_dim = 8;
  c.depths = {2, 2, 2, 2};
  c.heads = {1, 2, 4, 8};
  c.window = 4;
  c.num_classes = 3;
  return c;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw ValidationError("invalid model config: " + what); };
  if (depths.size() != 4) fail("len(depths) == 4");
  if (heads.size() != 4) fail("len(heads) == 4");
  if (patch != 2 && patch != 4) fail("patch in {2, 4}");
  if (input_size < 1) fail("input_size >= 1");
  if (input_size % (static_cast<std::int64_t>(patch) * 8) != 0) {
    fail("input_size divisible by patch*8 (input_size=" + std::to_string(input_size) +
         ", patch=" + std::to_string(patch) + ")");
  }
  if (embed_dim < 1) fail("embed_dim >= 1");
  if (num_classes < 1) fail("num_classes >= 1");
  if (!(mlp_ratio > 0)) fail("mlp_ratio > 0");
  if (attn_dropout < 0 || attn_dropout >= 1) fail("0 <= attn_dropout < 1");
  if (mlp_dropout < 0 || mlp_dropout >= 1) fail("0 <= mlp_dropout < 1");
  if (!cnn_channels.empty()) {
    if (cnn_channels.size() != 4) fail("len(cnn_channels) == 4");
    for (auto c : cnn_channels) {
      if (c < 1) fail("cnn_channels positive");
    }
  }
  for (int i = 0; i < 4; ++i) {
    if (depths[static_cast<std::size_t>(i)] < 1) fail("depths[" + std::to_string(i) + "] >= 1");
    if (heads[static_cast<std::size_t>(i)] < 1) fail("heads[" + std::to_string(i) + "] >= 1");
  }
  if (variant == Variant::unet) return;
  if (window < 2) fail("window >= 2");
  for (int i = 0; i < 4; ++i) {
    const auto h = heads[static_cast<std::size_t>(i)];
    if (stage_dim(i) % h != 0) {
      fail("stage " + std::to_string(i) + " dim " + std::to_string(stage_dim(i)) + " divisible by heads " +
           std::to_string(h));
    }
    const auto g = stage_grid(i);
    const int m = effective_window(window, g, g);
    if (g % m != 0) {
      fail("stage " + std::to_string(i) + " token grid " + std::to_string(g) + " divisible by window " +
           std::to_string(m));
    }
  }
}

// ---------------------------------------------------------------------------

Tensor tokens_from_map(const Tensor& fmap) {
  MSEG_CHECK(fmap.ndim() == 4, "tokens_from_map expects [B,C,h,w], got " + shape_str(fmap.shape()));
  const auto flat = reshape(fmap, {fmap.dim(0), fmap.dim(1), fmap.dim(2) * fmap.dim(3)});
  return transpose(flat, 1, 2);
}

Tensor map_from_tokens(const Tensor& tokens, std::int64_t h, std::int64_t w) {
  MSEG_CHECK(tokens.ndim() == 3 && tokens.dim(1) == h * w,
             "map_from_tokens: " + shape_str(tokens.shape()) + " does not hold a " + std::to_string(h) + "x" +
                 std::to_string(w) + " grid");
  return reshape(transpose(tokens, 1, 2), {tokens.dim(0), tokens.dim(2), h, w});
}

Tensor fuse_features(const Tensor& cnn_tokens, const Tensor& swin_tokens, const FusionLayer& params) {
  MSEG_CHECK(cnn_tokens.ndim() == 3 && swin_tokens.ndim() == 3, "fuse_features expects [B,L,C] inputs");
  MSEG_CHECK(cnn_tokens.dim(0) == swin_tokens.dim(0) && cnn_tokens.dim(1) == swin_tokens.dim(1),
             "fuse_features token mismatch: " + shape_str(cnn_tokens.shape()) + " vs " +
                 shape_str(swin_tokens.shape()));
  auto y = add(swin_tokens, params.proj(cnn_tokens));
  return params.norm.gamma.defined() ? params.norm(y) : y;
}

// ---------------------------------------------------------------------------

Model::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  ParamFactory root(params_, rng, config_.dtype);
  const auto& c = config_;
  const bool has_swin = c.variant != Variant::unet;
  const bool has_cnn = c.variant == Variant::cs_unet || c.variant == Variant::unet;
  const bool segmentation = c.variant != Variant::classifier;

  if (has_swin) {
    auto enc = root.scope("swin_encoder");
    patch_embed_ = make_patch_embed(enc.scope("patch_embed"), c.embed_dim, c.patch);
    for (int i = 0; i < 4; ++i) {
      auto layer = enc.scope("layers." + std::to_string(i));
      const auto g = c.stage_grid(i);
      EncoderStage st;
      st.blocks = make_swin_blocks(layer, c.stage_config(i), g, g);
      if (i < 3) {
        st.has_downsample = true;
        st.downsample = make_patch_merging(layer.scope("downsample"), c.stage_dim(i));
      }
      swin_stages_.push_back(std::move(st));
    }
    if (!segmentation) encoder_norm_ = enc.layer_norm("norm", c.stage_dim(3));
  }

  const auto ch = c.resolved_cnn_channels();
  if (has_cnn) {
    auto cnn = root.scope("cnn_encoder");
    for (int i = 0; i < 4; ++i) {
      auto st = cnn.scope("stages." + std::to_string(i));
      CnnStage s;
      const std::int64_t in = i == 0 ? 3 : ch[static_cast<std::size_t>(i - 1)];
      const std::int64_t out = ch[static_cast<std::size_t>(i)];
      s.down.push_back(st.conv_norm_act("down0", in, out, 2));
      if (i == 0 && c.patch == 4) s.down.push_back(st.conv_norm_act("down1", out, out, 2));
      s.conv_a = st.conv_norm_act("conv0", out, out, 1);
      s.conv_b = st.conv_norm_act("conv1", out, out, 1);
      cnn_stages_.push_back(std::move(s));
    }
  }

  if (c.variant == Variant::cs_unet) {
    auto fu = root.scope("fusion");
    for (int i = 0; i < 4; ++i) {
      auto f = fu.scope(std::to_string(i));
      FusionLayer layer;
      layer.proj = f.linear("proj", ch[static_cast<std::size_t>(i)], c.stage_dim(i));
      if (c.fusion_norm) layer.norm = f.layer_norm("norm", c.stage_dim(i));
      fusion_.push_back(std::move(layer));
    }
  }

  if (has_swin && segmentation) {
    auto bn_cfg = c.stage_config(3);
    bn_cfg.depth = 2;
    bottleneck_ = make_swin_blocks(root.scope("bottleneck"), bn_cfg, c.stage_grid(3), c.stage_grid(3));
    auto dec = root.scope("decoder");
    for (int j = 0; j < 3; ++j) {
      const int stage = 2 - j;
      auto layer = dec.scope("layers." + std::to_string(j));
      const auto g = c.stage_grid(stage);
      DecoderStage d;
      d.upsample = make_patch_expand(layer.scope("upsample"), c.stage_dim(stage + 1), 2);
      d.concat_proj = layer.linear("concat_proj", 2 * c.stage_dim(stage), c.stage_dim(stage));
      d.blocks = make_swin_blocks(layer, c.stage_config(stage), g, g);
      decoder_.push_back(std::move(d));
    }
    final_expand_ = make_patch_expand(dec.scope("final_expand"), c.embed_dim, c.patch, c.embed_dim);
    head_ = root.linear("head", c.embed_dim, c.num_classes);
  } else if (c.variant == Variant::classifier) {
    head_ = root.linear("head", c.stage_dim(3), c.num_classes);
  } else {
    auto dec = root.scope("decoder");
    for (int j = 0; j < 3; ++j) {
      const int stage = 2 - j;
      const auto cin = ch[static_cast<std::size_t>(stage + 1)];
      const auto cout = ch[static_cast<std::size_t>(stage)];
      auto layer = dec.scope("layers." + std::to_string(j));
      UNetDecoderStage d;
      d.up_weight = layer.kaiming("up.weight", {cin, cout, 2, 2}, cin);
      d.up_bias = layer.constant("up.bias", {cout}, 0.0);
      d.conv_a = layer.conv_norm_act("conv0", 2 * cout, cout, 1);
      d.conv_b = layer.conv_norm_act("conv1", cout, cout, 1);
      unet_decoder_.push_back(std::move(d));
    }
    unet_final_weight_ = dec.kaiming("final_up.weight", {ch[0], ch[0], c.patch, c.patch}, ch[0]);
    unet_final_bias_ = dec.constant("final_up.bias", {ch[0]}, 0.0);
    conv_head_weight_ = root.kaiming("head.weight", {c.num_classes, ch[0], 1, 1}, ch[0]);
    conv_head_bias_ = root.constant("head.bias", {c.num_classes}, 0.0);
  }
}

Model build_model(const ModelConfig& config, std::uint64_t seed) { return Model(config, seed); }

void Model::check_input(const Tensor& image) const {
  const auto s = config_.input_size;
  if (image.ndim() != 4 || image.dim(1) != 3 || image.dim(2) != s || image.dim(3) != s) {
    throw ValidationError("expected input [B,3," + std::to_string(s) + "," + std::to_string(s) + "], got " +
                          shape_str(image.shape()));
  }
}

std::vector<Tensor> Model::cnn_forward(const Tensor& image) const {
  if (cnn_stages_.empty()) throw ValidationError(std::string("variant ") + variant_name(config_.variant) +
                                                 " has no CNN encoder");
  check_input(image);
  std::vector<Tensor> maps;
  Tensor x = image;
  for (const auto& st : cnn_stages_) {
    for (const auto& d : st.down) x = d(x);
    x = st.conv_b(st.conv_a(x));
    maps.push_back(x);
  }
  return maps;
}

std::vector<Tensor> Model::swin_encoder_forward(const Tensor& image, ForwardContext& ctx) const {
  if (swin_stages_.empty()) throw ValidationError("variant unet has no Swin encoder");
  check_input(image);
  std::vector<Tensor> outs;
  Tensor x = patch_embed(image, patch_embed_);
  for (int i = 0; i < 4; ++i) {
    const auto g = config_.stage_grid(i);
    const auto& st = swin_stages_[static_cast<std::size_t>(i)];
    for (const auto& b : st.blocks) x = swin_block(x, b, g, g, ctx);
    outs.push_back(x);
    if (st.has_downsample) x = patch_merging(x, st.downsample, g, g);
  }
  return outs;
}

std::vector<Tensor> Model::encoder_skips(const Tensor& image, ForwardContext& ctx) const {
  if (config_.variant == Variant::swin_unet) return swin_encoder_forward(image, ctx);
  if (config_.variant != Variant::cs_unet) {
    throw ValidationError(std::string("encoder_skips needs cs_unet or swin_unet, not ") +
                          variant_name(config_.variant));
  }
  const auto maps = cnn_forward(image);
  // The Swin chain runs unfused; fusion feeds only the skips and bottleneck.
  auto swin = swin_encoder_forward(image, ctx);
  for (std::size_t i = 0; i < 4; ++i) swin[i] = fuse_features(tokens_from_map(maps[i]), swin[i], fusion_[i]);
  return swin;
}

Tensor Model::decode(std::vector<Tensor> skips, ForwardContext& ctx) const {
  const auto& c = config_;
  auto g = c.stage_grid(3);
  Tensor x = skips[3];
  for (const auto& b : bottleneck_) x = swin_block(x, b, g, g, ctx);
  for (int j = 0; j < 3; ++j) {
    const auto& d = decoder_[static_cast<std::size_t>(j)];
    x = patch_expanding(x, d.upsample, g, g);
    g *= 2;
    x = d.concat_proj(concat({x, skips[static_cast<std::size_t>(2 - j)]}, 2));
    for (const auto& b : d.blocks) x = swin_block(x, b, g, g, ctx);
  }
  x = patch_expanding(x, final_expand_, g, g);
  const auto s = c.input_size;
  auto logits = head_(x);  // [B, S·S, K]
  return permute(reshape(logits, {logits.dim(0), s, s, c.num_classes}), {0, 3, 1, 2});
}

Tensor Model::forward_segmentation(const Tensor& image, ForwardContext& ctx) const {
  if (config_.variant != Variant::cs_unet) {
    throw ValidationError(std::string("forward_segmentation needs a cs_unet model, not ") +
                          variant_name(config_.variant));
  }
  return decode(encoder_skips(image, ctx), ctx);
}

Tensor Model::swin_unet_forward(const Tensor& image, ForwardContext& ctx) const {
  if (config_.variant != Variant::swin_unet) {
    throw ValidationError(std::string("swin_unet_forward needs a swin_unet model, not ") +
                          variant_name(config_.variant));
  }
  return decode(swin_encoder_forward(image, ctx), ctx);
}

Tensor Model::unet_forward(const Tensor& image, ForwardContext&) const {
  if (config_.variant != Variant::unet) {
    throw ValidationError(std::string("unet_forward needs a unet model, not ") + variant_name(config_.variant));
  }
  const auto maps = cnn_forward(image);
  Tensor x = maps[3];
  for (int j = 0; j < 3; ++j) {
    const auto& d = unet_decoder_[static_cast<std::size_t>(j)];
    x = conv_transpose2d(x, d.up_weight, d.up_bias, 2);
    x = concat({x, maps[static_cast<std::size_t>(2 - j)]}, 1);
    x = d.conv_b(d.conv_a(x));
  }
  x = gelu(conv_transpose2d(x, unet_final_weight_, unet_final_bias_, config_.patch));
  return conv2d(x, conv_head_weight_, conv_head_bias_, 1, 0);
}

Tensor Model::pooled_features(const Tensor& image, ForwardContext& ctx) const {
  if (config_.variant == Variant::unet) {
    const auto maps = cnn_forward(image);
    return mean_axis(tokens_from_map(maps[3]), 1);
  }
  auto x = swin_encoder_forward(image, ctx).back();
  if (encoder_norm_.gamma.defined()) x = encoder_norm_(x);
  return mean_axis(x, 1);
}

std::int64_t Model::feature_dim() const {
  if (config_.variant == Variant::unet) return config_.resolved_cnn_channels()[3];
  return config_.stage_dim(3);
}

Tensor Model::forward_classification(const Tensor& image, ForwardContext& ctx) const {
  if (config_.variant != Variant::classifier) {
    throw ValidationError(std::string("forward_classification needs a classifier model, not ") +
                          variant_name(config_.variant));
  }
  return head_(pooled_features(image, ctx));
}

Tensor Model::forward(const Tensor& image, ForwardContext& ctx) const {
  switch (config_.variant) {
    case Variant::cs_unet: return forward_segmentation(image, ctx);
    case Variant::swin_unet: return swin_unet_forward(image, ctx);
    case Variant::unet: return unet_forward(image, ctx);
    case Variant::classifier: return forward_classification(image, ctx);
  }
  throw ValidationError("unknown variant");
}

// ---------------------------------------------------------------------------

namespace {

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

bool is_encoder_name(const std::string& name) {
  return starts_with(name, "swin_encoder.") || starts_with(name, "cnn_encoder.");
}

// decoder.layers.{j}.blocks.* <- swin_encoder.layers.{2-j}.blocks.*
// bottleneck.blocks.*          <- swin_encoder.layers.3.blocks.*
std::optional<std::string> mirrored_source(const std::string& name) {
  if (starts_with(name, "bottleneck.blocks.")) {
    return "swin_encoder.layers.3." + name.substr(std::string("bottleneck.").size());
  }
  const std::string p = "decoder.layers.";
  if (starts_with(name, p) && name.size() > p.size() + 1 && name[p.size() + 1] == '.') {
    const int j = name[p.size()] - '0';
    const std::string rest = name.substr(p.size() + 2);
    if (j >= 0 && j < 3 && starts_with(rest, "blocks.")) {
      return "swin_encoder.layers." + std::to_string(2 - j) + "." + rest;
    }
  }
  return std::nullopt;
}

}  // namespace

LoadReport load_pretrained(Model& model, const Checkpoint& checkpoint, LoadPolicy policy) {
  LoadReport report;
  const bool segmentation = model.config().variant != Variant::classifier;
  for (auto& [name, param] : model.parameters().entries()) {
    const Tensor* src = nullptr;
    bool eligible = policy == LoadPolicy::full || is_encoder_name(name);
    if (segmentation && policy != LoadPolicy::full && starts_with(name, "head.")) eligible = false;
    if (eligible) src = checkpoint.find(name);
    if (!src && policy == LoadPolicy::encoder_and_decoder) {
      if (starts_with(name, "decoder.") || starts_with(name, "bottleneck.")) {
        src = checkpoint.find(name);
        if (!src) {
          if (auto alt = mirrored_source(name)) src = checkpoint.find(*alt);
        }
      }
    }
    if (!src) {
      report.skipped.push_back(name);
      continue;
    }
    if (src->shape() != param.shape()) {
      report.mismatched.push_back(name);
      continue;
    }
    auto dst = param.mutable_data();
    const auto values = src->data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = round_to(param.dtype(), values[i]);
    report.loaded.push_back(name);
  }
  return report;
}

}  // namespace mseg
