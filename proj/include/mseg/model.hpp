#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mseg/autograd.hpp"
#include "mseg/layers.hpp"
#include "mseg/swin.hpp"
#include "mseg/tensor.hpp"

namespace mseg {

enum class Variant { cs_unet, swin_unet, unet, classifier };

const char* variant_name(Variant v);
Variant parse_variant(const std::string& name);

struct ModelConfig {
  std::int64_t input_size = 224;
  int patch = 4;  // 2 or 4; sets the stem stride and the final expansion
  std::int64_t embed_dim = 96;
  std::vector<int> depths{2, 2, 6, 2};
  std::vector<int> heads{3, 6, 12, 24};
  int window = 7;
  int num_classes = 3;
  /// Per-stage CNN widths; empty means {C, 2C, 4C, 8C} of embed_dim.
  std::vector<std::int64_t> cnn_channels;
  double mlp_ratio = 4.0;
  double attn_dropout = 0.0;
  double mlp_dropout = 0.0;
  Variant variant = Variant::cs_unet;
  /// LayerNorm after the CNN/Swin sum at each fusion point.
  bool fusion_norm = true;
  DType dtype = DType::f32;

  /// Throws ValidationError naming the first violated constraint.
  void validate() const;

  std::int64_t stage_dim(int stage) const { return embed_dim << stage; }
  std::int64_t stage_grid(int stage) const { return input_size / patch >> stage; }
  std::vector<std::int64_t> resolved_cnn_channels() const;
  SwinStageConfig stage_config(int stage) const;

  /// 64² input, C=8, window 4, depths [2,2,2,2], three classes.
  static ModelConfig tiny();
};

/// Which tensors load_pretrained may copy.
enum class LoadPolicy {
  encoder_only,         // swin_encoder.* and cnn_encoder.*
  encoder_and_decoder,  // plus bottleneck/decoder, mirrored from encoder stages
  full                  // every name; for resuming the same architecture
};

LoadPolicy parse_load_policy(const std::string& name);

struct LoadReport {
  std::vector<std::string> loaded;
  std::vector<std::string> skipped;     // not offered by the checkpoint or excluded by policy
  std::vector<std::string> mismatched;  // offered but with a different shape
};

struct Checkpoint;

struct CnnStage {
  std::vector<ConvNormAct> down;
  ConvNormAct conv_a, conv_b;
};

struct EncoderStage {
  std::vector<SwinBlock> blocks;
  bool has_downsample = false;
  PatchMerging downsample;
};

struct FusionLayer {
  Linear proj;
  LayerNorm norm;
};

struct DecoderStage {
  PatchExpand upsample;
  Linear concat_proj;  // 2C -> C
  std::vector<SwinBlock> blocks;
};

struct UNetDecoderStage {
  Tensor up_weight;  // [Cin, Cout, 2, 2]
  Tensor up_bias;
  ConvNormAct conv_a, conv_b;
};

class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParameterStore& parameters() { return params_; }
  const ParameterStore& parameters() const { return params_; }

  /// Segmentation logits [B,K,H,W] or classification logits [B,K] by variant.
  Tensor forward(const Tensor& image, ForwardContext& ctx) const;

  Tensor forward_segmentation(const Tensor& image, ForwardContext& ctx) const;
  Tensor swin_unet_forward(const Tensor& image, ForwardContext& ctx) const;
  Tensor unet_forward(const Tensor& image, ForwardContext& ctx) const;
  Tensor forward_classification(const Tensor& image, ForwardContext& ctx) const;

  /// CNN pyramid at strides p, 2p, 4p, 8p for patch size p.
  std::vector<Tensor> cnn_forward(const Tensor& image) const;
  /// Swin encoder outputs per stage, before each stage's downsampling.
  std::vector<Tensor> swin_encoder_forward(const Tensor& image, ForwardContext& ctx) const;
  /// Encoder outputs as they reach the decoder: fused for cs_unet, raw for
  /// swin_unet.
  std::vector<Tensor> encoder_skips(const Tensor& image, ForwardContext& ctx) const;
  /// Globally pooled final-stage encoder features [B, D].
  Tensor pooled_features(const Tensor& image, ForwardContext& ctx) const;
  std::int64_t feature_dim() const;

 private:
  void check_input(const Tensor& image) const;
  Tensor decode(std::vector<Tensor> skips, ForwardContext& ctx) const;

  ModelConfig config_;
  ParameterStore params_;

  PatchEmbed patch_embed_;
  std::vector<EncoderStage> swin_stages_;
  LayerNorm encoder_norm_;
  std::vector<CnnStage> cnn_stages_;
  std::vector<FusionLayer> fusion_;
  std::vector<SwinBlock> bottleneck_;
  std::vector<DecoderStage> decoder_;
  PatchExpand final_expand_;
  std::vector<UNetDecoderStage> unet_decoder_;
  Tensor unet_final_weight_, unet_final_bias_;
  Linear head_;
  Tensor conv_head_weight_, conv_head_bias_;
};

Model build_model(const ModelConfig& config, std::uint64_t seed);

/// [B,C,h,w] -> [B, h·w, C]: flatten spatial axes, then swap the last two.
Tensor tokens_from_map(const Tensor& fmap);
/// Inverse of tokens_from_map.
Tensor map_from_tokens(const Tensor& tokens, std::int64_t h, std::int64_t w);

/// norm(swin + proj(cnn)); the norm is skipped when `params.norm` is unset.
Tensor fuse_features(const Tensor& cnn_tokens, const Tensor& swin_tokens, const FusionLayer& params);

/// Copies name- and shape-matched tensors from `checkpoint` into `model`.
LoadReport load_pretrained(Model& model, const Checkpoint& checkpoint, LoadPolicy policy);

}  // namespace mseg
