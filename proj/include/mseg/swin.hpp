#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "mseg/layers.hpp"
#include "mseg/tensor.hpp"

namespace mseg {

/// Hyperparameters of one Swin stage.
struct SwinStageConfig {
  std::int64_t embed_dim = 96;
  int depth = 2;
  int num_heads = 3;
  int window = 7;
  double mlp_ratio = 4.0;
  double attn_dropout = 0.0;
  double mlp_dropout = 0.0;
};

/// Window actually used on an H×W token grid: the configured window, or the
/// whole grid when it is not larger than the window (in which case shifting
/// is disabled).
int effective_window(int window, std::int64_t H, std::int64_t W);

// ---------------------------------------------------------------------------
// Layout primitives

/// [B,H,W,C] -> [B·(H/M)·(W/M), M², C], windows in row-major order.
Tensor window_partition(const Tensor& x, int window);

/// Inverse of window_partition.
Tensor window_reverse(const Tensor& windows, int window, std::int64_t H, std::int64_t W);

/// Relative position index table for an M×M window: entry (i, j) addresses
/// the bias row for the offset between query token i and key token j.
std::vector<std::int64_t> relative_position_index(int window);

/// Additive mask [num_windows, M², M²] for shifted-window attention. Token
/// pairs that came from different regions of the unrolled grid get -1e9.
Tensor build_shift_mask(std::int64_t H, std::int64_t W, int window, int shift,
                        DType dtype = DType::f32);

inline constexpr double kMaskedLogit = -1e9;

// ---------------------------------------------------------------------------
// Parameterized components

struct PatchEmbed {
  Tensor proj_weight;  // [C, 3, patch, patch]
  Tensor proj_bias;    // [C]
  LayerNorm norm;
  int patch = 4;
};

struct WindowAttention {
  Linear qkv;
  Linear proj;
  Tensor bias_table;  // [(2M-1)², heads]
  std::vector<std::int64_t> bias_index;
  int num_heads = 1;
  int window = 2;
  double attn_dropout = 0.0;
};

/// Residual MLP: three linear layers C -> rC -> rC -> C with GELU and
/// dropout between them.
struct ResMlp {
  Linear fc1, fc2, fc3;
  double dropout = 0.0;
};

struct SwinBlock {
  LayerNorm norm1;
  WindowAttention attn;
  LayerNorm norm2;
  ResMlp mlp;
  int window = 2;
  int shift = 0;
  Tensor mask;  // defined when shift > 0
};

struct PatchMerging {
  LayerNorm norm;     // over 4C
  Linear reduction;   // 4C -> 2C, no bias
};

struct PatchExpand {
  Linear expand;  // C -> factor²·out_channels, no bias
  LayerNorm norm;
  int factor = 2;
  std::int64_t out_channels = 0;
};

/// image [B,3,H,W] -> tokens [B, (H/p)(W/p), C], row-major over patches.
Tensor patch_embed(const Tensor& image, const PatchEmbed& params);

/// windows [nW·B, N, C] -> same shape. `mask` is [nW, N, N] or undefined.
Tensor window_attention(const Tensor& windows, const WindowAttention& params, const Tensor& mask,
                        ForwardContext& ctx);

/// x + L3(drop(gelu(L2(drop(gelu(L1(x)))))))
Tensor res_mlp(const Tensor& x, const ResMlp& params, ForwardContext& ctx);
/// The chain without the outer residual.
Tensor res_mlp_branch(const Tensor& x, const ResMlp& params, ForwardContext& ctx);

/// Pre-norm block on tokens [B, H·W, C]:
///   x = x + (S)W-MSA(norm1(x));  x = x + ResMLP-branch(norm2(x))
Tensor swin_block(const Tensor& x, const SwinBlock& block, std::int64_t H, std::int64_t W,
                  ForwardContext& ctx);

/// [B, H·W, C] -> [B, (H/2)(W/2), 2C]
Tensor patch_merging(const Tensor& x, const PatchMerging& params, std::int64_t H, std::int64_t W);

/// [B, H·W, C] -> [B, factor²·H·W, out_channels]. By default out_channels is
/// C/2 for factor 2 and C for factor 4.
Tensor patch_expanding(const Tensor& x, const PatchExpand& params, std::int64_t H, std::int64_t W);

// ---------------------------------------------------------------------------
// Builders

PatchEmbed make_patch_embed(ParamFactory f, std::int64_t channels, int patch);
WindowAttention make_window_attention(ParamFactory f, std::int64_t dim, int heads, int window,
                                      double attn_dropout);
ResMlp make_res_mlp(ParamFactory f, std::int64_t dim, double ratio, double dropout);
/// Blocks alternate shift 0 and floor(M/2), starting with 0, unless the grid
/// fits in one window.
SwinBlock make_swin_block(ParamFactory f, const SwinStageConfig& cfg, int index, std::int64_t H,
                          std::int64_t W);
std::vector<SwinBlock> make_swin_blocks(ParamFactory f, const SwinStageConfig& cfg, std::int64_t H,
                                        std::int64_t W);
PatchMerging make_patch_merging(ParamFactory f, std::int64_t dim);
PatchExpand make_patch_expand(ParamFactory f, std::int64_t dim, int factor, std::int64_t out_dim = 0);

}  // namespace mseg
