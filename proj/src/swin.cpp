#include "mseg/swin.hpp"

#include <cmath>

#include "mseg/errors.hpp"
#include "mseg/ops.hpp"

namespace mseg {

int effective_window(int window, std::int64_t H, std::int64_t W) {
  const std::int64_t side = std::min(H, W);
  return side <= window ? static_cast<int>(side) : window;
}

Tensor window_partition(const Tensor& x, int window) {
  if (x.ndim() != 4) throw ValidationError("window_partition expects [B,H,W,C]");
  const auto B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  if (window < 1 || H % window != 0 || W % window != 0) {
    throw ValidationError("window_partition: grid " + std::to_string(H) + "x" + std::to_string(W) +
                          " not divisible by window " + std::to_string(window));
  }
  const std::int64_t M = window;
  Tensor t = reshape(x, {B, H / M, M, W / M, M, C});
  t = permute(t, {0, 1, 3, 2, 4, 5});
  return reshape(t, {B * (H / M) * (W / M), M * M, C});
}

Tensor window_reverse(const Tensor& windows, int window, std::int64_t H, std::int64_t W) {
  if (windows.ndim() != 3) throw ValidationError("window_reverse expects [nW*B, M*M, C]");
  const std::int64_t M = window;
  if (M < 1 || H % M != 0 || W % M != 0 || windows.dim(1) != M * M) {
    throw ValidationError("window_reverse: window size inconsistent with grid");
  }
  const std::int64_t per_image = (H / M) * (W / M);
  if (windows.dim(0) % per_image != 0) {
    throw ValidationError("window_reverse: window count " + std::to_string(windows.dim(0)) +
                          " is not a multiple of " + std::to_string(per_image));
  }
  const auto B = windows.dim(0) / per_image;
  const auto C = windows.dim(2);
  Tensor t = reshape(windows, {B, H / M, W / M, M, M, C});
  t = permute(t, {0, 1, 3, 2, 4, 5});
  return reshape(t, {B, H, W, C});
}

std::vector<std::int64_t> relative_position_index(int window) {
  const std::int64_t M = window;
  const std::int64_t N = M * M;
  std::vector<std::int64_t> index(static_cast<std::size_t>(N * N));
  for (std::int64_t i = 0; i < N; ++i) {
    for (std::int64_t j = 0; j < N; ++j) {
      const std::int64_t dh = i / M - j / M + M - 1;
      const std::int64_t dw = i % M - j % M + M - 1;
      index[static_cast<std::size_t>(i * N + j)] = dh * (2 * M - 1) + dw;
    }
  }
  return index;
}

Tensor build_shift_mask(std::int64_t H, std::int64_t W, int window, int shift, DType dtype) {
  if (shift < 0 || shift >= window) throw ValidationError("build_shift_mask: need 0 <= shift < window");
  if (H % window != 0 || W % window != 0) throw ValidationError("build_shift_mask: grid not divisible");
  const std::int64_t M = window;
  const std::int64_t nh = H / M, nw = W / M, N = M * M;
  Tensor mask = Tensor::zeros({nh * nw, N, N}, dtype);
  if (shift == 0) return mask;
  auto band = [&](std::int64_t pos, std::int64_t extent) -> int {
    if (pos < extent - M) return 0;
    if (pos < extent - shift) return 1;
    return 2;
  };
  auto data = mask.mutable_data();
  for (std::int64_t wh = 0; wh < nh; ++wh) {
    for (std::int64_t ww = 0; ww < nw; ++ww) {
      const std::int64_t w = wh * nw + ww;
      std::vector<int> region(static_cast<std::size_t>(N));
      for (std::int64_t t = 0; t < N; ++t) {
        const std::int64_t h = wh * M + t / M, c = ww * M + t % M;
        region[static_cast<std::size_t>(t)] = band(h, H) * 3 + band(c, W);
      }
      for (std::int64_t i = 0; i < N; ++i) {
        for (std::int64_t j = 0; j < N; ++j) {
          if (region[static_cast<std::size_t>(i)] != region[static_cast<std::size_t>(j)]) {
            data[static_cast<std::size_t>((w * N + i) * N + j)] = kMaskedLogit;
          }
        }
      }
    }
  }
  return mask;
}

Tensor patch_embed(const Tensor& image, const PatchEmbed& params) {
  if (image.ndim() != 4) throw ValidationError("patch_embed expects [B,3,H,W]");
  const auto H = image.dim(2), W = image.dim(3);
  if (H % params.patch != 0 || W % params.patch != 0) {
    throw ValidationError("patch_embed: image " + std::to_string(H) + "x" + std::to_string(W) +
                          " not divisible by patch " + std::to_string(params.patch));
  }
  Tensor fmap = conv2d(image, params.proj_weight, params.proj_bias, params.patch, 0);
  const auto B = fmap.dim(0), C = fmap.dim(1), h = fmap.dim(2), w = fmap.dim(3);
  Tensor tokens = transpose(reshape(fmap, {B, C, h * w}), 1, 2);
  return params.norm(tokens);
}

Tensor window_attention(const Tensor& windows, const WindowAttention& params, const Tensor& mask,
                        ForwardContext& ctx) {
  if (windows.ndim() != 3) throw ValidationError("window_attention expects [nW*B, N, C]");
  const auto nwb = windows.dim(0), N = windows.dim(1), C = windows.dim(2);
  const std::int64_t heads = params.num_heads;
  if (C % heads != 0) throw ValidationError("window_attention: channels not divisible by heads");
  if (N != static_cast<std::int64_t>(params.window) * params.window) {
    throw ValidationError("window_attention: token count does not match window");
  }
  const std::int64_t hd = C / heads;
  Tensor qkv = reshape(params.qkv(windows), {nwb, N, 3, heads, hd});
  qkv = permute(qkv, {2, 0, 3, 1, 4});
  Tensor q = reshape(slice(qkv, 0, 0, 1), {nwb, heads, N, hd});
  Tensor k = reshape(slice(qkv, 0, 1, 1), {nwb, heads, N, hd});
  Tensor v = reshape(slice(qkv, 0, 2, 1), {nwb, heads, N, hd});
  q = scale(q, 1.0 / std::sqrt(static_cast<double>(hd)));
  Tensor attn = matmul(q, transpose(k, -2, -1));

  Tensor bias = index_select(params.bias_table, params.bias_index);
  bias = permute(reshape(bias, {N, N, heads}), {2, 0, 1});
  attn = add(attn, bias);

  if (mask.defined()) {
    const auto nw = mask.dim(0);
    if (nwb % nw != 0) throw ValidationError("window_attention: mask window count mismatch");
    attn = reshape(attn, {nwb / nw, nw, heads, N, N});
    attn = add(attn, reshape(mask, {nw, 1, N, N}));
    attn = reshape(attn, {nwb, heads, N, N});
  }
  attn = softmax(attn, -1);
  if (ctx.training && params.attn_dropout > 0.0) attn = dropout(attn, params.attn_dropout, true, *ctx.rng);
  Tensor out = matmul(attn, v);
  out = reshape(permute(out, {0, 2, 1, 3}), {nwb, N, C});
  return params.proj(out);
}

Tensor res_mlp_branch(const Tensor& x, const ResMlp& params, ForwardContext& ctx) {
  auto drop = [&](const Tensor& t) {
    if (!ctx.training || params.dropout == 0.0) return t;
    return dropout(t, params.dropout, true, *ctx.rng);
  };
  Tensor h = drop(gelu(params.fc1(x)));
  h = drop(gelu(params.fc2(h)));
  return params.fc3(h);
}

Tensor res_mlp(const Tensor& x, const ResMlp& params, ForwardContext& ctx) {
  return add(x, res_mlp_branch(x, params, ctx));
}

Tensor swin_block(const Tensor& x, const SwinBlock& block, std::int64_t H, std::int64_t W,
                  ForwardContext& ctx) {
  if (x.ndim() != 3 || x.dim(1) != H * W) {
    throw ValidationError("swin_block: expected " + std::to_string(H * W) + " tokens, got shape " +
                          shape_str(x.shape()));
  }
  const auto B = x.dim(0), C = x.dim(2);
  Tensor h = reshape(block.norm1(x), {B, H, W, C});
  if (block.shift > 0) h = cyclic_shift(h, -block.shift, -block.shift);
  Tensor windows = window_partition(h, block.window);
  windows = window_attention(windows, block.attn, block.mask, ctx);
  h = window_reverse(windows, block.window, H, W);
  if (block.shift > 0) h = cyclic_shift(h, block.shift, block.shift);
  Tensor y = add(x, reshape(h, {B, H * W, C}));
  return add(y, res_mlp_branch(block.norm2(y), block.mlp, ctx));
}

Tensor patch_merging(const Tensor& x, const PatchMerging& params, std::int64_t H, std::int64_t W) {
  if (H % 2 != 0 || W % 2 != 0) throw ValidationError("patch_merging: grid sides must be even");
  if (x.ndim() != 3 || x.dim(1) != H * W) throw ValidationError("patch_merging: token count mismatch");
  const auto B = x.dim(0), C = x.dim(2);
  // Channel order of the 2×2 neighborhood: (0,0), (1,0), (0,1), (1,1) as (row, col).
  Tensor t = reshape(x, {B, H / 2, 2, W / 2, 2, C});
  t = permute(t, {0, 1, 3, 4, 2, 5});
  t = reshape(t, {B, (H / 2) * (W / 2), 4 * C});
  return params.reduction(params.norm(t));
}

Tensor patch_expanding(const Tensor& x, const PatchExpand& params, std::int64_t H, std::int64_t W) {
  if (x.ndim() != 3 || x.dim(1) != H * W) throw ValidationError("patch_expanding: token count mismatch");
  const auto B = x.dim(0), C = x.dim(2);
  const std::int64_t f = params.factor;
  if (f != 2 && f != 4) throw ValidationError("patch_expanding: factor must be 2 or 4");
  const std::int64_t out_c = params.out_channels;
  if (params.expand.weight.dim(1) != C) {
    throw ValidationError("patch_expanding: expected " + std::to_string(params.expand.weight.dim(1)) +
                          " channels, got " + std::to_string(C));
  }
  Tensor t = params.expand(x);
  t = reshape(t, {B, H, W, f, f, out_c});
  t = permute(t, {0, 1, 3, 2, 4, 5});
  t = reshape(t, {B, H * f * W * f, out_c});
  return params.norm(t);
}

PatchEmbed make_patch_embed(ParamFactory f, std::int64_t channels, int patch) {
  PatchEmbed p;
  p.patch = patch;
  p.proj_weight = f.trunc_normal("proj.weight", {channels, 3, patch, patch});
  p.proj_bias = f.constant("proj.bias", {channels}, 0.0);
  p.norm = f.layer_norm("norm", channels);
  return p;
}

WindowAttention make_window_attention(ParamFactory f, std::int64_t dim, int heads, int window,
                                      double attn_dropout) {
  if (dim % heads != 0) {
    throw ValidationError("attention: dim " + std::to_string(dim) + " not divisible by " +
                          std::to_string(heads) + " heads");
  }
  WindowAttention a;
  a.num_heads = heads;
  a.window = window;
  a.attn_dropout = attn_dropout;
  const std::int64_t side = 2 * window - 1;
  a.bias_table = f.trunc_normal("relative_position_bias_table", {side * side, heads});
  a.bias_index = relative_position_index(window);
  a.qkv = f.linear("qkv", dim, 3 * dim);
  a.proj = f.linear("proj", dim, dim);
  return a;
}

ResMlp make_res_mlp(ParamFactory f, std::int64_t dim, double ratio, double dropout) {
  const auto hidden = static_cast<std::int64_t>(std::llround(static_cast<double>(dim) * ratio));
  ResMlp m;
  m.fc1 = f.linear("fc1", dim, hidden);
  m.fc2 = f.linear("fc2", hidden, hidden);
  m.fc3 = f.linear("fc3", hidden, dim);
  m.dropout = dropout;
  return m;
}

SwinBlock make_swin_block(ParamFactory f, const SwinStageConfig& cfg, int index, std::int64_t H,
                          std::int64_t W) {
  if (cfg.window < 2) throw ValidationError("window size must be >= 2");
  SwinBlock b;
  b.window = effective_window(cfg.window, H, W);
  if (H % b.window != 0 || W % b.window != 0) {
    throw ValidationError("token grid " + std::to_string(H) + "x" + std::to_string(W) +
                          " is not divisible by window " + std::to_string(b.window));
  }
  const bool fits = b.window < cfg.window || (H == b.window && W == b.window);
  b.shift = (index % 2 == 1 && !fits) ? b.window / 2 : 0;
  b.norm1 = f.layer_norm("norm1", cfg.embed_dim);
  b.attn = make_window_attention(f.scope("attn"), cfg.embed_dim, cfg.num_heads, b.window, cfg.attn_dropout);
  b.norm2 = f.layer_norm("norm2", cfg.embed_dim);
  b.mlp = make_res_mlp(f.scope("mlp"), cfg.embed_dim, cfg.mlp_ratio, cfg.mlp_dropout);
  if (b.shift > 0) b.mask = build_shift_mask(H, W, b.window, b.shift, f.dtype());
  return b;
}

std::vector<SwinBlock> make_swin_blocks(ParamFactory f, const SwinStageConfig& cfg, std::int64_t H,
                                        std::int64_t W) {
  std::vector<SwinBlock> blocks;
  for (int i = 0; i < cfg.depth; ++i) {
    blocks.push_back(make_swin_block(f.scope("blocks." + std::to_string(i)), cfg, i, H, W));
  }
  return blocks;
}

PatchMerging make_patch_merging(ParamFactory f, std::int64_t dim) {
  PatchMerging m;
  m.norm = f.layer_norm("norm", 4 * dim);
  m.reduction = f.linear("reduction", 4 * dim, 2 * dim, false);
  return m;
}

PatchExpand make_patch_expand(ParamFactory f, std::int64_t dim, int factor, std::int64_t out_dim) {
  if (factor != 2 && factor != 4) throw ValidationError("patch expand: factor must be 2 or 4");
  if (out_dim <= 0) {
    if (factor == 2 && dim % 2 != 0) throw ValidationError("patch expand: dim must be even");
    out_dim = factor == 2 ? dim / 2 : dim;
  }
  PatchExpand e;
  e.factor = factor;
  e.out_channels = out_dim;
  e.expand = f.linear("expand", dim, factor * factor * out_dim, false);
  e.norm = f.layer_norm("norm", out_dim);
  return e;
}

}  // namespace mseg
