#include "mseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mseg/errors.hpp"

namespace mseg {

TilePolicy parse_tile_policy(const std::string& name) {
  if (name == "none") return TilePolicy::none;
  if (name == "cover") return TilePolicy::cover;
  throw ValidationError("unknown tiling policy '" + name + "' (expected none or cover)");
}

std::vector<int> tile_offsets(int extent, int tile, TilePolicy policy) {
  if (tile < 1) throw ValidationError("tile side must be >= 1");
  if (extent < tile) {
    throw ValidationError("image side " + std::to_string(extent) + " is smaller than the tile " + std::to_string(tile));
  }
  std::vector<int> out;
  const int full = extent / tile;
  for (int i = 0; i < full; ++i) out.push_back(i * tile);
  if (policy == TilePolicy::cover && extent % tile != 0) out.push_back(extent - tile);
  return out;
}

Image crop(const Image& image, int y, int x, int h, int w) {
  if (y < 0 || x < 0 || h < 1 || w < 1 || y + h > image.height || x + w > image.width) {
    throw ValidationError("crop window outside the image");
  }
  Image out(w, h, image.channels);
  const auto row = static_cast<std::size_t>(w) * image.channels;
  for (int r = 0; r < h; ++r) {
    const auto* src = &image.pixels[(static_cast<std::size_t>(y + r) * image.width + x) * image.channels];
    std::copy_n(src, row, &out.pixels[static_cast<std::size_t>(r) * row]);
  }
  return out;
}

std::vector<Tile> tile_image(const Image& image, const TilingSpec& spec) {
  const auto ys = tile_offsets(image.height, spec.tile, spec.policy);
  const auto xs = tile_offsets(image.width, spec.tile, spec.policy);
  std::vector<Tile> tiles;
  for (int y : ys) {
    for (int x : xs) tiles.push_back({crop(image, y, x, spec.tile, spec.tile), y, x});
  }
  return tiles;
}

Image crop_scale_band(const Image& image, double fraction) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw ValidationError("scale-band fraction must be in [0, 1)");
  const int removed = static_cast<int>(std::ceil(image.height * fraction - 1e-9));
  const int keep = image.height - std::max(removed, 0);
  if (keep < 1) throw ValidationError("scale-band crop leaves no rows");
  if (keep == image.height) return image;
  return crop(image, 0, 0, keep, image.width);
}

// ---------------------------------------------------------------------------

AugmentSpec AugmentSpec::none() {
  AugmentSpec s;
  s.hflip_p = s.vflip_p = s.rot90_p = 0;
  s.contrast_p = s.brightness_p = s.gamma_p = s.blur_sharpen_p = s.noise_p = 0;
  return s;
}

void AugmentSpec::validate() const {
  for (double p : {hflip_p, vflip_p, rot90_p, contrast_p, brightness_p, gamma_p, blur_sharpen_p, noise_p}) {
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("augmentation probabilities must lie in [0, 1]");
  }
  if (contrast_p > 0 && !(contrast_lo > 0 && contrast_lo < contrast_hi)) throw ValidationError("contrast range must satisfy 0 < lo < hi");
  if (gamma_p > 0 && !(gamma_lo > 0 && gamma_lo < gamma_hi)) throw ValidationError("gamma range must satisfy 0 < lo < hi");
  if (brightness_p > 0 && !(brightness_delta > 0)) throw ValidationError("brightness delta must be > 0");
  if (noise_p > 0 && !(noise_std > 0)) throw ValidationError("noise std must be > 0");
  if (crop_size < 0) throw ValidationError("crop size must be >= 0");
}

AugmentParams sample_augment(const AugmentSpec& spec, int height, int width, Rng& rng) {
  spec.validate();
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto coin = [&](double p) { return u01(rng) < p; };
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
  AugmentParams a;
  // Every draw happens unconditionally so the stream position does not
  // depend on which transforms fire.
  if (spec.crop_size > 0) {
    if (spec.crop_size > height || spec.crop_size > width) throw ValidationError("crop size exceeds the image");
    a.crop_h = a.crop_w = spec.crop_size;
    a.crop_y = std::uniform_int_distribution<int>(0, height - spec.crop_size)(rng);
    a.crop_x = std::uniform_int_distribution<int>(0, width - spec.crop_size)(rng);
  }
  a.hflip = coin(spec.hflip_p);
  a.vflip = coin(spec.vflip_p);
  const bool rot = coin(spec.rot90_p);
  const int k = std::uniform_int_distribution<int>(1, 3)(rng);
  a.rot90 = rot ? k : 0;
  const bool c = coin(spec.contrast_p);
  const double cv = uniform(spec.contrast_lo, spec.contrast_hi);
  if (c) a.contrast = cv;
  const bool b = coin(spec.brightness_p);
  const double bv = uniform(-spec.brightness_delta, spec.brightness_delta);
  if (b) a.brightness = bv;
  const bool g = coin(spec.gamma_p);
  const double gv = uniform(spec.gamma_lo, spec.gamma_hi);
  if (g) a.gamma = gv;
  const bool f = coin(spec.blur_sharpen_p);
  const bool blur = coin(0.5);
  if (f) a.filter = blur ? Filter::blur : Filter::sharpen;
  const bool n = coin(spec.noise_p);
  const auto seed = rng();
  if (n) {
    a.noise_std = spec.noise_std;
    a.noise_seed = seed;
  }
  return a;
}

namespace {

Image flip_h(const Image& im) {
  Image out(im.width, im.height, im.channels);
  for (int y = 0; y < im.height; ++y)
    for (int x = 0; x < im.width; ++x)
      for (int c = 0; c < im.channels; ++c) out.at(y, x, c) = im.at(y, im.width - 1 - x, c);
  return out;
}

Image flip_v(const Image& im) {
  Image out(im.width, im.height, im.channels);
  for (int y = 0; y < im.height; ++y)
    for (int x = 0; x < im.width; ++x)
      for (int c = 0; c < im.channels; ++c) out.at(y, x, c) = im.at(im.height - 1 - y, x, c);
  return out;
}

// One counter-clockwise quarter turn: out(y, x) = in(x, W-1-y).
Image rot90_ccw(const Image& im) {
  Image out(im.height, im.width, im.channels);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      for (int c = 0; c < im.channels; ++c) out.at(y, x, c) = im.at(x, im.width - 1 - y, c);
  return out;
}

std::uint8_t quantize(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

Image apply_geometric(const Image& image, const AugmentParams& p) {
  Image out = p.crop_h > 0 ? crop(image, p.crop_y, p.crop_x, p.crop_h, p.crop_w) : image;
  if (p.hflip) out = flip_h(out);
  if (p.vflip) out = flip_v(out);
  for (int i = 0; i < p.rot90; ++i) out = rot90_ccw(out);
  return out;
}

Image apply_photometric(const Image& image, const AugmentParams& p) {
  const bool neutral = p.contrast == 1.0 && p.brightness == 0.0 && p.gamma == 1.0 && p.filter == Filter::none &&
                       p.noise_std == 0.0;
  if (neutral) return image;
  const int W = image.width, H = image.height, C = image.channels;
  std::vector<double> v(image.pixels.size());
  double mean = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = image.pixels[i] / 255.0;
    mean += v[i];
  }
  mean /= static_cast<double>(v.size());
  for (auto& x : v) {
    x = std::clamp(p.contrast * (x - mean) + mean + p.brightness, 0.0, 1.0);
    if (p.gamma != 1.0) x = std::pow(x, p.gamma);
  }
  if (p.filter != Filter::none) {
    std::vector<double> blurred(v.size());
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        for (int c = 0; c < C; ++c) {
          double s = 0;
          int n = 0;
          for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
              const int yy = y + dy, xx = x + dx;
              if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
              s += v[(static_cast<std::size_t>(yy) * W + xx) * C + c];
              ++n;
            }
          }
          blurred[(static_cast<std::size_t>(y) * W + x) * C + c] = s / n;
        }
      }
    }
    if (p.filter == Filter::blur) {
      v = std::move(blurred);
    } else {
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = 2.0 * v[i] - blurred[i];  // unsharp mask
    }
  }
  if (p.noise_std > 0) {
    Rng noise(p.noise_seed);
    std::normal_distribution<double> gauss(0.0, p.noise_std);
    for (auto& x : v) x += gauss(noise);
  }
  Image out(W, H, C);
  for (std::size_t i = 0; i < v.size(); ++i) out.pixels[i] = quantize(v[i]);
  return out;
}

std::pair<Image, std::optional<Image>> augment(const Image& image, const std::optional<Image>& mask,
                                               const AugmentSpec& spec, Rng& rng) {
  if (mask && (mask->width != image.width || mask->height != image.height)) {
    throw ValidationError("mask size " + std::to_string(mask->width) + "x" + std::to_string(mask->height) +
                          " differs from image size " + std::to_string(image.width) + "x" +
                          std::to_string(image.height));
  }
  const auto params = sample_augment(spec, image.height, image.width, rng);
  Image out = apply_photometric(apply_geometric(image, params), params);
  std::optional<Image> out_mask;
  if (mask) out_mask = apply_geometric(*mask, params);
  return {std::move(out), std::move(out_mask)};
}

// ---------------------------------------------------------------------------

Tensor normalize(const Image& image, const NormalizeSpec& spec, DType dtype) {
  if (image.channels != 1 && image.channels != 3) {
    throw ValidationError("normalize supports 1 or 3 channels, got " + std::to_string(image.channels));
  }
  const std::int64_t H = image.height, W = image.width;
  std::vector<double> d(static_cast<std::size_t>(3 * H * W));
  for (int c = 0; c < 3; ++c) {
    const int src = image.channels == 1 ? 0 : c;
    for (std::int64_t y = 0; y < H; ++y) {
      for (std::int64_t x = 0; x < W; ++x) {
        const double v = image.at(static_cast<int>(y), static_cast<int>(x), src) / 255.0;
        d[static_cast<std::size_t>((c * H + y) * W + x)] = (v - spec.mean[static_cast<std::size_t>(c)]) / spec.std[static_cast<std::size_t>(c)];
      }
    }
  }
  return Tensor::from_data({3, H, W}, std::move(d), dtype);
}

Tensor stack_images(const std::vector<Tensor>& images) {
  MSEG_CHECK(!images.empty(), "cannot stack an empty image list");
  const auto& s = images.front().shape();
  MSEG_CHECK(s.size() == 3, "stack_images expects [C,H,W] tensors");
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(numel(s)) * images.size());
  for (const auto& t : images) {
    MSEG_CHECK(t.shape() == s, "stack_images: shape mismatch " + shape_str(t.shape()) + " vs " + shape_str(s));
    d.insert(d.end(), t.data().begin(), t.data().end());
  }
  return Tensor::from_data({static_cast<std::int64_t>(images.size()), s[0], s[1], s[2]}, std::move(d),
                           images.front().dtype());
}

std::vector<std::int32_t> mask_labels(const Image& mask, int num_classes) {
  if (mask.channels != 1) throw ValidationError("masks must be single-channel");
  std::vector<std::int32_t> out(mask.pixels.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = mask.pixels[i];
    if (out[i] >= num_classes) {
      throw ValidationError("mask value " + std::to_string(out[i]) + " is not a class index below " +
                            std::to_string(num_classes));
    }
  }
  return out;
}

}  // namespace mseg
