#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "mseg/image.hpp"
#include "mseg/tensor.hpp"

namespace mseg {

// ---------------------------------------------------------------------------
// Tiling

enum class TilePolicy { none, cover };

TilePolicy parse_tile_policy(const std::string& name);

struct TilingSpec {
  int tile = 512;
  TilePolicy policy = TilePolicy::cover;
};

struct Tile {
  Image image;
  int y = 0;
  int x = 0;
};

/// Tile origins along one axis of length `extent`.
std::vector<int> tile_offsets(int extent, int tile, TilePolicy policy);

std::vector<Tile> tile_image(const Image& image, const TilingSpec& spec);

Image crop(const Image& image, int y, int x, int h, int w);

/// Removes the bottom ceil(H·fraction) rows.
Image crop_scale_band(const Image& image, double fraction);

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentSpec {
  double hflip_p = 0.5;
  double vflip_p = 0.5;
  double rot90_p = 0.5;  // when taken, rotate by 90·k degrees, k uniform in {1,2,3}
  double contrast_p = 0.5;
  double contrast_lo = 0.8, contrast_hi = 1.2;
  double brightness_p = 0.5;
  double brightness_delta = 0.1;  // uniform in [-delta, delta], in [0,1] intensity units
  double gamma_p = 0.5;
  double gamma_lo = 0.8, gamma_hi = 1.2;
  double blur_sharpen_p = 0.2;  // when taken, blur or sharpen with equal odds
  double noise_p = 0.5;
  double noise_std = 0.02;
  int crop_size = 0;  // 0 disables random cropping

  /// All probabilities zero: augment is the identity.
  static AugmentSpec none();
  void validate() const;
};

enum class Filter { none, blur, sharpen };

/// Concrete transform parameters drawn from an AugmentSpec.
struct AugmentParams {
  int crop_y = 0, crop_x = 0, crop_h = 0, crop_w = 0;  // crop_h == 0: no crop
  bool hflip = false;
  bool vflip = false;
  int rot90 = 0;  // counter-clockwise quarter turns
  double contrast = 1.0;
  double brightness = 0.0;
  double gamma = 1.0;
  Filter filter = Filter::none;
  double noise_std = 0.0;
  std::uint64_t noise_seed = 0;
};

AugmentParams sample_augment(const AugmentSpec& spec, int height, int width, Rng& rng);

/// Crop, flips and rotation only. Works for images and masks alike.
Image apply_geometric(const Image& image, const AugmentParams& params);
/// Contrast (about the image mean), brightness, gamma, blur/sharpen, noise.
Image apply_photometric(const Image& image, const AugmentParams& params);

std::pair<Image, std::optional<Image>> augment(const Image& image, const std::optional<Image>& mask,
                                               const AugmentSpec& spec, Rng& rng);

// ---------------------------------------------------------------------------
// Normalization

struct NormalizeSpec {
  std::array<double, 3> mean{0.5, 0.5, 0.5};
  std::array<double, 3> std{0.5, 0.5, 0.5};
};

/// 8-bit image -> [3,H,W]: x/255, then (x − mean)/std per channel. Grayscale
/// inputs are replicated to three channels.
Tensor normalize(const Image& image, const NormalizeSpec& spec = {}, DType dtype = DType::f32);

/// Stacks same-sized [3,H,W] tensors into [B,3,H,W].
Tensor stack_images(const std::vector<Tensor>& images);

/// Mask pixel values as class indices, checked against num_classes.
std::vector<std::int32_t> mask_labels(const Image& mask, int num_classes);

}  // namespace mseg
