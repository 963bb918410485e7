#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace mseg {

/// 8-bit image, channels interleaved, rows top to bottom.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, int c, std::uint8_t fill = 0);

  std::uint8_t& at(int y, int x, int c = 0) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int y, int x, int c = 0) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool operator==(const Image&) const = default;
};

/// Reads PGM/PPM (P2, P3, P5, P6; maxval <= 255, values kept as stored) or
/// PNG (8-bit gray, gray+alpha, RGB, RGBA; alpha dropped). Format is chosen
/// from the file's magic bytes.
Image read_image(const std::filesystem::path& path);

/// Binary PGM (P5) for one channel, binary PPM (P6) for three.
void write_pnm(const Image& image, const std::filesystem::path& path);
void write_png(const Image& image, const std::filesystem::path& path);
/// Dispatches on the extension: .png writes PNG, anything else PNM.
void write_image(const Image& image, const std::filesystem::path& path);

}  // namespace mseg
