#include "mseg/image.hpp"

#include <png.h>

#include <cctype>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <memory>
#include <string>

#include "mseg/errors.hpp"

namespace mseg {

Image::Image(int w, int h, int c, std::uint8_t fill)
    : width(w), height(h), channels(c), pixels(static_cast<std::size_t>(w) * h * c, fill) {}

namespace {

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class PnmParser {
 public:
  PnmParser(const std::vector<std::uint8_t>& b, const std::filesystem::path& path) : b_(b), path_(path) {}

  void skip_space() {
    while (pos_ < b_.size()) {
      if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else if (std::isspace(b_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  long number() {
    skip_space();
    if (pos_ >= b_.size() || !std::isdigit(b_[pos_])) fail("expected a number");
    long v = 0;
    while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
      v = v * 10 + (b_[pos_++] - '0');
      if (v > 1'000'000) fail("number too large");
    }
    return v;
  }

  std::uint8_t raw() {
    if (pos_ >= b_.size()) fail("pixel data truncated");
    return b_[pos_++];
  }

  void single_whitespace() {
    if (pos_ >= b_.size() || !std::isspace(b_[pos_])) fail("missing whitespace before raster");
    ++pos_;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw IoError("malformed PNM " + path_.string() + ": " + what);
  }

 private:
  const std::vector<std::uint8_t>& b_;
  const std::filesystem::path& path_;
  std::size_t pos_ = 2;
};

Image read_pnm(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path) {
  const char kind = static_cast<char>(bytes[1]);
  PnmParser p(bytes, path);
  const long w = p.number(), h = p.number(), maxval = p.number();
  if (w < 1 || h < 1) p.fail("empty image");
  if (maxval < 1 || maxval > 255) p.fail("only 8-bit images are supported (maxval " + std::to_string(maxval) + ")");
  const int channels = (kind == '3' || kind == '6') ? 3 : 1;
  Image img(static_cast<int>(w), static_cast<int>(h), channels);
  if (kind == '5' || kind == '6') {
    p.single_whitespace();
    for (auto& v : img.pixels) v = p.raw();
  } else {
    for (auto& v : img.pixels) {
      const long x = p.number();
      if (x > maxval) p.fail("sample exceeds maxval");
      v = static_cast<std::uint8_t>(x);
    }
  }
  return img;
}

struct PngReadGuard {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngReadGuard() { png_destroy_read_struct(&png, info ? &info : nullptr, nullptr); }
};

struct MemSource {
  const std::vector<std::uint8_t>* bytes;
  std::size_t pos;
};

void png_error_fn(png_structp png, png_const_charp msg) {
  auto* what = static_cast<std::string*>(png_get_error_ptr(png));
  if (what) *what = msg;
  png_longjmp(png, 1);
}

void png_warning_fn(png_structp, png_const_charp) {}

Image read_png(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path) {
  std::string error;
  PngReadGuard g;
  g.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &error, png_error_fn, png_warning_fn);
  if (!g.png) throw IoError("libpng initialization failed");
  g.info = png_create_info_struct(g.png);
  if (!g.info) throw IoError("libpng initialization failed");
  MemSource src{&bytes, 0};
  Image img;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(g.png))) throw IoError("cannot decode PNG " + path.string() + ": " + error);
  png_set_read_fn(g.png, &src, [](png_structp png, png_bytep out, png_size_t n) {
    auto* s = static_cast<MemSource*>(png_get_io_ptr(png));
    if (s->pos + n > s->bytes->size()) png_error(png, "unexpected end of data");
    std::copy_n(s->bytes->data() + s->pos, n, out);
    s->pos += n;
  });
  png_read_info(g.png, g.info);
  const auto depth = png_get_bit_depth(g.png, g.info);
  const auto color = png_get_color_type(g.png, g.info);
  if (depth == 16) png_set_strip_16(g.png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(g.png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(g.png);
  png_set_strip_alpha(g.png);
  png_read_update_info(g.png, g.info);
  const int channels = png_get_channels(g.png, g.info);
  img = Image(static_cast<int>(png_get_image_width(g.png, g.info)),
              static_cast<int>(png_get_image_height(g.png, g.info)), channels);
  rows.resize(static_cast<std::size_t>(img.height));
  for (int y = 0; y < img.height; ++y) {
    rows[static_cast<std::size_t>(y)] = img.pixels.data() + static_cast<std::size_t>(y) * img.width * channels;
  }
  png_read_image(g.png, rows.data());
  png_read_end(g.png, nullptr);
  if (img.channels != 1 && img.channels != 3) throw IoError("unsupported PNG layout in " + path.string());
  return img;
}

void check_writable(const Image& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw ValidationError("can only write 1- or 3-channel images, got " + std::to_string(image.channels));
  }
  if (image.width < 1 || image.height < 1) throw ValidationError("cannot write an empty image");
  if (image.pixels.size() != static_cast<std::size_t>(image.width) * image.height * image.channels) {
    throw ValidationError("image pixel buffer does not match its dimensions");
  }
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  if (bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0) return read_png(bytes, path);
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '2' || bytes[1] == '3' || bytes[1] == '5' || bytes[1] == '6')) {
    return read_pnm(bytes, path);
  }
  throw IoError("unrecognized image format: " + path.string());
}

void write_pnm(const Image& image, const std::filesystem::path& path) {
  check_writable(image);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << (image.channels == 1 ? "P5" : "P6") << '\n' << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

void write_png(const Image& image, const std::filesystem::path& path) {
  check_writable(image);
  std::unique_ptr<std::FILE, int (*)(std::FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw IoError("cannot open " + path.string() + " for writing");
  std::string error;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &error, png_error_fn, png_warning_fn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng initialization failed");
  }
  std::vector<png_bytep> rows(static_cast<std::size_t>(image.height));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing PNG " + path.string() + ": " + error);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               image.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y) {
    rows[static_cast<std::size_t>(y)] =
        const_cast<png_bytep>(image.pixels.data() + static_cast<std::size_t>(y) * image.width * image.channels);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void write_image(const Image& image, const std::filesystem::path& path) {
  auto ext = path.extension().string();
  for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  if (ext == ".png") {
    write_png(image, path);
  } else {
    write_pnm(image, path);
  }
}

}  // namespace mseg
