#include "m2m/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <nlohmann/json.hpp>
#include <vector>

namespace m2m {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  return f;
}

[[noreturn]] void png_fail(png_structp png, png_const_charp msg) {
  (void)png;
  throw IoError(std::string("libpng: ") + msg);
}

void png_warn(png_structp, png_const_charp) {}

}  // namespace

Image read_png(const std::filesystem::path& path) {
  FilePtr file = open_file(path, "rb");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw IoError("'" + path.string() + "' is not a PNG file");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_read_struct(p, i, nullptr); }
  } guard{&png, &info};

  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const int color_type = png_get_color_type(png, info);
  int bit_depth = png_get_bit_depth(png, info);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) {
    png_set_expand_gray_1_2_4_to_8(png);
    bit_depth = 8;
  }
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (bit_depth == 16) png_set_swap(png);  // host little-endian rows
  png_read_update_info(png, info);

  const int width = int(png_get_image_width(png, info));
  const int height = int(png_get_image_height(png, info));
  const int channels = png_get_channels(png, info);
  bit_depth = png_get_bit_depth(png, info);
  if (channels != 1 && channels != 3) throw IoError("unsupported PNG channel layout");

  const std::size_t row_bytes = png_get_rowbytes(png, info);
  std::vector<png_byte> buffer(row_bytes * height);
  std::vector<png_bytep> rows(height);
  for (int y = 0; y < height; ++y) rows[y] = buffer.data() + y * row_bytes;
  png_read_image(png, rows.data());

  Image img(width, height, channels);
  const double scale = bit_depth == 16 ? 65535.0 : 255.0;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < channels; ++c) {
        const std::size_t i = std::size_t(x) * channels + c;
        double v;
        if (bit_depth == 16) {
          std::uint16_t s;
          std::memcpy(&s, rows[y] + 2 * i, 2);
          v = s;
        } else {
          v = rows[y][i];
        }
        img(c, y, x) = v / scale;
      }
    }
  }
  return img;
}

void write_png(const std::filesystem::path& path, const Image& img, int bit_depth) {
  if (img.channels() != 1 && img.channels() != 3)
    throw DimensionError("write_png: expected 1 or 3 channels");
  if (bit_depth != 8 && bit_depth != 16) throw ParameterError("write_png: bit depth must be 8 or 16");
  FilePtr file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_write_struct(p, i); }
  } guard{&png, &info};

  png_init_io(png, file.get());
  const int channels = img.channels();
  png_set_IHDR(png, info, img.width(), img.height(), bit_depth,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (bit_depth == 16) png_set_swap(png);

  const int bytes = bit_depth / 8;
  const double scale = bit_depth == 16 ? 65535.0 : 255.0;
  std::vector<png_byte> row(std::size_t(img.width()) * channels * bytes);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < channels; ++c) {
        const double v = std::clamp(img(c, y, x), 0.0, 1.0) * scale;
        const auto q = static_cast<std::uint16_t>(std::lround(v));
        const std::size_t i = (std::size_t(x) * channels + c) * bytes;
        if (bytes == 2)
          std::memcpy(&row[i], &q, 2);
        else
          row[i] = static_cast<png_byte>(q);
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
}

std::filesystem::path sidecar_path(const std::filesystem::path& png_path) {
  auto p = png_path;
  p.replace_extension(".json");
  return p;
}

void write_bayer(const std::filesystem::path& png_path, const BayerFrame& frame, double sigma) {
  Image img(frame.width(), frame.height(), 1);
  img.channel(0) = frame.samples;
  write_png(png_path, img, 16);
  nlohmann::json side = {{"pattern", frame.pattern.name()}, {"sigma", sigma}};
  std::ofstream(sidecar_path(png_path)) << side.dump(2) << "\n";
}

BayerFrame read_bayer(const std::filesystem::path& png_path, BayerSidecar* sidecar) {
  Image img = read_png(png_path);
  if (img.channels() != 1) throw IoError("Bayer frame '" + png_path.string() + "' is not single-channel");
  BayerSidecar meta;
  const auto side = sidecar_path(png_path);
  if (std::filesystem::exists(side)) {
    std::ifstream in(side);
    nlohmann::json j;
    try {
      in >> j;
      meta.pattern = CfaPattern::parse(j.at("pattern").get<std::string>());
      meta.sigma = j.value("sigma", 0.0);
    } catch (const nlohmann::json::exception& e) {
      throw IoError("bad sidecar '" + side.string() + "': " + e.what());
    }
  }
  if (sidecar) *sidecar = meta;
  detail::require_even(img.width(), img.height(), "read_bayer");
  return BayerFrame{img.channel(0), meta.pattern};
}

}  // namespace m2m
