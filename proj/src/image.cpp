#include "bsplat/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <string>

#include "bsplat/bytes.hpp"
#include "bsplat/error.hpp"

namespace bsplat {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

void write_png(const std::string& path, const ImageBuffer& image) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot write " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialization failed");
  }
  std::vector<png_byte> row(static_cast<std::size_t>(image.width) * 3);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng write failed: " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width * 3; ++x) {
      const float v = std::clamp(image.data[static_cast<std::size_t>(y) * image.width * 3 + x], 0.0f, 1.0f);
      row[static_cast<std::size_t>(x)] = static_cast<png_byte>(std::lround(v * 255.0f));
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

ImageBuffer read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialization failed");
  }
  ImageBuffer image;
  std::vector<png_byte> row;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("cannot decode png: " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const int color_type = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  image = ImageBuffer(w, h);
  row.resize(png_get_rowbytes(png, info));
  for (int y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < w * 3; ++x)
      image.data[static_cast<std::size_t>(y) * w * 3 + x] = static_cast<float>(row[static_cast<std::size_t>(x)]) / 255.0f;
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return image;
}

void write_npy(const std::string& path, const ImageBuffer& image) {
  std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': (" +
                       std::to_string(image.height) + ", " + std::to_string(image.width) + ", 3), }";
  // magic(6) + version(2) + header_len(2) + header must be a multiple of 64
  const std::size_t unpadded = 10 + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header.push_back('\n');

  ByteWriter w;
  w.put<std::uint8_t>(0x93);
  w.put_tag("NUMPY");
  w.put<std::uint8_t>(1);
  w.put<std::uint8_t>(0);
  w.put<std::uint16_t>(static_cast<std::uint16_t>(header.size()));
  w.put_tag(header);
  for (float v : image.data) w.put(v);
  write_file(path, w.bytes());
}

ImageBuffer read_npy(const std::string& path) {
  const auto bytes = read_file(path);
  ByteReader r(bytes);
  if (r.get<std::uint8_t>() != 0x93) throw FormatError("not an npy file: " + path);
  r.expect_tag("NUMPY");
  r.get<std::uint8_t>();
  r.get<std::uint8_t>();
  const auto len = r.get<std::uint16_t>();
  const auto hb = r.get_bytes(len);
  const std::string header(hb.begin(), hb.end());
  if (header.find("'<f4'") == std::string::npos || header.find("False") == std::string::npos)
    throw FormatError("npy must be little-endian float32 in C order: " + path);
  const auto open = header.find('(');
  int h = 0, w = 0, c = 0;
  if (open == std::string::npos || std::sscanf(header.c_str() + open, "(%d, %d, %d)", &h, &w, &c) != 3 || c != 3)
    throw FormatError("npy shape must be (H, W, 3): " + path);
  ImageBuffer image(w, h);
  for (auto& v : image.data) v = r.get<float>();
  return image;
}

double mse(const ImageBuffer& a, const ImageBuffer& b) {
  if (!a.same_shape(b)) throw InvalidArgument("image shapes differ");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - b.data[i];
    sum += d * d;
  }
  return a.data.empty() ? 0.0 : sum / static_cast<double>(a.data.size());
}

double psnr(const ImageBuffer& a, const ImageBuffer& b) {
  const double e = mse(a, b);
  if (e <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / e));
}

}  // namespace bsplat
