#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace bsplat {

/// H x W x 3 float radiance image, row-major with interleaved channels.
struct ImageBuffer {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  ImageBuffer() = default;
  ImageBuffer(int w, int h, float fill = 0.0f)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width + x) * 3 + c;
  }
  float& at(int x, int y, int c) { return data[index(x, y, c)]; }
  float at(int x, int y, int c) const { return data[index(x, y, c)]; }
  bool same_shape(const ImageBuffer& o) const { return width == o.width && height == o.height; }

  friend bool operator==(const ImageBuffer&, const ImageBuffer&) = default;
};

/// 8-bit RGB PNG. Values are clamped to [0, 1] and rounded on write.
void write_png(const std::string& path, const ImageBuffer& image);
ImageBuffer read_png(const std::string& path);

/// NumPy .npy (version 1.0, '<f4', C order, shape (H, W, 3)).
void write_npy(const std::string& path, const ImageBuffer& image);
ImageBuffer read_npy(const std::string& path);

/// Mean squared error over all channels.
double mse(const ImageBuffer& a, const ImageBuffer& b);
/// PSNR with peak 1.0; zero error is reported as 99 dB.
double psnr(const ImageBuffer& a, const ImageBuffer& b);

inline constexpr double kPsnrCap = 99.0;

}  // namespace bsplat
