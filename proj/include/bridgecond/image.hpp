#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace bridgecond {

// RGB raster, floats in [0,1], row-major, channel-last.
struct RasterImage {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;  // height*width*3

  RasterImage() = default;
  RasterImage(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0.0) {}

  double& at(int x, int y, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  double at(int x, int y, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }

  bool operator==(const RasterImage& o) const {
    return width == o.width && height == o.height && pixels == o.pixels;
  }
};

// Binary mask, 0/1 bytes.
struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;

  Mask() = default;
  Mask(int w, int h) : width(w), height(h), bits(static_cast<std::size_t>(w) * h, 0) {}

  std::uint8_t& at(int x, int y) { return bits[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x]; }
  std::size_t count() const;
  bool empty() const { return count() == 0; }

  bool operator==(const Mask& o) const {
    return width == o.width && height == o.height && bits == o.bits;
  }
};

// Binary PPM (P6) for RGB and PGM (P5) for masks, 8-bit. Round-trip through
// the byte quantization is the repo's on-disk pixel contract.
void write_ppm(const RasterImage& img, const std::string& path);
RasterImage read_ppm(const std::string& path);
void write_pgm(const Mask& mask, const std::string& path);
Mask read_pgm(const std::string& path);

// byte <-> float helpers used by the io above
std::uint8_t quantize8(double v);

}  // namespace bridgecond
