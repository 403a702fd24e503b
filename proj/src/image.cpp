#include "bridgecond/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace bridgecond {

std::size_t Mask::count() const {
  std::size_t n = 0;
  for (auto b : bits) n += (b != 0);
  return n;
}

std::uint8_t quantize8(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

namespace {

void skip_ws_and_comments(std::istream& in) {
  int c = in.peek();
  while (c == '#' || std::isspace(c)) {
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else {
      in.get();
    }
    c = in.peek();
  }
}

int read_pnm_int(std::istream& in) {
  skip_ws_and_comments(in);
  int v = 0;
  if (!(in >> v)) throw std::runtime_error("pnm: malformed header integer");
  return v;
}

}  // namespace

void write_ppm(const RasterImage& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_ppm: cannot open " + path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<std::uint8_t> row(static_cast<std::size_t>(img.width) * 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) row[static_cast<std::size_t>(x) * 3 + c] = quantize8(img.at(x, y, c));
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw std::runtime_error("write_ppm: write failed for " + path);
}

RasterImage read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_ppm: cannot open " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6") throw std::runtime_error("read_ppm: not a P6 file: " + path);
  const int w = read_pnm_int(in), h = read_pnm_int(in), maxv = read_pnm_int(in);
  if (maxv != 255) throw std::runtime_error("read_ppm: only maxval 255 supported");
  in.get();  // single whitespace after header
  RasterImage img(w, h);
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) throw std::runtime_error("read_ppm: truncated pixel data in " + path);
  for (std::size_t i = 0; i < raw.size(); ++i) img.pixels[i] = raw[i] / 255.0;
  return img;
}

void write_pgm(const Mask& mask, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_pgm: cannot open " + path);
  out << "P5\n" << mask.width << " " << mask.height << "\n255\n";
  std::vector<std::uint8_t> row(static_cast<std::size_t>(mask.width));
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) row[static_cast<std::size_t>(x)] = mask.at(x, y) ? 255 : 0;
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw std::runtime_error("write_pgm: write failed for " + path);
}

Mask read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_pgm: cannot open " + path);
  std::string magic;
  in >> magic;
  if (magic != "P5") throw std::runtime_error("read_pgm: not a P5 file: " + path);
  const int w = read_pnm_int(in), h = read_pnm_int(in), maxv = read_pnm_int(in);
  if (maxv != 255) throw std::runtime_error("read_pgm: only maxval 255 supported");
  in.get();
  Mask mask(w, h);
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(w) * h);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) throw std::runtime_error("read_pgm: truncated pixel data in " + path);
  for (std::size_t i = 0; i < raw.size(); ++i) mask.bits[i] = raw[i] >= 128 ? 1 : 0;
  return mask;
}

}  // namespace bridgecond
