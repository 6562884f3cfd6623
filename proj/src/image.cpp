// SPDX-License-Identifier: Apache-2.0
#include "fg3d/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "fg3d/error.hpp"

namespace fg3d {

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

std::array<std::uint8_t, 3> Image::rgb8(std::size_t x, std::size_t y) const {
  return {to_byte(at(x, y, 0)), to_byte(at(x, y, 1)), to_byte(at(x, y, 2))};
}

void Image::set_rgb8(std::size_t x, std::size_t y, std::array<std::uint8_t, 3> rgb) {
  for (std::size_t c = 0; c < 3; ++c) at(x, y, c) = rgb[c] / 255.0;
}

namespace {

void write_netpbm(const char* magic, std::size_t w, std::size_t h,
                  const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << magic << "\n" << w << " " << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<std::uint8_t> read_netpbm(const std::string& magic, std::size_t channels,
                                      const std::filesystem::path& path, std::size_t& w,
                                      std::size_t& h) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string m;
  std::size_t maxval = 0;
  in >> m >> w >> h >> maxval;
  if (!in || m != magic || maxval != 255 || w == 0 || h == 0) {
    throw DataError(path.string() + ": not a " + magic + " image with maxval 255");
  }
  in.get();
  std::vector<std::uint8_t> bytes(w * h * channels);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw DataError(path.string() + ": truncated pixel data");
  }
  return bytes;
}

}  // namespace

void write_ppm(const Image& image, const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes(image.pixels.size());
  std::transform(image.pixels.begin(), image.pixels.end(), bytes.begin(), to_byte);
  write_netpbm("P6", image.width, image.height, bytes, path);
}

Image read_ppm(const std::filesystem::path& path) {
  std::size_t w = 0, h = 0;
  const auto bytes = read_netpbm("P6", 3, path, w, h);
  Image image(w, h);
  for (std::size_t i = 0; i < bytes.size(); ++i) image.pixels[i] = bytes[i] / 255.0;
  return image;
}

void write_pgm(std::size_t width, std::size_t height, const std::vector<double>& values,
               const std::filesystem::path& path) {
  if (values.size() != width * height) throw DataError("write_pgm: size mismatch");
  std::vector<std::uint8_t> bytes(values.size());
  std::transform(values.begin(), values.end(), bytes.begin(), to_byte);
  write_netpbm("P5", width, height, bytes, path);
}

std::vector<std::uint8_t> read_pgm(const std::filesystem::path& path, std::size_t& width,
                                   std::size_t& height) {
  return read_netpbm("P5", 1, path, width, height);
}

}  // namespace fg3d
