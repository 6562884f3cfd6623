// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace fg3d {

/// Row-major RGB image with channel values in [0, 1].
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> pixels;  // (y * width + x) * 3 + c

  Image() = default;
  Image(std::size_t w, std::size_t h, double fill = 1.0)
      : width(w), height(h), pixels(w * h * 3, fill) {}

  double& at(std::size_t x, std::size_t y, std::size_t c) { return pixels[(y * width + x) * 3 + c]; }
  double at(std::size_t x, std::size_t y, std::size_t c) const {
    return pixels[(y * width + x) * 3 + c];
  }
  std::array<std::uint8_t, 3> rgb8(std::size_t x, std::size_t y) const;
  void set_rgb8(std::size_t x, std::size_t y, std::array<std::uint8_t, 3> rgb);

  bool operator==(const Image&) const = default;
};

/// Binary P6, maxval 255. Values are rounded to the nearest 1/255.
void write_ppm(const Image& image, const std::filesystem::path& path);
Image read_ppm(const std::filesystem::path& path);

/// Binary P5, maxval 255, from row-major values in [0, 1].
void write_pgm(std::size_t width, std::size_t height, const std::vector<double>& values,
               const std::filesystem::path& path);
std::vector<std::uint8_t> read_pgm(const std::filesystem::path& path, std::size_t& width,
                                   std::size_t& height);

std::uint8_t to_byte(double v);

}  // namespace fg3d
