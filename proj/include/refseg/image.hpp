// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace refseg {

using Rgb = std::array<uint8_t, 3>;

struct ImageRgb {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> data;  // 3 * width * height, row-major RGB

  ImageRgb() = default;
  ImageRgb(int w, int h, Rgb fill = {0, 0, 0}) : width(w), height(h), data(size_t(3) * w * h) {
    for (size_t i = 0; i < data.size(); i += 3) {
      data[i] = fill[0];
      data[i + 1] = fill[1];
      data[i + 2] = fill[2];
    }
  }

  Rgb at(int x, int y) const {
    size_t o = (static_cast<size_t>(y) * width + x) * 3;
    return {data[o], data[o + 1], data[o + 2]};
  }
  void set(int x, int y, Rgb c) {
    size_t o = (static_cast<size_t>(y) * width + x) * 3;
    data[o] = c[0];
    data[o + 1] = c[1];
    data[o + 2] = c[2];
  }
  bool in_bounds(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }
  bool operator==(const ImageRgb&) const = default;
};

void save_png(const ImageRgb& img, const std::string& path);
ImageRgb load_png(const std::string& path);

// In-memory PNG encode (for the remote scorer wire format).
std::vector<uint8_t> encode_png(const ImageRgb& img);

std::string base64_encode(const uint8_t* data, size_t len);

}  // namespace refseg
