// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "refseg/error.hpp"

namespace refseg {

struct Point2f {
  float x = 0.f;
  float y = 0.f;
  bool operator==(const Point2f&) const = default;
};

// Row-major boolean pixel grid.
struct BinaryMask {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> grid;  // width*height entries, 0 or 1

  BinaryMask() = default;
  BinaryMask(int w, int h) : width(w), height(h), grid(static_cast<size_t>(w) * h, 0) {}

  bool at(int x, int y) const { return grid[static_cast<size_t>(y) * width + x] != 0; }
  void set(int x, int y, bool v = true) { grid[static_cast<size_t>(y) * width + x] = v ? 1 : 0; }
  bool in_bounds(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }
  int64_t area() const;
  bool empty() const { return area() == 0; }
  bool operator==(const BinaryMask&) const = default;
};

// Ordered boundary points, consistent winding. Coordinates are pixel
// coordinates of the source image; fractional values are allowed.
struct ContourSequence {
  std::vector<Point2f> points;
  size_t size() const { return points.size(); }
  bool operator==(const ContourSequence&) const = default;
};

// Inclusive pixel coordinates; a single pixel is a valid box of area 1.
struct BoundingBox {
  int x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  int64_t area() const {
    return static_cast<int64_t>(x_max - x_min + 1) * (y_max - y_min + 1);
  }
  double cx() const { return 0.5 * (x_min + x_max); }
  double cy() const { return 0.5 * (y_min + y_max); }
  bool valid() const { return x_min <= x_max && y_min <= y_max; }
  bool contains(const BoundingBox& o) const {
    return o.x_min >= x_min && o.x_max <= x_max && o.y_min >= y_min && o.y_max <= y_max;
  }
  bool operator==(const BoundingBox&) const = default;
};

// Tightest axis-aligned box containing all true pixels.
// Throws Errc::empty_mask when the mask has no true pixel.
BoundingBox mask_to_box(const BinaryMask& mask);

// K boundary points, approximately equally spaced by arc length, traced with
// consistent winding from a deterministic start (topmost-then-leftmost
// boundary pixel). Multi-component masks keep the largest component and log a
// warning to stderr. Throws Errc::empty_mask on empty input; requires K >= 3.
ContourSequence sample_contour(const BinaryMask& mask, int k);

// Even-odd fill of the closed polyline through the contour points, plus the
// rasterized outline, clipped to the canvas.
BinaryMask contour_to_mask(const ContourSequence& contour, int width, int height);

// Dice similarity over inclusive pixel areas: 2|A∩B| / (|A|+|B|).
double dice_box(const BoundingBox& a, const BoundingBox& b);

// |A∩B| / |A∪B| over true pixels; 1 when both masks are empty.
// Throws Errc::dim_mismatch when dimensions differ.
double iou_mask(const BinaryMask& a, const BinaryMask& b);

// Run-length encoding over the row-major grid, alternating run lengths
// starting with the zero run, space separated.
std::string mask_to_rle(const BinaryMask& mask);
BinaryMask mask_from_rle(const std::string& counts, int width, int height);

// Flat integer list [x1,y1,...,xK,yK]; values are rounded on encode.
std::vector<int> contour_to_flat(const ContourSequence& c);
ContourSequence contour_from_flat(const std::vector<int>& flat);

}  // namespace refseg
