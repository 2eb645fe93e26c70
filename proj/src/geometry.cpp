// SPDX-License-Identifier: Apache-2.0
#include "refseg/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <queue>
#include <sstream>

namespace refseg {

int64_t BinaryMask::area() const {
  return std::accumulate(grid.begin(), grid.end(), int64_t{0},
                         [](int64_t a, uint8_t v) { return a + (v ? 1 : 0); });
}

BoundingBox mask_to_box(const BinaryMask& mask) {
  int x0 = mask.width, y0 = mask.height, x1 = -1, y1 = -1;
  for (int y = 0; y < mask.height; ++y) {
    const uint8_t* row = mask.grid.data() + static_cast<size_t>(y) * mask.width;
    for (int x = 0; x < mask.width; ++x) {
      if (row[x]) {
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
      }
    }
  }
  if (x1 < 0) throw_error(Errc::empty_mask, "mask_to_box: mask has no true pixel");
  return BoundingBox{x0, y0, x1, y1};
}

namespace {

// Largest 4-connected component; warns when the mask is fragmented.
BinaryMask largest_component(const BinaryMask& mask, bool* fragmented) {
  BinaryMask labels(mask.width, mask.height);
  std::vector<int> comp_of(static_cast<size_t>(mask.width) * mask.height, -1);
  std::vector<int64_t> sizes;
  std::vector<std::pair<int, int>> stack;
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      size_t idx = static_cast<size_t>(y) * mask.width + x;
      if (!mask.grid[idx] || comp_of[idx] >= 0) continue;
      int id = static_cast<int>(sizes.size());
      sizes.push_back(0);
      stack.push_back({x, y});
      comp_of[idx] = id;
      while (!stack.empty()) {
        auto [cx, cy] = stack.back();
        stack.pop_back();
        ++sizes[id];
        const int dx[4] = {1, -1, 0, 0};
        const int dy[4] = {0, 0, 1, -1};
        for (int d = 0; d < 4; ++d) {
          int nx = cx + dx[d], ny = cy + dy[d];
          if (!mask.in_bounds(nx, ny)) continue;
          size_t nidx = static_cast<size_t>(ny) * mask.width + nx;
          if (mask.grid[nidx] && comp_of[nidx] < 0) {
            comp_of[nidx] = id;
            stack.push_back({nx, ny});
          }
        }
      }
    }
  }
  if (sizes.empty()) throw_error(Errc::empty_mask, "sample_contour: mask has no true pixel");
  *fragmented = sizes.size() > 1;
  int best = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  BinaryMask out(mask.width, mask.height);
  for (size_t i = 0; i < comp_of.size(); ++i) out.grid[i] = comp_of[i] == best ? 1 : 0;
  return out;
}

// Moore-neighbor boundary trace, clockwise in image coordinates (y grows
// down), starting at the topmost-then-leftmost pixel of the region.
std::vector<std::pair<int, int>> trace_boundary(const BinaryMask& m) {
  int sx = -1, sy = -1;
  for (int y = 0; y < m.height && sx < 0; ++y)
    for (int x = 0; x < m.width; ++x)
      if (m.at(x, y)) {
        sx = x;
        sy = y;
        break;
      }
  // Moore neighborhood in clockwise order starting from west.
  const int nx8[8] = {-1, -1, 0, 1, 1, 1, 0, -1};
  const int ny8[8] = {0, -1, -1, -1, 0, 1, 1, 1};
  auto solid = [&](int x, int y) { return m.in_bounds(x, y) && m.at(x, y); };

  std::vector<std::pair<int, int>> chain;
  chain.push_back({sx, sy});
  // Entered the start pixel "from the west"; backtrack index 0.
  int cx = sx, cy = sy, back = 0;
  for (;;) {
    int found = -1;
    for (int i = 1; i <= 8; ++i) {
      int dir = (back + i) % 8;
      int nx = cx + nx8[dir], ny = cy + ny8[dir];
      if (solid(nx, ny)) {
        found = dir;
        cx = nx;
        cy = ny;
        break;
      }
    }
    if (found < 0) break;  // isolated pixel
    if (cx == sx && cy == sy && chain.size() > 1) break;
    chain.push_back({cx, cy});
    // Next search resumes from the neighbor after the one we came from.
    back = (found + 5) % 8;
    if (chain.size() > m.grid.size() * 4) break;  // safety bound
  }
  return chain;
}

}  // namespace

ContourSequence sample_contour(const BinaryMask& mask, int k) {
  if (k < 3) throw_error(Errc::run, "sample_contour: K must be >= 3");
  bool fragmented = false;
  BinaryMask comp = largest_component(mask, &fragmented);
  if (fragmented)
    std::fprintf(stderr, "[refseg] warning: fragmented mask, keeping largest component\n");

  auto chain = trace_boundary(comp);
  ContourSequence out;
  out.points.reserve(k);
  if (chain.size() == 1) {
    for (int i = 0; i < k; ++i)
      out.points.push_back({static_cast<float>(chain[0].first), static_cast<float>(chain[0].second)});
    return out;
  }

  // Cumulative arc length around the closed chain.
  size_t n = chain.size();
  std::vector<double> cum(n + 1, 0.0);
  for (size_t i = 0; i < n; ++i) {
    auto [x0, y0] = chain[i];
    auto [x1, y1] = chain[(i + 1) % n];
    cum[i + 1] = cum[i] + std::hypot(double(x1 - x0), double(y1 - y0));
  }
  double perim = cum[n];
  size_t seg = 0;
  for (int i = 0; i < k; ++i) {
    double target = perim * i / k;
    while (seg + 1 < n && cum[seg + 1] < target) ++seg;
    double seg_len = cum[seg + 1] - cum[seg];
    double t = seg_len > 0 ? (target - cum[seg]) / seg_len : 0.0;
    auto [x0, y0] = chain[seg];
    auto [x1, y1] = chain[(seg + 1) % n];
    out.points.push_back({static_cast<float>(x0 + t * (x1 - x0)),
                          static_cast<float>(y0 + t * (y1 - y0))});
  }
  return out;
}

namespace {

void raster_segment(BinaryMask& m, float x0f, float y0f, float x1f, float y1f) {
  // DDA on rounded endpoints; enough for pixel-center polylines.
  int x0 = static_cast<int>(std::lround(x0f)), y0 = static_cast<int>(std::lround(y0f));
  int x1 = static_cast<int>(std::lround(x1f)), y1 = static_cast<int>(std::lround(y1f));
  int steps = std::max(std::abs(x1 - x0), std::abs(y1 - y0));
  for (int i = 0; i <= steps; ++i) {
    double t = steps ? double(i) / steps : 0.0;
    int x = static_cast<int>(std::lround(x0 + t * (x1 - x0)));
    int y = static_cast<int>(std::lround(y0 + t * (y1 - y0)));
    if (m.in_bounds(x, y)) m.set(x, y);
  }
}

}  // namespace

BinaryMask contour_to_mask(const ContourSequence& contour, int width, int height) {
  if (contour.points.size() < 3)
    throw_error(Errc::run, "contour_to_mask: contour needs at least 3 points");
  BinaryMask out(width, height);
  // Out-of-canvas points are clipped onto the canvas border.
  std::vector<Point2f> pts = contour.points;
  for (auto& p : pts) {
    p.x = std::clamp(p.x, 0.0f, float(width - 1));
    p.y = std::clamp(p.y, 0.0f, float(height - 1));
  }
  size_t n = pts.size();

  // Even-odd scanline fill against pixel centers at integer coordinates.
  std::vector<double> xs;
  for (int y = 0; y < height; ++y) {
    xs.clear();
    double fy = y;
    for (size_t i = 0; i < n; ++i) {
      const auto& p = pts[i];
      const auto& q = pts[(i + 1) % n];
      // Half-open rule: edge covers [min(y), max(y)).
      bool a = p.y > fy, b = q.y > fy;
      if (a == b) continue;
      double t = (fy - p.y) / (double(q.y) - p.y);
      xs.push_back(p.x + t * (double(q.x) - p.x));
    }
    std::sort(xs.begin(), xs.end());
    for (size_t i = 0; i + 1 < xs.size(); i += 2) {
      int x_lo = static_cast<int>(std::ceil(xs[i]));
      int x_hi = static_cast<int>(std::ceil(xs[i + 1])) - 1;
      x_lo = std::max(x_lo, 0);
      x_hi = std::min(x_hi, width - 1);
      for (int x = x_lo; x <= x_hi; ++x) out.set(x, y);
    }
  }

  // Outline, so degenerate (zero-area) contours still leave their pixels and
  // every contour point lands inside the mask after clipping.
  for (size_t i = 0; i < n; ++i) {
    const auto& p = pts[i];
    const auto& q = pts[(i + 1) % n];
    raster_segment(out, p.x, p.y, q.x, q.y);
  }
  return out;
}

double dice_box(const BoundingBox& a, const BoundingBox& b) {
  int ix0 = std::max(a.x_min, b.x_min), iy0 = std::max(a.y_min, b.y_min);
  int ix1 = std::min(a.x_max, b.x_max), iy1 = std::min(a.y_max, b.y_max);
  int64_t inter = 0;
  if (ix0 <= ix1 && iy0 <= iy1)
    inter = static_cast<int64_t>(ix1 - ix0 + 1) * (iy1 - iy0 + 1);
  return 2.0 * static_cast<double>(inter) / static_cast<double>(a.area() + b.area());
}

double iou_mask(const BinaryMask& a, const BinaryMask& b) {
  if (a.width != b.width || a.height != b.height)
    throw_error(Errc::dim_mismatch, "iou_mask: dimension mismatch");
  int64_t inter = 0, uni = 0;
  for (size_t i = 0; i < a.grid.size(); ++i) {
    bool pa = a.grid[i], pb = b.grid[i];
    inter += (pa && pb) ? 1 : 0;
    uni += (pa || pb) ? 1 : 0;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::string mask_to_rle(const BinaryMask& mask) {
  std::ostringstream os;
  uint8_t cur = 0;
  int64_t run = 0;
  bool first = true;
  for (size_t i = 0; i < mask.grid.size(); ++i) {
    uint8_t v = mask.grid[i] ? 1 : 0;
    if (v == cur) {
      ++run;
    } else {
      if (!first) os << ' ';
      os << run;
      first = false;
      cur = v;
      run = 1;
    }
  }
  if (!first) os << ' ';
  os << run;
  return os.str();
}

BinaryMask mask_from_rle(const std::string& counts, int width, int height) {
  BinaryMask out(width, height);
  std::istringstream is(counts);
  int64_t run = 0;
  size_t pos = 0;
  uint8_t cur = 0;
  while (is >> run) {
    if (run < 0 || pos + static_cast<size_t>(run) > out.grid.size())
      throw_error(Errc::schema, "mask_from_rle: runs exceed grid size");
    std::fill(out.grid.begin() + pos, out.grid.begin() + pos + run, cur);
    pos += static_cast<size_t>(run);
    cur = cur ? 0 : 1;
  }
  if (pos != out.grid.size())
    throw_error(Errc::schema, "mask_from_rle: runs do not cover grid");
  return out;
}

std::vector<int> contour_to_flat(const ContourSequence& c) {
  std::vector<int> flat;
  flat.reserve(c.points.size() * 2);
  for (const auto& p : c.points) {
    flat.push_back(static_cast<int>(std::lround(p.x)));
    flat.push_back(static_cast<int>(std::lround(p.y)));
  }
  return flat;
}

ContourSequence contour_from_flat(const std::vector<int>& flat) {
  if (flat.size() % 2 != 0)
    throw_error(Errc::schema, "contour_from_flat: odd coordinate count");
  ContourSequence c;
  c.points.reserve(flat.size() / 2);
  for (size_t i = 0; i + 1 < flat.size(); i += 2)
    c.points.push_back({static_cast<float>(flat[i]), static_cast<float>(flat[i + 1])});
  return c;
}

}  // namespace refseg
