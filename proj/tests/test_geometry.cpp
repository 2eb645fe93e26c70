// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <set>

#include "refseg/geometry.hpp"
#include "refseg/rng.hpp"

using namespace refseg;

namespace {

// Pixel-enumeration oracles, deliberately independent of the production path.
double dice_box_oracle(const BoundingBox& a, const BoundingBox& b, int lim = 64) {
  int64_t ca = 0, cb = 0, ci = 0;
  for (int y = 0; y < lim; ++y)
    for (int x = 0; x < lim; ++x) {
      bool ia = x >= a.x_min && x <= a.x_max && y >= a.y_min && y <= a.y_max;
      bool ib = x >= b.x_min && x <= b.x_max && y >= b.y_min && y <= b.y_max;
      ca += ia;
      cb += ib;
      ci += ia && ib;
    }
  return 2.0 * double(ci) / double(ca + cb);
}

double iou_mask_oracle(const BinaryMask& a, const BinaryMask& b) {
  int64_t inter = 0, uni = 0;
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      inter += a.at(x, y) && b.at(x, y);
      uni += a.at(x, y) || b.at(x, y);
    }
  return uni == 0 ? 1.0 : double(inter) / double(uni);
}

BinaryMask filled_rect(int w, int h, int x0, int y0, int x1, int y1) {
  BinaryMask m(w, h);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) m.set(x, y);
  return m;
}

BinaryMask filled_disk(int w, int h, int cx, int cy, int r) {
  BinaryMask m(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) m.set(x, y);
  return m;
}

BoundingBox random_box(Rng& rng, int lim) {
  int x0 = (int)rng.irange(0, lim - 1), x1 = (int)rng.irange(0, lim - 1);
  int y0 = (int)rng.irange(0, lim - 1), y1 = (int)rng.irange(0, lim - 1);
  return {std::min(x0, x1), std::min(y0, y1), std::max(x0, x1), std::max(y0, y1)};
}

}  // namespace

TEST_CASE("mask_to_box basics") {
  BinaryMask full = filled_rect(8, 8, 0, 0, 7, 7);
  CHECK(mask_to_box(full) == BoundingBox{0, 0, 7, 7});

  BinaryMask single(8, 8);
  single.set(3, 5);
  CHECK(mask_to_box(single) == BoundingBox{3, 5, 3, 5});

  BinaryMask two(8, 8);
  two.set(1, 1);
  two.set(4, 6);
  CHECK(mask_to_box(two) == BoundingBox{1, 1, 4, 6});

  BinaryMask empty(8, 8);
  CHECK_THROWS_AS(mask_to_box(empty), Error);
}

TEST_CASE("sample_contour on a filled square returns the corners") {
  BinaryMask sq = filled_rect(8, 8, 2, 2, 5, 5);
  ContourSequence c = sample_contour(sq, 4);
  REQUIRE(c.points.size() == 4);
  // winding order from the topmost-then-leftmost start
  CHECK(c.points[0] == Point2f{2, 2});
  CHECK(c.points[1] == Point2f{5, 2});
  CHECK(c.points[2] == Point2f{5, 5});
  CHECK(c.points[3] == Point2f{2, 5});
}

TEST_CASE("sample_contour on a disk stays within 1px of the circle") {
  BinaryMask disk = filled_disk(32, 32, 15, 15, 10);
  ContourSequence c = sample_contour(disk, 16);
  REQUIRE(c.points.size() == 16);
  for (const auto& p : c.points) {
    double r = std::hypot(p.x - 15.0, p.y - 15.0);
    CHECK(std::abs(r - 10.0) <= 1.0);
  }
}

TEST_CASE("sample_contour contract checks") {
  BinaryMask sq = filled_rect(16, 16, 4, 4, 9, 9);
  ContourSequence c = sample_contour(sq, 3);
  REQUIRE(c.points.size() == 3);
  for (const auto& p : c.points) {
    int x = (int)std::lround(p.x), y = (int)std::lround(p.y);
    CHECK(sq.at(x, y));
  }

  // determinism
  ContourSequence c1 = sample_contour(sq, 7);
  ContourSequence c2 = sample_contour(sq, 7);
  CHECK(c1 == c2);

  BinaryMask empty(8, 8);
  CHECK_THROWS_AS(sample_contour(empty, 4), Error);
  CHECK_THROWS_AS(sample_contour(sq, 2), Error);
}

TEST_CASE("sample_contour keeps the largest component") {
  BinaryMask m(32, 32);
  for (int y = 2; y <= 10; ++y)
    for (int x = 2; x <= 10; ++x) m.set(x, y);
  m.set(20, 20);  // stray pixel
  ContourSequence c = sample_contour(m, 4);
  for (const auto& p : c.points) {
    CHECK(p.x <= 10.5f);
    CHECK(p.y <= 10.5f);
  }
}

TEST_CASE("contour_to_mask fills the square example") {
  ContourSequence c;
  c.points = {{2, 2}, {5, 2}, {5, 5}, {2, 5}};
  BinaryMask m = contour_to_mask(c, 8, 8);
  CHECK(m.area() == 16);
  for (int y = 2; y <= 5; ++y)
    for (int x = 2; x <= 5; ++x) CHECK(m.at(x, y));
}

TEST_CASE("contour_to_mask degenerate collinear contour leaves the line") {
  ContourSequence c;
  c.points = {{1, 3}, {4, 3}, {6, 3}};
  BinaryMask m = contour_to_mask(c, 8, 8);
  CHECK(m.area() == 6);
  for (int x = 1; x <= 6; ++x) CHECK(m.at(x, 3));
}

TEST_CASE("contour_to_mask clips out-of-canvas points") {
  ContourSequence c;
  c.points = {{-3, -3}, {5, -3}, {5, 5}, {-3, 5}};
  BinaryMask m = contour_to_mask(c, 8, 8);
  CHECK(m.area() > 0);
  BoundingBox b = mask_to_box(m);
  CHECK(b.x_min == 0);
  CHECK(b.y_min == 0);
  CHECK(b.x_max == 5);
  CHECK(b.y_max == 5);
}

TEST_CASE("box from contour mask contains every clipped contour point") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    ContourSequence c;
    int k = (int)rng.irange(3, 9);
    for (int i = 0; i < k; ++i)
      c.points.push_back({(float)rng.irange(-4, 35), (float)rng.irange(-4, 35)});
    BinaryMask m = contour_to_mask(c, 32, 32);
    if (m.empty()) continue;
    BoundingBox b = mask_to_box(m);
    for (const auto& p : c.points) {
      int x = std::clamp((int)std::lround(p.x), 0, 31);
      int y = std::clamp((int)std::lround(p.y), 0, 31);
      CHECK(x >= b.x_min);
      CHECK(x <= b.x_max);
      CHECK(y >= b.y_min);
      CHECK(y <= b.y_max);
    }
  }
}

TEST_CASE("dice_box matches the pixel-enumeration oracle") {
  CHECK(dice_box({0, 0, 9, 9}, {5, 0, 14, 9}) == doctest::Approx(0.5));
  CHECK(dice_box({0, 0, 9, 9}, {0, 0, 9, 9}) == 1.0);
  CHECK(dice_box({0, 0, 3, 3}, {10, 10, 12, 12}) == 0.0);

  Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    BoundingBox a = random_box(rng, 32), b = random_box(rng, 32);
    double got = dice_box(a, b);
    double want = dice_box_oracle(a, b);
    CHECK(got == doctest::Approx(want).epsilon(1e-12));
    CHECK(got == dice_box(b, a));
    CHECK(got >= 0.0);
    CHECK(got <= 1.0);
  }
}

TEST_CASE("iou_mask matches the pixel-count oracle") {
  BinaryMask a = filled_rect(32, 32, 0, 0, 9, 9);  // 100 pixels
  BinaryMask b = filled_rect(32, 32, 4, 0, 13, 9); // shifted, 60 overlap
  CHECK(iou_mask(a, b) == doctest::Approx(60.0 / 140.0));

  CHECK(iou_mask(a, a) == 1.0);
  BinaryMask c = filled_rect(32, 32, 20, 20, 25, 25);
  CHECK(iou_mask(a, c) == 0.0);

  BinaryMask e1(8, 8), e2(8, 8);
  CHECK(iou_mask(e1, e2) == 1.0);

  BinaryMask wrong(16, 8);
  CHECK_THROWS_AS(iou_mask(a, wrong), Error);

  Rng rng(13);
  for (int i = 0; i < 200; ++i) {
    BinaryMask m1(16, 16), m2(16, 16);
    for (int p = 0; p < 256; ++p) {
      m1.grid[p] = rng.chance(0.3);
      m2.grid[p] = rng.chance(0.3);
    }
    double got = iou_mask(m1, m2);
    CHECK(got == doctest::Approx(iou_mask_oracle(m1, m2)).epsilon(1e-12));
    CHECK(got == iou_mask(m2, m1));
  }
}

TEST_CASE("similarity equals one only for equal nonempty inputs") {
  Rng rng(17);
  for (int i = 0; i < 200; ++i) {
    BoundingBox a = random_box(rng, 24), b = random_box(rng, 24);
    if (dice_box(a, b) == 1.0) CHECK(a == b);
  }
}

TEST_CASE("contour round trip keeps IoU >= 0.9 on random convex shapes") {
  Rng rng(23);
  int n_ok = 0;
  for (int trial = 0; trial < 100; ++trial) {
    // random convex polygon: radial perturbation of a circle, then hull-like
    // monotone angles keep it convex
    double cx = rng.real(34, 94), cy = rng.real(34, 94);
    double r = rng.real(10, 28);
    ContourSequence poly;
    int m = 14;
    for (int i = 0; i < m; ++i) {
      double ang = 2.0 * M_PI * i / m;
      double rr = r * rng.real(0.75, 1.0);
      poly.points.push_back({(float)(cx + rr * std::cos(ang)), (float)(cy + rr * std::sin(ang))});
    }
    BinaryMask shape = contour_to_mask(poly, 128, 128);
    ContourSequence c = sample_contour(shape, 16);
    BinaryMask back = contour_to_mask(c, 128, 128);
    if (iou_mask(shape, back) >= 0.9) ++n_ok;
  }
  CHECK(n_ok == 100);
}

TEST_CASE("rle round trip") {
  Rng rng(31);
  for (int i = 0; i < 50; ++i) {
    BinaryMask m(24, 24);
    for (auto& v : m.grid) v = rng.chance(0.4);
    BinaryMask back = mask_from_rle(mask_to_rle(m), 24, 24);
    CHECK(back == m);
  }
  CHECK_THROWS_AS(mask_from_rle("9999", 8, 8), Error);
}

TEST_CASE("contour flat encoding") {
  ContourSequence c;
  c.points = {{1, 2}, {3, 4}, {5, 6}};
  auto flat = contour_to_flat(c);
  CHECK(flat == std::vector<int>{1, 2, 3, 4, 5, 6});
  CHECK(contour_from_flat(flat) == c);
  CHECK_THROWS_AS(contour_from_flat({1, 2, 3}), Error);
}
