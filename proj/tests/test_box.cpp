#include <gtest/gtest.h>

#include <cmath>

#include "pslab/box.hpp"
#include "pslab/errors.hpp"
#include "pslab/rng.hpp"

using namespace pslab;

namespace {

// counts unit pixels covered by both boxes on an integer grid
double raster_iou(const BoundingBox& a, const BoundingBox& b) {
  const int x0 = static_cast<int>(std::min(a.x, b.x));
  const int y0 = static_cast<int>(std::min(a.y, b.y));
  const int x1 = static_cast<int>(std::max(a.x + a.w, b.x + b.w));
  const int y1 = static_cast<int>(std::max(a.y + a.h, b.y + b.h));
  long both = 0, any = 0;
  auto inside = [](const BoundingBox& r, double px, double py) {
    return px >= r.x && px < r.x + r.w && py >= r.y && py < r.y + r.h;
  };
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      const bool ia = inside(a, x + 0.5, y + 0.5), ib = inside(b, x + 0.5, y + 0.5);
      both += ia && ib;
      any += ia || ib;
    }
  return any == 0 ? 0.0 : double(both) / double(any);
}

}  // namespace

TEST(Iou, HandCases) {
  const BoundingBox a{0, 0, 10, 10};
  EXPECT_EQ(iou(a, a), 1.0);
  EXPECT_EQ(iou(a, {10, 0, 10, 10}), 0.0);
  EXPECT_EQ(iou(a, {20, 20, 5, 5}), 0.0);
  EXPECT_DOUBLE_EQ(iou(a, {5, 0, 10, 10}), 50.0 / 150.0);
  EXPECT_DOUBLE_EQ(iou(a, {2, 2, 5, 5}), 25.0 / 100.0);
  EXPECT_DOUBLE_EQ(iou({0, 0, 2, 4}, {1, 1, 2, 4}), 3.0 / 13.0);
}

TEST(Iou, Symmetric) {
  Rng rng(31);
  for (int i = 0; i < 200; ++i) {
    const BoundingBox a{rng.uniform(0, 20), rng.uniform(0, 20), rng.uniform(1, 10),
                        rng.uniform(1, 10)};
    const BoundingBox b{rng.uniform(0, 20), rng.uniform(0, 20), rng.uniform(1, 10),
                        rng.uniform(1, 10)};
    EXPECT_EQ(iou(a, b), iou(b, a));
    EXPECT_GE(iou(a, b), 0.0);
    EXPECT_LE(iou(a, b), 1.0);
  }
}

TEST(Iou, RasterOracle) {
  Rng rng(32);
  for (int i = 0; i < 1000; ++i) {
    auto box = [&] {
      return BoundingBox{double(rng.uniform_int(0, 40)), double(rng.uniform_int(0, 40)),
                         double(rng.uniform_int(1, 30)), double(rng.uniform_int(1, 30))};
    };
    const BoundingBox a = box(), b = box();
    const double r = raster_iou(a, b);
    EXPECT_NEAR(iou(a, b), r, 0.02) << i;
  }
}

TEST(Iou, InvalidExtents) {
  EXPECT_THROW(iou({0, 0, 0, 5}, {0, 0, 5, 5}), ValidationError);
  EXPECT_THROW(iou({0, 0, 5, 5}, {0, 0, 5, -1}), ValidationError);
}

TEST(Deltas, RoundTrip) {
  Rng rng(33);
  for (int i = 0; i < 100; ++i) {
    const BoundingBox p{rng.uniform(0, 50), rng.uniform(0, 50), rng.uniform(5, 30),
                        rng.uniform(5, 30)};
    const BoundingBox t{rng.uniform(0, 50), rng.uniform(0, 50), rng.uniform(5, 30),
                        rng.uniform(5, 30)};
    const BoundingBox back = decode_deltas(p, encode_deltas(p, t));
    EXPECT_NEAR(back.x, t.x, 1e-9);
    EXPECT_NEAR(back.y, t.y, 1e-9);
    EXPECT_NEAR(back.w, t.w, 1e-9);
    EXPECT_NEAR(back.h, t.h, 1e-9);
  }
}

TEST(Deltas, HandValues) {
  const auto d = encode_deltas({10, 20, 8, 16}, {12, 16, 16, 16});
  EXPECT_DOUBLE_EQ(d[0], 0.25);
  EXPECT_DOUBLE_EQ(d[1], -0.25);
  EXPECT_DOUBLE_EQ(d[2], std::log(2.0));
  EXPECT_DOUBLE_EQ(d[3], 0.0);
  const auto z = encode_deltas({3, 4, 5, 6}, {3, 4, 5, 6});
  for (double v : z) EXPECT_EQ(v, 0.0);
}

TEST(Clamp, StaysInsideCanvas) {
  const BoundingBox c = clamp_to_canvas({-5, 120, 20, 30}, 128, 128);
  EXPECT_EQ(c.x, 0.0);
  EXPECT_EQ(c.w, 15.0);
  EXPECT_EQ(c.y, 120.0);
  EXPECT_EQ(c.h, 8.0);
}
