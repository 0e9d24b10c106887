#pragma once

#include <array>

#include "pslab/center_bank.hpp"

namespace pslab {

/// Axis-aligned rectangle in pixel coordinates, (x, y) is the top-left
/// corner. `label` is an identity, kUnknownLabel or kBackgroundLabel.
struct BoundingBox {
  double x = 0.0;
  double y = 0.0;
  double w = 1.0;
  double h = 1.0;
  int label = kBackgroundLabel;

  double area() const { return w * h; }
  bool operator==(const BoundingBox&) const = default;
};

using BoxDeltas = std::array<double, 4>;

/// Intersection over union; throws ValidationError on non-positive extents.
double iou(const BoundingBox& a, const BoundingBox& b);

// t = ((x - x_p)/w_p, (y - y_p)/h_p, ln(w/w_p), ln(h/h_p))
BoxDeltas encode_deltas(const BoundingBox& proposal, const BoundingBox& target);
BoundingBox decode_deltas(const BoundingBox& proposal, const BoxDeltas& deltas);

BoundingBox clamp_to_canvas(const BoundingBox& box, int width, int height);

}  // namespace pslab
