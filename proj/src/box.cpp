#include "pslab/box.hpp"

#include <algorithm>
#include <cmath>

#include "pslab/errors.hpp"

namespace pslab {

double iou(const BoundingBox& a, const BoundingBox& b) {
  if (!(a.w > 0.0 && a.h > 0.0 && b.w > 0.0 && b.h > 0.0)) {
    throw ValidationError("iou: boxes need positive width and height");
  }
  const double ix = std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x);
  const double iy = std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  return inter / (a.area() + b.area() - inter);
}

BoxDeltas encode_deltas(const BoundingBox& proposal,
                        const BoundingBox& target) {
  return {(target.x - proposal.x) / proposal.w,
          (target.y - proposal.y) / proposal.h, std::log(target.w / proposal.w),
          std::log(target.h / proposal.h)};
}

BoundingBox decode_deltas(const BoundingBox& proposal,
                          const BoxDeltas& deltas) {
  BoundingBox out = proposal;
  out.x = proposal.x + deltas[0] * proposal.w;
  out.y = proposal.y + deltas[1] * proposal.h;
  out.w = proposal.w * std::exp(deltas[2]);
  out.h = proposal.h * std::exp(deltas[3]);
  return out;
}

BoundingBox clamp_to_canvas(const BoundingBox& box, int width, int height) {
  BoundingBox out = box;
  const double x0 = std::clamp(box.x, 0.0, width - 1.0);
  const double y0 = std::clamp(box.y, 0.0, height - 1.0);
  const double x1 = std::clamp(box.x + box.w, x0 + 1.0, double(width));
  const double y1 = std::clamp(box.y + box.h, y0 + 1.0, double(height));
  out.x = x0;
  out.y = y0;
  out.w = x1 - x0;
  out.h = y1 - y0;
  return out;
}

}  // namespace pslab
