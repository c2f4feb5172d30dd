#include "scopenet/geometry.hpp"

#include <algorithm>
#include <stdexcept>

namespace scopenet {

double BorderDistances::max() const { return std::max({d[0], d[1], d[2], d[3]}); }

BorderDistances box_to_distances(const Point& p, const Box& b) {
  if (!b.valid()) throw std::invalid_argument("box_to_distances: invalid box");
  if (!b.contains(p.x, p.y)) {
    throw std::invalid_argument("box_to_distances: point outside box");
  }
  BorderDistances out;
  out.d[kLeft] = p.x - b.x1;
  out.d[kTop] = p.y - b.y1;
  out.d[kRight] = b.x2 - p.x;
  out.d[kBottom] = b.y2 - p.y;
  return out;
}

Box distances_to_box(const BorderDistances& d, const Point& p) {
  for (int x = 0; x < 4; ++x) {
    if (d.d[x] < 0) throw std::invalid_argument("distances_to_box: negative distance");
  }
  if (d.left() + d.right() <= 0 || d.top() + d.bottom() <= 0) {
    throw std::invalid_argument("distances_to_box: degenerate extent");
  }
  return Box{p.x - d.left(), p.y - d.top(), p.x + d.right(), p.y + d.bottom()};
}

double iou(const Box& a, const Box& b) {
  if (!a.valid() || !b.valid()) throw std::invalid_argument("iou: invalid box");
  double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  double inter = iw * ih;
  double uni = a.area() + b.area() - inter;
  return inter <= 0.0 ? 0.0 : inter / uni;
}

}  // namespace scopenet
