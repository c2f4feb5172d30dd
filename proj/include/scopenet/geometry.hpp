#pragma once

namespace scopenet {

/// Axis-aligned box in continuous pixel coordinates, x1 < x2 and y1 < y2.
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  bool valid() const { return x1 < x2 && y1 < y2; }
  /// Strict interior test.
  bool contains(double px, double py) const {
    return px > x1 && px < x2 && py > y1 && py < y2;
  }
};

struct Point {
  double x = 0, y = 0;
};

struct LabeledBox {
  Box box;
  int class_id = 0;  // 1..C
};

/// Distances from a point to the four box borders: left, top, right, bottom.
struct BorderDistances {
  double d[4] = {0, 0, 0, 0};  // indexed by Direction

  double left() const { return d[0]; }
  double top() const { return d[1]; }
  double right() const { return d[2]; }
  double bottom() const { return d[3]; }
  double max() const;
};

enum Direction { kLeft = 0, kTop = 1, kRight = 2, kBottom = 3 };
inline const char* direction_name(int x) {
  static const char* kNames[4] = {"left", "top", "right", "bottom"};
  return kNames[x];
}

/// Distances from p to the borders of b. p must be strictly inside b; callers
/// pre-filter by the assignment rules.
BorderDistances box_to_distances(const Point& p, const Box& b);

/// Inverse of box_to_distances. Errors on a degenerate (zero extent) result.
Box distances_to_box(const BorderDistances& d, const Point& p);

/// Intersection over union; 0 for disjoint boxes.
double iou(const Box& a, const Box& b);

}  // namespace scopenet
