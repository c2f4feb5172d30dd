#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "scopenet/geometry.hpp"
#include "scopenet/rng.hpp"

using namespace scopenet;

namespace {

// Dyadic lattice values (multiples of 1/256) make additions and subtractions
// exact in double, so the round trip below can demand bitwise equality.
double lattice(Rng& rng, double lo, double hi) {
  double steps = (hi - lo) * 256.0;
  return lo + rng.uniform_int(0, static_cast<int>(steps)) / 256.0;
}

}  // namespace

TEST_CASE("box_to_distances basics") {
  Box b{0, 0, 10, 10};
  BorderDistances c = box_to_distances(Point{5, 5}, b);
  CHECK(c.left() == 5);
  CHECK(c.top() == 5);
  CHECK(c.right() == 5);
  CHECK(c.bottom() == 5);

  BorderDistances d = box_to_distances(Point{2, 3}, b);
  CHECK(d.left() == 2);
  CHECK(d.top() == 3);
  CHECK(d.right() == 8);
  CHECK(d.bottom() == 7);

  CHECK_THROWS_AS(box_to_distances(Point{11, 5}, b), std::invalid_argument);
  CHECK_THROWS_AS(box_to_distances(Point{0, 5}, b), std::invalid_argument);  // on the edge
}

TEST_CASE("distances_to_box basics") {
  Box b = distances_to_box(BorderDistances{{5, 5, 5, 5}}, Point{5, 5});
  CHECK(b.x1 == 0);
  CHECK(b.y1 == 0);
  CHECK(b.x2 == 10);
  CHECK(b.y2 == 10);

  CHECK_THROWS_AS(distances_to_box(BorderDistances{{0, 4, 0, 4}}, Point{1, 1}),
                  std::invalid_argument);  // d_l = d_r = 0: zero width
  CHECK_THROWS_AS(distances_to_box(BorderDistances{{-1, 2, 3, 4}}, Point{5, 5}),
                  std::invalid_argument);
}

TEST_CASE("box<->distances round trip is bitwise on lattice values") {
  Rng rng(123);
  for (int i = 0; i < 100; ++i) {
    Box b;
    b.x1 = lattice(rng, 0, 100);
    b.y1 = lattice(rng, 0, 100);
    b.x2 = b.x1 + lattice(rng, 1, 50);
    b.y2 = b.y1 + lattice(rng, 1, 50);
    Point p{b.x1 + lattice(rng, 0.25, b.width() - 0.25),
            b.y1 + lattice(rng, 0.25, b.height() - 0.25)};
    Box r = distances_to_box(box_to_distances(p, b), p);
    CHECK(r.x1 == b.x1);
    CHECK(r.y1 == b.y1);
    CHECK(r.x2 == b.x2);
    CHECK(r.y2 == b.y2);
  }
}

TEST_CASE("iou basics") {
  Box a{0, 0, 2, 2};
  CHECK(iou(a, a) == doctest::Approx(1.0));
  CHECK(iou(a, Box{5, 5, 7, 7}) == 0.0);
  CHECK(iou(a, Box{1, 1, 3, 3}) == doctest::Approx(1.0 / 7.0));
  CHECK(iou(a, Box{2, 0, 4, 2}) == 0.0);  // touching edges only
}

TEST_CASE("iou symmetry, bounds, translation and scale invariance") {
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    Box a{rng.uniform(0, 50), rng.uniform(0, 50), 0, 0};
    a.x2 = a.x1 + rng.uniform(1, 30);
    a.y2 = a.y1 + rng.uniform(1, 30);
    Box b{rng.uniform(0, 50), rng.uniform(0, 50), 0, 0};
    b.x2 = b.x1 + rng.uniform(1, 30);
    b.y2 = b.y1 + rng.uniform(1, 30);

    double v = iou(a, b);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK(iou(b, a) == v);

    double tx = rng.uniform(-20, 20), ty = rng.uniform(-20, 20);
    Box at{a.x1 + tx, a.y1 + ty, a.x2 + tx, a.y2 + ty};
    Box bt{b.x1 + tx, b.y1 + ty, b.x2 + tx, b.y2 + ty};
    CHECK(iou(at, bt) == doctest::Approx(v).epsilon(1e-12));

    double s = rng.uniform(0.5, 3.0);
    Box as{a.x1 * s, a.y1 * s, a.x2 * s, a.y2 * s};
    Box bs{b.x1 * s, b.y1 * s, b.x2 * s, b.y2 * s};
    CHECK(iou(as, bs) == doctest::Approx(v).epsilon(1e-12));
  }
}
