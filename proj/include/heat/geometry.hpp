#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "heat/matrix.hpp"

namespace heat {

struct Vec2 {
  double x = 0, y = 0;
  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  double dot(Vec2 o) const { return x * o.x + y * o.y; }
  double cross(Vec2 o) const { return x * o.y - y * o.x; }
  double norm() const { return std::hypot(x, y); }
};

inline Vec2 rotate(Vec2 v, double angle) {
  double c = std::cos(angle), s = std::sin(angle);
  return {c * v.x - s * v.y, s * v.x + c * v.y};
}

// Transforms a world-frame point into the frame of a pose (x, y, heading).
inline Vec2 world_to_local(Vec2 p, Vec2 origin, double heading) {
  return rotate(p - origin, -heading);
}

inline Vec2 local_to_world(Vec2 p, Vec2 origin, double heading) {
  return origin + rotate(p, heading);
}

using Polygon = std::vector<Vec2>;
using Polyline = std::vector<Vec2>;

// Even-odd point-in-polygon test; boundary points count as inside.
inline bool point_in_polygon(Vec2 p, const Polygon& poly) {
  bool inside = false;
  std::size_t n = poly.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    Vec2 a = poly[j], b = poly[i];
    // on-segment check
    Vec2 ab = b - a, ap = p - a;
    double cr = ab.cross(ap);
    if (std::abs(cr) < 1e-12 && ap.dot(p - b) <= 1e-12) return true;
    if ((a.y > p.y) != (b.y > p.y)) {
      double xint = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
      if (p.x < xint) inside = !inside;
    }
  }
  return inside;
}

inline bool segments_intersect(Vec2 a, Vec2 b, Vec2 c, Vec2 d) {
  auto orient = [](Vec2 p, Vec2 q, Vec2 r) {
    double v = (q - p).cross(r - p);
    return v > 1e-12 ? 1 : (v < -1e-12 ? -1 : 0);
  };
  int o1 = orient(a, b, c), o2 = orient(a, b, d), o3 = orient(c, d, a), o4 = orient(c, d, b);
  if (o1 != o2 && o3 != o4) return true;
  auto on = [](Vec2 p, Vec2 q, Vec2 r) {
    return std::abs((q - p).cross(r - p)) < 1e-12 && (r - p).dot(r - q) <= 1e-12;
  };
  return (o1 == 0 && on(a, b, c)) || (o2 == 0 && on(a, b, d)) || (o3 == 0 && on(c, d, a)) ||
         (o4 == 0 && on(c, d, b));
}

// True when the closed polygon has no two non-adjacent edges intersecting.
inline bool polygon_is_simple(const Polygon& poly) {
  std::size_t n = poly.size();
  if (n < 3) return false;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      // skip adjacent edges (shared endpoint)
      if (j == i || (j + 1) % n == i || (i + 1) % n == j) continue;
      if (segments_intersect(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n])) {
        return false;
      }
    }
  }
  return true;
}

// Oriented rectangle: center, heading, full length (along heading) and width.
struct OrientedBox {
  Vec2 center;
  double heading = 0;
  double length = 0;
  double width = 0;

  std::array<Vec2, 4> corners() const {
    double hl = 0.5 * length, hw = 0.5 * width;
    std::array<Vec2, 4> c = {Vec2{hl, hw}, Vec2{hl, -hw}, Vec2{-hl, -hw}, Vec2{-hl, hw}};
    for (auto& p : c) p = local_to_world(p, center, heading);
    return c;
  }
};

// Separating-axis overlap test for two oriented rectangles. Touching counts
// as overlap.
inline bool boxes_overlap(const OrientedBox& a, const OrientedBox& b) {
  auto ca = a.corners();
  auto cb = b.corners();
  std::array<Vec2, 4> axes = {rotate({1, 0}, a.heading), rotate({0, 1}, a.heading),
                              rotate({1, 0}, b.heading), rotate({0, 1}, b.heading)};
  for (const Vec2& ax : axes) {
    double amin = 1e300, amax = -1e300, bmin = 1e300, bmax = -1e300;
    for (const Vec2& p : ca) {
      double v = p.dot(ax);
      amin = std::min(amin, v);
      amax = std::max(amax, v);
    }
    for (const Vec2& p : cb) {
      double v = p.dot(ax);
      bmin = std::min(bmin, v);
      bmax = std::max(bmax, v);
    }
    if (amax < bmin || bmax < amin) return false;
  }
  return true;
}

inline double polyline_length(const Polyline& pl) {
  double s = 0;
  for (std::size_t i = 1; i < pl.size(); ++i) s += (pl[i] - pl[i - 1]).norm();
  return s;
}

// Arc-length position of the closest point on the polyline to p.
inline double project_onto_polyline(Vec2 p, const Polyline& pl) {
  double best_d = 1e300, best_s = 0, acc = 0;
  for (std::size_t i = 1; i < pl.size(); ++i) {
    Vec2 a = pl[i - 1], b = pl[i];
    Vec2 ab = b - a;
    double len2 = ab.dot(ab);
    double t = len2 > 0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
    Vec2 q = a + ab * t;
    double d = (p - q).norm();
    if (d < best_d) {
      best_d = d;
      best_s = acc + std::sqrt(len2) * t;
    }
    acc += std::sqrt(len2);
  }
  return best_s;
}

inline double distance_to_polyline(Vec2 p, const Polyline& pl) {
  double best = 1e300;
  for (std::size_t i = 1; i < pl.size(); ++i) {
    Vec2 a = pl[i - 1], b = pl[i];
    Vec2 ab = b - a;
    double len2 = ab.dot(ab);
    double t = len2 > 0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
    best = std::min(best, (p - (a + ab * t)).norm());
  }
  return best;
}

// Buffered corridor around a polyline as a closed polygon: offset the line
// left and right by half_width. Assumes gentle curvature (offset segments do
// not self-intersect), which holds for the scripted maneuvers.
inline Polygon corridor_polygon(const Polyline& center, double half_width) {
  // Drop coincident consecutive points (a stopped trajectory repeats its
  // final pose) so tangent estimates stay well-defined.
  Polyline pts;
  for (const Vec2& p : center) {
    if (pts.empty() || (p - pts.back()).norm() > 1e-9) pts.push_back(p);
  }
  if (pts.size() < 2) {
    Vec2 c = pts.empty() ? Vec2{0, 0} : pts[0];
    return {{c.x - half_width, c.y - half_width},
            {c.x + half_width, c.y - half_width},
            {c.x + half_width, c.y + half_width},
            {c.x - half_width, c.y + half_width}};
  }
  Polygon left, right;
  std::size_t n = pts.size();
  Vec2 last_dir{1, 0};
  for (std::size_t i = 0; i < n; ++i) {
    Vec2 dir;
    if (i == 0) {
      dir = pts[1] - pts[0];
    } else if (i + 1 == n) {
      dir = pts[n - 1] - pts[n - 2];
    } else {
      dir = pts[i + 1] - pts[i - 1];
    }
    double len = dir.norm();
    if (len < 1e-9) dir = last_dir;  // keep the previous tangent through kinks
    else dir = dir * (1.0 / len);
    last_dir = dir;
    Vec2 normal{-dir.y, dir.x};
    left.push_back(pts[i] + normal * half_width);
    right.push_back(pts[i] - normal * half_width);
  }
  Polygon poly = left;
  poly.insert(poly.end(), right.rbegin(), right.rend());
  return poly;
}

}  // namespace heat
