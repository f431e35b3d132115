#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <utility>
#include <vector>

namespace gridcast {

/// A point on the projected plane, meters east (x) and north (y).
struct Vec2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Vec2&, const Vec2&) = default;
};

/// Closed ring without the repeated closing vertex.
using Ring = std::vector<Vec2>;

/// Outer ring first, holes after. Interior follows the even-odd rule.
struct Polygon {
  std::vector<Ring> rings;
};

struct Box {
  double min_x = std::numeric_limits<double>::infinity();
  double min_y = std::numeric_limits<double>::infinity();
  double max_x = -std::numeric_limits<double>::infinity();
  double max_y = -std::numeric_limits<double>::infinity();

  void expand(Vec2 p) {
    min_x = std::min(min_x, p.x);
    min_y = std::min(min_y, p.y);
    max_x = std::max(max_x, p.x);
    max_y = std::max(max_y, p.y);
  }
  bool empty() const { return !(min_x <= max_x && min_y <= max_y); }
  bool overlaps(const Box& o) const {
    return !(o.min_x > max_x || o.max_x < min_x || o.min_y > max_y || o.max_y < min_y);
  }
  double width() const { return max_x - min_x; }
  double height() const { return max_y - min_y; }
  double area() const { return empty() ? 0.0 : width() * height(); }
};

inline Box bounding_box(const Polygon& poly) {
  Box box;
  for (const Ring& ring : poly.rings)
    for (Vec2 p : ring) box.expand(p);
  return box;
}

inline double ring_signed_area(const Ring& ring) {
  double twice = 0.0;
  const std::size_t n = ring.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 a = ring[i];
    const Vec2 b = ring[(i + 1) % n];
    twice += a.x * b.y - b.x * a.y;
  }
  return 0.5 * twice;
}

/// Area of the outer ring minus the holes.
inline double polygon_area(const Polygon& poly) {
  if (poly.rings.empty()) return 0.0;
  double area = std::abs(ring_signed_area(poly.rings.front()));
  for (std::size_t r = 1; r < poly.rings.size(); ++r) area -= std::abs(ring_signed_area(poly.rings[r]));
  return area;
}

inline bool contains(const Polygon& poly, Vec2 p) {
  bool inside = false;
  for (const Ring& ring : poly.rings) {
    const std::size_t n = ring.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
      const Vec2 a = ring[i];
      const Vec2 b = ring[j];
      if ((a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x) {
        inside = !inside;
      }
    }
  }
  return inside;
}

namespace detail {

inline double cross(Vec2 o, Vec2 a, Vec2 b) { return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x); }

inline bool on_segment(Vec2 p, Vec2 a, Vec2 b) {
  return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= p.y &&
         p.y <= std::max(a.y, b.y);
}

inline int orientation(Vec2 a, Vec2 b, Vec2 c) {
  const double v = cross(a, b, c);
  if (v > 0) return 1;
  if (v < 0) return -1;
  return 0;
}

/// Closed-segment intersection test, collinear overlap included.
inline bool segments_intersect(Vec2 p1, Vec2 p2, Vec2 q1, Vec2 q2) {
  const int o1 = orientation(p1, p2, q1);
  const int o2 = orientation(p1, p2, q2);
  const int o3 = orientation(q1, q2, p1);
  const int o4 = orientation(q1, q2, p2);
  if (o1 != o2 && o3 != o4) return true;
  if (o1 == 0 && on_segment(q1, p1, p2)) return true;
  if (o2 == 0 && on_segment(q2, p1, p2)) return true;
  if (o3 == 0 && on_segment(p1, q1, q2)) return true;
  if (o4 == 0 && on_segment(p2, q1, q2)) return true;
  return false;
}

struct Edge {
  Vec2 a;
  Vec2 b;
  std::size_t owner;  // index of the polygon the edge belongs to
};

inline double y_at(const Edge& e, double x) {
  return e.a.y + (e.b.y - e.a.y) * (x - e.a.x) / (e.b.x - e.a.x);
}

}  // namespace detail

/// True when a ring has fewer than three distinct vertices, zero area, or two
/// non-adjacent edges that touch.
inline bool ring_is_invalid(const Ring& ring) {
  const std::size_t n = ring.size();
  if (n < 3 || ring_signed_area(ring) == 0.0) return true;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 a1 = ring[i];
    const Vec2 a2 = ring[(i + 1) % n];
    if (a1 == a2) return true;
    for (std::size_t j = i + 1; j < n; ++j) {
      if (j == i + 1 || (i == 0 && j == n - 1)) continue;
      if (detail::segments_intersect(a1, a2, ring[j], ring[(j + 1) % n])) return true;
    }
  }
  return false;
}

inline bool polygon_is_valid(const Polygon& poly) {
  if (poly.rings.empty()) return false;
  return std::none_of(poly.rings.begin(), poly.rings.end(), ring_is_invalid);
}

/// Area of `rect` covered by the union of `polygons`.
///
/// Exact slab decomposition: the x axis is cut at every vertex, every
/// crossing between edges of different polygons, and every crossing of an
/// edge with the rectangle's horizontal sides. Inside a slab each edge is a
/// line with fixed ordering, so the covered length is linear in x and the
/// midpoint rule integrates it exactly.
inline double covered_area(const Box& rect, std::span<const Polygon* const> polygons) {
  using detail::Edge;
  std::vector<Edge> edges;
  for (std::size_t k = 0; k < polygons.size(); ++k) {
    const Polygon& poly = *polygons[k];
    for (const Ring& ring : poly.rings) {
      const std::size_t n = ring.size();
      for (std::size_t i = 0; i < n; ++i) {
        Vec2 a = ring[i];
        Vec2 b = ring[(i + 1) % n];
        if (a.x == b.x) continue;  // vertical edges never cross a vertical sample line
        if (a.x > b.x) std::swap(a, b);
        if (b.x <= rect.min_x || a.x >= rect.max_x) continue;
        edges.push_back({a, b, k});
      }
    }
  }
  if (edges.empty()) return 0.0;

  std::vector<double> cuts{rect.min_x, rect.max_x};
  auto add_cut = [&](double x) {
    if (x > rect.min_x && x < rect.max_x) cuts.push_back(x);
  };
  for (const Edge& e : edges) {
    add_cut(e.a.x);
    add_cut(e.b.x);
    for (double yl : {rect.min_y, rect.max_y}) {
      if ((e.a.y - yl) * (e.b.y - yl) < 0.0) add_cut(e.a.x + (yl - e.a.y) * (e.b.x - e.a.x) / (e.b.y - e.a.y));
    }
  }
  if (polygons.size() > 1) {
    for (std::size_t i = 0; i < edges.size(); ++i) {
      for (std::size_t j = i + 1; j < edges.size(); ++j) {
        const Edge& e = edges[i];
        const Edge& f = edges[j];
        if (e.owner == f.owner) continue;
        const double lo = std::max(e.a.x, f.a.x);
        const double hi = std::min(e.b.x, f.b.x);
        if (lo >= hi) continue;
        const double d_lo = detail::y_at(e, lo) - detail::y_at(f, lo);
        const double d_hi = detail::y_at(e, hi) - detail::y_at(f, hi);
        if (d_lo * d_hi < 0.0) add_cut(lo + (hi - lo) * d_lo / (d_lo - d_hi));
      }
    }
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  double area = 0.0;
  std::vector<double> crossings;
  std::vector<std::pair<double, double>> intervals;
  for (std::size_t s = 0; s + 1 < cuts.size(); ++s) {
    const double width = cuts[s + 1] - cuts[s];
    if (width <= 0.0) continue;
    const double xm = 0.5 * (cuts[s] + cuts[s + 1]);
    intervals.clear();
    for (std::size_t k = 0; k < polygons.size(); ++k) {
      crossings.clear();
      for (const Edge& e : edges) {
        if (e.owner == k && e.a.x < xm && xm < e.b.x) crossings.push_back(detail::y_at(e, xm));
      }
      std::sort(crossings.begin(), crossings.end());
      for (std::size_t c = 0; c + 1 < crossings.size(); c += 2) {
        const double lo = std::max(crossings[c], rect.min_y);
        const double hi = std::min(crossings[c + 1], rect.max_y);
        if (hi > lo) intervals.emplace_back(lo, hi);
      }
    }
    std::sort(intervals.begin(), intervals.end());
    double length = 0.0;
    double cur_lo = 0.0;
    double cur_hi = -std::numeric_limits<double>::infinity();
    for (auto [lo, hi] : intervals) {
      if (lo > cur_hi) {
        if (cur_hi > cur_lo) length += cur_hi - cur_lo;
        cur_lo = lo;
        cur_hi = hi;
      } else {
        cur_hi = std::max(cur_hi, hi);
      }
    }
    if (cur_hi > cur_lo) length += cur_hi - cur_lo;
    area += length * width;
  }
  return area;
}

inline double covered_area(const Box& rect, const Polygon& polygon) {
  const Polygon* one[] = {&polygon};
  return covered_area(rect, std::span<const Polygon* const>(one));
}

}  // namespace gridcast
