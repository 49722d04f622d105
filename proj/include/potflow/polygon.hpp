// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <variant>
#include <vector>

#include "potflow/error.hpp"
#include "potflow/vec3.hpp"

namespace potflow {

struct Segment {
  Vec3 a, b;
};

/// Circular arc around `axis` through center + radius·(cos θ·u + sin θ·w),
/// where (u, w) = Frame::from_normal(axis). Traversed from start_angle to
/// end_angle, counter-clockwise around `axis` when `ccw`.
struct Arc {
  Vec3 center;
  double radius = 0.0;
  Vec3 axis;
  double start_angle = 0.0;
  double end_angle = 0.0;
  bool ccw = true;

  Vec3 point_at(double angle) const {
    const Frame fr = Frame::from_normal(axis);
    return center + radius * (std::cos(angle) * fr.u + std::sin(angle) * fr.w);
  }
  Vec3 start() const { return point_at(start_angle); }
  Vec3 end() const { return point_at(end_angle); }
  /// Unsigned swept angle.
  double sweep() const { return std::abs(end_angle - start_angle); }
};

struct FullCircle {
  Vec3 center;
  double radius = 0.0;
  Vec3 axis;
};

using BoundaryPiece = std::variant<Segment, Arc, FullCircle>;

inline Vec3 piece_start(const BoundaryPiece& p) {
  return std::visit(
      [](const auto& q) -> Vec3 {
        using T = std::decay_t<decltype(q)>;
        if constexpr (std::is_same_v<T, Segment>) return q.a;
        else if constexpr (std::is_same_v<T, Arc>) return q.start();
        else return q.center + q.radius * Frame::from_normal(q.axis).u;
      },
      p);
}

inline Vec3 piece_end(const BoundaryPiece& p) {
  return std::visit(
      [](const auto& q) -> Vec3 {
        using T = std::decay_t<decltype(q)>;
        if constexpr (std::is_same_v<T, Segment>) return q.b;
        else if constexpr (std::is_same_v<T, Arc>) return q.end();
        else return q.center + q.radius * Frame::from_normal(q.axis).u;
      },
      p);
}

/// Planar region bounded by one closed loop of segments and arcs, or by a
/// single full circle. Positive orientation is counter-clockwise around
/// plane.n.
struct GeneralizedPolygon {
  Plane plane;
  std::vector<BoundaryPiece> boundary;

  bool is_full_circle() const {
    return boundary.size() == 1 && std::holds_alternative<FullCircle>(boundary.front());
  }
};

struct PolygonMoments {
  double area = 0.0;
  Vec3 centroid;
  double polar = 0.0;  // ∫ |x - origin|² dA about the requested origin
};

namespace detail {

// Antiderivatives of powers of cos / sin.
inline double icos1(double t) { return std::sin(t); }
inline double icos2(double t) { return 0.5 * t + 0.25 * std::sin(2 * t); }
inline double icos3(double t) { const double s = std::sin(t); return s - s * s * s / 3.0; }
inline double icos4(double t) { return 0.375 * t + 0.25 * std::sin(2 * t) + std::sin(4 * t) / 32.0; }
inline double isin1(double t) { return -std::cos(t); }
inline double isin2(double t) { return 0.5 * t - 0.25 * std::sin(2 * t); }
inline double isin3(double t) { const double c = std::cos(t); return -c + c * c * c / 3.0; }
inline double isin4(double t) { return 0.375 * t - 0.25 * std::sin(2 * t) + std::sin(4 * t) / 32.0; }

// Green's-theorem line integrals in the plane's local 2D frame:
//   area  = ½∮(x dy − y dx)
//   Mx    = ½∮ x² dy,   My = −½∮ y² dx
//   J     = ⅓∮(x³ dy − y³ dx)
struct LineIntegrals {
  double area = 0.0, mx = 0.0, my = 0.0, polar = 0.0;
};

inline void add_segment(LineIntegrals& acc, double ax, double ay, double bx, double by) {
  const double dx = bx - ax, dy = by - ay;
  acc.area += 0.5 * (ax * by - ay * bx);
  acc.mx += dy * (ax * ax + ax * bx + bx * bx) / 6.0;
  acc.my -= dx * (ay * ay + ay * by + by * by) / 6.0;
  acc.polar += (dy * (ax * ax * ax + ax * ax * bx + ax * bx * bx + bx * bx * bx) -
                dx * (ay * ay * ay + ay * ay * by + ay * by * by + by * by * by)) /
               12.0;
}

/// Arc of radius r around (cx, cy) from local angle t0 through signed sweep.
inline void add_arc(LineIntegrals& acc, double cx, double cy, double r, double t0, double sweep) {
  const double t1 = t0 + sweep;
  auto diff = [&](double (*f)(double)) { return f(t1) - f(t0); };
  acc.area += 0.5 * (r * cx * diff(icos1) + r * cy * diff(isin1) + r * r * sweep);
  acc.mx += 0.5 * r * (cx * cx * diff(icos1) + 2 * cx * r * diff(icos2) + r * r * diff(icos3));
  acc.my += 0.5 * r * (cy * cy * diff(isin1) + 2 * cy * r * diff(isin2) + r * r * diff(isin3));
  acc.polar += r *
               (cx * cx * cx * diff(icos1) + 3 * cx * cx * r * diff(icos2) +
                3 * cx * r * r * diff(icos3) + r * r * r * diff(icos4) +
                cy * cy * cy * diff(isin1) + 3 * cy * cy * r * diff(isin2) +
                3 * cy * r * r * diff(isin3) + r * r * r * diff(isin4)) /
               3.0;
}

inline double polygon_scale(const GeneralizedPolygon& g) {
  double s = 0.0;
  for (const auto& p : g.boundary) {
    if (const auto* c = std::get_if<FullCircle>(&p)) s = std::max(s, c->radius);
    else s = std::max(s, norm(piece_end(p) - piece_start(p)));
    if (const auto* a = std::get_if<Arc>(&p)) s = std::max(s, a->radius);
  }
  return s;
}

}  // namespace detail

/// Throws OpenLoop unless consecutive pieces share endpoints within `tol`
/// (default: 1e-9 of the polygon size).
inline void check_closed(const GeneralizedPolygon& g, double tol = -1.0) {
  if (g.boundary.empty()) throw Error(ErrorCode::OpenLoop, "empty boundary");
  if (g.is_full_circle()) return;
  for (const auto& p : g.boundary)
    if (std::holds_alternative<FullCircle>(p))
      throw Error(ErrorCode::OpenLoop, "full circle mixed with other pieces");
  if (tol < 0.0) tol = 1e-9 * std::max(detail::polygon_scale(g), 1e-300);
  for (std::size_t k = 0; k < g.boundary.size(); ++k) {
    const Vec3 e = piece_end(g.boundary[k]);
    const Vec3 s = piece_start(g.boundary[(k + 1) % g.boundary.size()]);
    if (norm(e - s) > tol) throw Error(ErrorCode::OpenLoop, "consecutive pieces do not meet");
  }
}

/// Area, centroid and polar moment about `origin` (projected onto the plane).
/// The loop is assumed closed; call check_closed first for untrusted input.
inline PolygonMoments polygon_moments(const GeneralizedPolygon& g, const Vec3& origin) {
  const Frame fr = Frame::from_normal(g.plane.n);
  const Vec3 o = g.plane.project(origin);
  detail::LineIntegrals acc;
  for (const auto& piece : g.boundary) {
    if (const auto* s = std::get_if<Segment>(&piece)) {
      const auto a = fr.to_local(s->a - o), b = fr.to_local(s->b - o);
      detail::add_segment(acc, a[0], a[1], b[0], b[1]);
    } else if (const auto* arc = std::get_if<Arc>(&piece)) {
      const auto c = fr.to_local(arc->center - o);
      const auto st = fr.to_local(arc->start() - arc->center);
      const double dir = (arc->ccw ? 1.0 : -1.0) * (dot(arc->axis, g.plane.n) >= 0 ? 1.0 : -1.0);
      detail::add_arc(acc, c[0], c[1], arc->radius, std::atan2(st[1], st[0]), dir * arc->sweep());
    } else {
      const auto& fc = std::get<FullCircle>(piece);
      const auto c = fr.to_local(fc.center - o);
      detail::add_arc(acc, c[0], c[1], fc.radius, 0.0, 2.0 * kPi);
    }
  }
  PolygonMoments m;
  m.area = acc.area;
  m.polar = acc.polar;
  m.centroid = acc.area != 0.0 ? o + fr.to_world(acc.mx / acc.area, acc.my / acc.area) : o;
  return m;
}

inline double polygon_area(const GeneralizedPolygon& g) {
  check_closed(g);
  if (g.is_full_circle()) {
    const double r = std::get<FullCircle>(g.boundary.front()).radius;
    return kPi * r * r;
  }
  return polygon_moments(g, piece_start(g.boundary.front())).area;
}

inline Vec3 polygon_centroid(const GeneralizedPolygon& g) {
  check_closed(g);
  if (g.is_full_circle()) return std::get<FullCircle>(g.boundary.front()).center;
  return polygon_moments(g, piece_start(g.boundary.front())).centroid;
}

}  // namespace potflow
