// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "potflow/convex_cell.hpp"
#include "potflow/error.hpp"
#include "potflow/laguerre.hpp"
#include "potflow/parallel.hpp"
#include "potflow/polygon.hpp"

namespace potflow {

struct Sphere {
  Vec3 center;
  double r2 = 0.0;
  double radius() const { return std::sqrt(std::max(r2, 0.0)); }
};

enum class FacetStatus { Outside, Untouched, Clipped, FullCircle };

struct FacetRestriction {
  FacetStatus status = FacetStatus::Outside;
  GeneralizedPolygon shape;
};

struct RestrictedFacet {
  NeighborTag tag;
  GeneralizedPolygon shape;
  double area = 0.0;
  double signed_height = 0.0;  // distance from the site to the facet plane, positive inside
  Vec3 centroid;
  double polar = 0.0;  // ∫|x - foot|² dA about the site's foot on the plane
};

enum class CellStatus { Empty, FullBall, Clipped };

struct RestrictedCell {
  CellStatus status = CellStatus::Empty;
  double volume = 0.0;
  Vec3 centroid;
  double free_surface_area = 0.0;
  double second_moment = 0.0;  // ∫ |x - p|² dV
  Vec3 interior_point;
  std::vector<RestrictedFacet> facets;
};

/// Distance from p_i to the power plane of (i, j), positive on p_i's side.
inline double signed_height(const Vec3& pi, double psi_i, const Vec3& pj, double psi_j) {
  const double l = distance(pi, pj);
  return (l * l + psi_i - psi_j) / (2.0 * l);
}
inline double signed_height(const Plane& plane, const Vec3& p) { return -plane.signed_distance(p); }
inline double shell_height(const Sphere& s) { return s.radius(); }

namespace detail {

inline bool inside_convex_2d(std::span<const std::array<double, 2>> q, double x, double y, double tol) {
  const std::size_t m = q.size();
  for (std::size_t k = 0; k < m; ++k) {
    const auto& a = q[k];
    const auto& b = q[(k + 1) % m];
    const double ex = b[0] - a[0], ey = b[1] - a[1];
    const double len = std::hypot(ex, ey);
    if (ex * (y - a[1]) - ey * (x - a[0]) < -tol * len) return false;
  }
  return true;
}

}  // namespace detail

/// Intersection of facet f of `cell` with the ball bounded by `s`.
inline FacetRestriction restrict_facet(const ConvexCell& cell, std::size_t f, const Sphere& s,
                                       double tau) {
  const Facet& fa = cell.facets[f];
  FacetRestriction out;
  out.shape.plane = fa.plane;
  const double sd = fa.plane.signed_distance(s.center);
  const double rho2 = s.r2 - sd * sd;
  if (rho2 < tau * tau) return out;
  const double rho = std::sqrt(rho2);
  const Vec3 c0 = s.center - sd * fa.plane.n;
  const Frame fr = Frame::from_normal(fa.plane.n);
  const auto lp = cell.loop(f);
  const std::size_t m = lp.size();

  thread_local std::vector<std::array<double, 2>> q;
  thread_local std::vector<std::uint8_t> in;
  q.resize(m);
  in.resize(m);
  const double in_r2 = (rho + tau) * (rho + tau);
  bool all_in = true;
  for (std::size_t k = 0; k < m; ++k) {
    q[k] = fr.to_local(cell.vertices[lp[k]] - c0);
    in[k] = q[k][0] * q[k][0] + q[k][1] * q[k][1] <= in_r2;
    all_in = all_in && in[k];
  }
  auto world = [&](double x, double y) { return c0 + fr.to_world(x, y); };
  auto& pieces = out.shape.boundary;
  if (all_in) {
    for (std::size_t k = 0; k < m; ++k)
      pieces.push_back(Segment{cell.vertices[lp[k]], cell.vertices[lp[(k + 1) % m]]});
    out.status = FacetStatus::Untouched;
    return out;
  }

  std::optional<std::array<double, 2>> first_entry, pending_exit;
  auto push_segment = [&](const std::array<double, 2>& a, const std::array<double, 2>& b) {
    if (std::hypot(b[0] - a[0], b[1] - a[1]) > tau)
      pieces.push_back(Segment{world(a[0], a[1]), world(b[0], b[1])});
  };
  auto push_arc = [&](const std::array<double, 2>& x, const std::array<double, 2>& e) {
    const double tx = std::atan2(x[1], x[0]);
    double sweep = std::atan2(e[1], e[0]) - tx;
    while (sweep < 0.0) sweep += 2.0 * kPi;
    while (sweep >= 2.0 * kPi) sweep -= 2.0 * kPi;
    if (std::hypot(e[0] - x[0], e[1] - x[1]) < 16.0 * tau) {
      // Exit and entry coincide: the arc is either empty or the whole circle.
      const double mid = tx + kPi;
      const bool big = detail::inside_convex_2d(q, rho * std::cos(mid), rho * std::sin(mid), tau);
      if (big && sweep < kPi) sweep = std::min(sweep + 2.0 * kPi, 2.0 * kPi);
      if (!big && sweep > kPi) sweep = 0.0;
    }
    if (sweep * rho > tau) pieces.push_back(Arc{c0, rho, fa.plane.n, tx, tx + sweep, true});
  };
  auto on_entry = [&](const std::array<double, 2>& e) {
    if (pending_exit) {
      push_arc(*pending_exit, e);
      pending_exit.reset();
    } else if (!first_entry) {
      first_entry = e;
    }
  };

  for (std::size_t k = 0; k < m; ++k) {
    const auto& a = q[k];
    const auto& b = q[(k + 1) % m];
    const bool ai = in[k], bi = in[(k + 1) % m];
    if (ai && bi) {
      push_segment(a, b);
      continue;
    }
    const double dx = b[0] - a[0], dy = b[1] - a[1];
    const double A = dx * dx + dy * dy;
    if (A <= 0.0) continue;
    const double B = 2.0 * (a[0] * dx + a[1] * dy);
    const double C = a[0] * a[0] + a[1] * a[1] - rho2;
    const double sq = std::sqrt(std::max(B * B - 4.0 * A * C, 0.0));
    const double t0 = std::clamp((-B - sq) / (2.0 * A), 0.0, 1.0);
    const double t1 = std::clamp((-B + sq) / (2.0 * A), 0.0, 1.0);
    const std::array<double, 2> e{a[0] + t0 * dx, a[1] + t0 * dy};
    const std::array<double, 2> x{a[0] + t1 * dx, a[1] + t1 * dy};
    if (ai) {
      push_segment(a, x);
      pending_exit = x;
    } else if (bi) {
      on_entry(e);
      push_segment(e, b);
    } else {
      if (B * B - 4.0 * A * C <= 0.0 || (t1 - t0) * std::sqrt(A) <= tau) continue;
      on_entry(e);
      push_segment(e, x);
      pending_exit = x;
    }
  }
  if (pending_exit && first_entry) push_arc(*pending_exit, *first_entry);

  if (pieces.empty()) {
    if (!first_entry && !pending_exit && detail::inside_convex_2d(q, 0.0, 0.0, 0.0)) {
      pieces.push_back(FullCircle{c0, rho, fa.plane.n});
      out.status = FacetStatus::FullCircle;
    }
    return out;
  }
  if (pieces.size() < 2) {
    pieces.clear();
    return out;
  }
  out.status = FacetStatus::Clipped;
  return out;
}

/// Point strictly inside ball ∩ (facet half-spaces), built from inward rays
/// cast at each facet centroid. std::nullopt if every ray is degenerate.
inline std::optional<Vec3> interior_point(std::span<const RestrictedFacet> facets, const Sphere& s,
                                          double tau) {
  const double R = s.radius();
  Vec3 sum, best_mid;
  double best_len = 0.0;
  int count = 0;
  for (std::size_t j = 0; j < facets.size(); ++j) {
    const Vec3& g = facets[j].centroid;
    const Vec3 n = facets[j].shape.plane.n;
    const Vec3 e = g - s.center;
    const double en = dot(e, n);
    const double disc = en * en - norm2(e) + R * R;
    if (disc <= 0.0) continue;
    double lo = std::max(0.0, en - std::sqrt(disc)), hi = en + std::sqrt(disc);
    for (std::size_t k = 0; k < facets.size() && lo < hi; ++k) {
      if (k == j) continue;
      const Plane& pk = facets[k].shape.plane;
      const double s0 = pk.signed_distance(g), qn = dot(pk.n, n);
      if (std::abs(qn) < 1e-14) {
        if (s0 > 0.0) hi = lo;
      } else if (qn > 0.0) {
        lo = std::max(lo, s0 / qn);
      } else {
        hi = std::min(hi, s0 / qn);
      }
    }
    if (hi - lo <= tau) continue;
    const Vec3 mid = g - (0.5 * (lo + hi)) * n;
    sum += mid;
    ++count;
    if (hi - lo > best_len) {
      best_len = hi - lo;
      best_mid = mid;
    }
  }
  if (count == 0) return std::nullopt;
  const Vec3 c = sum / static_cast<double>(count);
  bool strict = norm(c - s.center) < R - tau;
  for (const auto& f : facets) strict = strict && f.shape.plane.signed_distance(c) < -tau;
  return strict ? c : best_mid;
}

namespace detail {

/// Circle arc on the sphere, traversed counter-clockwise around `axis`.
struct SphereArc {
  Vec3 center, axis;
  double radius = 0.0;
  double offset = 0.0;  // (center - sphere center) · axis
  Vec3 start, end;
  double sweep = 0.0;

  Vec3 tangent(const Vec3& x) const { return cross(axis, x - center); }
};

inline Vec3 radial_projection(const Vec3& c, const Vec3& x, const Sphere& s) {
  const Vec3 d = normalized(x - c);
  const Vec3 e = c - s.center;
  const double b = dot(d, e);
  const double t = -b + std::sqrt(std::max(b * b - (norm2(e) - s.r2), 0.0));
  return c + t * d;
}

inline bool projected_arcs(const GeneralizedPolygon& g, const Sphere& s, const Vec3& c,
                           std::vector<SphereArc>& arcs) {
  arcs.clear();
  for (const auto& piece : g.boundary) {
    SphereArc a;
    if (const auto* seg = std::get_if<Segment>(&piece)) {
      const Vec3 m = cross(seg->a - c, seg->b - c);
      const double mn = norm(m);
      if (!(mn > 0.0)) return false;
      a.axis = m / mn;
      a.offset = dot(c - s.center, a.axis);
      a.center = s.center + a.offset * a.axis;
      a.radius = std::sqrt(std::max(s.r2 - a.offset * a.offset, 0.0));
      a.start = radial_projection(c, seg->a, s);
      a.end = radial_projection(c, seg->b, s);
      const Vec3 u0 = a.start - a.center, u1 = a.end - a.center;
      a.sweep = std::atan2(dot(cross(u0, u1), a.axis), dot(u0, u1));
      if (a.sweep < 0.0) a.sweep += 2.0 * kPi;
    } else if (const auto* arc = std::get_if<Arc>(&piece)) {
      a.axis = arc->ccw ? arc->axis : -arc->axis;
      a.center = arc->center;
      a.radius = arc->radius;
      a.offset = dot(a.center - s.center, a.axis);
      a.start = arc->start();
      a.end = arc->end();
      a.sweep = arc->sweep();
    } else {
      return false;
    }
    if (!(a.radius > 0.0) || !std::isfinite(a.sweep)) return false;
    arcs.push_back(a);
  }
  return true;
}

inline double gauss_bonnet_area(const std::vector<SphereArc>& arcs, const Sphere& s) {
  const double R = s.radius();
  double integral_kg = 0.0, turning = 0.0;
  for (std::size_t k = 0; k < arcs.size(); ++k) {
    const SphereArc& a = arcs[k];
    const SphereArc& b = arcs[(k + 1) % arcs.size()];
    // ∫ k_g ds over a small circle: (offset / (r R)) · r · sweep.
    integral_kg += a.offset * a.sweep / R;
    const Vec3 x = 0.5 * (a.end + b.start);
    const Vec3 N = normalized(x - s.center);
    Vec3 tin = a.tangent(a.end), tout = b.tangent(b.start);
    tin -= dot(tin, N) * N;
    tout -= dot(tout, N) * N;
    turning += std::atan2(dot(cross(tin, tout), N), dot(tin, tout));
  }
  return s.r2 * (2.0 * kPi - integral_kg - turning);
}

}  // namespace detail

/// Area of the radial projection of restricted facet `g` from `c` onto the
/// sphere (the part of the sphere hidden behind the facet).
inline double projected_patch_area(const GeneralizedPolygon& g, const Sphere& s, const Vec3& c) {
  const double R = s.radius();
  const double full = 4.0 * kPi * s.r2;
  if (g.is_full_circle()) {
    const double h = -g.plane.signed_distance(s.center);
    return std::clamp(2.0 * kPi * R * (R - h), 0.0, full);
  }
  thread_local std::vector<detail::SphereArc> arcs;
  const double slack = 1e-9 * full;
  const double step = 1e-7 * R;
  static constexpr std::array<Vec3, 4> kJitter{Vec3{0, 0, 0}, Vec3{0.577, 0.211, -0.788},
                                               Vec3{-0.305, 0.912, 0.274},
                                               Vec3{0.152, -0.431, 0.889}};
  double area = 0.0;
  for (const auto& dc : kJitter) {
    if (!detail::projected_arcs(g, s, c + step * dc, arcs)) continue;
    area = detail::gauss_bonnet_area(arcs, s);
    if (std::isfinite(area) && area >= -slack && area <= full + slack) break;
  }
  if (!std::isfinite(area)) return 0.0;
  return std::clamp(area, 0.0, full);
}

inline double free_surface_area(std::span<const RestrictedFacet> facets, const Sphere& s,
                                const Vec3& c) {
  const double full = 4.0 * kPi * s.r2;
  double hidden = 0.0;
  for (const auto& f : facets) hidden += projected_patch_area(f.shape, s, c);
  return std::clamp(full - hidden, 0.0, full);
}

/// Restricted cell V_i ∩ ball(p_i, √ψ_i): facets, free surface, volume,
/// centroid and second moment.
inline RestrictedCell evaluate_cell(const ConvexCell& cell, const Sphere& s, double tau) {
  RestrictedCell rc;
  if (cell.empty() || !(s.r2 > 0.0)) return rc;
  const double R = s.radius();
  const Vec3& p = s.center;

  for (std::size_t f = 0; f < cell.facets.size(); ++f) {
    FacetRestriction fr = restrict_facet(cell, f, s, tau);
    if (fr.status == FacetStatus::Outside) continue;
    RestrictedFacet rf;
    rf.tag = cell.facets[f].tag;
    rf.signed_height = signed_height(cell.facets[f].plane, p);
    if (fr.status == FacetStatus::FullCircle) {
      const auto& fc = std::get<FullCircle>(fr.shape.boundary.front());
      rf.area = kPi * fc.radius * fc.radius;
      rf.centroid = fc.center;
      rf.polar = 0.5 * rf.area * fc.radius * fc.radius;
    } else {
      const PolygonMoments pm = polygon_moments(fr.shape, p);
      rf.area = pm.area;
      rf.centroid = pm.centroid;
      rf.polar = pm.polar;
    }
    if (!(rf.area > 0.0)) continue;
    rf.shape = std::move(fr.shape);
    rc.facets.push_back(std::move(rf));
  }

  if (rc.facets.empty()) {
    if (!cell.contains(p, tau)) return rc;
    rc.status = CellStatus::FullBall;
    rc.volume = 4.0 / 3.0 * kPi * s.r2 * R;
    rc.centroid = p;
    rc.interior_point = p;
    rc.free_surface_area = 4.0 * kPi * s.r2;
    rc.second_moment = 0.8 * kPi * s.r2 * s.r2 * R;
    return rc;
  }

  const auto c = interior_point(rc.facets, s, tau);
  if (!c) {
    rc.facets.clear();
    return rc;
  }
  rc.status = CellStatus::Clipped;
  rc.interior_point = *c;
  rc.free_surface_area = free_surface_area(rc.facets, s, *c);

  double volume = R * rc.free_surface_area / 3.0;
  double second = s.r2 * R * rc.free_surface_area / 5.0;
  Vec3 moment, normal_sum;
  for (const auto& f : rc.facets) {
    const double h = f.signed_height;
    volume += h * f.area / 3.0;
    moment += (h * f.area / 4.0) * (f.centroid - p);
    normal_sum += f.area * f.shape.plane.n;
    second += h / 5.0 * (f.polar + h * h * f.area);
  }
  // The spherical part contributes (R²/4)∫_K n dA, and ∫_K n dA = -Σ n_j |B_j|.
  moment -= (s.r2 / 4.0) * normal_sum;
  if (!std::isfinite(volume) || !is_finite(moment))
    throw Error(ErrorCode::EvaluationFailed, "non-finite restricted cell quantities");
  rc.volume = std::max(volume, 0.0);
  rc.centroid = rc.volume > 0.0 ? p + moment / rc.volume : *c;
  rc.second_moment = std::max(second, 0.0);
  return rc;
}

/// Builds the ball-aware diagram for `sites` and evaluates every restricted
/// cell. Optionally returns the unrestricted cells as well.
inline std::vector<RestrictedCell> evaluate_sites(std::span<const Site> sites, const Domain& domain,
                                                  int threads,
                                                  std::vector<ConvexCell>* cells_out = nullptr) {
  DiagramOptions opt;
  opt.ball_aware = true;
  opt.threads = threads;
  std::vector<ConvexCell> cells = build_diagram(sites, domain, opt);
  std::vector<RestrictedCell> out(sites.size());
  parallel_for(sites.size(), threads, [&](std::size_t i) {
    out[i] = evaluate_cell(cells[i], Sphere{sites[i].p, sites[i].psi}, domain.tau);
  });
  if (cells_out) *cells_out = std::move(cells);
  return out;
}

}  // namespace potflow
