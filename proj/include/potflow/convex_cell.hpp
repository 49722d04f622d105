// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "potflow/error.hpp"
#include "potflow/vec3.hpp"

namespace potflow {

/// What lies on the other side of a facet: another site's cell or a face of
/// the simulation domain.
struct NeighborTag {
  enum class Kind : std::uint8_t { Site, Domain };
  Kind kind = Kind::Domain;
  std::int32_t index = 0;

  static constexpr NeighborTag site(std::int32_t j) { return {Kind::Site, j}; }
  static constexpr NeighborTag domain(std::int32_t k) { return {Kind::Domain, k}; }
  constexpr bool is_site() const { return kind == Kind::Site; }
  constexpr bool is_domain() const { return kind == Kind::Domain; }
  friend constexpr bool operator==(const NeighborTag&, const NeighborTag&) = default;
};

struct Facet {
  Plane plane;
  NeighborTag tag;
  std::uint32_t begin = 0;  // offset into ConvexCell::loops
  std::uint32_t count = 0;
};

/// Bounded convex polytope. Facet loops are counter-clockwise seen from
/// outside (i.e. positively oriented around the facet's outward normal).
struct ConvexCell {
  std::vector<Vec3> vertices;
  std::vector<Facet> facets;
  std::vector<std::int32_t> loops;

  bool empty() const { return facets.empty(); }
  std::span<const std::int32_t> loop(std::size_t f) const {
    return {loops.data() + facets[f].begin, facets[f].count};
  }
  std::size_t num_edges() const { return loops.size() / 2; }
  void clear() {
    vertices.clear();
    facets.clear();
    loops.clear();
  }

  bool contains(const Vec3& x, double tau) const {
    for (const auto& f : facets)
      if (f.plane.signed_distance(x) > tau) return false;
    return true;
  }

  /// Largest distance from `p` to a vertex.
  double radius_from(const Vec3& p) const {
    double r2 = 0.0;
    for (const auto& v : vertices) r2 = std::max(r2, norm2(v - p));
    return std::sqrt(r2);
  }

  Aabb bounds() const {
    Aabb box;
    for (const auto& v : vertices) box.extend(v);
    return box;
  }
};

/// Axis-aligned box cell; facet k carries tags[k] in the order
/// -x, +x, -y, +y, -z, +z.
inline ConvexCell make_box_cell(const Vec3& lo, const Vec3& hi,
                                const std::array<NeighborTag, 6>& tags) {
  ConvexCell c;
  for (int i = 0; i < 8; ++i)
    c.vertices.push_back({(i & 1) ? hi.x : lo.x, (i & 2) ? hi.y : lo.y, (i & 4) ? hi.z : lo.z});
  static constexpr int kLoops[6][4] = {{0, 4, 6, 2}, {1, 3, 7, 5}, {0, 1, 5, 4},
                                       {2, 6, 7, 3}, {0, 2, 3, 1}, {4, 5, 7, 6}};
  const Plane planes[6] = {{{-1, 0, 0}, -lo.x}, {{1, 0, 0}, hi.x}, {{0, -1, 0}, -lo.y},
                           {{0, 1, 0}, hi.y},   {{0, 0, -1}, -lo.z}, {{0, 0, 1}, hi.z}};
  for (int f = 0; f < 6; ++f) {
    c.facets.push_back({planes[f], tags[f], static_cast<std::uint32_t>(c.loops.size()), 4});
    for (int k = 0; k < 4; ++k) c.loops.push_back(kLoops[f][k]);
  }
  return c;
}

inline std::array<Plane, 6> box_halfspaces(const Vec3& lo, const Vec3& hi) {
  return {Plane{{-1, 0, 0}, -lo.x}, Plane{{1, 0, 0}, hi.x},  Plane{{0, -1, 0}, -lo.y},
          Plane{{0, 1, 0}, hi.y},   Plane{{0, 0, -1}, -lo.z}, Plane{{0, 0, 1}, hi.z}};
}

enum class ClipOutcome { Unchanged, Clipped, Empty };

/// Reusable buffers for clip_in_place; one per thread.
struct ClipScratch {
  std::vector<double> dist;
  std::vector<std::uint8_t> state;  // 0 inside, 1 on plane, 2 outside
  std::vector<std::int32_t> remap;
  std::vector<std::uint8_t> on_plane;
  struct Cut {
    std::int32_t a, b, vertex;
  };
  std::vector<Cut> cuts;
  std::vector<std::pair<std::int32_t, std::int32_t>> plane_edges;
  std::vector<std::pair<std::int32_t, std::int32_t>> boundary;
  std::vector<std::int32_t> new_loop;
  ConvexCell out;
};

namespace detail {

inline bool chain_loop(const std::vector<std::pair<std::int32_t, std::int32_t>>& edges,
                       std::vector<std::int32_t>& loop) {
  loop.clear();
  if (edges.size() < 3) return false;
  std::int32_t cur = edges.front().first;
  const std::int32_t start = cur;
  for (std::size_t step = 0; step < edges.size(); ++step) {
    loop.push_back(cur);
    std::int32_t next = -1;
    for (const auto& e : edges)
      if (e.first == cur) {
        if (next != -1) return false;  // branching
        next = e.second;
      }
    if (next < 0) return false;
    cur = next;
  }
  return cur == start;
}

inline void angle_sort_loop(const std::vector<std::pair<std::int32_t, std::int32_t>>& edges,
                            const std::vector<Vec3>& verts, const Vec3& normal,
                            std::vector<std::int32_t>& loop) {
  loop.clear();
  for (const auto& e : edges) {
    if (std::find(loop.begin(), loop.end(), e.first) == loop.end()) loop.push_back(e.first);
    if (std::find(loop.begin(), loop.end(), e.second) == loop.end()) loop.push_back(e.second);
  }
  Vec3 center;
  for (auto v : loop) center += verts[v];
  center /= static_cast<double>(loop.size());
  const Frame fr = Frame::from_normal(normal);
  std::vector<std::pair<double, std::int32_t>> keyed;
  for (auto v : loop) {
    const auto l = fr.to_local(verts[v] - center);
    keyed.push_back({std::atan2(l[1], l[0]), v});
  }
  std::sort(keyed.begin(), keyed.end());
  for (std::size_t k = 0; k < keyed.size(); ++k) loop[k] = keyed[k].second;
}

}  // namespace detail

/// Intersects `cell` with {x : h.n·x <= h.d}. Vertices within `tau` of the
/// plane count as inside and become vertices of the new facet as-is. The new
/// facet (if any) carries `tag`.
inline ClipOutcome clip_in_place(ConvexCell& cell, const Plane& h, NeighborTag tag, double tau,
                                 ClipScratch& s) {
  const std::size_t nv = cell.vertices.size();
  if (nv == 0) return ClipOutcome::Empty;
  s.dist.resize(nv);
  s.state.resize(nv);
  std::size_t n_out = 0, n_strict = 0;
  for (std::size_t v = 0; v < nv; ++v) {
    const double d = h.signed_distance(cell.vertices[v]);
    s.dist[v] = d;
    if (d > tau) {
      s.state[v] = 2;
      ++n_out;
    } else if (d >= -tau) {
      s.state[v] = 1;
    } else {
      s.state[v] = 0;
      ++n_strict;
    }
  }
  if (n_out == 0) return ClipOutcome::Unchanged;
  if (n_strict == 0) {
    cell.clear();
    return ClipOutcome::Empty;
  }

  ConvexCell& out = s.out;
  out.clear();
  s.remap.assign(nv, -1);
  s.on_plane.clear();
  for (std::size_t v = 0; v < nv; ++v) {
    if (s.state[v] == 2) continue;
    s.remap[v] = static_cast<std::int32_t>(out.vertices.size());
    out.vertices.push_back(cell.vertices[v]);
    s.on_plane.push_back(s.state[v] == 1);
  }
  s.cuts.clear();
  auto cut_vertex = [&](std::int32_t a, std::int32_t b) {
    if (a > b) std::swap(a, b);
    for (const auto& c : s.cuts)
      if (c.a == a && c.b == b) return c.vertex;
    const double t = s.dist[a] / (s.dist[a] - s.dist[b]);
    const Vec3& pa = cell.vertices[a];
    const Vec3& pb = cell.vertices[b];
    const auto id = static_cast<std::int32_t>(out.vertices.size());
    out.vertices.push_back(pa + t * (pb - pa));
    s.on_plane.push_back(1);
    s.cuts.push_back({a, b, id});
    return id;
  };

  s.plane_edges.clear();
  for (const auto& f : cell.facets) {
    const auto begin = static_cast<std::uint32_t>(out.loops.size());
    const std::int32_t* lp = cell.loops.data() + f.begin;
    for (std::uint32_t k = 0; k < f.count; ++k) {
      const std::int32_t a = lp[k], b = lp[(k + 1) % f.count];
      const bool a_out = s.state[a] == 2, b_out = s.state[b] == 2;
      if (!a_out) out.loops.push_back(s.remap[a]);
      if (a_out != b_out) {
        const std::int32_t inner = a_out ? b : a;
        if (s.state[inner] == 1) continue;
        out.loops.push_back(cut_vertex(a, b));
      }
    }
    const auto count = static_cast<std::uint32_t>(out.loops.size()) - begin;
    if (count < 3) {
      out.loops.resize(begin);
      continue;
    }
    out.facets.push_back({f.plane, f.tag, begin, count});
    for (std::uint32_t k = 0; k < count; ++k) {
      const std::int32_t a = out.loops[begin + k], b = out.loops[begin + (k + 1) % count];
      if (s.on_plane[a] && s.on_plane[b]) s.plane_edges.push_back({a, b});
    }
  }

  // Directed on-plane edges without a reverse twin bound the new facet.
  s.boundary.clear();
  for (const auto& e : s.plane_edges) {
    bool twin = false;
    for (const auto& o : s.plane_edges)
      if (o.first == e.second && o.second == e.first) {
        twin = true;
        break;
      }
    if (!twin) s.boundary.push_back({e.second, e.first});
  }
  if (s.boundary.size() >= 3) {
    if (!detail::chain_loop(s.boundary, s.new_loop))
      detail::angle_sort_loop(s.boundary, out.vertices, h.n, s.new_loop);
    if (s.new_loop.size() >= 3) {
      out.facets.push_back({h, tag, static_cast<std::uint32_t>(out.loops.size()),
                            static_cast<std::uint32_t>(s.new_loop.size())});
      out.loops.insert(out.loops.end(), s.new_loop.begin(), s.new_loop.end());
    }
  }
  if (out.facets.size() < 4) {
    cell.clear();
    return ClipOutcome::Empty;
  }

  // Drop vertices no longer referenced by any loop (degenerate facets only).
  std::vector<std::int32_t>& used = s.remap;
  used.assign(out.vertices.size(), -1);
  for (auto v : out.loops) used[v] = 0;
  if (std::find(used.begin(), used.end(), -1) != used.end()) {
    std::int32_t next = 0;
    for (std::size_t v = 0; v < out.vertices.size(); ++v)
      if (used[v] == 0) {
        used[v] = next;
        out.vertices[next++] = out.vertices[v];
      }
    out.vertices.resize(next);
    for (auto& v : out.loops) v = used[v];
  }
  std::swap(cell, out);
  return ClipOutcome::Clipped;
}

/// Value-returning clip; std::nullopt means the intersection is empty.
inline std::optional<ConvexCell> clip_cell(const ConvexCell& cell, const Plane& h,
                                           NeighborTag tag, double tau) {
  ConvexCell c = cell;
  ClipScratch scratch;
  if (clip_in_place(c, h, tag, tau, scratch) == ClipOutcome::Empty) return std::nullopt;
  return c;
}

/// Exact volume by apex-fan tetrahedra.
inline double cell_volume_convex(const ConvexCell& cell) {
  if (cell.empty()) return 0.0;
  const Vec3 apex = cell.vertices.front();
  double vol = 0.0;
  for (std::size_t f = 0; f < cell.facets.size(); ++f) {
    const auto lp = cell.loop(f);
    const Vec3 a = cell.vertices[lp[0]] - apex;
    for (std::size_t k = 1; k + 1 < lp.size(); ++k)
      vol += dot(a, cross(cell.vertices[lp[k]] - apex, cell.vertices[lp[k + 1]] - apex));
  }
  return vol / 6.0;
}

/// Area of one planar facet of a convex cell.
inline double facet_area(const ConvexCell& cell, std::size_t f) {
  const auto lp = cell.loop(f);
  Vec3 acc;
  const Vec3& o = cell.vertices[lp[0]];
  for (std::size_t k = 1; k + 1 < lp.size(); ++k)
    acc += cross(cell.vertices[lp[k]] - o, cell.vertices[lp[k + 1]] - o);
  return 0.5 * dot(acc, cell.facets[f].plane.n);
}

/// Checks the structural invariants of a cell; returns an empty string when
/// valid, otherwise a description of the first violation.
inline std::string validate_cell(const ConvexCell& cell, double tau) {
  if (cell.empty()) return {};
  const std::size_t V = cell.vertices.size(), F = cell.facets.size();
  std::vector<std::pair<std::int32_t, std::int32_t>> edges;
  for (std::size_t f = 0; f < F; ++f) {
    const auto lp = cell.loop(f);
    for (std::size_t k = 0; k < lp.size(); ++k) edges.push_back({lp[k], lp[(k + 1) % lp.size()]});
  }
  std::sort(edges.begin(), edges.end());
  for (std::size_t k = 0; k + 1 < edges.size(); ++k)
    if (edges[k] == edges[k + 1]) return "directed edge used twice";
  for (const auto& e : edges)
    if (!std::binary_search(edges.begin(), edges.end(), std::make_pair(e.second, e.first)))
      return "edge not shared by exactly two facets";
  const std::size_t E = edges.size() / 2;
  if (static_cast<long>(V) - static_cast<long>(E) + static_cast<long>(F) != 2)
    return "Euler characteristic != 2";
  for (std::size_t v = 0; v < V; ++v) {
    int incident = 0;
    for (const auto& f : cell.facets) {
      const double d = f.plane.signed_distance(cell.vertices[v]);
      if (d > tau) return "vertex outside a facet half-space";
      if (d >= -tau) ++incident;
    }
    if (incident < 3) return "vertex on fewer than three facet planes";
  }
  return {};
}

/// Builds the domain polytope from its half-spaces. Facet k carries
/// NeighborTag::domain(k); redundant half-spaces produce no facet.
inline ConvexCell init_cell_from_domain(std::span<const Plane> halfspaces) {
  const std::size_t m = halfspaces.size();
  if (m < 4) throw Error(ErrorCode::UnboundedDomain, "fewer than four half-spaces");
  double scale = 1.0;
  for (const auto& h : halfspaces) scale = std::max(scale, std::abs(h.d));

  // Feasible triple intersections bound the polytope if it is bounded.
  Aabb feasible;
  for (std::size_t a = 0; a < m; ++a)
    for (std::size_t b = a + 1; b < m; ++b)
      for (std::size_t c = b + 1; c < m; ++c) {
        const Vec3 &na = halfspaces[a].n, &nb = halfspaces[b].n, &nc = halfspaces[c].n;
        const double det = dot(na, cross(nb, nc));
        if (std::abs(det) < 1e-12) continue;
        const Vec3 x = (halfspaces[a].d * cross(nb, nc) + halfspaces[b].d * cross(nc, na) +
                        halfspaces[c].d * cross(na, nb)) /
                       det;
        bool ok = true;
        for (const auto& h : halfspaces)
          if (h.signed_distance(x) > 1e-9 * scale) {
            ok = false;
            break;
          }
        if (ok) feasible.extend(x);
      }

  constexpr NeighborTag kBox = NeighborTag::domain(-1);
  const std::array<NeighborTag, 6> box_tags{kBox, kBox, kBox, kBox, kBox, kBox};
  ClipScratch scratch;
  if (feasible.empty()) {
    const double big = 1e6 * scale;
    ConvexCell probe = make_box_cell({-big, -big, -big}, {big, big, big}, box_tags);
    for (std::size_t k = 0; k < m; ++k)
      if (clip_in_place(probe, halfspaces[k], NeighborTag::domain(static_cast<int>(k)),
                        1e-9 * big, scratch) == ClipOutcome::Empty)
        throw Error(ErrorCode::EmptyDomain, "half-spaces have empty intersection");
    throw Error(ErrorCode::UnboundedDomain, "half-spaces do not bound a polytope");
  }
  const double diag = std::max(feasible.diagonal(), 1e-9 * scale);
  const double tau = 1e-9 * diag;
  const Vec3 pad{diag, diag, diag};
  ConvexCell cell = make_box_cell(feasible.lo - pad, feasible.hi + pad, box_tags);
  for (std::size_t k = 0; k < m; ++k)
    if (clip_in_place(cell, halfspaces[k], NeighborTag::domain(static_cast<int>(k)), tau,
                      scratch) == ClipOutcome::Empty)
      throw Error(ErrorCode::EmptyDomain, "half-spaces have empty intersection");
  for (const auto& f : cell.facets)
    if (f.tag == kBox) throw Error(ErrorCode::UnboundedDomain, "half-spaces do not bound a polytope");
  if (cell_volume_convex(cell) <= tau * diag * diag)
    throw Error(ErrorCode::EmptyDomain, "domain has zero volume");
  return cell;
}

}  // namespace potflow
