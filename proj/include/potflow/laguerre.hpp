// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "potflow/convex_cell.hpp"
#include "potflow/parallel.hpp"

namespace potflow {

/// Weighted site: position, weight ψ (squared length), prescribed volume ν.
struct Site {
  Vec3 p;
  double psi = 0.0;
  double nu = 0.0;
  int phase = 0;
};

/// Convex simulation domain with its geometric tolerance
/// (1e-9 of the bounding-box diagonal).
struct Domain {
  std::vector<Plane> halfspaces;
  ConvexCell cell;
  Aabb bounds;
  double volume = 0.0;
  double tau = 0.0;

  static Domain from_halfspaces(std::vector<Plane> hs) {
    Domain d;
    d.halfspaces = std::move(hs);
    d.cell = init_cell_from_domain(d.halfspaces);
    d.bounds = d.cell.bounds();
    d.volume = cell_volume_convex(d.cell);
    d.tau = 1e-9 * d.bounds.diagonal();
    return d;
  }
  static Domain box(const Vec3& lo, const Vec3& hi) {
    const auto hs = box_halfspaces(lo, hi);
    return from_halfspaces({hs.begin(), hs.end()});
  }
  bool contains(const Vec3& x) const {
    for (const auto& h : halfspaces)
      if (h.signed_distance(x) > tau) return false;
    return true;
  }
};

/// Uniform bucket grid over a bounding box; each point sits in exactly one
/// bucket (points outside the box are clamped to the border buckets).
class SpatialGrid {
 public:
  SpatialGrid() = default;

  SpatialGrid(std::span<const Vec3> points, const Aabb& bounds, double cell_size = 0.0)
      : points_(points.begin(), points.end()), origin_(bounds.lo) {
    const Vec3 ext = bounds.extent();
    if (cell_size <= 0.0) {
      const double vol = std::max(bounds.volume(), 1e-300);
      cell_size = std::cbrt(vol / std::max<std::size_t>(points.size(), 1));
    }
    h_ = std::max(cell_size, 1e-12 * std::max(1.0, bounds.diagonal()));
    for (int a = 0; a < 3; ++a)
      dims_[a] = std::clamp(static_cast<int>(std::ceil(ext[a] / h_)), 1, 256);
    const std::size_t nc = static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2];
    start_.assign(nc + 1, 0);
    std::vector<std::uint32_t> bucket(points_.size());
    for (std::size_t i = 0; i < points_.size(); ++i) {
      bucket[i] = static_cast<std::uint32_t>(flat(cell_of(points_[i])));
      ++start_[bucket[i] + 1];
    }
    for (std::size_t c = 0; c < nc; ++c) start_[c + 1] += start_[c];
    items_.resize(points_.size());
    std::vector<std::uint32_t> fill(start_.begin(), start_.end() - 1);
    for (std::size_t i = 0; i < points_.size(); ++i)
      items_[fill[bucket[i]]++] = static_cast<std::int32_t>(i);
  }

  std::size_t size() const { return points_.size(); }
  const Vec3& point(std::size_t i) const { return points_[i]; }
  double cell_size() const { return h_; }
  const std::array<int, 3>& dims() const { return dims_; }
  const Vec3& origin() const { return origin_; }

  std::array<int, 3> cell_of(const Vec3& q) const {
    std::array<int, 3> c{};
    for (int a = 0; a < 3; ++a)
      c[a] = std::clamp(static_cast<int>(std::floor((q[a] - origin_[a]) / h_)), 0, dims_[a] - 1);
    return c;
  }
  std::size_t flat(const std::array<int, 3>& c) const {
    return (static_cast<std::size_t>(c[2]) * dims_[1] + c[1]) * dims_[0] + c[0];
  }
  std::span<const std::int32_t> bucket(const std::array<int, 3>& c) const {
    const std::size_t f = flat(c);
    return {items_.data() + start_[f], start_[f + 1] - start_[f]};
  }

 private:
  std::vector<Vec3> points_;
  Vec3 origin_;
  double h_ = 1.0;
  std::array<int, 3> dims_{1, 1, 1};
  std::vector<std::uint32_t> start_;
  std::vector<std::int32_t> items_;
};

/// Yields grid points in increasing Euclidean distance from a query point
/// (ties by index), expanding one shell of buckets at a time.
class NeighborStream {
 public:
  NeighborStream(const SpatialGrid& grid, const Vec3& q)
      : grid_(&grid), q_(q), center_(grid.cell_of(q)) {}

  bool next(std::int32_t& index, double& dist2) {
    for (;;) {
      if (!heap_.empty() && (exhausted_ || heap_.front().first <= safe2_)) {
        std::pop_heap(heap_.begin(), heap_.end(), std::greater<>{});
        dist2 = heap_.back().first;
        index = heap_.back().second;
        heap_.pop_back();
        return true;
      }
      if (exhausted_) return false;
      expand();
    }
  }

 private:
  void push(std::int32_t i) {
    heap_.push_back({norm2(grid_->point(i) - q_), i});
    std::push_heap(heap_.begin(), heap_.end(), std::greater<>{});
  }

  void add_bucket(int x, int y, int z) {
    const auto& d = grid_->dims();
    if (x < 0 || y < 0 || z < 0 || x >= d[0] || y >= d[1] || z >= d[2]) return;
    for (auto i : grid_->bucket({x, y, z})) push(i);
  }

  void expand() {
    const int k = ring_++;
    const auto& c = center_;
    if (k == 0) {
      add_bucket(c[0], c[1], c[2]);
    } else {
      for (int dz = -k; dz <= k; ++dz)
        for (int dy = -k; dy <= k; ++dy) {
          if (std::abs(dz) == k || std::abs(dy) == k) {
            for (int dx = -k; dx <= k; ++dx) add_bucket(c[0] + dx, c[1] + dy, c[2] + dz);
          } else {
            add_bucket(c[0] - k, c[1] + dy, c[2] + dz);
            add_bucket(c[0] + k, c[1] + dy, c[2] + dz);
          }
        }
    }
    // Anything not yet pushed lies outside the (2k+1)^3 block of buckets.
    const auto& d = grid_->dims();
    const double h = grid_->cell_size();
    const Vec3& o = grid_->origin();
    double safe = std::numeric_limits<double>::infinity();
    bool covered = true;
    for (int a = 0; a < 3; ++a) {
      if (c[a] - k > 0) {
        safe = std::min(safe, q_[a] - (o[a] + (c[a] - k) * h));
        covered = false;
      }
      if (c[a] + k < d[a] - 1) {
        safe = std::min(safe, o[a] + (c[a] + k + 1) * h - q_[a]);
        covered = false;
      }
    }
    exhausted_ = covered;
    safe = std::max(safe, 0.0);
    safe2_ = safe * safe;
  }

  const SpatialGrid* grid_;
  Vec3 q_;
  std::array<int, 3> center_;
  int ring_ = 0;
  bool exhausted_ = false;
  double safe2_ = 0.0;
  std::vector<std::pair<double, std::int32_t>> heap_;
};

/// Exact k nearest grid points to q, ordered by increasing distance.
inline std::vector<std::int32_t> knn(const SpatialGrid& grid, const Vec3& q, std::size_t k) {
  std::vector<std::int32_t> out;
  NeighborStream stream(grid, q);
  std::int32_t idx;
  double d2;
  while (out.size() < k && stream.next(idx, d2)) out.push_back(idx);
  return out;
}

/// Power bisector of (i, j): the half-space containing cell i.
inline Plane power_bisector(const Vec3& pi, double psi_i, const Vec3& pj, double psi_j) {
  const Vec3 e = pj - pi;
  const double l2 = norm2(e), l = std::sqrt(l2);
  const Vec3 n = e / l;
  return {n, dot(n, pi) + (l2 + psi_i - psi_j) / (2.0 * l)};
}

struct DiagramOptions {
  /// Stop clipping once no remaining bisector can reach the site's ball.
  /// Cells are then exact only inside the ball.
  bool ball_aware = false;
  int threads = 1;
};

/// Read-only per-diagram context shared by all cells.
struct DiagramInput {
  std::span<const Site> sites;
  const Domain* domain = nullptr;
  const SpatialGrid* grid = nullptr;
  double psi_max = 0.0;

  static double max_weight(std::span<const Site> sites) {
    double m = 0.0;
    for (const auto& s : sites) m = std::max(m, s.psi);
    return m;
  }
};

/// Laguerre cell of site i inside the domain; empty if fully clipped.
inline ConvexCell build_cell(std::size_t i, const DiagramInput& in, const DiagramOptions& opt,
                             ClipScratch& scratch) {
  const Site& si = in.sites[i];
  const double tau = in.domain->tau;
  ConvexCell cell;
  if (opt.ball_aware && si.psi <= 0.0) return cell;
  cell = in.domain->cell;
  const double radius = std::sqrt(std::max(si.psi, 0.0));
  const double psi_slack = std::max(0.0, in.psi_max - si.psi);
  double r = cell.radius_from(si.p);

  NeighborStream stream(*in.grid, si.p);
  std::int32_t j;
  double d2;
  while (stream.next(j, d2)) {
    if (static_cast<std::size_t>(j) == i) continue;
    const double delta = std::sqrt(d2);
    // Security radius: for every vertex v, |v-pj|² - ψj >= |v-pi|² - ψi.
    if (delta > r + std::sqrt(r * r + psi_slack)) break;
    if (opt.ball_aware && delta > 0.0 && (d2 - psi_slack) / (2.0 * delta) > radius) break;
    const Site& sj = in.sites[j];
    if (d2 <= tau * tau) {
      if (sj.psi > si.psi || (sj.psi == si.psi && static_cast<std::size_t>(j) < i)) {
        cell.clear();
        return cell;
      }
      continue;
    }
    const Plane h = power_bisector(si.p, si.psi, sj.p, sj.psi);
    const ClipOutcome res = clip_in_place(cell, h, NeighborTag::site(j), tau, scratch);
    if (res == ClipOutcome::Empty) return cell;
    if (res == ClipOutcome::Clipped) r = cell.radius_from(si.p);
  }
  return cell;
}

inline ConvexCell build_cell(std::size_t i, const DiagramInput& in, const DiagramOptions& opt = {}) {
  ClipScratch scratch;
  return build_cell(i, in, opt, scratch);
}

/// Owns the grid for one set of site positions.
struct Diagram {
  std::vector<ConvexCell> cells;
};

inline SpatialGrid make_site_grid(std::span<const Site> sites, const Domain& domain) {
  std::vector<Vec3> pts(sites.size());
  for (std::size_t i = 0; i < sites.size(); ++i) pts[i] = sites[i].p;
  return SpatialGrid(pts, domain.bounds);
}

inline std::vector<ConvexCell> build_diagram(std::span<const Site> sites, const Domain& domain,
                                             const DiagramOptions& opt = {}) {
  const SpatialGrid grid = make_site_grid(sites, domain);
  const DiagramInput in{sites, &domain, &grid, DiagramInput::max_weight(sites)};
  std::vector<ConvexCell> cells(sites.size());
  parallel_for(sites.size(), opt.threads, [&](std::size_t i) {
    thread_local ClipScratch scratch;
    cells[i] = build_cell(i, in, opt, scratch);
  });
  return cells;
}

/// Site whose power distance |x - p|² - ψ is smallest (lowest index on ties).
inline std::int32_t locate_site(const Vec3& x, std::span<const Site> sites, const SpatialGrid& grid,
                                double psi_max) {
  NeighborStream stream(grid, x);
  std::int32_t best = -1, j;
  double best_pow = std::numeric_limits<double>::infinity(), d2;
  while (stream.next(j, d2)) {
    if (d2 - psi_max > best_pow) break;
    const double pw = d2 - sites[j].psi;
    if (pw < best_pow || (pw == best_pow && j < best)) {
      best_pow = pw;
      best = j;
    }
  }
  return best;
}

}  // namespace potflow
