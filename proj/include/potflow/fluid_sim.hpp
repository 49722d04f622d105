// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <tuple>
#include <vector>

#include "potflow/error.hpp"
#include "potflow/laguerre.hpp"
#include "potflow/ot_solver.hpp"
#include "potflow/parallel.hpp"
#include "potflow/restricted_cell.hpp"

namespace potflow {

struct Phase {
  std::int32_t id = 0;
  double density = 1.0;
  double viscosity = 0.0;
  double surface_tension = 0.0;
  /// Affinity to each domain half-space. One entry applies to every face;
  /// an empty list means no boundary interaction.
  std::vector<double> boundary_affinity;

  double affinity(std::size_t face) const {
    if (boundary_affinity.empty()) return 0.0;
    return boundary_affinity.size() == 1 ? boundary_affinity[0] : boundary_affinity.at(face);
  }
};

struct ViscosityPair {
  std::int32_t a = 0, b = 0;
  double mu = 0.0;
};

struct SimParams {
  double dt = 1e-2;
  double epsilon = 0.05;  // spring strength; stable for dt ≲ epsilon
  Vec3 gravity{0.0, 0.0, -9.81};
  std::vector<ViscosityPair> viscosity_pairs;  // overrides min(μ_a, μ_b)
  double ot_tolerance = 0.01;
  int max_newton = 100;
  double cg_tolerance = 1e-12;
  bool pressure = true;
  bool boundary = true;
  bool best_effort = false;
  int threads = 1;
  IterationCallback on_iteration;  // per Newton iteration of the projection
};

struct FluidModel {
  Domain domain;
  std::vector<Phase> phases;
  SimParams params;

  const Phase& phase(std::int32_t id) const {
    for (const auto& p : phases)
      if (p.id == id) return p;
    throw Error(ErrorCode::ConfigError, "unknown phase id " + std::to_string(id));
  }

  double pair_viscosity(std::int32_t a, std::int32_t b) const {
    for (const auto& v : params.viscosity_pairs)
      if ((v.a == a && v.b == b) || (v.a == b && v.b == a)) return v.mu;
    return std::min(phase(a).viscosity, phase(b).viscosity);
  }
};

struct FluidState {
  std::vector<Vec3> x;
  std::vector<Vec3> v;
  std::vector<double> nu;
  std::vector<std::int32_t> phase;
  std::vector<double> psi;             // carried between steps; empty means cold start
  std::vector<RestrictedCell> cells;  // cells of the last solve
  std::uint64_t step = 0;
  double time = 0.0;

  std::size_t size() const { return x.size(); }
};

struct StepReport {
  std::uint64_t step = 0;
  bool converged = false;
  SolveStatus status = SolveStatus::MaxIterations;
  double worst_rel_error = 0.0;
  int newton_iters = 0;
  int rescue_events = 0;
  int empty_cells = 0;  // cells that received no pressure force
  int viscosity_cg_iters = 0;
  double volume_sum = 0.0;
  double nu_sum = 0.0;
  double kinetic_energy = 0.0;
  double potential_energy = 0.0;
  Vec3 momentum;
  double free_surface_area = 0.0;
  StageTimes times;
  double force_ms = 0.0;
  double viscosity_ms = 0.0;
  double total_ms = 0.0;
};

/// Thrown by step() on a non-converged solve unless best_effort is set. The
/// state has already been advanced and carries the flagged cells.
class NonConvergence : public Error {
 public:
  explicit NonConvergence(StepReport r)
      : Error(ErrorCode::OtNonConvergence,
              "step " + std::to_string(r.step) + " worst error " + std::to_string(r.worst_rel_error)),
        report(std::move(r)) {}
  StepReport report;
};

/// Appends particles on a cubic lattice of the given spacing filling
/// [lo, hi], each carrying volume spacing³. Lattice points are offset by
/// half a spacing from lo.
inline void add_block(FluidState& s, const Vec3& lo, const Vec3& hi, double spacing, std::int32_t phase,
                      const Vec3& velocity = {}) {
  const auto count = [&](double a, double b) { return std::max(0, static_cast<int>(std::floor((b - a) / spacing + 1e-9))); };
  const int nx = count(lo.x, hi.x), ny = count(lo.y, hi.y), nz = count(lo.z, hi.z);
  for (int k = 0; k < nz; ++k)
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        s.x.push_back(lo + spacing * Vec3{i + 0.5, j + 0.5, k + 0.5});
        s.v.push_back(velocity);
        s.nu.push_back(spacing * spacing * spacing);
        s.phase.push_back(phase);
      }
}

/// Lattice points inside the ball; `radial_speed` adds an outward velocity
/// proportional to the distance from the centre, reaching that speed at the rim.
inline void add_ball(FluidState& s, const Vec3& center, double radius, double spacing, std::int32_t phase,
                     const Vec3& velocity = {}, double radial_speed = 0.0) {
  const int m = static_cast<int>(std::ceil(radius / spacing));
  for (int k = -m; k <= m; ++k)
    for (int j = -m; j <= m; ++j)
      for (int i = -m; i <= m; ++i) {
        const Vec3 off = spacing * Vec3{i + 0.5, j + 0.5, k + 0.5};
        if (norm(off) > radius) continue;
        s.x.push_back(center + off);
        s.v.push_back(velocity + (radial_speed / radius) * off);
        s.nu.push_back(spacing * spacing * spacing);
        s.phase.push_back(phase);
      }
}

/// Spring acceleration (1/ε²)(c − x) toward the cell centroid.
inline Vec3 pressure_force(const RestrictedCell& cell, const Vec3& x, double epsilon) {
  if (cell.status == CellStatus::Empty) return {};
  return (1.0 / (epsilon * epsilon)) * (cell.centroid - x);
}

struct BoundaryWeight {
  std::int32_t face = 0;
  double weight = 0.0;  // ½·affinity·|B|/(d·|V|)
  Vec3 ghost;
};

/// ℙ1 weights over restricted facets. Pairs are (i, j, w) with i < j.
struct LaplacianWeights {
  std::vector<std::tuple<std::int32_t, std::int32_t, double>> pairs;
  std::vector<std::vector<BoundaryWeight>> boundary;
};

inline LaplacianWeights laplacian_weights(const FluidState& s, const FluidModel& model) {
  const std::size_t n = s.size();
  LaplacianWeights w;
  w.boundary.resize(n);
  // Each side reports half of w_ij; the two halves agree up to rounding.
  std::vector<std::vector<std::pair<std::int32_t, double>>> rows(n);
  parallel_for(n, model.params.threads, [&](std::size_t i) {
    const RestrictedCell& c = s.cells[i];
    for (const auto& f : c.facets) {
      if (f.area <= 0.0) continue;
      if (f.tag.is_site()) {
        const auto j = static_cast<std::size_t>(f.tag.index);
        const double l = distance(s.x[i], s.x[j]);
        if (l > 0.0) rows[i].push_back({f.tag.index, 0.25 * f.area / l});
      } else if (model.params.boundary && f.tag.index >= 0) {
        const auto k = static_cast<std::size_t>(f.tag.index);
        const double aff = model.phase(s.phase[i]).affinity(k);
        if (aff == 0.0) continue;
        const Plane& h = model.domain.halfspaces[k];
        const double sd = h.signed_distance(s.x[i]);
        const double d = std::max(-sd, model.domain.tau);
        const Vec3 foot = s.x[i] - sd * h.n;
        w.boundary[i].push_back(
            {f.tag.index, 0.5 * aff * f.area / (d * c.volume), foot - std::cbrt(c.volume) * h.n});
      }
    }
  });
  for (std::size_t i = 0; i < n; ++i)
    for (const auto& [j, half] : rows[i]) {
      const auto lo = std::min<std::int32_t>(static_cast<std::int32_t>(i), j);
      const auto hi = std::max<std::int32_t>(static_cast<std::int32_t>(i), j);
      w.pairs.push_back({lo, hi, half});
    }
  std::sort(w.pairs.begin(), w.pairs.end(), [](const auto& a, const auto& b) {
    return std::tie(std::get<0>(a), std::get<1>(a)) < std::tie(std::get<0>(b), std::get<1>(b));
  });
  // Merge the two halves of each pair.
  std::size_t out = 0;
  for (std::size_t k = 0; k < w.pairs.size(); ++k) {
    if (out > 0 && std::get<0>(w.pairs[out - 1]) == std::get<0>(w.pairs[k]) &&
        std::get<1>(w.pairs[out - 1]) == std::get<1>(w.pairs[k]))
      std::get<2>(w.pairs[out - 1]) += std::get<2>(w.pairs[k]);
    else
      w.pairs[out++] = w.pairs[k];
  }
  w.pairs.resize(out);
  return w;
}

namespace detail {

/// Neighbour lists (j, w_ij) per particle, in increasing j.
inline std::vector<std::vector<std::pair<std::int32_t, double>>> adjacency(const LaplacianWeights& w,
                                                                           std::size_t n) {
  std::vector<std::vector<std::pair<std::int32_t, double>>> adj(n);
  for (const auto& [i, j, wij] : w.pairs) {
    adj[static_cast<std::size_t>(i)].push_back({j, wij});
    adj[static_cast<std::size_t>(j)].push_back({i, wij});
  }
  for (auto& a : adj) std::sort(a.begin(), a.end());
  return adj;
}

inline Vec3 tension_at(const FluidState& s, const FluidModel& model,
                       const std::vector<std::pair<std::int32_t, double>>& adj,
                       const std::vector<BoundaryWeight>& boundary, std::size_t i) {
  const double gamma = model.phase(s.phase[i]).surface_tension;
  if (gamma == 0.0) return {};
  Vec3 f;
  for (const auto& [j, wij] : adj) f += wij * (s.x[static_cast<std::size_t>(j)] - s.x[i]);
  for (const auto& b : boundary) f += b.weight * (b.ghost - s.x[i]);
  return gamma * f;
}

}  // namespace detail

/// γ·Δ̂x at particle i, including ghost positions for boundary facets.
inline Vec3 surface_tension_force(const FluidState& s, const FluidModel& model, const LaplacianWeights& w,
                                  std::size_t i) {
  std::vector<std::pair<std::int32_t, double>> adj;
  for (const auto& [a, b, wij] : w.pairs) {
    if (static_cast<std::size_t>(a) == i) adj.push_back({b, wij});
    if (static_cast<std::size_t>(b) == i) adj.push_back({a, wij});
  }
  std::sort(adj.begin(), adj.end());
  return detail::tension_at(s, model, adj, w.boundary[i], i);
}

/// Viscosity system (m·I + δt·L_μ) v = m·v⁰ + δt·F, one right-hand side per
/// axis. L_μ is the μ-weighted graph Laplacian plus the boundary weights
/// with zero wall velocity.
struct ViscositySystem {
  SparseSpd matrix;
  std::vector<double> rhs[3];
};

inline ViscositySystem assemble_viscosity_system(const FluidState& s, const FluidModel& model,
                                                 const LaplacianWeights& w, std::span<const Vec3> forces) {
  const std::size_t n = s.size();
  const double dt = model.params.dt;
  std::vector<double> diag(n);
  for (std::size_t i = 0; i < n; ++i) {
    diag[i] = model.phase(s.phase[i]).density * s.nu[i];
    for (const auto& b : w.boundary[i]) diag[i] += dt * b.weight;
  }
  std::vector<std::tuple<std::int32_t, std::int32_t, double>> off;
  for (const auto& [i, j, wij] : w.pairs) {
    const double mu = model.pair_viscosity(s.phase[static_cast<std::size_t>(i)], s.phase[static_cast<std::size_t>(j)]);
    if (mu == 0.0) continue;
    const double a = dt * mu * wij;
    off.push_back({i, j, -a});
    diag[static_cast<std::size_t>(i)] += a;
    diag[static_cast<std::size_t>(j)] += a;
  }
  ViscositySystem sys;
  for (int a = 0; a < 3; ++a) sys.rhs[a].resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double m = model.phase(s.phase[i]).density * s.nu[i];
    const Vec3 b = m * s.v[i] + dt * forces[i];
    sys.rhs[0][i] = b.x;
    sys.rhs[1][i] = b.y;
    sys.rhs[2][i] = b.z;
  }
  sys.matrix = SparseSpd::from_pairs(n, std::move(off), std::move(diag));
  return sys;
}

/// Moves points that left the domain back inside by reflection, at least τ
/// from every face, and drops the outward normal velocity.
inline void reflect_into_domain(const Domain& d, Vec3& x, Vec3& v) {
  for (int pass = 0; pass < 2; ++pass)
    for (const auto& h : d.halfspaces) {
      const double s = h.signed_distance(x);
      if (s <= -d.tau) continue;
      x -= (s + std::max(s, d.tau)) * h.n;
      const double vn = dot(v, h.n);
      if (vn > 0.0) v -= vn * h.n;
    }
}

inline void record_diagnostics(const FluidState& s, const FluidModel& model, StepReport& r) {
  r.volume_sum = r.nu_sum = r.kinetic_energy = r.potential_energy = r.free_surface_area = 0.0;
  r.momentum = {};
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double m = model.phase(s.phase[i]).density * s.nu[i];
    r.volume_sum += s.cells[i].volume;
    r.nu_sum += s.nu[i];
    r.kinetic_energy += 0.5 * m * norm2(s.v[i]);
    r.potential_energy -= m * dot(model.params.gravity, s.x[i]);
    r.momentum += m * s.v[i];
    r.free_surface_area += s.cells[i].free_surface_area;
  }
}

/// Partial-OT projection for the current positions, warm-started from the
/// carried weights. Updates psi and cells.
inline PotState project(FluidState& s, const FluidModel& model) {
  PotProblem prob;
  prob.domain = &model.domain;
  prob.tolerance = model.params.ot_tolerance;
  prob.max_newton = model.params.max_newton;
  prob.threads = model.params.threads;
  prob.sites.resize(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) prob.sites[i] = {s.x[i], 0.0, s.nu[i], s.phase[i]};
  std::optional<std::vector<double>> warm;
  if (s.psi.size() == s.size()) warm = s.psi;
  PotState st = solve(prob, warm, model.params.on_iteration);
  s.psi = st.psi;
  s.cells = st.cells;
  return st;
}

/// One semi-implicit step: advect, reflect, project, forces, implicit
/// viscosity.
inline StepReport step(FluidState& s, const FluidModel& model) {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  const SimParams& prm = model.params;
  const std::size_t n = s.size();
  StepReport r;

  for (std::size_t i = 0; i < n; ++i) {
    s.x[i] += prm.dt * s.v[i];
    reflect_into_domain(model.domain, s.x[i], s.v[i]);
  }

  const PotState st = project(s, model);
  r.status = st.status;
  r.converged = st.converged();
  r.worst_rel_error = st.worst_rel_error;
  r.newton_iters = st.newton_iters;
  r.rescue_events = st.rescue_events;
  r.times = st.times;

  auto t1 = clock::now();
  const LaplacianWeights w = laplacian_weights(s, model);
  const auto adj = detail::adjacency(w, n);
  std::vector<Vec3> forces(n);
  std::vector<std::uint8_t> empty(n, 0);
  parallel_for(n, prm.threads, [&](std::size_t i) {
    const double m = model.phase(s.phase[i]).density * s.nu[i];
    Vec3 f = m * prm.gravity;
    if (prm.pressure) {
      if (s.cells[i].status == CellStatus::Empty) empty[i] = 1;
      f += m * pressure_force(s.cells[i], s.x[i], prm.epsilon);
    }
    f += detail::tension_at(s, model, adj[i], w.boundary[i], i);
    forces[i] = f;
  });
  for (auto e : empty) r.empty_cells += e;
  r.force_ms = detail::elapsed_ms(t1);

  t1 = clock::now();
  const ViscositySystem sys = assemble_viscosity_system(s, model, w, forces);
  const int max_iter = std::max<int>(200, 10 * static_cast<int>(n));
  for (int a = 0; a < 3; ++a) {
    std::vector<double> sol(n);
    for (std::size_t i = 0; i < n; ++i) sol[i] = s.v[i][a];
    const CgResult cg = cg_solve(sys.matrix, sys.rhs[a], sol, prm.cg_tolerance, max_iter, prm.threads);
    r.viscosity_cg_iters += cg.iterations;
    for (std::size_t i = 0; i < n; ++i) s.v[i][a] = sol[i];
  }
  r.viscosity_ms = detail::elapsed_ms(t1);

  s.step += 1;
  s.time += prm.dt;
  r.step = s.step;
  record_diagnostics(s, model, r);
  r.total_ms = detail::elapsed_ms(t0);
  if (!r.converged && !prm.best_effort) throw NonConvergence(r);
  return r;
}

}  // namespace potflow
