// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "potflow/fluid_sim.hpp"
#include "potflow/oracle.hpp"
#include "potflow/ot_solver.hpp"
#include "potflow/parallel.hpp"
#include "potflow/restricted_cell.hpp"

// Oracle suites shared by `potflow validate` and the acceptance tests.
namespace potflow::validate {

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct SuiteResult {
  std::vector<Check> checks;
  bool passed() const {
    for (const auto& c : checks)
      if (!c.passed) return false;
    return !checks.empty();
  }
  void add(std::string name, bool ok, std::string detail) { checks.push_back({std::move(name), ok, std::move(detail)}); }
};

inline std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

inline double rel_err(double a, double ref) { return std::abs(a - ref) / std::max(std::abs(ref), 1e-300); }

// ---------------------------------------------------------------------------
// Geometry

namespace detail {

// Membership in the ball-restricted power cell of site i, by direct power
// comparisons. Only sites whose power plane reaches the ball can matter.
// With y = x - p and e = p_j - p, site j has lower power distance than i
// exactly when y·e > (|e|² + ψ_i - ψ_j) / 2.
struct PowerCellOracle {
  Vec3 p;
  double psi = 0.0;
  std::vector<Vec3> others;  // e = p_j - p
  std::vector<double> other_psi;
  std::vector<double> other_bound;
  std::vector<std::int32_t> other_index;
  std::vector<Plane> walls;
  std::vector<std::int32_t> wall_index;

  PowerCellOracle(std::span<const Site> sites, std::size_t i, std::span<const Plane> domain)
      : p(sites[i].p), psi(sites[i].psi) {
    const double R = std::sqrt(psi);
    for (std::size_t k = 0; k < domain.size(); ++k)
      if (domain[k].d - dot(domain[k].n, p) < R) {
        walls.push_back(domain[k]);
        wall_index.push_back(static_cast<std::int32_t>(k));
      }
    for (std::size_t j = 0; j < sites.size(); ++j) {
      if (j == i) continue;
      const Vec3 e = sites[j].p - p;
      const double c = 0.5 * (norm2(e) + psi - sites[j].psi);
      if (c >= R * norm(e)) continue;  // the plane misses the ball
      others.push_back(e);
      other_psi.push_back(sites[j].psi);
      other_bound.push_back(c);
      other_index.push_back(static_cast<std::int32_t>(j));
    }
  }

  bool in_cell(const Vec3& x, std::ptrdiff_t skip_site = -1, std::ptrdiff_t skip_wall = -1) const {
    for (std::size_t k = 0; k < walls.size(); ++k)
      if (static_cast<std::ptrdiff_t>(k) != skip_wall && dot(walls[k].n, x) > walls[k].d) return false;
    const Vec3 y = x - p;
    for (std::size_t k = 0; k < others.size(); ++k)
      if (static_cast<std::ptrdiff_t>(k) != skip_site && dot(y, others[k]) > other_bound[k]) return false;
    return true;
  }
  bool operator()(const Vec3& x) const { return norm2(x - p) <= psi && in_cell(x); }
};

inline std::vector<Site> random_cluster(std::uint64_t seed, std::size_t n) {
  CounterRng rng(seed, 0x67656f);
  std::vector<Site> s(n);
  for (auto& x : s) {
    x.p = {rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85)};
    const double r = rng.uniform(0.12, 0.3);
    x.psi = r * r;
  }
  return s;
}

// z-score with exact agreement required when the estimator has no spread.
inline double zscore(const oracle::Estimate& e, double reference) {
  if (e.std_error > 0.0) return std::abs(e.value - reference) / e.std_error;
  return rel_err(e.value, reference) <= 1e-10 || std::abs(e.value - reference) <= 1e-14 ? 0.0 : 1e300;
}

}  // namespace detail

struct GeometryOptions {
  int configurations = 200;
  std::uint64_t samples = 10'000'000;
  std::uint64_t seed = 1;
  int threads = 1;
};

/// Random (cell, sphere) pairs against Monte-Carlo oracles, plus closed-form
/// cases. A 3σ band misses 0.27% of the time even for a correct formula, so
/// the Monte-Carlo verdict allows the binomial upper bound of 3σ exceedances
/// (alpha 1e-3) and no single check beyond 5σ.
inline SuiteResult geometry_suite(const GeometryOptions& opt) {
  SuiteResult out;

  {
    const Sphere s{{0.3, -0.2, 0.1}, 0.49};
    const double R = 0.7;
    const auto full = evaluate_cell(init_cell_from_domain(box_halfspaces({-2, -2, -2}, {2, 2, 2})), s, 1e-9);
    const double e = std::max({rel_err(full.volume, 4.0 / 3.0 * kPi * R * R * R),
                               rel_err(full.free_surface_area, 4.0 * kPi * R * R),
                               norm(full.centroid - s.center) / R});
    out.add("closed form: full ball", e <= 1e-10, fmt("max rel err %.2e", e));

    const auto box = box_halfspaces({-2, -2, -2}, {2, 2, 2});
    std::vector<Plane> hs(box.begin(), box.end());
    hs.push_back({{1, 0, 0}, s.center.x});
    const auto half = evaluate_cell(init_cell_from_domain(hs), s, 1e-9);
    const double facet = half.facets.size() == 1 ? half.facets[0].area : 0.0;
    const double eh = std::max({rel_err(half.volume, 2.0 / 3.0 * kPi * R * R * R),
                                rel_err(half.free_surface_area, 2.0 * kPi * R * R), rel_err(facet, kPi * R * R),
                                norm(half.centroid - (s.center - Vec3{3.0 * R / 8.0, 0, 0})) / R});
    out.add("closed form: half ball", eh <= 1e-10, fmt("max rel err %.2e", eh));

    const double d = 0.25, h = R - d;
    hs.back() = {{1, 0, 0}, s.center.x + d};
    const auto cut = evaluate_cell(init_cell_from_domain(hs), s, 1e-9);
    const double cap = 4.0 * kPi * R * R - cut.free_surface_area;
    const double ec = std::max(rel_err(cap, 2.0 * kPi * R * h),
                               rel_err(cut.volume, 4.0 / 3.0 * kPi * R * R * R - kPi * h * h * (3.0 * R - h) / 3.0));
    out.add("closed form: spherical cap", ec <= 1e-10, fmt("max rel err %.2e", ec));
  }

  struct ConfigStats {
    std::vector<double> z;
    std::string worst_name;
    double worst = 0.0;
    bool usable = false;
  };
  std::vector<ConfigStats> stats(static_cast<std::size_t>(opt.configurations));
  const Domain domain = Domain::box({0, 0, 0}, {1, 1, 1});

  parallel_for(stats.size(), opt.threads, [&](std::size_t c) {
    ConfigStats& st = stats[c];
    const std::uint64_t seed = opt.seed * 1'000'003 + c;
    // Draw clusters until one has a clipped cell; take its first such site.
    std::vector<Site> sites;
    std::vector<RestrictedCell> cells;
    std::size_t i = 0;
    for (std::uint64_t attempt = 0; attempt < 50 && !st.usable; ++attempt) {
      sites = detail::random_cluster(seed + 7919 * attempt, 10);
      cells = evaluate_sites(sites, domain, 1);
      for (i = 0; i < cells.size(); ++i)
        if (cells[i].status == CellStatus::Clipped) {
          st.usable = true;
          break;
        }
    }
    if (!st.usable) return;
    const RestrictedCell& rc = cells[i];
    const detail::PowerCellOracle m(sites, i, domain.halfspaces);
    const double R = std::sqrt(sites[i].psi);
    Aabb box;
    box.extend(sites[i].p - Vec3{R, R, R});
    box.extend(sites[i].p + Vec3{R, R, R});
    std::uint64_t stream = seed * 64;
    auto note = [&](const std::string& name, double z) {
      st.z.push_back(z);
      if (z > st.worst) {
        st.worst = z;
        st.worst_name = name;
      }
    };

    const auto v = oracle::mc_centroid(m, box, opt.samples, stream++);
    note("volume", detail::zscore(v.volume, rc.volume));
    for (int a = 0; a < 3; ++a)
      note("centroid", detail::zscore({v.centroid[a], v.std_error[a]}, rc.centroid[a]));
    const auto k = oracle::mc_sphere_patch_area(sites[i].p, sites[i].psi, [&](const Vec3& x) { return m.in_cell(x); },
                                                opt.samples, stream++);
    note("free surface", detail::zscore(k, rc.free_surface_area));

    // Every candidate facet: site planes that reach the ball and domain walls.
    auto facet_area = [&](NeighborTag tag) {
      for (const auto& f : rc.facets)
        if (f.tag == tag) return f.area;
      return 0.0;
    };
    for (std::size_t j = 0; j < m.others.size(); ++j) {
      const double l = norm(m.others[j]);
      const Vec3 n = m.others[j] / l;
      const double h = m.other_bound[j] / l;
      if (h <= -R) continue;  // plane beyond the ball on the far side: empty cell, excluded above
      const auto b = oracle::mc_disk_area(
          m.p + h * n, n, std::sqrt(m.psi - h * h),
          [&](const Vec3& x) { return m.in_cell(x, static_cast<std::ptrdiff_t>(j)); }, opt.samples, stream++);
      note("site facet", detail::zscore(b, facet_area(NeighborTag::site(m.other_index[j]))));
    }
    for (std::size_t w = 0; w < m.walls.size(); ++w) {
      const Plane& pl = m.walls[w];
      const double h = pl.d - dot(pl.n, m.p);
      if (h >= R) continue;
      const auto b = oracle::mc_disk_area(
          m.p + h * pl.n, pl.n, std::sqrt(m.psi - h * h),
          [&](const Vec3& x) { return m.in_cell(x, -1, static_cast<std::ptrdiff_t>(w)); }, opt.samples, stream++);
      note("wall facet", detail::zscore(b, facet_area(NeighborTag::domain(m.wall_index[w]))));
    }
  });

  std::uint64_t checks = 0, over3 = 0;
  double worst = 0.0;
  std::string worst_name;
  int usable = 0;
  for (std::size_t c = 0; c < stats.size(); ++c) {
    usable += stats[c].usable;
    for (const double z : stats[c].z) {
      ++checks;
      over3 += z > 3.0;
    }
    if (stats[c].worst > worst) {
      worst = stats[c].worst;
      worst_name = stats[c].worst_name + " in configuration " + std::to_string(c);
    }
  }
  const std::uint64_t allowed = checks ? oracle::binomial_upper(checks, 0.0027, 1e-3) : 0;
  const bool ok = usable == opt.configurations && checks > 0 && over3 <= allowed && worst <= 5.0;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d configurations, %llu checks, %llu beyond 3 sigma (allowed %llu), worst %.2f sigma (%s)",
                usable, static_cast<unsigned long long>(checks), static_cast<unsigned long long>(over3),
                static_cast<unsigned long long>(allowed), worst, worst_name.c_str());
  out.add("monte carlo: volume, centroid, free surface, facets", ok, buf);
  return out;
}

// ---------------------------------------------------------------------------
// Solver derivatives

struct SolverOptions {
  int instances = 50;
  std::uint64_t seed = 1;
  int threads = 1;
  double tolerance = 1e-4;  // relative, on entries above 1e-8
};

inline PotProblem random_problem(const Domain& d, std::size_t n, double fill, std::uint64_t seed) {
  CounterRng rng(seed, 0x736f6c);
  PotProblem p;
  p.domain = &d;
  p.sites.resize(n);
  for (auto& s : p.sites) {
    s.p = {rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)};
    s.nu = fill * d.volume / static_cast<double>(n) * rng.uniform(0.7, 1.3);
  }
  return p;
}

/// Gradient and Hessian against central differences at perturbed,
/// non-converged weights; entries below 1e-8 in both are skipped.
inline SuiteResult solver_suite(const SolverOptions& opt) {
  SuiteResult out;
  const Domain d = Domain::box({0, 0, 0}, {1, 1, 1});
  struct Row {
    double grad = 0.0, hess = 0.0;
    std::size_t entries = 0;
  };
  std::vector<Row> rows(static_cast<std::size_t>(opt.instances));
  parallel_for(rows.size(), opt.threads, [&](std::size_t k) {
    CounterRng rng(opt.seed * 1'000'003 + k, 0x6664);
    const std::size_t n = 2 + static_cast<std::size_t>(rng.uniform() * 19.0);  // 2..20
    PotProblem p = random_problem(d, n, rng.uniform(0.2, 0.6), opt.seed * 7'919 + k);
    const auto psi0 = init_weights(p);
    // Perturb until no cell is empty: an empty cell's diagonal is the
    // isolated-ball regulariser, not a derivative.
    std::vector<double> psi;
    std::vector<RestrictedCell> cells;
    for (int attempt = 0; attempt < 100; ++attempt) {
      psi = psi0;
      for (auto& x : psi) x *= rng.uniform(0.9, 1.5);
      cells = evaluate_weights(p, psi);
      if (std::none_of(cells.begin(), cells.end(), [](const auto& c) { return c.status == CellStatus::Empty; })) break;
    }
    const auto g = assemble_gradient(p, cells);
    const auto fd_g = oracle::fd_gradient(
        [&](const std::vector<double>& x) { return kantorovich_objective(p, x, evaluate_weights(p, x)); }, psi,
        1e-5);
    Row& r = rows[k];
    for (std::size_t i = 0; i < n; ++i) {
      if (std::abs(g[i]) <= 1e-8 && std::abs(fd_g[i]) <= 1e-8) continue;
      r.grad = std::max(r.grad, rel_err(fd_g[i], g[i]));
      ++r.entries;
    }
    const auto H = assemble_hessian(p, psi, cells).to_dense();
    const auto J = oracle::fd_jacobian_richardson(
        [&](const std::vector<double>& x) {
          std::vector<double> v;
          for (const auto& c : evaluate_weights(p, x)) v.push_back(c.volume);
          return v;
        },
        psi, 1e-4);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        if (std::abs(H[i][j]) <= 1e-8 && std::abs(J[i][j]) <= 1e-8) continue;
        r.hess = std::max(r.hess, rel_err(J[i][j], H[i][j]));
        ++r.entries;
      }
  });
  double g = 0.0, h = 0.0;
  std::size_t entries = 0;
  for (const auto& r : rows) {
    g = std::max(g, r.grad);
    h = std::max(h, r.hess);
    entries += r.entries;
  }
  out.add("gradient vs finite differences", g <= opt.tolerance, fmt("max rel err %.2e", g));
  out.add("hessian vs finite differences", h <= opt.tolerance,
          fmt("max rel err %.2e over %.0f compared entries", h, static_cast<double>(entries)));
  return out;
}

// ---------------------------------------------------------------------------
// Fluid

/// Largest per-step relative change of total momentum with only viscosity
/// acting: no gravity, pressure, wall terms or surface tension.
inline double viscosity_momentum_drift(int steps, std::uint64_t seed, int threads) {
  FluidModel m;
  m.domain = Domain::box({0, 0, 0}, {1, 1, 1});
  m.phases = {{0, 1000.0, 5.0, 0.0, {}}, {1, 500.0, 0.5, 0.0, {}}};
  m.params.gravity = {};
  m.params.pressure = false;
  m.params.boundary = false;
  m.params.dt = 1e-3;
  m.params.threads = threads;
  m.params.best_effort = true;
  FluidState s;
  add_block(s, {0.3, 0.3, 0.3}, {0.7, 0.7, 0.7}, 0.05, 0);
  CounterRng rng(seed, 0x6d6f6d);
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s.x[i].x > 0.5) s.phase[i] = 1;
    s.v[i] = {rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)};
  }
  auto momentum = [&] {
    Vec3 p;
    double scale = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double mi = m.phase(s.phase[i]).density * s.nu[i];
      p += mi * s.v[i];
      scale += mi * norm(s.v[i]);
    }
    return std::pair{p, scale};
  };
  double worst = 0.0;
  for (int k = 0; k < steps; ++k) {
    const auto [p0, scale] = momentum();
    step(s, m);
    worst = std::max(worst, norm(momentum().first - p0) / scale);
  }
  return worst;
}

inline SuiteResult fluid_suite(std::uint64_t seed, int threads) {
  SuiteResult out;
  const double drift = viscosity_momentum_drift(10, seed, threads);
  out.add("viscosity-only momentum drift per step", drift < 1e-8, fmt("max %.2e", drift));

  FluidModel m;
  m.domain = Domain::box({0, 0, 0}, {1, 1, 1});
  m.phases = {{0, 1000.0, 0.01, 0.0, {}}};
  m.params.dt = 5e-3;
  m.params.epsilon = 0.02;
  m.params.threads = threads;
  FluidState s;
  add_block(s, {0.2, 0.2, 0.1}, {0.6, 0.6, 0.5}, 0.05, 0);
  double nu = 0.0;
  for (const double x : s.nu) nu += x;
  double worst_vol = 0.0, worst_err = 0.0;
  bool converged = true;
  for (int k = 0; k < 20; ++k) {
    StepReport r;
    try {
      r = step(s, m);
    } catch (const NonConvergence& e) {
      converged = false;
      r = e.report;
    }
    worst_vol = std::max(worst_vol, std::abs(r.volume_sum - nu) / nu);
    worst_err = std::max(worst_err, r.worst_rel_error);
  }
  out.add("falling block: every step converged", converged, fmt("worst cell error %.2e", worst_err));
  out.add("falling block: total volume within 1%", worst_vol < 0.01, fmt("max deviation %.2e", worst_vol));
  return out;
}

}  // namespace potflow::validate
