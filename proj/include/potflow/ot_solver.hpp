// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <limits>
#include <span>
#include <tuple>
#include <vector>

#include "potflow/error.hpp"
#include "potflow/laguerre.hpp"
#include "potflow/parallel.hpp"
#include "potflow/restricted_cell.hpp"

namespace potflow {

/// Symmetric sparse matrix in CSR layout (row = cell, columns = Laguerre
/// neighbours plus the diagonal, sorted).
struct SparseSpd {
  std::size_t n = 0;
  std::vector<std::size_t> row_ptr;
  std::vector<std::int32_t> col;
  std::vector<double> val;
  std::vector<double> diag;

  void multiply(std::span<const double> x, std::span<double> y, int threads = 1) const {
    parallel_for(n, threads, [&](std::size_t i) {
      double acc = 0.0;
      for (std::size_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k) acc += val[k] * x[col[k]];
      y[i] = acc;
    });
  }

  double at(std::size_t i, std::size_t j) const {
    for (std::size_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k)
      if (static_cast<std::size_t>(col[k]) == j) return val[k];
    return 0.0;
  }

  std::vector<std::vector<double>> to_dense() const {
    std::vector<std::vector<double>> d(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k) d[i][col[k]] = val[k];
    return d;
  }

  /// Builds from off-diagonal triplets (each unordered pair once, any order)
  /// and a diagonal.
  static SparseSpd from_pairs(std::size_t n, std::vector<std::tuple<std::int32_t, std::int32_t, double>> pairs,
                              std::vector<double> diag) {
    SparseSpd m;
    m.n = n;
    m.diag = std::move(diag);
    std::vector<std::tuple<std::int32_t, std::int32_t, double>> all;
    all.reserve(2 * pairs.size() + n);
    for (const auto& [i, j, v] : pairs) {
      all.push_back({i, j, v});
      all.push_back({j, i, v});
    }
    for (std::size_t i = 0; i < n; ++i)
      all.push_back({static_cast<std::int32_t>(i), static_cast<std::int32_t>(i), m.diag[i]});
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
      return std::get<0>(a) != std::get<0>(b) ? std::get<0>(a) < std::get<0>(b) : std::get<1>(a) < std::get<1>(b);
    });
    m.row_ptr.assign(n + 1, 0);
    std::int32_t last_i = -1, last_j = -1;
    for (const auto& [i, j, v] : all) {
      if (i == last_i && j == last_j) {
        m.val.back() += v;
        continue;
      }
      m.col.push_back(j);
      m.val.push_back(v);
      ++m.row_ptr[i + 1];
      last_i = i;
      last_j = j;
    }
    for (std::size_t i = 0; i < n; ++i) m.row_ptr[i + 1] += m.row_ptr[i];
    return m;
  }
};

struct CgResult {
  int iterations = 0;
  double relative_residual = 0.0;
  bool converged = false;
  bool breakdown = false;
};

/// Jacobi-preconditioned conjugate gradient. Reductions are serial and in
/// index order, so the result does not depend on the thread count.
inline CgResult cg_solve(const SparseSpd& A, std::span<const double> b, std::span<double> x, double tol,
                         int max_iter, int threads = 1) {
  const std::size_t n = A.n;
  CgResult res;
  auto dotp = [&](const std::vector<double>& u, const std::vector<double>& v) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += u[i] * v[i];
    return s;
  };
  std::vector<double> r(n), z(n), p(n), Ap(n);
  A.multiply(x, Ap, threads);
  double bnorm = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    r[i] = b[i] - Ap[i];
    bnorm += b[i] * b[i];
  }
  bnorm = std::sqrt(bnorm);
  if (bnorm == 0.0) {
    std::fill(x.begin(), x.end(), 0.0);
    res.converged = true;
    return res;
  }
  auto precond = [&](const std::vector<double>& in, std::vector<double>& out) {
    for (std::size_t i = 0; i < n; ++i) out[i] = A.diag[i] > 0.0 ? in[i] / A.diag[i] : in[i];
  };
  precond(r, z);
  p = z;
  double rz = dotp(r, z);
  double rnorm = std::sqrt(dotp(r, r));
  for (res.iterations = 0; res.iterations < max_iter; ++res.iterations) {
    if (rnorm <= tol * bnorm) break;
    A.multiply(p, Ap, threads);
    const double pAp = dotp(p, Ap);
    if (!(pAp > 0.0)) {
      res.breakdown = true;
      break;
    }
    const double alpha = rz / pAp;
    for (std::size_t i = 0; i < n; ++i) {
      x[i] += alpha * p[i];
      r[i] -= alpha * Ap[i];
    }
    rnorm = std::sqrt(dotp(r, r));
    precond(r, z);
    const double rz_new = dotp(r, z);
    const double beta = rz_new / rz;
    rz = rz_new;
    for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
  }
  res.relative_residual = rnorm / bnorm;
  res.converged = res.relative_residual <= tol;
  return res;
}

struct PotProblem {
  std::vector<Site> sites;  // positions and prescribed volumes; psi is ignored
  const Domain* domain = nullptr;
  double tolerance = 0.01;  // worst relative volume error
  int max_newton = 100;
  int threads = 1;
};

enum class SolveStatus { Converged, MaxIterations, DampingStall };

struct StageTimes {
  double diagram_ms = 0.0;
  double evaluation_ms = 0.0;
  double solve_ms = 0.0;

  StageTimes& operator+=(const StageTimes& o) {
    diagram_ms += o.diagram_ms;
    evaluation_ms += o.evaluation_ms;
    solve_ms += o.solve_ms;
    return *this;
  }
};

struct PotState {
  std::vector<double> psi;
  std::vector<RestrictedCell> cells;
  double worst_rel_error = 0.0;
  int newton_iters = 0;
  int cg_iters = 0;
  SolveStatus status = SolveStatus::MaxIterations;
  int rescue_events = 0;
  StageTimes times;

  bool converged() const { return status == SolveStatus::Converged; }
};

struct IterationInfo {
  int iter = 0;
  double worst_rel_error = 0.0;
  double alpha = 0.0;
  int cg_iters = 0;
};

using IterationCallback = std::function<void(const IterationInfo&)>;

namespace detail {

inline double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

/// Restricted cells for the given weights; stage timings are accumulated
/// into `times` when provided.
inline std::vector<RestrictedCell> evaluate_weights(const PotProblem& prob, std::span<const double> psi,
                                                    StageTimes* times = nullptr) {
  std::vector<Site> sites = prob.sites;
  for (std::size_t i = 0; i < sites.size(); ++i) sites[i].psi = psi[i];
  const auto t0 = std::chrono::steady_clock::now();
  DiagramOptions opt;
  opt.ball_aware = true;
  opt.threads = prob.threads;
  const auto cells = build_diagram(sites, *prob.domain, opt);
  const auto t1 = std::chrono::steady_clock::now();
  std::vector<RestrictedCell> out(sites.size());
  parallel_for(sites.size(), prob.threads, [&](std::size_t i) {
    out[i] = evaluate_cell(cells[i], Sphere{sites[i].p, sites[i].psi}, prob.domain->tau);
  });
  if (times) {
    times->diagram_ms += std::chrono::duration<double, std::milli>(t1 - t0).count();
    times->evaluation_ms += detail::elapsed_ms(t1);
  }
  return out;
}

/// g_i = ν_i - |V_i|.
inline std::vector<double> assemble_gradient(const PotProblem& prob, std::span<const RestrictedCell> cells) {
  std::vector<double> g(cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) g[i] = prob.sites[i].nu - cells[i].volume;
  return g;
}

/// H = ∂|V|/∂Ψ = -∇²K. Off-diagonal -½|B_ij|/ℓ_ij (averaged over both
/// sides), diagonal Σ_j ½|B_ij|/ℓ_ij + ½|K_i|/√ψ_i.
inline SparseSpd assemble_hessian(const PotProblem& prob, std::span<const double> psi,
                                  std::span<const RestrictedCell> cells) {
  const std::size_t n = cells.size();
  const double tau_psi = 1e-12 * std::pow(prob.domain->bounds.diagonal(), 2);
  std::vector<std::tuple<std::int32_t, std::int32_t, double>> half;
  for (std::size_t i = 0; i < n; ++i)
    for (const auto& f : cells[i].facets) {
      if (!f.tag.is_site()) continue;
      const double l = distance(prob.sites[i].p, prob.sites[f.tag.index].p);
      half.push_back({static_cast<std::int32_t>(i), f.tag.index, 0.5 * f.area / l});
    }
  // Key every entry by its unordered pair and average the two sides.
  std::vector<std::tuple<std::int32_t, std::int32_t, double, int>> keyed;
  keyed.reserve(half.size());
  for (const auto& [i, j, w] : half) keyed.push_back({std::min(i, j), std::max(i, j), w, 1});
  std::sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) {
    return std::tie(std::get<0>(a), std::get<1>(a), std::get<2>(a)) <
           std::tie(std::get<0>(b), std::get<1>(b), std::get<2>(b));
  });
  std::vector<std::tuple<std::int32_t, std::int32_t, double>> pairs;
  std::vector<double> diag(n, 0.0);
  for (std::size_t k = 0; k < keyed.size();) {
    const auto i = std::get<0>(keyed[k]), j = std::get<1>(keyed[k]);
    double sum = 0.0;
    int count = 0;
    std::size_t e = k;
    for (; e < keyed.size() && std::get<0>(keyed[e]) == i && std::get<1>(keyed[e]) == j; ++e) {
      sum += std::get<2>(keyed[e]);
      ++count;
    }
    const double w = count >= 2 ? sum / count : sum;
    pairs.push_back({i, j, -w});
    diag[i] += w;
    diag[j] += w;
    k = e;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double ps = std::max(psi[i], tau_psi);
    diag[i] += 0.5 * cells[i].free_surface_area / std::sqrt(ps);
    // An empty cell has no geometry; use the isolated-ball derivative.
    if (!(diag[i] > 0.0)) diag[i] = 2.0 * kPi * std::sqrt(ps);
  }
  return SparseSpd::from_pairs(n, std::move(pairs), std::move(diag));
}

/// K(Ψ) = Σ_i ∫_{V_i} (|x - p_i|² - ψ_i) dx + Σ_i ψ_i ν_i; its gradient is ν - |V|.
inline double kantorovich_objective(const PotProblem& prob, std::span<const double> psi,
                                    std::span<const RestrictedCell> cells) {
  double k = 0.0;
  for (std::size_t i = 0; i < cells.size(); ++i)
    k += cells[i].second_moment - psi[i] * cells[i].volume + psi[i] * prob.sites[i].nu;
  return k;
}

inline double worst_relative_error(const PotProblem& prob, std::span<const RestrictedCell> cells) {
  double w = 0.0;
  for (std::size_t i = 0; i < cells.size(); ++i)
    w = std::max(w, std::abs(cells[i].volume - prob.sites[i].nu) / prob.sites[i].nu);
  return w;
}

inline double equivalent_radius(double nu) { return std::cbrt(3.0 * nu / (4.0 * kPi)); }

struct InitResult {
  std::vector<double> psi;
  std::vector<RestrictedCell> cells;
  int rescue_events = 0;
};

/// Starting weights with every restricted cell non-empty. Cold start tries
/// the equivalent-ball weights, then equal weights scaled by κ = 1, 2, 4, ...
/// Warm start lifts each weight to at least the half-radius ball and doubles
/// any cell that is still empty.
inline InitResult init_weights_with_cells(const PotProblem& prob,
                                          const std::optional<std::vector<double>>& previous,
                                          StageTimes* times = nullptr) {
  const std::size_t n = prob.sites.size();
  InitResult r;
  r.psi.resize(n);
  auto count_empty = [&] {
    std::size_t e = 0;
    for (const auto& c : r.cells) e += c.volume <= 0.0;
    return e;
  };
  if (previous && previous->size() == n) {
    for (std::size_t i = 0; i < n; ++i) {
      const double rmin = 0.5 * equivalent_radius(prob.sites[i].nu);
      r.psi[i] = (*previous)[i];
      if (r.psi[i] < rmin * rmin) {
        r.psi[i] = rmin * rmin;
        ++r.rescue_events;
      }
    }
    r.cells = evaluate_weights(prob, r.psi, times);
    for (int round = 0; round < 10 && count_empty() > 0; ++round) {
      for (std::size_t i = 0; i < n; ++i)
        if (r.cells[i].volume <= 0.0) {
          r.psi[i] *= 2.0;
          ++r.rescue_events;
        }
      r.cells = evaluate_weights(prob, r.psi, times);
    }
    if (count_empty() == 0) return r;
  }
  for (std::size_t i = 0; i < n; ++i) r.psi[i] = std::pow(equivalent_radius(prob.sites[i].nu), 2);
  r.cells = evaluate_weights(prob, r.psi, times);
  if (count_empty() == 0) return r;
  // Scaling unequal weights also scales their differences, so light sites
  // next to heavy ones stay dominated. Equal weights give a Voronoi diagram
  // in which every site owns a neighbourhood of itself.
  double base = 0.0;
  for (std::size_t i = 0; i < n; ++i) base = std::max(base, r.psi[i]);
  for (double kappa = 1.0; kappa <= 1024.0; kappa *= 2.0) {
    std::fill(r.psi.begin(), r.psi.end(), kappa * base);
    r.cells = evaluate_weights(prob, r.psi, times);
    if (count_empty() == 0) return r;
  }
  throw Error(ErrorCode::InitFailure, "could not make every cell non-empty with kappa <= 2^10");
}

inline std::vector<double> init_weights(const PotProblem& prob,
                                        const std::optional<std::vector<double>>& previous = std::nullopt) {
  return init_weights_with_cells(prob, previous).psi;
}

/// ‖|V| − ν‖₂.
inline double residual_norm(const PotProblem& prob, const std::vector<RestrictedCell>& cells) {
  double r = 0.0;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const double e = cells[i].volume - prob.sites[i].nu;
    r += e * e;
  }
  return std::sqrt(r);
}

/// Damped Newton iteration on the weights until every restricted cell is
/// within `tolerance` of its prescribed volume.
inline PotState newton_solve(const PotProblem& prob, std::vector<double> psi,
                             std::vector<RestrictedCell> cells = {},
                             const IterationCallback& on_iteration = {}) {
  const std::size_t n = prob.sites.size();
  PotState st;
  st.psi = std::move(psi);
  st.cells = cells.size() == n ? std::move(cells) : evaluate_weights(prob, st.psi, &st.times);

  double min_nu = std::numeric_limits<double>::infinity(), min_v0 = min_nu;
  for (std::size_t i = 0; i < n; ++i) {
    min_nu = std::min(min_nu, prob.sites[i].nu);
    min_v0 = std::min(min_v0, st.cells[i].volume);
  }
  const double floor = n ? 0.5 * std::min(min_nu, min_v0) : 0.0;

  std::vector<double> u(n), trial(n);
  for (st.newton_iters = 0;; ++st.newton_iters) {
    st.worst_rel_error = worst_relative_error(prob, st.cells);
    if (st.worst_rel_error <= prob.tolerance) {
      st.status = SolveStatus::Converged;
      break;
    }
    if (st.newton_iters >= prob.max_newton) {
      st.status = SolveStatus::MaxIterations;
      break;
    }
    const auto t0 = std::chrono::steady_clock::now();
    const SparseSpd H = assemble_hessian(prob, st.psi, st.cells);
    const auto g = assemble_gradient(prob, st.cells);
    std::fill(u.begin(), u.end(), 0.0);
    const double cg_tol = st.worst_rel_error < 10.0 * prob.tolerance ? 1e-4 : 1e-3;
    const CgResult cg = cg_solve(H, g, u, cg_tol, std::max<int>(200, 4 * static_cast<int>(n)), prob.threads);
    st.cg_iters += cg.iterations;
    st.times.solve_ms += detail::elapsed_ms(t0);

    const double residual = residual_norm(prob, st.cells);
    double alpha = 1.0;
    std::vector<RestrictedCell> trial_cells;
    for (;;) {
      for (std::size_t i = 0; i < n; ++i) trial[i] = st.psi[i] + alpha * u[i];
      trial_cells = evaluate_weights(prob, trial, &st.times);
      double vmin = std::numeric_limits<double>::infinity();
      for (const auto& c : trial_cells) vmin = std::min(vmin, c.volume);
      if (vmin >= floor && residual_norm(prob, trial_cells) <= (1.0 - 0.5 * alpha) * residual) break;
      alpha *= 0.5;
      if (alpha < std::ldexp(1.0, -20)) break;
    }
    if (on_iteration) on_iteration({st.newton_iters + 1, st.worst_rel_error, alpha, cg.iterations});
    if (alpha < std::ldexp(1.0, -20)) {
      st.status = SolveStatus::DampingStall;
      ++st.newton_iters;
      break;
    }
    st.psi.swap(trial);
    st.cells = std::move(trial_cells);
  }
  return st;
}

/// init_weights followed by newton_solve.
inline PotState solve(const PotProblem& prob, const std::optional<std::vector<double>>& previous = std::nullopt,
                      const IterationCallback& on_iteration = {}) {
  StageTimes init_times;
  InitResult init = init_weights_with_cells(prob, previous, &init_times);
  PotState st = newton_solve(prob, std::move(init.psi), std::move(init.cells), on_iteration);
  st.rescue_events = init.rescue_events;
  st.times += init_times;
  return st;
}

}  // namespace potflow
