// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <vector>

#include "potflow/io.hpp"

namespace potflow {

/// Dam break with roughly `target` cells: a 1:1:2 water column against the
/// wall of a 1 × 0.3 × 1 tank. The column keeps its size; spacing shrinks.
inline SceneConfig dam_break_scene(std::size_t target) {
  SceneConfig cfg;
  cfg.box = std::array<Vec3, 2>{Vec3{0, 0, 0}, Vec3{1, 0.3, 1}};
  cfg.phases = {{0, 1000.0, 0.01, 0.0, {}}};
  const int nx = std::max(1, static_cast<int>(std::lround(std::cbrt(static_cast<double>(target) / 2.0))));
  Emitter e;
  e.spacing = 0.3 / nx;
  e.lo = {0, 0, 0};
  e.hi = {0.3, 0.3, 0.6};
  cfg.emitters = {e};
  cfg.params.dt = 0.005;
  cfg.params.epsilon = 0.01;
  cfg.params.gravity = {0, 0, -9.81};
  return cfg;
}

struct BenchRow {
  std::size_t cells = 0;
  int steps = 0;
  double diagram_ms = 0.0;
  double evaluation_ms = 0.0;
  double solve_ms = 0.0;
  double step_ms = 0.0;
  int failures = 0;
};

/// Mean per-step stage timings over `steps` dam-break steps.
inline BenchRow bench_dam_break(std::size_t target, int steps, int threads) {
  const SceneConfig cfg = dam_break_scene(target);
  FluidModel m = make_model(cfg);
  m.params.threads = threads;
  m.params.best_effort = true;
  FluidState s = make_initial_state(cfg, m.domain);
  BenchRow row;
  row.cells = s.size();
  row.steps = steps;
  for (int k = 0; k < steps; ++k) {
    const StepReport r = step(s, m);
    row.diagram_ms += r.times.diagram_ms;
    row.evaluation_ms += r.times.evaluation_ms;
    row.solve_ms += r.times.solve_ms;
    row.step_ms += r.total_ms;
    row.failures += !r.converged;
  }
  const double inv = steps > 0 ? 1.0 / steps : 0.0;
  row.diagram_ms *= inv;
  row.evaluation_ms *= inv;
  row.solve_ms *= inv;
  row.step_ms *= inv;
  return row;
}

}  // namespace potflow
