// SPDX-License-Identifier: Apache-2.0
// potflow: simulate, render, validate, bench.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "potflow/bench.hpp"
#include "potflow/io.hpp"
#include "potflow/renderer.hpp"
#include "potflow/validate.hpp"

using namespace potflow;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kNonConvergence = 3, kValidation = 4 };

Vec3 parse_vec3(const std::string& s) {
  Vec3 v;
  char c1 = 0, c2 = 0;
  std::istringstream in(s);
  if (!(in >> v.x >> c1 >> v.y >> c2 >> v.z) || c1 != ',' || c2 != ',')
    throw Error(ErrorCode::ConfigError, "expected x,y,z but got '" + s + "'");
  return v;
}

struct SimulateArgs {
  std::string config;
  std::string out;
  int steps = -1;
  int threads = 0;
  bool verbose = false;
  bool best_effort = false;
  bool deterministic = false;
};

int cmd_simulate(const SimulateArgs& a) {
  const SceneConfig cfg = load_config(a.config);
  FluidModel model = make_model(cfg);
  model.params.threads = resolve_threads(a.threads);
  model.params.best_effort = a.best_effort;
  if (a.verbose)
    model.params.on_iteration = [](const IterationInfo& it) {
      std::printf("  iter %d, worst_rel_error %.3e, alpha %.3g, cg_iters %d\n", it.iter, it.worst_rel_error, it.alpha,
                  it.cg_iters);
    };
  FluidState s = make_initial_state(cfg, model.domain);
  const int steps = a.steps >= 0 ? a.steps : cfg.output.steps;
  const fs::path dir = a.out.empty() ? fs::path(cfg.output.directory) : fs::path(a.out);
  fs::create_directories(dir);
  std::ofstream csv(dir / "stats.csv");
  csv << kStatsHeader << '\n';
  std::printf("%zu particles, %d steps, %d threads -> %s\n", s.size(), steps, model.params.threads,
              dir.string().c_str());

  int flagged = 0;
  for (int k = 0; k < steps; ++k) {
    StepReport r;
    bool failed = false;
    try {
      r = step(s, model);
    } catch (const NonConvergence& e) {
      r = e.report;
      failed = true;
    }
    flagged += !r.converged;
    csv << stats_row(r, a.deterministic) << '\n';
    if (failed || r.step % static_cast<std::uint64_t>(cfg.output.frame_stride) == 0 || k + 1 == steps)
      write_frame((dir / frame_name(r.step)).string(), make_frame(s, r, a.deterministic));
    if (a.verbose || !r.converged)
      std::printf("step %llu: worst_rel_error %.3e, newton %d, volume %.6g, KE %.4g, area %.4g, %.1f ms%s\n",
                  static_cast<unsigned long long>(r.step), r.worst_rel_error, r.newton_iters, r.volume_sum,
                  r.kinetic_energy, r.free_surface_area, r.total_ms, r.converged ? "" : " [not converged]");
    if (failed) {
      std::fprintf(stderr, "step %llu did not converge (worst error %.3e); rerun with --best-effort to continue\n",
                   static_cast<unsigned long long>(r.step), r.worst_rel_error);
      return kNonConvergence;
    }
  }
  std::printf("done: %d steps, %d flagged\n", steps, flagged);
  return kOk;
}

struct RenderArgs {
  std::string frame;
  std::string config;
  std::string output = "frame.ppm";
  std::string mode = "raw";
  std::string eye, look_at, up;
  double fov = -1.0;
  int width = 0, height = 0;
  double blend = -1.0;
  int threads = 0;
};

int cmd_render(const RenderArgs& a) {
  const SceneConfig cfg = load_config(a.config);
  const Domain domain = make_domain(cfg);
  Camera cam = cfg.camera.value_or(Camera{});
  if (!a.eye.empty()) cam.eye = parse_vec3(a.eye);
  if (!a.look_at.empty()) cam.look_at = parse_vec3(a.look_at);
  if (!a.up.empty()) cam.up = parse_vec3(a.up);
  if (a.fov > 0.0) cam.fov = a.fov;
  if (a.width > 0) cam.width = a.width;
  if (a.height > 0) cam.height = a.height;

  RenderOptions opt;
  if (a.mode == "raw") opt.mode = RenderMode::Raw;
  else if (a.mode == "smooth") opt.mode = RenderMode::Smooth;
  else if (a.mode == "depth") opt.mode = RenderMode::Depth;
  else throw Error(ErrorCode::ConfigError, "--mode: expected raw, smooth or depth");
  opt.blend = a.blend;
  opt.threads = resolve_threads(a.threads);

  const FrameRecord f = read_frame(a.frame);
  const RenderScene scene = RenderScene::build(f.positions, f.psi, domain, opt.threads);
  RenderStats stats;
  render(scene, cam, opt, &stats).write_ppm(a.output);
  std::printf("%s: %dx%d, %zu hits, %zu aborted rays\n", a.output.c_str(), cam.width, cam.height, stats.hits,
              stats.aborted);
  return kOk;
}

struct ValidateArgs {
  std::string suite = "all";
  std::uint64_t samples = 10'000'000;
  int configurations = 200;
  int instances = 50;
  std::uint64_t seed = 1;
  int threads = 0;
};

int cmd_validate(const ValidateArgs& a) {
  const int threads = resolve_threads(a.threads);
  bool ok = true;
  auto report = [&](const char* suite, const validate::SuiteResult& r) {
    for (const auto& c : r.checks) std::printf("%s [%s] %s: %s\n", c.passed ? "PASS" : "FAIL", suite, c.name.c_str(),
                                               c.detail.c_str());
    ok = ok && r.passed();
  };
  const bool all = a.suite == "all";
  if (!all && a.suite != "geometry" && a.suite != "solver" && a.suite != "fluid")
    throw Error(ErrorCode::ConfigError, "--suite: expected geometry, solver, fluid or all");
  if (all || a.suite == "geometry")
    report("geometry", validate::geometry_suite({a.configurations, a.samples, a.seed, threads}));
  if (all || a.suite == "solver") report("solver", validate::solver_suite({a.instances, a.seed, threads}));
  if (all || a.suite == "fluid") report("fluid", validate::fluid_suite(a.seed, threads));
  return ok ? kOk : kValidation;
}

int cmd_bench(const std::vector<std::size_t>& sizes, int steps, int threads_flag) {
  const int threads = resolve_threads(threads_flag);
  std::printf("%8s %12s %12s %12s %12s %6s\n", "cells", "laguerre_ms", "eval_ms", "solve_ms", "step_ms", "failed");
  BenchRow first;
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    const BenchRow r = bench_dam_break(sizes[k], steps, threads);
    if (k == 0) first = r;
    std::printf("%8zu %12.1f %12.1f %12.1f %12.1f %6d\n", r.cells, r.diagram_ms, r.evaluation_ms, r.solve_ms,
                r.step_ms, r.failures);
    std::fflush(stdout);
    if (k > 0)
      std::printf("%8s t/t(%zu) = %.2f for %.2fx cells\n", "", first.cells, r.step_ms / first.step_ms,
                  static_cast<double>(r.cells) / static_cast<double>(first.cells));
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Partial optimal transport fluid simulator"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Run a scene and write frames plus stats.csv");
  simulate->add_option("config", sim.config, "Scene JSON")->required();
  simulate->add_option("-o,--out", sim.out, "Output directory (default: from the scene)");
  simulate->add_option("--steps", sim.steps, "Number of steps (default: from the scene)");
  simulate->add_option("--threads", sim.threads, "Worker threads (default: POTFLOW_THREADS or 1)");
  simulate->add_flag("-v,--verbose", sim.verbose, "Print every step and Newton iteration");
  simulate->add_flag("--best-effort", sim.best_effort, "Keep going after a non-converged step");
  simulate->add_flag("--deterministic", sim.deterministic, "Store zero wall times so reruns are byte-identical");

  RenderArgs ren;
  auto* rend = app.add_subcommand("render", "Render a frame to PPM");
  rend->add_option("frame", ren.frame, "Frame file (.potf)")->required();
  rend->add_option("-c,--config", ren.config, "Scene JSON providing the domain and default camera")->required();
  rend->add_option("-o,--output", ren.output, "Output image");
  rend->add_option("--mode", ren.mode, "raw | smooth | depth");
  rend->add_option("--eye", ren.eye, "Camera position x,y,z");
  rend->add_option("--look-at", ren.look_at, "Camera target x,y,z");
  rend->add_option("--up", ren.up, "Camera up vector x,y,z");
  rend->add_option("--fov", ren.fov, "Vertical field of view in radians");
  rend->add_option("--width", ren.width);
  rend->add_option("--height", ren.height);
  rend->add_option("--blend", ren.blend, "Smooth-union radius (default: half the mean sphere radius)");
  rend->add_option("--threads", ren.threads);

  ValidateArgs val;
  auto* valid = app.add_subcommand("validate", "Check analytic geometry and derivatives against oracles");
  valid->add_option("--suite", val.suite, "geometry | solver | fluid | all");
  valid->add_option("--samples", val.samples, "Monte-Carlo samples per estimate");
  valid->add_option("--configs", val.configurations, "Random cell configurations (geometry)");
  valid->add_option("--instances", val.instances, "Random instances (solver)");
  valid->add_option("--seed", val.seed);
  valid->add_option("--threads", val.threads);

  std::vector<std::size_t> sizes{1000, 2000, 4000, 8000};
  int bench_steps = 10, bench_threads = 0;
  auto* bench = app.add_subcommand("bench", "Dam-break scaling with per-stage timings");
  bench->add_option("--sizes", sizes, "Target cell counts")->delimiter(',');
  bench->add_option("--steps", bench_steps, "Steps averaged per size");
  bench->add_option("--threads", bench_threads);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*simulate) return cmd_simulate(sim);
    if (*rend) return cmd_render(ren);
    if (*valid) return cmd_validate(val);
    if (*bench) return cmd_bench(sizes, bench_steps, bench_threads);
  } catch (const Error& e) {
    std::fprintf(stderr, "potflow: %s\n", e.what());
    if (e.code() == ErrorCode::ConfigError) return kConfig;
    if (e.code() == ErrorCode::OtNonConvergence || e.code() == ErrorCode::InitFailure) return kNonConvergence;
    return kFailure;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "potflow: %s\n", e.what());
    return kFailure;
  }
  return kOk;
}
