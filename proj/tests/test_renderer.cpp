// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

#include "potflow/fluid_sim.hpp"
#include "potflow/renderer.hpp"

using namespace potflow;

namespace {

const Domain& unit_box() {
  static const Domain d = Domain::box({0, 0, 0}, {1, 1, 1});
  return d;
}

RenderScene lone_ball(const Vec3& c, double r) {
  const std::vector<Vec3> x{c};
  const std::vector<double> psi{r * r};
  return RenderScene::build(x, psi, unit_box());
}

// Converged random fluid in the unit box.
RenderScene random_fluid(std::size_t n, double fill, std::uint64_t seed) {
  FluidModel m;
  m.domain = unit_box();
  m.phases = {{0, 1.0, 0.0, 0.0, {}}};
  CounterRng rng(seed);
  FluidState s;
  for (std::size_t i = 0; i < n; ++i) {
    s.x.push_back({rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)});
    s.v.push_back({});
    s.nu.push_back(fill / static_cast<double>(n));
    s.phase.push_back(0);
  }
  EXPECT_TRUE(project(s, m).converged());
  return RenderScene::build(s.x, s.psi, unit_box());
}

Ray random_ray(CounterRng& rng) {
  const Vec3 o{rng.uniform(-0.5, 1.5), rng.uniform(-0.5, 1.5), rng.uniform(-0.5, 1.5)};
  const Vec3 target{rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8)};
  return {o, normalized(target - o)};
}

bool in_union(const RenderScene& sc, const Vec3& x) {
  for (const auto& s : sc.sites)
    if (norm2(x - s.p) <= s.psi) return true;
  return false;
}

}  // namespace

TEST(FirstHit, LoneBallMatchesQuadratic) {
  const RenderScene sc = lone_ball({0.5, 0.5, 0.5}, 0.2);
  const Ray ray{{0.5, -1.0, 0.55}, {0, 1, 0}};
  const Hit h = first_hit(sc, ray);
  ASSERT_TRUE(h);
  // Entry at y = 0.5 − √(0.04 − 0.0025), measured from y = −1 but the domain starts at y = 0.
  EXPECT_NEAR(h.t, 1.5 - std::sqrt(0.04 - 0.0025), 1e-12);
}

TEST(FirstHit, MissReturnsNoCell) {
  const RenderScene sc = lone_ball({0.5, 0.5, 0.5}, 0.2);
  EXPECT_FALSE(first_hit(sc, {{0.9, -1.0, 0.9}, {0, 1, 0}}));
  EXPECT_FALSE(first_hit(sc, {{0.5, -1.0, 0.5}, {0, -1, 0}}));
}

TEST(FirstHit, MembershipAndNearestOnRandomRays) {
  const RenderScene sc = random_fluid(150, 0.3, 4);
  CounterRng rng(5);
  int hits = 0;
  for (int k = 0; k < 10000; ++k) {
    const Ray ray = random_ray(rng);
    const Hit h = first_hit(sc, ray);
    // Brute force: nearest sphere entry inside the domain that no other ball covers.
    const auto range = sc.clip_to_domain(ray);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& s : sc.sites) {
      const Vec3 oc = ray.origin - s.p;
      const double b = dot(oc, ray.dir), disc = b * b - (norm2(oc) - s.psi);
      if (disc < 0 || !range) continue;
      const double t = -b - std::sqrt(disc);
      if (t < (*range)[0] || t > (*range)[1] || t >= best) continue;
      bool covered = false;
      for (const auto& o : sc.sites) covered = covered || norm2(ray.at(t) - o.p) - o.psi < -1e-12;
      if (!covered) best = t;
    }
    if (!h) {
      ASSERT_TRUE(std::isinf(best)) << k;
      continue;
    }
    ++hits;
    ASSERT_NEAR(h.t, best, 1e-12) << k;
    const Vec3 x = ray.at(h.t);
    const auto& own = sc.sites[static_cast<std::size_t>(h.cell)];
    const double pw = norm2(x - own.p) - own.psi;
    for (const auto& s : sc.sites) ASSERT_GE(norm2(x - s.p) - s.psi, pw - 1e-12) << k;
  }
  EXPECT_GT(hits, 2000);
}

TEST(Traverse, TwoCellAxisRay) {
  const std::vector<Vec3> x{{0.25, 0.5, 0.5}, {0.75, 0.5, 0.5}};
  const std::vector<double> psi{0.01, 0.01};
  const RenderScene sc = RenderScene::build(x, psi, unit_box());
  const Ray ray{{-0.5, 0.45, 0.5}, {1, 0, 0}};
  const Traversal tr = traverse(sc, ray);
  ASSERT_EQ(tr.path.size(), 2u);
  EXPECT_EQ(tr.path[0].cell, 0);
  EXPECT_EQ(tr.path[1].cell, 1);
  EXPECT_NEAR(tr.path[0].t_enter, 0.5, 1e-15);
  EXPECT_EQ(tr.path[0].t_exit, tr.path[1].t_enter);
  EXPECT_NEAR(tr.path[1].t_exit, 1.5, 1e-15);
  // Each ball's chord at offset 0.05 from its centre.
  EXPECT_NEAR(tr.fluid_length, 4 * std::sqrt(0.01 - 0.0025), 1e-12);
}

TEST(Traverse, IntervalsTileTheDomainChord) {
  const RenderScene sc = random_fluid(300, 0.4, 6);
  CounterRng rng(7);
  for (int k = 0; k < 2000; ++k) {
    const Ray ray = random_ray(rng);
    const Traversal tr = traverse(sc, ray);
    const auto range = sc.clip_to_domain(ray);
    ASSERT_TRUE(range);
    ASSERT_FALSE(tr.aborted);
    ASSERT_FALSE(tr.path.empty());
    double sum = 0;
    for (std::size_t i = 0; i < tr.path.size(); ++i) {
      if (i > 0) {
        ASSERT_EQ(tr.path[i].t_enter, tr.path[i - 1].t_exit);
      }
      ASSERT_GE(tr.path[i].t_exit, tr.path[i].t_enter);
      sum += tr.path[i].t_exit - tr.path[i].t_enter;
    }
    EXPECT_NEAR(sum, (*range)[1] - (*range)[0], 1e-8) << k;
  }
}

TEST(Traverse, FluidLengthMatchesSampledChord) {
  const RenderScene sc = random_fluid(120, 0.3, 8);
  CounterRng rng(9);
  for (int k = 0; k < 20; ++k) {
    const Ray ray = random_ray(rng);
    const auto range = sc.clip_to_domain(ray);
    const double L = (*range)[1] - (*range)[0];
    const int samples = 20000;
    int inside = 0;
    for (int s = 0; s < samples; ++s) inside += in_union(sc, ray.at(rng.uniform((*range)[0], (*range)[1])));
    const double p = static_cast<double>(inside) / samples;
    const double est = p * L, se = L * std::sqrt(std::max(p * (1 - p), 1.0 / samples) / samples);
    EXPECT_NEAR(traverse(sc, ray).fluid_length, est, 3.5 * se) << k;
  }
}

TEST(SmoothSdf, SingleSphereIsExact) {
  const RenderScene sc = lone_ball({0.5, 0.5, 0.5}, 0.2);
  EXPECT_NEAR(smooth_sdf(sc, {0.9, 0.5, 0.5}, 0.1), 0.2, 1e-15);
  EXPECT_NEAR(smooth_sdf(sc, {0.5, 0.5, 0.5}, 0.1), -0.2, 1e-15);
}

TEST(SmoothSdf, TinyBlendIsPlainMin) {
  const RenderScene sc = random_fluid(80, 0.3, 10);
  CounterRng rng(11);
  for (int k = 0; k < 1000; ++k) {
    const Vec3 x{rng.uniform(), rng.uniform(), rng.uniform()};
    const auto owner = static_cast<std::size_t>(locate_site(x, sc.sites, sc.site_grid, sc.psi_max));
    double d = distance(x, sc.sites[owner].p) - std::sqrt(sc.sites[owner].psi);
    for (const auto j : sc.neighbors[owner]) {
      const auto& s = sc.sites[static_cast<std::size_t>(j)];
      d = std::min(d, distance(x, s.p) - std::sqrt(s.psi));
    }
    EXPECT_NEAR(smooth_sdf(sc, x, 1e-9), d, 1e-9);
  }
}

TEST(SmoothSdf, UnionBoundedByMin) {
  const std::vector<Vec3> x{{0.4, 0.5, 0.5}, {0.6, 0.5, 0.5}};
  const std::vector<double> psi{0.015, 0.015};
  const RenderScene sc = RenderScene::build(x, psi, unit_box());
  for (int i = 0; i <= 20; ++i)
    for (int j = 0; j <= 20; ++j) {
      const Vec3 q{0.2 + 0.03 * i, 0.5, 0.2 + 0.03 * j};
      const double dmin = std::min(distance(q, x[0]), distance(q, x[1])) - std::sqrt(0.015);
      EXPECT_LE(smooth_sdf(sc, q, 0.05), dmin + 1e-15);
      EXPECT_GE(smooth_sdf(sc, q, 0.05), dmin - 0.05 / 6 - 1e-15);
    }
}

TEST(Render, EmptySceneIsBackground) {
  const RenderScene sc = RenderScene::build({}, {}, unit_box());
  Camera cam;
  cam.eye = {0.5, -1.5, 0.5};
  cam.look_at = {0.5, 0.5, 0.5};
  cam.width = cam.height = 32;
  RenderOptions opt;
  for (const auto mode : {RenderMode::Raw, RenderMode::Smooth, RenderMode::Depth}) {
    opt.mode = mode;
    const Image img = render(sc, cam, opt);
    for (const auto& p : img.pixels) ASSERT_EQ(p, opt.background);
  }
}

TEST(Render, BallSilhouetteMatchesProjection) {
  const double r = 0.15;
  const RenderScene sc = lone_ball({0.5, 0.5, 0.5}, r);
  Camera cam;
  cam.eye = {0.5, -1.5, 0.5};
  cam.look_at = {0.5, 0.5, 0.5};
  cam.width = cam.height = 201;
  cam.fov = 0.5;
  const Image img = render(sc, cam);
  const double D = 2.0;
  const double expected = cam.focal() * r / std::sqrt(D * D - r * r);
  int row = 0, col = 0;
  for (int x = 0; x < cam.width; ++x) row += !(img.at(x, 100) == RenderOptions{}.background);
  for (int y = 0; y < cam.height; ++y) col += !(img.at(100, y) == RenderOptions{}.background);
  EXPECT_NEAR(0.5 * row, expected, 1.0);
  EXPECT_NEAR(0.5 * col, expected, 1.0);
}

TEST(Render, RawAndSmoothAgreeForTinyBlend) {
  const RenderScene sc = random_fluid(100, 0.3, 12);
  Camera cam;
  cam.eye = {0.5, -1.2, 0.6};
  cam.look_at = {0.5, 0.5, 0.5};
  cam.width = cam.height = 96;
  RenderOptions raw, smooth;
  smooth.mode = RenderMode::Smooth;
  smooth.blend = 1e-9;
  const Image a = render(sc, cam, raw), b = render(sc, cam, smooth);
  std::size_t differ = 0;
  for (std::size_t p = 0; p < a.pixels.size(); ++p)
    differ += (a.pixels[p] == raw.background) != (b.pixels[p] == raw.background);
  EXPECT_LT(static_cast<double>(differ), 0.005 * a.pixels.size());
}

TEST(Render, ThreadCountDoesNotChangeDepthImage) {
  const RenderScene sc = random_fluid(100, 0.3, 13);
  Camera cam;
  cam.eye = {0.5, -1.2, 0.6};
  cam.look_at = {0.5, 0.5, 0.5};
  cam.width = cam.height = 48;
  RenderOptions opt;
  opt.mode = RenderMode::Depth;
  const Image a = render(sc, cam, opt);
  opt.threads = 3;
  EXPECT_EQ(a.pixels, render(sc, cam, opt).pixels);
}

TEST(Image, PpmRoundTrip) {
  Image img(3, 2);
  img.at(2, 1) = {1, 2, 3};
  img.at(0, 0) = {255, 128, 0};
  const auto path = (std::filesystem::temp_directory_path() / "potflow_rt.ppm").string();
  img.write_ppm(path);
  const Image back = Image::read_ppm(path);
  EXPECT_EQ(back.width, 3);
  EXPECT_EQ(back.pixels, img.pixels);
  std::remove(path.c_str());
}

TEST(SampleSurface, LoneBallIsUniform) {
  const RenderScene sc = lone_ball({0.5, 0.5, 0.5}, 0.2);
  const auto pts = sample_surface(sc, 10000, 3);
  ASSERT_EQ(pts.size(), 10000u);
  Vec3 mean;
  for (const auto& s : pts) {
    EXPECT_NEAR(distance(s.point, {0.5, 0.5, 0.5}), 0.2, 1e-12);
    EXPECT_NEAR(dot(s.normal, normalized(s.point - Vec3{0.5, 0.5, 0.5})), 1.0, 1e-12);
    mean += s.point;
  }
  mean = mean / 10000.0;
  // Each coordinate of a uniform point on the sphere has variance r²/3.
  const double se = 0.2 / std::sqrt(3.0 * 10000);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(mean[k], 0.5, 3 * se);
}

TEST(SampleSurface, HalfBallOnlyCurvedSide) {
  const std::vector<Vec3> x{{0.5, 0.5, 0.9}};
  const std::vector<double> psi{0.04};
  const Domain d = Domain::box({0, 0, 0}, {1, 1, 0.9});
  const RenderScene sc = RenderScene::build(x, psi, d);
  for (const auto& s : sample_surface(sc, 2000, 4)) EXPECT_LE(s.point.z, 0.9 + d.tau);
}

TEST(SampleSurface, CountsProportionalToPatchArea) {
  const RenderScene sc = random_fluid(100, 0.3, 14);
  const std::size_t N = 200000;
  const auto pts = sample_surface(sc, N, 15);
  std::vector<std::size_t> count(sc.sites.size(), 0);
  for (const auto& s : pts) {
    const auto i = static_cast<std::size_t>(locate_site(s.point, sc.sites, sc.site_grid, sc.psi_max));
    ++count[i];
  }
  double total = 0;
  for (const auto& c : sc.restricted) total += c.free_surface_area;
  double chi2 = 0;
  int dof = -1;
  for (std::size_t i = 0; i < count.size(); ++i) {
    const double e = N * sc.restricted[i].free_surface_area / total;
    if (e < 5) continue;
    chi2 += (count[i] - e) * (count[i] - e) / e;
    ++dof;
  }
  ASSERT_GT(dof, 20);
  EXPECT_LT(chi2, dof + 5 * std::sqrt(2.0 * dof));
}
