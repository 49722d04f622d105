// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "potflow/oracle.hpp"
#include "potflow/restricted_cell.hpp"

using namespace potflow;

namespace {

constexpr double kTau = 1e-9;

ConvexCell cube_cell(double h) { return init_cell_from_domain(box_halfspaces({-h, -h, -h}, {h, h, h})); }

// Direct membership in the restricted cell of site i: power-distance test
// against every other site, domain box, and the ball.
struct Membership {
  const std::vector<Site>* sites;
  std::size_t i;
  Vec3 lo, hi;

  bool in_cell(const Vec3& x) const {
    for (int a = 0; a < 3; ++a)
      if (x[a] < lo[a] || x[a] > hi[a]) return false;
    const auto& s = *sites;
    const double pi = norm2(x - s[i].p) - s[i].psi;
    for (std::size_t j = 0; j < s.size(); ++j)
      if (j != i && norm2(x - s[j].p) - s[j].psi < pi) return false;
    return true;
  }
  bool operator()(const Vec3& x) const {
    return norm2(x - (*sites)[i].p) <= (*sites)[i].psi && in_cell(x);
  }
};

std::vector<Site> cluster(std::uint64_t seed, std::size_t n) {
  CounterRng rng(seed);
  std::vector<Site> s(n);
  for (std::size_t k = 0; k < n; ++k) {
    s[k].p = {rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8)};
    const double r = rng.uniform(0.1, 0.3);
    s[k].psi = r * r;
  }
  return s;
}

Aabb ball_box(const Sphere& s) {
  const double R = s.radius();
  Aabb b;
  b.extend(s.center - Vec3{R, R, R});
  b.extend(s.center + Vec3{R, R, R});
  return b;
}

}  // namespace

TEST(RestrictFacet, UntouchedOutsideAndTangent) {
  const ConvexCell c = cube_cell(0.5);
  // Facet +x of a small cube inside a big ball.
  EXPECT_EQ(restrict_facet(c, 1, {{0, 0, 0}, 4.0}, kTau).status, FacetStatus::Untouched);
  // Ball does not reach the facet plane.
  EXPECT_EQ(restrict_facet(c, 1, {{0, 0, 0}, 0.2 * 0.2}, kTau).status, FacetStatus::Outside);
  // Tangent: plane at distance exactly R.
  EXPECT_EQ(restrict_facet(c, 1, {{0, 0, 0}, 0.25}, kTau).status, FacetStatus::Outside);
}

TEST(RestrictFacet, FullCircleInsideSquare) {
  const ConvexCell c = cube_cell(0.5);
  // Facet +x is the unit square centred at (0.5, 0, 0); disk radius 0.3.
  const Sphere s{{0.5 - 0.4, 0, 0}, 0.4 * 0.4 + 0.09};
  const auto r = restrict_facet(c, 1, s, kTau);
  ASSERT_EQ(r.status, FacetStatus::FullCircle);
  EXPECT_NEAR(polygon_area(r.shape), 0.09 * kPi, 1e-15);
  const Vec3 foot{0.5, 0, 0};
  const auto mc = oracle::mc_disk_area(
      foot, {1, 0, 0}, 0.5,
      [&](const Vec3& x) {
        return std::abs(x.y) <= 0.5 && std::abs(x.z) <= 0.5 && norm2(x - s.center) <= s.r2;
      },
      10'000'000, 1);
  EXPECT_LT(mc.sigmas(0.09 * kPi), 3.0);
}

TEST(RestrictFacet, PartialFacetMatchesMonteCarlo) {
  const ConvexCell c = cube_cell(0.5);
  CounterRng rng(4);
  for (int t = 0; t < 20; ++t) {
    const Sphere s{{rng.uniform(-0.3, 0.3), rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6)},
                   std::pow(rng.uniform(0.3, 0.9), 2)};
    const auto r = restrict_facet(c, 1, s, kTau);
    const double area = r.status == FacetStatus::Outside ? 0.0 : polygon_area(r.shape);
    const double sd = 0.5 - s.center.x;
    const double rho = std::sqrt(std::max(s.r2 - sd * sd, 0.0));
    if (rho == 0.0) continue;
    const auto mc = oracle::mc_disk_area(
        {0.5, s.center.y, s.center.z}, {1, 0, 0}, rho,
        [&](const Vec3& x) { return std::abs(x.y) <= 0.5 && std::abs(x.z) <= 0.5; }, 1'000'000,
        100 + t);
    EXPECT_LT(mc.sigmas(area), 4.0) << t << " area " << area << " mc " << mc.value;
  }
}

TEST(EvaluateCell, FullBall) {
  const Sphere s{{0.1, -0.2, 0.05}, 0.01};
  const auto rc = evaluate_cell(cube_cell(1.0), s, kTau);
  ASSERT_EQ(rc.status, CellStatus::FullBall);
  EXPECT_NEAR(rc.volume, 4.0 / 3.0 * kPi * 1e-3, 1e-18);
  EXPECT_EQ(rc.centroid, s.center);
  EXPECT_NEAR(rc.free_surface_area, 4 * kPi * 1e-2, 1e-16);
  EXPECT_TRUE(rc.facets.empty());
}

TEST(EvaluateCell, BallOutsideCellIsEmpty) {
  const auto rc = evaluate_cell(cube_cell(1.0), {{3, 0, 0}, 0.25}, kTau);
  EXPECT_EQ(rc.status, CellStatus::Empty);
  EXPECT_EQ(rc.volume, 0.0);
}

TEST(EvaluateCell, HalfBall) {
  const ConvexCell c = init_cell_from_domain(box_halfspaces({-2, -2, -2}, {0, 2, 2}));
  const Sphere s{{0, 0, 0}, 1.0};
  const auto rc = evaluate_cell(c, s, kTau);
  ASSERT_EQ(rc.status, CellStatus::Clipped);
  EXPECT_NEAR(rc.volume, 2 * kPi / 3, 1e-12);
  EXPECT_NEAR(rc.free_surface_area, 2 * kPi, 1e-12);
  ASSERT_EQ(rc.facets.size(), 1u);
  EXPECT_NEAR(rc.facets[0].area, kPi, 1e-12);
  EXPECT_NEAR(rc.centroid.x, -3.0 / 8.0, 1e-12);
  EXPECT_NEAR(rc.centroid.y, 0.0, 1e-12);
  EXPECT_LT(rc.interior_point.x, 0.0);
  EXPECT_NEAR(rc.second_moment, 0.4 * kPi, 1e-12);
}

TEST(EvaluateCell, HalfBallBySiteBisector) {
  // Same half ball, produced by a second site.
  const Domain d = Domain::box({-3, -3, -3}, {3, 3, 3});
  std::vector<Site> s{{{0, 0, 0}, 1.0, 1, 0}, {{1, 0, 0}, 1.0 + 1.0, 1, 0}};
  // Plane: |x|² - 1 = |x - e|² - 2  ⇒  x = 0.
  const auto rc = evaluate_sites(s, d, 1);
  EXPECT_NEAR(rc[0].volume, 2 * kPi / 3, 1e-12);
  EXPECT_NEAR(rc[0].facets[0].signed_height, 0.0, 1e-15);
  EXPECT_NEAR(signed_height(s[0].p, s[0].psi, s[1].p, s[1].psi), 0.0, 1e-15);
}

TEST(SignedHeight, Cases) {
  EXPECT_NEAR(signed_height({0, 0, 0}, 0.3, {2, 0, 0}, 0.3), 1.0, 1e-15);
  // ψi - ψj = ℓ² puts the plane through p_j.
  EXPECT_NEAR(signed_height({0, 0, 0}, 4.5, {0, 2, 0}, 0.5), 2.0, 1e-15);
  EXPECT_NEAR(shell_height({{0, 0, 0}, 0.49}), 0.7, 1e-15);
}

TEST(ProjectedPatch, HalfSphereAndCap) {
  const Sphere s{{0, 0, 0}, 1.0};
  const ConvexCell half = init_cell_from_domain(box_halfspaces({-2, -2, -2}, {0, 2, 2}));
  const auto rc = evaluate_cell(half, s, kTau);
  EXPECT_NEAR(projected_patch_area(rc.facets[0].shape, s, rc.interior_point), 2 * kPi, 1e-12);

  // FullCircle at distance 0.5: cap of height 0.5 on the far side.
  const ConvexCell cap = init_cell_from_domain(box_halfspaces({-2, -2, -2}, {0.5, 2, 2}));
  const auto rc2 = evaluate_cell(cap, s, kTau);
  ASSERT_EQ(rc2.facets.size(), 1u);
  EXPECT_TRUE(rc2.facets[0].shape.is_full_circle());
  const double a = projected_patch_area(rc2.facets[0].shape, s, rc2.interior_point);
  EXPECT_NEAR(a, kPi, 1e-12);
  const auto mc = oracle::mc_sphere_patch_area(s.center, s.r2, [](const Vec3& x) { return x.x > 0.5; },
                                               10'000'000, 3);
  EXPECT_LT(mc.sigmas(a), 3.0);
}

TEST(ProjectedPatch, EquatorHasZeroGeodesicCurvature) {
  // A square facet through the centre: each projected edge is a great circle.
  const Sphere s{{0, 0, 0}, 1.0};
  const ConvexCell c = init_cell_from_domain(box_halfspaces({-0.3, -0.3, -0.3}, {0.3, 0.3, 0.3}));
  const auto rc = evaluate_cell(c, s, kTau);
  ASSERT_EQ(rc.facets.size(), 6u);
  double sum = 0.0;
  for (const auto& f : rc.facets) sum += projected_patch_area(f.shape, s, rc.interior_point);
  EXPECT_NEAR(sum, 4 * kPi, 1e-10);
  EXPECT_NEAR(rc.free_surface_area, 0.0, 1e-10);
  // By symmetry each face hides one sixth of the sphere.
  EXPECT_NEAR(projected_patch_area(rc.facets[0].shape, s, rc.interior_point), 4 * kPi / 6, 1e-10);
}

TEST(EvaluateCell, BallCubeAgainstMonteCarlo) {
  const Sphere s{{0, 0, 0}, 1.0};
  const ConvexCell c = cube_cell(0.8);
  const auto rc = evaluate_cell(c, s, kTau);
  auto inside = [&](const Vec3& x) {
    return norm2(x) <= 1.0 && std::abs(x.x) <= 0.8 && std::abs(x.y) <= 0.8 && std::abs(x.z) <= 0.8;
  };
  Aabb box;
  box.extend({-1, -1, -1});
  box.extend({1, 1, 1});
  const auto v = oracle::mc_centroid(inside, box, 10'000'000, 7);
  EXPECT_LT(v.volume.sigmas(rc.volume), 3.0) << rc.volume << " " << v.volume.value;
  for (int a = 0; a < 3; ++a) EXPECT_LT(std::abs(rc.centroid[a] - v.centroid[a]), 3 * v.std_error[a]);
  const auto k = oracle::mc_sphere_patch_area(
      s.center, s.r2,
      [](const Vec3& x) { return std::abs(x.x) <= 0.8 && std::abs(x.y) <= 0.8 && std::abs(x.z) <= 0.8; },
      10'000'000, 8);
  EXPECT_LT(k.sigmas(rc.free_surface_area), 3.0);
  // Each face: disk radius 0.6 clipped by the cube's neighbouring faces.
  const auto b = oracle::mc_disk_area({0.8, 0, 0}, {1, 0, 0}, 0.6,
                                      [](const Vec3& x) { return std::abs(x.y) <= 0.8 && std::abs(x.z) <= 0.8; },
                                      1'000'000, 9);
  for (const auto& f : rc.facets) EXPECT_NEAR(f.area, 0.36 * kPi, 1e-12);
  EXPECT_LT(b.sigmas(0.36 * kPi), 3.0);
}

TEST(EvaluateCell, RandomClustersAgainstMonteCarlo) {
  const Domain d = Domain::box({0, 0, 0}, {1, 1, 1});
  int checked = 0;
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    const auto sites = cluster(seed, 12);
    const auto rc = evaluate_sites(sites, d, 1);
    for (std::size_t i = 0; i < sites.size(); ++i) {
      if (rc[i].status == CellStatus::Empty) continue;
      const Sphere s{sites[i].p, sites[i].psi};
      const Membership m{&sites, i, {0, 0, 0}, {1, 1, 1}};
      const auto v = oracle::mc_centroid(m, ball_box(s), 400'000, 1000 * seed + i);
      EXPECT_LT(v.volume.sigmas(rc[i].volume), 4.0) << seed << ":" << i;
      for (int a = 0; a < 3; ++a)
        EXPECT_LT(std::abs(rc[i].centroid[a] - v.centroid[a]), 4 * v.std_error[a] + 1e-12);
      const auto k = oracle::mc_sphere_patch_area(
          s.center, s.r2, [&](const Vec3& x) { return m.in_cell(x); }, 400'000, 2000 * seed + i);
      EXPECT_LT(k.sigmas(rc[i].free_surface_area), 4.0) << seed << ":" << i;

      // Interior point lies strictly inside.
      EXPECT_TRUE(m(rc[i].interior_point));
      ++checked;
    }
  }
  EXPECT_GT(checked, 30);
}

TEST(EvaluateCell, ClosedSurfaceIdentity) {
  // Σ n_j|B_j| + ∫_K n dA = 0, with ∫_K n dA estimated on the sphere.
  const Domain d = Domain::box({0, 0, 0}, {1, 1, 1});
  const auto sites = cluster(31, 10);
  const auto rc = evaluate_sites(sites, d, 1);
  for (std::size_t i = 0; i < sites.size(); ++i) {
    if (rc[i].status != CellStatus::Clipped) continue;
    const Sphere s{sites[i].p, sites[i].psi};
    const Membership m{&sites, i, {0, 0, 0}, {1, 1, 1}};
    Vec3 facet_sum;
    for (const auto& f : rc[i].facets) facet_sum += f.area * f.shape.plane.n;
    for (int a = 0; a < 3; ++a) {
      auto weighted = [&](const Vec3& x) { return m.in_cell(x); };
      // ∫_K n_a dA = E[n_a · 1_K] · 4πR²; estimate with the two half-patches.
      CounterRng rng(500 + i);
      const int N = 400'000;
      double s1 = 0, s2 = 0;
      for (int k = 0; k < N; ++k) {
        const Vec3 u = rng.unit_vector();
        const double val = weighted(s.center + s.radius() * u) ? u[a] : 0.0;
        s1 += val;
        s2 += val * val;
      }
      const double mean = s1 / N, se = std::sqrt((s2 / N - mean * mean) / N);
      const double full = 4 * kPi * s.r2;
      EXPECT_LT(std::abs(mean * full + facet_sum[a]), 4 * se * full + 1e-12) << i << " axis " << a;
    }
  }
}

TEST(EvaluateCell, VolumeMonotoneInWeight) {
  const Domain d = Domain::box({0, 0, 0}, {1, 1, 1});
  CounterRng rng(77);
  for (int t = 0; t < 200; ++t) {
    auto sites = cluster(1000 + t, 8);
    const auto a = evaluate_sites(sites, d, 1);
    sites[0].psi *= 1.0 + 1e-3;
    const auto b = evaluate_sites(sites, d, 1);
    EXPECT_GE(b[0].volume, a[0].volume * (1 - 1e-12));
  }
}

TEST(EvaluateCell, SecondMomentAgainstMonteCarlo) {
  const Domain d = Domain::box({0, 0, 0}, {1, 1, 1});
  const auto sites = cluster(5, 10);
  const auto rc = evaluate_sites(sites, d, 1);
  for (std::size_t i = 0; i < 3; ++i) {
    if (rc[i].status == CellStatus::Empty) continue;
    const Sphere s{sites[i].p, sites[i].psi};
    const Membership m{&sites, i, {0, 0, 0}, {1, 1, 1}};
    const Aabb box = ball_box(s);
    CounterRng rng(900 + i);
    const int N = 1'000'000;
    double s1 = 0, s2 = 0;
    for (int k = 0; k < N; ++k) {
      const Vec3 x{rng.uniform(box.lo.x, box.hi.x), rng.uniform(box.lo.y, box.hi.y),
                   rng.uniform(box.lo.z, box.hi.z)};
      const double v = m(x) ? norm2(x - s.center) : 0.0;
      s1 += v;
      s2 += v * v;
    }
    const double mean = s1 / N, se = std::sqrt((s2 / N - mean * mean) / N);
    EXPECT_LT(std::abs(mean * box.volume() - rc[i].second_moment), 4 * se * box.volume());
  }
}

TEST(EvaluateCell, BallAwareMatchesFullCells) {
  const Domain d = Domain::box({0, 0, 0}, {1, 1, 1});
  CounterRng rng(2);
  std::vector<Site> sites(400);
  for (auto& s : sites) {
    s.p = {rng.uniform(), rng.uniform(), rng.uniform()};
    s.psi = std::pow(rng.uniform(0.02, 0.08), 2);
  }
  const auto full = build_diagram(sites, d);
  const auto fast = evaluate_sites(sites, d, 1);
  for (std::size_t i = 0; i < sites.size(); ++i) {
    const auto ref = evaluate_cell(full[i], {sites[i].p, sites[i].psi}, d.tau);
    EXPECT_EQ(ref.status, fast[i].status);
    EXPECT_NEAR(ref.volume, fast[i].volume, 1e-12 * std::max(ref.volume, 1e-300) + 1e-18);
    EXPECT_NEAR(ref.free_surface_area, fast[i].free_surface_area, 1e-12 * ref.free_surface_area + 1e-18);
    EXPECT_LT(norm(ref.centroid - fast[i].centroid), 1e-12);
  }
}

TEST(EvaluateCell, VolumeAdditivityWithComplement) {
  const Domain d = Domain::box({0, 0, 0}, {1, 1, 1});
  const auto sites = cluster(9, 10);
  const auto cells = build_diagram(sites, d);
  for (std::size_t i = 0; i < 4; ++i) {
    const Sphere s{sites[i].p, sites[i].psi};
    const auto rc = evaluate_cell(cells[i], s, d.tau);
    const Membership m{&sites, i, {0, 0, 0}, {1, 1, 1}};
    Aabb box;
    box.extend({0, 0, 0});
    box.extend({1, 1, 1});
    const auto outside = oracle::mc_volume(
        [&](const Vec3& x) { return norm2(x - s.center) > s.r2 && m.in_cell(x); }, box, 1'000'000, 40 + i);
    EXPECT_LT(outside.sigmas(cell_volume_convex(cells[i]) - rc.volume), 4.0);
  }
}
