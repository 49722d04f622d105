// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "potflow/rng.hpp"
#include "potflow/vec3.hpp"

// Brute-force verifiers. Nothing here depends on the clipping or restriction
// code; predicates are plain point-membership tests.
namespace potflow::oracle {

namespace detail {

// Two coordinates in [-1, 1) from one draw; 32 bits each is far below the
// Monte-Carlo noise at any sample count used here.
inline void square_point(CounterRng& rng, double& u, double& v) {
  const std::uint64_t b = rng.next_u64();
  u = static_cast<double>(b >> 32) * 0x1.0p-31 - 1.0;
  v = static_cast<double>(b & 0xffffffffu) * 0x1.0p-31 - 1.0;
}

}  // namespace detail

struct Estimate {
  double value = 0.0;
  double std_error = 0.0;

  /// |value - reference| in units of std_error (0 when both are exact).
  double sigmas(double reference) const {
    const double diff = std::abs(value - reference);
    if (std_error > 0.0) return diff / std_error;
    return diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  }
};

struct CentroidEstimate {
  Estimate volume;
  Vec3 centroid;
  Vec3 std_error;
};

/// Hit-or-miss volume of {x in box : inside(x)}.
template <typename Pred>
Estimate mc_volume(Pred&& inside, const Aabb& box, std::uint64_t samples, std::uint64_t seed) {
  CounterRng rng(seed, 1);
  const Vec3 lo = box.lo, ext = box.extent();
  std::uint64_t hits = 0;
  for (std::uint64_t k = 0; k < samples; ++k) {
    const Vec3 x{lo.x + ext.x * rng.uniform(), lo.y + ext.y * rng.uniform(),
                 lo.z + ext.z * rng.uniform()};
    hits += inside(x) ? 1 : 0;
  }
  const double vb = box.volume();
  const double f = static_cast<double>(hits) / static_cast<double>(samples);
  return {vb * f, vb * std::sqrt(f * (1.0 - f) / static_cast<double>(samples))};
}

/// Volume and centroid of {x in box : inside(x)}; centroid errors from the
/// per-axis sample standard deviation of the hits.
template <typename Pred>
CentroidEstimate mc_centroid(Pred&& inside, const Aabb& box, std::uint64_t samples,
                             std::uint64_t seed) {
  CounterRng rng(seed, 2);
  const Vec3 lo = box.lo, ext = box.extent();
  const Vec3 mid = lo + 0.5 * ext;
  std::uint64_t hits = 0;
  Vec3 s1, s2;
  for (std::uint64_t k = 0; k < samples; ++k) {
    const Vec3 x{lo.x + ext.x * rng.uniform(), lo.y + ext.y * rng.uniform(),
                 lo.z + ext.z * rng.uniform()};
    if (!inside(x)) continue;
    ++hits;
    const Vec3 d = x - mid;
    s1 += d;
    s2 += Vec3{d.x * d.x, d.y * d.y, d.z * d.z};
  }
  CentroidEstimate out;
  const double vb = box.volume();
  const double N = static_cast<double>(samples);
  const double f = static_cast<double>(hits) / N;
  out.volume = {vb * f, vb * std::sqrt(f * (1.0 - f) / N)};
  if (hits > 1) {
    const double h = static_cast<double>(hits);
    const Vec3 mean = s1 / h;
    out.centroid = mid + mean;
    for (int a = 0; a < 3; ++a) {
      const double var = std::max(s2[a] / h - mean[a] * mean[a], 0.0);
      out.std_error[a] = std::sqrt(var / h);
    }
  }
  return out;
}

/// Area of {x on the sphere : inside(x)} by uniform sphere sampling.
template <typename Pred>
Estimate mc_sphere_patch_area(const Vec3& center, double r2, Pred&& inside, std::uint64_t samples,
                              std::uint64_t seed) {
  CounterRng rng(seed, 3);
  const double R = std::sqrt(r2);
  std::uint64_t hits = 0;
  for (std::uint64_t k = 0; k < samples; ++k) {
    // Marsaglia's rejection method; avoids trigonometry in the hot loop.
    double u, v, q;
    do {
      detail::square_point(rng, u, v);
      q = u * u + v * v;
    } while (q >= 1.0);
    const double w = 2.0 * std::sqrt(1.0 - q);
    hits += inside(center + R * Vec3{u * w, v * w, 1.0 - 2.0 * q}) ? 1 : 0;
  }
  const double full = 4.0 * kPi * r2;
  const double f = static_cast<double>(hits) / static_cast<double>(samples);
  return {full * f, full * std::sqrt(f * (1.0 - f) / static_cast<double>(samples))};
}

/// Area of {x in disk(center, radius) ⊂ plane with unit normal n : inside(x)}.
template <typename Pred>
Estimate mc_disk_area(const Vec3& center, const Vec3& n, double radius, Pred&& inside,
                      std::uint64_t samples, std::uint64_t seed) {
  CounterRng rng(seed, 4);
  const Frame fr = Frame::from_normal(n);
  std::uint64_t hits = 0;
  for (std::uint64_t k = 0; k < samples; ++k) {
    double u, v;
    do detail::square_point(rng, u, v);
    while (u * u + v * v >= 1.0);
    hits += inside(center + fr.to_world(radius * u, radius * v)) ? 1 : 0;
  }
  const double full = kPi * radius * radius;
  const double f = static_cast<double>(hits) / static_cast<double>(samples);
  return {full * f, full * std::sqrt(f * (1.0 - f) / static_cast<double>(samples))};
}

/// Central-difference gradient with step h_rel · max(|x_k|, scale).
inline std::vector<double> fd_gradient(const std::function<double(const std::vector<double>&)>& f,
                                       const std::vector<double>& x, double h_rel = 1e-6,
                                       double scale = 0.0) {
  std::vector<double> g(x.size()), xp = x;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double h = h_rel * std::max(std::abs(x[k]), scale);
    xp[k] = x[k] + h;
    const double fp = f(xp);
    xp[k] = x[k] - h;
    const double fm = f(xp);
    xp[k] = x[k];
    g[k] = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// Central-difference Jacobian J[i][k] = ∂F_i/∂x_k.
inline std::vector<std::vector<double>> fd_jacobian(
    const std::function<std::vector<double>(const std::vector<double>&)>& F,
    const std::vector<double>& x, double h_rel = 1e-6, double scale = 0.0) {
  std::vector<double> xp = x;
  std::vector<std::vector<double>> J;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double h = h_rel * std::max(std::abs(x[k]), scale);
    xp[k] = x[k] + h;
    const auto fp = F(xp);
    xp[k] = x[k] - h;
    const auto fm = F(xp);
    xp[k] = x[k];
    if (J.empty()) J.assign(fp.size(), std::vector<double>(x.size()));
    for (std::size_t i = 0; i < fp.size(); ++i) J[i][k] = (fp[i] - fm[i]) / (2.0 * h);
  }
  return J;
}

/// Richardson-extrapolated central differences: (4·D(h/2) - D(h)) / 3,
/// fourth-order in h.
inline std::vector<std::vector<double>> fd_jacobian_richardson(
    const std::function<std::vector<double>(const std::vector<double>&)>& F,
    const std::vector<double>& x, double h_rel = 1e-5, double scale = 0.0) {
  auto coarse = fd_jacobian(F, x, h_rel, scale);
  const auto fine = fd_jacobian(F, x, 0.5 * h_rel, 0.5 * scale);
  for (std::size_t i = 0; i < coarse.size(); ++i)
    for (std::size_t k = 0; k < coarse[i].size(); ++k) coarse[i][k] = (4.0 * fine[i][k] - coarse[i][k]) / 3.0;
  return coarse;
}

/// Upper quantile of Binomial(n, p): smallest k with P[X > k] <= alpha.
inline std::uint64_t binomial_upper(std::uint64_t n, double p, double alpha) {
  double cdf = 0.0;
  double logp = std::log(p), logq = std::log1p(-p);
  for (std::uint64_t k = 0; k <= n; ++k) {
    const double lg = std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
    cdf += std::exp(lg + k * logp + (n - k) * logq);
    if (1.0 - cdf <= alpha) return k;
  }
  return n;
}

}  // namespace potflow::oracle
