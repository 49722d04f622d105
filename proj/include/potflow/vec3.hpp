// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <ostream>

namespace potflow {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  constexpr Vec3() = default;
  constexpr Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

  constexpr double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
  constexpr double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }

  constexpr Vec3 operator-() const { return {-x, -y, -z}; }
  constexpr Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
  constexpr Vec3& operator-=(const Vec3& o) { x -= o.x; y -= o.y; z -= o.z; return *this; }
  constexpr Vec3& operator*=(double s) { x *= s; y *= s; z *= s; return *this; }
  constexpr Vec3& operator/=(double s) { x /= s; y /= s; z /= s; return *this; }

  friend constexpr Vec3 operator+(Vec3 a, const Vec3& b) { return a += b; }
  friend constexpr Vec3 operator-(Vec3 a, const Vec3& b) { return a -= b; }
  friend constexpr Vec3 operator*(Vec3 a, double s) { return a *= s; }
  friend constexpr Vec3 operator*(double s, Vec3 a) { return a *= s; }
  friend constexpr Vec3 operator/(Vec3 a, double s) { return a /= s; }
  friend constexpr bool operator==(const Vec3&, const Vec3&) = default;

  friend std::ostream& operator<<(std::ostream& os, const Vec3& v) {
    return os << '(' << v.x << ", " << v.y << ", " << v.z << ')';
  }
};

constexpr double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
constexpr Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
constexpr double norm2(const Vec3& a) { return dot(a, a); }
inline double norm(const Vec3& a) { return std::sqrt(norm2(a)); }
inline Vec3 normalized(const Vec3& a) { return a / norm(a); }
inline double distance(const Vec3& a, const Vec3& b) { return norm(a - b); }
inline bool is_finite(const Vec3& a) {
  return std::isfinite(a.x) && std::isfinite(a.y) && std::isfinite(a.z);
}

/// Half-space n·x <= d with unit outward normal n.
struct Plane {
  Vec3 n;
  double d = 0.0;

  /// Positive outside, negative inside.
  double signed_distance(const Vec3& p) const { return dot(n, p) - d; }
  Vec3 project(const Vec3& p) const { return p - signed_distance(p) * n; }

  static Plane through(const Vec3& unit_normal, const Vec3& point) {
    return {unit_normal, dot(unit_normal, point)};
  }
};

/// Right-handed orthonormal frame (u, w, n) with u × w = n.
struct Frame {
  Vec3 u, w, n;

  static Frame from_normal(const Vec3& n) {
    // Pick the world axis least aligned with n; deterministic for a given n.
    const double ax = std::abs(n.x), ay = std::abs(n.y), az = std::abs(n.z);
    Vec3 e = (ax <= ay && ax <= az) ? Vec3{1, 0, 0} : (ay <= az ? Vec3{0, 1, 0} : Vec3{0, 0, 1});
    Vec3 u = normalized(cross(e, n));
    return {u, cross(n, u), n};
  }

  std::array<double, 2> to_local(const Vec3& v) const { return {dot(v, u), dot(v, w)}; }
  Vec3 to_world(double a, double b) const { return a * u + b * w; }
};

struct Aabb {
  Vec3 lo{1e300, 1e300, 1e300};
  Vec3 hi{-1e300, -1e300, -1e300};

  void extend(const Vec3& p) {
    for (int k = 0; k < 3; ++k) {
      lo[k] = std::min(lo[k], p[k]);
      hi[k] = std::max(hi[k], p[k]);
    }
  }
  bool empty() const { return lo.x > hi.x; }
  Vec3 extent() const { return hi - lo; }
  double diagonal() const { return empty() ? 0.0 : norm(extent()); }
  double volume() const {
    const Vec3 e = extent();
    return empty() ? 0.0 : e.x * e.y * e.z;
  }
};

inline constexpr double kPi = 3.14159265358979323846;

}  // namespace potflow
