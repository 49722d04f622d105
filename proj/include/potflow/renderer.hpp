// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "potflow/error.hpp"
#include "potflow/laguerre.hpp"
#include "potflow/parallel.hpp"
#include "potflow/restricted_cell.hpp"
#include "potflow/rng.hpp"

namespace potflow {

struct Ray {
  Vec3 origin;
  Vec3 dir;  // unit length
  Vec3 at(double t) const { return origin + t * dir; }
};

struct Camera {
  Vec3 eye{0, -2, 0};
  Vec3 look_at{0, 0, 0};
  Vec3 up{0, 0, 1};
  double fov = 0.8;  // vertical, radians
  int width = 256;
  int height = 256;

  /// Ray through the centre of pixel (px, py); row 0 is the top.
  Ray ray(int px, int py) const {
    const Vec3 f = normalized(look_at - eye);
    const Vec3 r = normalized(cross(f, up));
    const Vec3 u = cross(r, f);
    const double half = std::tan(0.5 * fov);
    const double sx = (2.0 * (px + 0.5) / width - 1.0) * half * width / height;
    const double sy = (1.0 - 2.0 * (py + 0.5) / height) * half;
    return {eye, normalized(f + sx * r + sy * u)};
  }

  /// Focal length in pixels.
  double focal() const { return 0.5 * height / std::tan(0.5 * fov); }
};

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

struct Image {
  int width = 0, height = 0;
  std::vector<Rgb> pixels;  // row-major, top row first

  Image() = default;
  Image(int w, int h, Rgb fill = {}) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}
  Rgb& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  const Rgb& at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }

  std::string to_ppm() const {
    std::string out = "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
    for (const auto& p : pixels) {
      out.push_back(static_cast<char>(p.r));
      out.push_back(static_cast<char>(p.g));
      out.push_back(static_cast<char>(p.b));
    }
    return out;
  }

  void write_ppm(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    const std::string data = to_ppm();
    f.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!f) throw Error(ErrorCode::FrameError, "cannot write " + path);
  }

  static Image read_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    f >> magic >> w >> h >> maxval;
    if (!f || magic != "P6" || maxval != 255 || w <= 0 || h <= 0)
      throw Error(ErrorCode::FrameError, "not an 8-bit P6 file: " + path);
    f.get();
    Image img(w, h);
    std::vector<char> buf(static_cast<std::size_t>(w) * h * 3);
    f.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw Error(ErrorCode::FrameError, "truncated image: " + path);
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
      img.pixels[i] = {static_cast<std::uint8_t>(buf[3 * i]), static_cast<std::uint8_t>(buf[3 * i + 1]),
                       static_cast<std::uint8_t>(buf[3 * i + 2])};
    return img;
  }
};

/// Uniform grid over sphere bounding boxes, walked with a 3D DDA.
class SphereGrid {
 public:
  SphereGrid() = default;
  SphereGrid(std::span<const Vec3> centers, std::span<const double> radii, std::span<const std::int32_t> ids,
             const Aabb& bounds) {
    box_ = bounds;
    const Vec3 ext = bounds.extent();
    double rmean = 0.0;
    for (const auto i : ids) rmean += radii[static_cast<std::size_t>(i)];
    rmean = ids.empty() ? bounds.diagonal() : rmean / static_cast<double>(ids.size());
    h_ = std::max(2.0 * rmean, 1e-9 * bounds.diagonal());
    for (int k = 0; k < 3; ++k) dims_[k] = std::clamp(static_cast<int>(std::ceil(ext[k] / h_)), 1, 256);
    buckets_.resize(static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2]);
    for (const auto i : ids) {
      const auto u = static_cast<std::size_t>(i);
      const Vec3 r{radii[u], radii[u], radii[u]};
      const auto lo = cell_of(centers[u] - r), hi = cell_of(centers[u] + r);
      for (int z = lo[2]; z <= hi[2]; ++z)
        for (int y = lo[1]; y <= hi[1]; ++y)
          for (int x = lo[0]; x <= hi[0]; ++x) buckets_[flat({x, y, z})].push_back(i);
    }
  }

  /// Calls visit(bucket, t_lo, t_hi) for buckets pierced by the ray in
  /// increasing t over [t0, t1]; stops when visit returns true.
  template <typename Fn>
  void walk(const Ray& ray, double t0, double t1, Fn&& visit) const {
    if (buckets_.empty() || !(t1 > t0)) return;
    const Vec3 start = ray.at(t0);
    auto c = cell_of(start);
    std::array<int, 3> step{};
    Vec3 tmax, tdelta;
    for (int k = 0; k < 3; ++k) {
      const double d = ray.dir[k];
      if (d > 0) {
        step[k] = 1;
        tmax[k] = t0 + (box_.lo[k] + (c[k] + 1) * h_ - start[k]) / d;
        tdelta[k] = h_ / d;
      } else if (d < 0) {
        step[k] = -1;
        tmax[k] = t0 + (box_.lo[k] + c[k] * h_ - start[k]) / d;
        tdelta[k] = -h_ / d;
      } else {
        tmax[k] = tdelta[k] = std::numeric_limits<double>::infinity();
      }
    }
    double t = t0;
    for (;;) {
      const int k = tmax.x < tmax.y ? (tmax.x < tmax.z ? 0 : 2) : (tmax.y < tmax.z ? 1 : 2);
      const double t_next = std::min(tmax[k], t1);
      if (visit(std::span<const std::int32_t>(buckets_[flat(c)]), t, t_next)) return;
      if (tmax[k] >= t1) return;
      t = tmax[k];
      c[k] += step[k];
      if (c[k] < 0 || c[k] >= dims_[k]) return;
      tmax[k] += tdelta[k];
    }
  }

 private:
  std::array<int, 3> cell_of(const Vec3& q) const {
    std::array<int, 3> c{};
    for (int k = 0; k < 3; ++k)
      c[k] = std::clamp(static_cast<int>(std::floor((q[k] - box_.lo[k]) / h_)), 0, dims_[k] - 1);
    return c;
  }
  std::size_t flat(const std::array<int, 3>& c) const {
    return (static_cast<std::size_t>(c[2]) * dims_[1] + c[1]) * dims_[0] + c[0];
  }

  Aabb box_;
  double h_ = 1.0;
  std::array<int, 3> dims_{1, 1, 1};
  std::vector<std::vector<std::int32_t>> buckets_;
};

/// Immutable snapshot for rendering: unrestricted Laguerre cells for
/// traversal and restricted cells for the free surface.
struct RenderScene {
  const Domain* domain = nullptr;
  std::vector<Site> sites;
  std::vector<ConvexCell> cells;
  std::vector<RestrictedCell> restricted;
  std::vector<std::vector<std::int32_t>> neighbors;
  SpatialGrid site_grid;
  SphereGrid surface_grid;
  double psi_max = 0.0;
  double mean_radius = 0.0;

  static RenderScene build(std::span<const Vec3> x, std::span<const double> psi, const Domain& d,
                           int threads = 1) {
    RenderScene s;
    s.domain = &d;
    s.sites.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) s.sites[i] = {x[i], psi[i], 0.0, 0};
    DiagramOptions opt;
    opt.threads = threads;
    s.cells = build_diagram(s.sites, d, opt);
    s.restricted.resize(x.size());
    s.neighbors.resize(x.size());
    parallel_for(x.size(), threads, [&](std::size_t i) {
      s.restricted[i] = evaluate_cell(s.cells[i], Sphere{x[i], psi[i]}, d.tau);
      for (const auto& f : s.cells[i].facets)
        if (f.tag.is_site()) s.neighbors[i].push_back(f.tag.index);
    });
    s.site_grid = make_site_grid(s.sites, d);
    s.psi_max = DiagramInput::max_weight(s.sites);
    std::vector<Vec3> centers(x.begin(), x.end());
    std::vector<double> radii(x.size());
    std::vector<std::int32_t> surface;
    double rsum = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      radii[i] = std::sqrt(std::max(psi[i], 0.0));
      rsum += radii[i];
      if (s.restricted[i].free_surface_area > 0.0) surface.push_back(static_cast<std::int32_t>(i));
    }
    s.mean_radius = x.empty() ? 0.0 : rsum / static_cast<double>(x.size());
    s.surface_grid = SphereGrid(centers, radii, surface, d.bounds);
    return s;
  }

  double tau() const { return domain->tau; }

  /// Parameter interval where the ray is inside the domain.
  std::optional<std::array<double, 2>> clip_to_domain(const Ray& ray) const {
    double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
    for (const auto& h : domain->halfspaces) {
      const double dn = dot(h.n, ray.dir), s = h.signed_distance(ray.origin);
      if (dn == 0.0) {
        if (s > 0.0) return std::nullopt;
        continue;
      }
      const double t = -s / dn;
      if (dn < 0.0) t0 = std::max(t0, t);
      else t1 = std::min(t1, t);
    }
    if (!(t1 > t0)) return std::nullopt;
    return std::array<double, 2>{t0, t1};
  }

  /// True if x is no farther (in power distance) from site i than from any
  /// of its Laguerre neighbours, up to `slack`.
  bool power_member(std::size_t i, const Vec3& x, double slack) const {
    const double pi = norm2(x - sites[i].p) - sites[i].psi;
    for (const auto j : neighbors[i]) {
      const auto& sj = sites[static_cast<std::size_t>(j)];
      if (norm2(x - sj.p) - sj.psi < pi - slack) return false;
    }
    return true;
  }
};

struct Hit {
  std::int32_t cell = -1;
  double t = 0.0;
  explicit operator bool() const { return cell >= 0; }
};

/// Nearest entry into a surface sphere whose hit point belongs to the
/// sphere's own Laguerre cell.
inline Hit first_hit(const RenderScene& sc, const Ray& ray) {
  Hit best;
  const auto range = sc.clip_to_domain(ray);
  if (!range) return best;
  const double slack = sc.tau() * sc.domain->bounds.diagonal();
  sc.surface_grid.walk(ray, (*range)[0], (*range)[1], [&](std::span<const std::int32_t> ids, double, double t_hi) {
    for (const auto i : ids) {
      const Site& s = sc.sites[static_cast<std::size_t>(i)];
      const Vec3 oc = ray.origin - s.p;
      const double b = dot(oc, ray.dir), c = norm2(oc) - s.psi;
      const double disc = b * b - c;
      if (disc < 0.0) continue;
      const double t = -b - std::sqrt(disc);
      if (t < (*range)[0] || t > (*range)[1]) continue;
      if (best && (t > best.t || (t == best.t && i > best.cell))) continue;
      if (!sc.power_member(static_cast<std::size_t>(i), ray.at(t), slack)) continue;
      best = {i, t};
    }
    return best && best.t <= t_hi;
  });
  return best;
}

struct Interval {
  std::int32_t cell = -1;
  double t_enter = 0.0, t_exit = 0.0;
};

enum class TraverseMode { SurfaceOnly, Volume };

struct Traversal {
  std::vector<Interval> path;
  bool aborted = false;
  double fluid_length = 0.0;  // Σ of interval ∩ ball chords
};

namespace detail {

inline std::array<double, 2> ball_chord(const Ray& ray, const Site& s) {
  const Vec3 oc = ray.origin - s.p;
  const double b = dot(oc, ray.dir), c = norm2(oc) - s.psi;
  const double disc = b * b - c;
  if (disc <= 0.0) return {0.0, 0.0};
  const double r = std::sqrt(disc);
  return {-b - r, -b + r};
}

}  // namespace detail

/// Cell walk through the unrestricted diagram from where the ray enters the
/// domain. SurfaceOnly stops at the first interval carrying fluid.
inline Traversal traverse(const RenderScene& sc, const Ray& ray, TraverseMode mode = TraverseMode::Volume) {
  Traversal tr;
  const auto range = sc.clip_to_domain(ray);
  if (!range || sc.sites.empty()) return tr;
  const double t_end = (*range)[1];
  double t = (*range)[0];
  const double probe = std::min(1e-9 * sc.domain->bounds.diagonal(), 0.5 * (t_end - t));
  std::int32_t cell = locate_site(ray.at(t + probe), sc.sites, sc.site_grid, sc.psi_max);
  const std::size_t guard = 8 * sc.sites.size() + 8;
  for (std::size_t crossings = 0; cell >= 0; ++crossings) {
    if (crossings > guard) {
      tr.aborted = true;
      break;
    }
    const ConvexCell& c = sc.cells[static_cast<std::size_t>(cell)];
    double t_exit = t_end;
    NeighborTag exit_tag = NeighborTag::domain(-1);
    for (const auto& f : c.facets) {
      const double dn = dot(f.plane.n, ray.dir);
      if (dn <= 0.0) continue;
      const double tf = -f.plane.signed_distance(ray.origin) / dn;
      if (tf < t) continue;  // behind the current position
      if (tf < t_exit || (tf == t_exit && exit_tag.is_domain() && f.tag.is_site())) {
        t_exit = tf;
        exit_tag = f.tag;
      }
    }
    t_exit = std::min(std::max(t_exit, t), t_end);
    tr.path.push_back({cell, t, t_exit});
    const auto chord = detail::ball_chord(ray, sc.sites[static_cast<std::size_t>(cell)]);
    const double lo = std::max(chord[0], t), hi = std::min(chord[1], t_exit);
    if (hi > lo) {
      tr.fluid_length += hi - lo;
      if (mode == TraverseMode::SurfaceOnly) break;
    }
    t = t_exit;
    if (!exit_tag.is_site() || t >= t_end) break;
    cell = exit_tag.index;
  }
  return tr;
}

/// Cubic polynomial smooth minimum; deviates from min(a, b) by at most k/6.
inline double smooth_min(double a, double b, double k) {
  if (k <= 0.0) return std::min(a, b);
  const double h = std::max(k - std::abs(a - b), 0.0) / k;
  return std::min(a, b) - h * h * h * k / 6.0;
}

/// Smooth union of sphere distances over the power cell owning x and its
/// Laguerre neighbours.
inline double smooth_sdf(const RenderScene& sc, const Vec3& x, double k) {
  const std::int32_t owner = locate_site(x, sc.sites, sc.site_grid, sc.psi_max);
  if (owner < 0) return std::numeric_limits<double>::infinity();
  auto dist = [&](std::int32_t j) {
    const Site& s = sc.sites[static_cast<std::size_t>(j)];
    return distance(x, s.p) - std::sqrt(std::max(s.psi, 0.0));
  };
  double d = dist(owner);
  for (const auto j : sc.neighbors[static_cast<std::size_t>(owner)]) d = smooth_min(d, dist(j), k);
  return d;
}

enum class RenderMode { Raw, Smooth, Depth };

struct RenderOptions {
  RenderMode mode = RenderMode::Raw;
  double blend = -1.0;  // smooth-union radius; negative means 0.5 × mean sphere radius
  Rgb background{30, 30, 40};
  Rgb abort_color{255, 0, 255};
  Vec3 light{-0.4, -0.5, 0.75};
  int threads = 1;
};

struct RenderStats {
  std::size_t hits = 0;
  std::size_t aborted = 0;
};

namespace detail {

inline Rgb shade(const Vec3& normal, const Vec3& view, const Vec3& light, bool fresnel) {
  const Vec3 l = normalized(light);
  const double lambert = std::max(0.0, dot(normal, l));
  double c = 0.15 + 0.85 * lambert;
  Vec3 base{0.25, 0.55, 0.9};
  Vec3 col = c * base;
  if (fresnel) {
    const double cos_t = std::clamp(-dot(normal, view), 0.0, 1.0);
    const double f = 0.02 + 0.98 * std::pow(1.0 - cos_t, 5.0);
    col = (1.0 - f) * col + f * Vec3{1, 1, 1};
  }
  auto to8 = [](double v) { return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(v, 0.0, 1.0))); };
  return {to8(col.x), to8(col.y), to8(col.z)};
}

}  // namespace detail

inline Image render(const RenderScene& sc, const Camera& cam, const RenderOptions& opt = {},
                    RenderStats* stats = nullptr) {
  Image img(cam.width, cam.height, opt.background);
  const std::size_t npx = static_cast<std::size_t>(cam.width) * cam.height;
  const double k = opt.blend >= 0.0 ? opt.blend : 0.5 * sc.mean_radius;
  const double eps = 1e-4 * sc.domain->bounds.diagonal();
  std::vector<double> depth(opt.mode == RenderMode::Depth ? npx : 0, 0.0);
  std::vector<std::uint8_t> hit(npx, 0), abort(npx, 0);

  parallel_for(npx, opt.threads, [&](std::size_t p) {
    const int px = static_cast<int>(p % cam.width), py = static_cast<int>(p / cam.width);
    const Ray ray = cam.ray(px, py);
    if (opt.mode == RenderMode::Depth) {
      const Traversal tr = traverse(sc, ray, TraverseMode::Volume);
      if (tr.aborted) abort[p] = 1;
      depth[p] = tr.fluid_length;
      hit[p] = tr.fluid_length > 0.0;
      return;
    }
    const Hit h = first_hit(sc, ray);
    if (opt.mode == RenderMode::Raw) {
      if (!h) return;
      const Site& s = sc.sites[static_cast<std::size_t>(h.cell)];
      hit[p] = 1;
      img.pixels[p] = detail::shade(normalized(ray.at(h.t) - s.p), ray.dir, opt.light, false);
      return;
    }
    // Smooth: sphere-trace from just before the raw hit, or from the
    // domain entry when the raw ray misses.
    const auto range = sc.clip_to_domain(ray);
    if (!range) return;
    double t = h ? std::max((*range)[0], h.t - k) : (*range)[0];
    bool found = false;
    for (int it = 0; it < 64 && t <= (*range)[1]; ++it) {
      const double d = smooth_sdf(sc, ray.at(t), k);
      if (d < eps) {
        found = true;
        break;
      }
      t += d;
    }
    if (!found && h) {
      t = h.t;
      found = true;
    }
    if (!found) return;
    const Vec3 x = ray.at(t);
    const Vec3 n{smooth_sdf(sc, x + Vec3{eps, 0, 0}, k) - smooth_sdf(sc, x - Vec3{eps, 0, 0}, k),
                 smooth_sdf(sc, x + Vec3{0, eps, 0}, k) - smooth_sdf(sc, x - Vec3{0, eps, 0}, k),
                 smooth_sdf(sc, x + Vec3{0, 0, eps}, k) - smooth_sdf(sc, x - Vec3{0, 0, eps}, k)};
    hit[p] = 1;
    img.pixels[p] = detail::shade(norm(n) > 0.0 ? normalized(n) : -ray.dir, ray.dir, opt.light, true);
  });

  if (opt.mode == RenderMode::Depth) {
    double dmax = 0.0;
    for (const double d : depth) dmax = std::max(dmax, d);
    for (std::size_t p = 0; p < npx; ++p) {
      if (!hit[p]) continue;
      const auto v = static_cast<std::uint8_t>(std::lround(255.0 * depth[p] / dmax));
      img.pixels[p] = {v, v, v};
    }
  }
  RenderStats st;
  for (std::size_t p = 0; p < npx; ++p) {
    if (abort[p]) img.pixels[p] = opt.abort_color;
    st.hits += hit[p];
    st.aborted += abort[p];
  }
  if (stats) *stats = st;
  return img;
}

struct SurfaceSample {
  Vec3 point;
  Vec3 normal;
};

/// Area-uniform samples over all free-surface patches. Cells whose patch
/// covers less than 1e-6 of their sphere are skipped.
inline std::vector<SurfaceSample> sample_surface(const RenderScene& sc, std::size_t count, std::uint64_t seed,
                                                 std::size_t* skipped = nullptr) {
  std::vector<double> cdf;
  std::vector<std::size_t> owner;
  double total = 0.0;
  std::size_t skip = 0;
  for (std::size_t i = 0; i < sc.sites.size(); ++i) {
    const double K = sc.restricted[i].free_surface_area;
    if (K <= 0.0) continue;
    if (K / (4.0 * kPi * sc.sites[i].psi) < 1e-6) {
      ++skip;
      continue;
    }
    total += K;
    cdf.push_back(total);
    owner.push_back(i);
  }
  if (skipped) *skipped = skip;
  std::vector<SurfaceSample> out;
  if (owner.empty()) return out;
  out.reserve(count);
  CounterRng rng(seed);
  while (out.size() < count) {
    const double u = rng.uniform() * total;
    const std::size_t k = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    const std::size_t i = owner[std::min(k, owner.size() - 1)];
    const Site& s = sc.sites[i];
    const double R = std::sqrt(s.psi);
    for (;;) {
      const Vec3 n = rng.unit_vector();
      const Vec3 x = s.p + R * n;
      if (sc.cells[i].contains(x, 0.0)) {
        out.push_back({x, n});
        break;
      }
    }
  }
  return out;
}

}  // namespace potflow
