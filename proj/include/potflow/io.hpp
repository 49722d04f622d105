// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "potflow/error.hpp"
#include "potflow/fluid_sim.hpp"
#include "potflow/renderer.hpp"

namespace potflow {

/// Initial particle block: a lattice filling a box or a ball.
struct Emitter {
  std::string shape = "box";  // "box" | "ball"
  Vec3 lo, hi;                // box
  Vec3 center;                // ball
  double radius = 0.0;
  double spacing = 0.05;
  std::int32_t phase = 0;
  Vec3 velocity;
  double radial_speed = 0.0;  // outward speed at the rim (inscribed sphere for boxes)
  double jitter = 0.0;        // uniform position noise, fraction of spacing
};

struct OutputSettings {
  std::string directory = "out";
  int frame_stride = 1;
  int steps = 100;
};

struct SceneConfig {
  std::optional<std::array<Vec3, 2>> box;  // either a box ...
  std::vector<Plane> halfspaces;           // ... or explicit half-spaces
  std::vector<Phase> phases;
  std::vector<Emitter> emitters;
  SimParams params;
  OutputSettings output;
  std::optional<Camera> camera;
  std::uint64_t seed = 1;
};

namespace detail {

using nlohmann::json;

/// Field-path aware accessors; every error names the offending field.
class JsonReader {
 public:
  JsonReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {}

  bool has(const char* key) const { return j_.is_object() && j_.contains(key); }
  JsonReader at(const char* key) const {
    if (!has(key)) fail(field(key), "missing required field");
    return {j_.at(key), field(key)};
  }
  JsonReader at(std::size_t i) const { return {j_.at(i), path_ + "[" + std::to_string(i) + "]"}; }
  std::size_t size() const {
    if (!j_.is_array()) fail(path_, "expected an array");
    return j_.size();
  }

  double number() const {
    if (!j_.is_number()) fail(path_, "expected a number");
    return j_.get<double>();
  }
  std::int64_t integer() const {
    if (!j_.is_number_integer()) fail(path_, "expected an integer");
    return j_.get<std::int64_t>();
  }
  bool boolean() const {
    if (!j_.is_boolean()) fail(path_, "expected true or false");
    return j_.get<bool>();
  }
  std::string string() const {
    if (!j_.is_string()) fail(path_, "expected a string");
    return j_.get<std::string>();
  }
  Vec3 vec3() const {
    if (!j_.is_array() || j_.size() != 3) fail(path_, "expected [x, y, z]");
    return {at(std::size_t{0}).number(), at(1).number(), at(2).number()};
  }

  double number_or(const char* key, double fallback) const { return has(key) ? at(key).number() : fallback; }
  Vec3 vec3_or(const char* key, const Vec3& fallback) const { return has(key) ? at(key).vec3() : fallback; }

  const std::string& path() const { return path_; }
  [[noreturn]] static void fail(const std::string& field, const std::string& msg) {
    throw Error(ErrorCode::ConfigError, field + ": " + msg);
  }

 private:
  std::string field(const char* key) const { return path_.empty() ? key : path_ + "." + key; }
  const json& j_;
  std::string path_;
};

inline json to_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

}  // namespace detail

inline SceneConfig parse_config(const std::string& text) {
  using detail::JsonReader;
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::ConfigError, e.what());
  }
  const JsonReader root(doc, "");
  SceneConfig cfg;

  const JsonReader dom = root.at("domain");
  if (dom.has("box")) {
    const JsonReader b = dom.at("box");
    cfg.box = std::array<Vec3, 2>{b.at("lo").vec3(), b.at("hi").vec3()};
    for (int k = 0; k < 3; ++k)
      if (!((*cfg.box)[1][k] > (*cfg.box)[0][k])) JsonReader::fail(b.path(), "hi must exceed lo on every axis");
  } else if (dom.has("halfspaces")) {
    const JsonReader hs = dom.at("halfspaces");
    for (std::size_t i = 0; i < hs.size(); ++i) {
      const Vec3 n = hs.at(i).at("normal").vec3();
      if (!(norm(n) > 0.0)) JsonReader::fail(hs.at(i).path() + ".normal", "must be non-zero");
      const double s = 1.0 / norm(n);
      cfg.halfspaces.push_back({s * n, s * hs.at(i).at("offset").number()});
    }
  } else {
    JsonReader::fail("domain", "needs either \"box\" or \"halfspaces\"");
  }

  const JsonReader ph = root.at("phases");
  for (std::size_t i = 0; i < ph.size(); ++i) {
    const JsonReader p = ph.at(i);
    Phase phase;
    phase.id = static_cast<std::int32_t>(p.at("id").integer());
    phase.density = p.at("density").number();
    phase.viscosity = p.number_or("viscosity", 0.0);
    phase.surface_tension = p.number_or("surface_tension", 0.0);
    if (p.has("boundary_affinity")) {
      const JsonReader a = p.at("boundary_affinity");
      for (std::size_t k = 0; k < a.size(); ++k) phase.boundary_affinity.push_back(a.at(k).number());
    }
    if (!(phase.density > 0.0)) JsonReader::fail(p.path() + ".density", "must be > 0");
    if (phase.viscosity < 0.0) JsonReader::fail(p.path() + ".viscosity", "must be >= 0");
    if (phase.surface_tension < 0.0) JsonReader::fail(p.path() + ".surface_tension", "must be >= 0");
    for (const auto& q : cfg.phases)
      if (q.id == phase.id) JsonReader::fail(p.path() + ".id", "duplicate phase id " + std::to_string(phase.id));
    cfg.phases.push_back(phase);
  }
  auto check_phase = [&](std::int64_t id, const std::string& field) {
    for (const auto& q : cfg.phases)
      if (q.id == id) return static_cast<std::int32_t>(id);
    JsonReader::fail(field, "unknown phase id " + std::to_string(id));
  };

  const JsonReader em = root.at("emitters");
  for (std::size_t i = 0; i < em.size(); ++i) {
    const JsonReader e = em.at(i);
    Emitter x;
    x.shape = e.at("shape").string();
    if (x.shape == "box") {
      x.lo = e.at("lo").vec3();
      x.hi = e.at("hi").vec3();
      x.radial_speed = e.number_or("radial_speed", 0.0);
    } else if (x.shape == "ball") {
      x.center = e.at("center").vec3();
      x.radius = e.at("radius").number();
      x.radial_speed = e.number_or("radial_speed", 0.0);
    } else {
      JsonReader::fail(e.path() + ".shape", "expected \"box\" or \"ball\"");
    }
    x.spacing = e.at("spacing").number();
    if (!(x.spacing > 0.0)) JsonReader::fail(e.path() + ".spacing", "must be > 0");
    x.phase = check_phase(e.at("phase").integer(), e.path() + ".phase");
    x.velocity = e.vec3_or("velocity", {});
    x.jitter = e.number_or("jitter", 0.0);
    cfg.emitters.push_back(x);
  }

  if (root.has("params")) {
    const JsonReader p = root.at("params");
    SimParams& s = cfg.params;
    s.dt = p.number_or("dt", s.dt);
    s.epsilon = p.number_or("epsilon", s.epsilon);
    s.gravity = p.vec3_or("gravity", s.gravity);
    s.ot_tolerance = p.number_or("ot_tolerance", s.ot_tolerance);
    s.cg_tolerance = p.number_or("cg_tolerance", s.cg_tolerance);
    if (p.has("max_newton")) s.max_newton = static_cast<int>(p.at("max_newton").integer());
    if (p.has("pressure")) s.pressure = p.at("pressure").boolean();
    if (p.has("boundary")) s.boundary = p.at("boundary").boolean();
    if (p.has("viscosity_pairs")) {
      const JsonReader vp = p.at("viscosity_pairs");
      for (std::size_t i = 0; i < vp.size(); ++i) {
        const JsonReader q = vp.at(i);
        s.viscosity_pairs.push_back({check_phase(q.at("a").integer(), q.path() + ".a"),
                                     check_phase(q.at("b").integer(), q.path() + ".b"), q.at("mu").number()});
      }
    }
    if (!(s.dt > 0.0)) JsonReader::fail("params.dt", "must be > 0");
    if (!(s.epsilon > 0.0)) JsonReader::fail("params.epsilon", "must be > 0");
    if (!(s.ot_tolerance > 0.0)) JsonReader::fail("params.ot_tolerance", "must be > 0");
  }

  if (root.has("output")) {
    const JsonReader o = root.at("output");
    if (o.has("directory")) cfg.output.directory = o.at("directory").string();
    if (o.has("frame_stride")) cfg.output.frame_stride = static_cast<int>(o.at("frame_stride").integer());
    if (o.has("steps")) cfg.output.steps = static_cast<int>(o.at("steps").integer());
    if (cfg.output.frame_stride < 1) JsonReader::fail("output.frame_stride", "must be >= 1");
    if (cfg.output.steps < 0) JsonReader::fail("output.steps", "must be >= 0");
  }

  if (root.has("camera")) {
    const JsonReader c = root.at("camera");
    Camera cam;
    cam.eye = c.at("eye").vec3();
    cam.look_at = c.at("look_at").vec3();
    cam.up = c.vec3_or("up", cam.up);
    cam.fov = c.number_or("fov", cam.fov);
    if (c.has("width")) cam.width = static_cast<int>(c.at("width").integer());
    if (c.has("height")) cam.height = static_cast<int>(c.at("height").integer());
    if (!(cam.fov > 0.0 && cam.fov < kPi)) JsonReader::fail("camera.fov", "must be in (0, pi)");
    if (cam.width <= 0 || cam.height <= 0) JsonReader::fail("camera", "resolution must be positive");
    cfg.camera = cam;
  }

  if (root.has("seed")) cfg.seed = static_cast<std::uint64_t>(root.at("seed").integer());
  return cfg;
}

inline SceneConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::ConfigError, "cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

/// Canonical form: every field written, keys sorted, two-space indent.
inline std::string save_config(const SceneConfig& cfg) {
  using detail::to_json;
  nlohmann::json j;
  if (cfg.box) {
    j["domain"]["box"] = {{"lo", to_json((*cfg.box)[0])}, {"hi", to_json((*cfg.box)[1])}};
  } else {
    auto& hs = j["domain"]["halfspaces"] = nlohmann::json::array();
    for (const auto& h : cfg.halfspaces) hs.push_back({{"normal", to_json(h.n)}, {"offset", h.d}});
  }
  j["phases"] = nlohmann::json::array();
  for (const auto& p : cfg.phases)
    j["phases"].push_back({{"id", p.id},
                           {"density", p.density},
                           {"viscosity", p.viscosity},
                           {"surface_tension", p.surface_tension},
                           {"boundary_affinity", p.boundary_affinity}});
  j["emitters"] = nlohmann::json::array();
  for (const auto& e : cfg.emitters) {
    nlohmann::json x{{"shape", e.shape},       {"spacing", e.spacing}, {"phase", e.phase},
                     {"velocity", to_json(e.velocity)}, {"jitter", e.jitter}};
    if (e.shape == "box") {
      x["lo"] = to_json(e.lo);
      x["hi"] = to_json(e.hi);
      x["radial_speed"] = e.radial_speed;
    } else {
      x["center"] = to_json(e.center);
      x["radius"] = e.radius;
      x["radial_speed"] = e.radial_speed;
    }
    j["emitters"].push_back(x);
  }
  const SimParams& s = cfg.params;
  j["params"] = {{"dt", s.dt},
                 {"epsilon", s.epsilon},
                 {"gravity", to_json(s.gravity)},
                 {"ot_tolerance", s.ot_tolerance},
                 {"cg_tolerance", s.cg_tolerance},
                 {"max_newton", s.max_newton},
                 {"pressure", s.pressure},
                 {"boundary", s.boundary},
                 {"viscosity_pairs", nlohmann::json::array()}};
  for (const auto& v : s.viscosity_pairs) j["params"]["viscosity_pairs"].push_back({{"a", v.a}, {"b", v.b}, {"mu", v.mu}});
  j["output"] = {{"directory", cfg.output.directory}, {"frame_stride", cfg.output.frame_stride},
                 {"steps", cfg.output.steps}};
  if (cfg.camera) {
    const Camera& c = *cfg.camera;
    j["camera"] = {{"eye", to_json(c.eye)}, {"look_at", to_json(c.look_at)}, {"up", to_json(c.up)},
                   {"fov", c.fov},          {"width", c.width},             {"height", c.height}};
  }
  j["seed"] = cfg.seed;
  return j.dump(2) + "\n";
}

inline Domain make_domain(const SceneConfig& cfg) {
  return cfg.box ? Domain::box((*cfg.box)[0], (*cfg.box)[1]) : Domain::from_halfspaces(cfg.halfspaces);
}

inline FluidModel make_model(const SceneConfig& cfg) {
  FluidModel m;
  m.domain = make_domain(cfg);
  m.phases = cfg.phases;
  m.params = cfg.params;
  for (const auto& p : m.phases)
    if (p.boundary_affinity.size() > 1 && p.boundary_affinity.size() != m.domain.halfspaces.size())
      throw Error(ErrorCode::ConfigError, "phases[id=" + std::to_string(p.id) +
                                              "].boundary_affinity: needs 1 or one entry per half-space");
  return m;
}

/// Particles from every emitter; fails if any lands outside the domain.
inline FluidState make_initial_state(const SceneConfig& cfg, const Domain& domain) {
  FluidState s;
  CounterRng rng(cfg.seed, 0x656d6974);
  for (std::size_t e = 0; e < cfg.emitters.size(); ++e) {
    const Emitter& em = cfg.emitters[e];
    const std::size_t first = s.size();
    if (em.shape == "box") {
      add_block(s, em.lo, em.hi, em.spacing, em.phase, em.velocity);
      // Radial speed is reached on the box's inscribed sphere.
      const Vec3 c = 0.5 * (em.lo + em.hi);
      const double r = 0.5 * std::min({em.hi.x - em.lo.x, em.hi.y - em.lo.y, em.hi.z - em.lo.z});
      for (std::size_t i = first; i < s.size() && em.radial_speed != 0.0; ++i)
        s.v[i] += (em.radial_speed / r) * (s.x[i] - c);
    } else {
      add_ball(s, em.center, em.radius, em.spacing, em.phase, em.velocity, em.radial_speed);
    }
    for (std::size_t i = first; i < s.size(); ++i) {
      if (em.jitter > 0.0)
        s.x[i] += em.jitter * em.spacing * Vec3{rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)};
      if (!domain.contains(s.x[i]))
        throw Error(ErrorCode::ConfigError, "emitters[" + std::to_string(e) + "]: particle outside the domain");
    }
  }
  if (s.size() == 0) throw Error(ErrorCode::ConfigError, "emitters: no particles generated");
  return s;
}

// ---------------------------------------------------------------------------
// Frames

inline constexpr std::uint32_t kFrameVersion = 1;

enum FrameFlags : std::uint32_t {
  kFrameNotConverged = 1u << 0,
};

struct FrameRecord {
  std::uint64_t step = 0;
  double time = 0.0;
  std::vector<Vec3> positions;
  std::vector<Vec3> velocities;
  std::vector<double> psi;
  std::vector<double> volumes;
  std::vector<double> free_surface;
  std::vector<std::int32_t> phase;
  double worst_rel_error = 0.0;
  std::uint32_t newton_iters = 0;
  std::uint32_t flags = 0;
  double wall_ms = 0.0;

  std::size_t size() const { return positions.size(); }
};

/// Frame for the state after a step. With `deterministic`, the wall time is
/// stored as zero so identical runs give identical files.
inline FrameRecord make_frame(const FluidState& s, const StepReport& r, bool deterministic) {
  FrameRecord f;
  f.step = s.step;
  f.time = s.time;
  f.positions = s.x;
  f.velocities = s.v;
  f.psi = s.psi;
  f.phase = s.phase;
  for (const auto& c : s.cells) {
    f.volumes.push_back(c.volume);
    f.free_surface.push_back(c.free_surface_area);
  }
  f.worst_rel_error = r.worst_rel_error;
  f.newton_iters = static_cast<std::uint32_t>(r.newton_iters);
  f.flags = r.converged ? 0u : kFrameNotConverged;
  f.wall_ms = deterministic ? 0.0 : r.total_ms;
  return f;
}

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int k = 0; k < 4; ++k) buf.push_back(static_cast<unsigned char>(v >> (8 * k)));
  }
  void u64(std::uint64_t v) {
    for (int k = 0; k < 8; ++k) buf.push_back(static_cast<unsigned char>(v >> (8 * k)));
  }
  void f64(double v) {
    std::uint64_t b;
    std::memcpy(&b, &v, 8);
    u64(b);
  }
  std::vector<unsigned char> buf;
};

class ByteReader {
 public:
  ByteReader(const std::vector<unsigned char>& b, std::size_t end) : b_(b), end_(end) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(b_[pos_++]) << (8 * k);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(b_[pos_++]) << (8 * k);
    return v;
  }
  double f64() {
    const std::uint64_t u = u64();
    double v;
    std::memcpy(&v, &u, 8);
    return v;
  }
  std::size_t remaining() const { return end_ - pos_; }

 private:
  void need(std::size_t k) const {
    if (pos_ + k > end_) throw Error(ErrorCode::FrameError, "frame shorter than its header declares");
  }
  const std::vector<unsigned char>& b_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(const unsigned char* data, std::size_t n) {
  uLong c = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    c = crc32(c, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(c);
}

}  // namespace detail

/// Little-endian layout: "POTF", u32 version, u64 n, u64 step, f64 time,
/// positions (3n), velocities (3n), psi, volumes, free-surface areas and
/// phase ids (n each, all f64), then worst error f64, Newton iterations
/// u32, flags u32, wall ms f64, and a CRC32 of everything before it.
inline std::vector<unsigned char> encode_frame(const FrameRecord& f) {
  const std::size_t n = f.size();
  if (f.velocities.size() != n || f.psi.size() != n || f.volumes.size() != n || f.free_surface.size() != n ||
      f.phase.size() != n)
    throw Error(ErrorCode::FrameError, "frame arrays differ in length");
  detail::ByteWriter w;
  w.buf = {'P', 'O', 'T', 'F'};
  w.u32(kFrameVersion);
  w.u64(n);
  w.u64(f.step);
  w.f64(f.time);
  for (const auto& v : f.positions)
    for (int k = 0; k < 3; ++k) w.f64(v[k]);
  for (const auto& v : f.velocities)
    for (int k = 0; k < 3; ++k) w.f64(v[k]);
  for (const double x : f.psi) w.f64(x);
  for (const double x : f.volumes) w.f64(x);
  for (const double x : f.free_surface) w.f64(x);
  for (const auto x : f.phase) w.f64(static_cast<double>(x));
  w.f64(f.worst_rel_error);
  w.u32(f.newton_iters);
  w.u32(f.flags);
  w.f64(f.wall_ms);
  w.u32(detail::crc32_of(w.buf.data(), w.buf.size()));
  return std::move(w.buf);
}

inline FrameRecord decode_frame(const std::vector<unsigned char>& b) {
  if (b.size() < 4) throw Error(ErrorCode::CrcError, "frame too short for a checksum");
  const std::size_t body = b.size() - 4;
  std::uint32_t stored = 0;
  for (int k = 0; k < 4; ++k) stored |= static_cast<std::uint32_t>(b[body + k]) << (8 * k);
  if (detail::crc32_of(b.data(), body) != stored) throw Error(ErrorCode::CrcError, "checksum mismatch");
  if (body < 4 || std::memcmp(b.data(), "POTF", 4) != 0) throw Error(ErrorCode::FrameError, "bad magic");
  detail::ByteReader r(b, body);
  r.u32();  // magic
  const std::uint32_t version = r.u32();
  if (version != kFrameVersion) throw Error(ErrorCode::FrameError, "unsupported version " + std::to_string(version));
  FrameRecord f;
  const std::uint64_t n = r.u64();
  if (n > r.remaining() / 80) throw Error(ErrorCode::FrameError, "particle count exceeds payload");
  f.step = r.u64();
  f.time = r.f64();
  f.positions.resize(n);
  f.velocities.resize(n);
  for (auto& v : f.positions)
    for (int k = 0; k < 3; ++k) v[k] = r.f64();
  for (auto& v : f.velocities)
    for (int k = 0; k < 3; ++k) v[k] = r.f64();
  for (auto* a : {&f.psi, &f.volumes, &f.free_surface}) {
    a->resize(n);
    for (auto& x : *a) x = r.f64();
  }
  f.phase.resize(n);
  for (auto& x : f.phase) x = static_cast<std::int32_t>(r.f64());
  f.worst_rel_error = r.f64();
  f.newton_iters = r.u32();
  f.flags = r.u32();
  f.wall_ms = r.f64();
  if (r.remaining() != 0) throw Error(ErrorCode::FrameError, "trailing bytes after footer");
  return f;
}

inline void write_frame(const std::string& path, const FrameRecord& f) {
  const auto bytes = encode_frame(f);
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::FrameError, "cannot write " + path);
}

inline FrameRecord read_frame(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::FrameError, "cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_frame(bytes);
}

inline std::string frame_name(std::uint64_t step) {
  std::ostringstream ss;
  ss << "frame_" << std::setw(6) << std::setfill('0') << step << ".potf";
  return ss.str();
}

// ---------------------------------------------------------------------------
// Stats

inline constexpr const char* kStatsHeader =
    "step,worst_rel_error,newton_iters,volume_sum,kinetic_energy,free_surface_area,wall_ms,flagged";

inline std::string stats_row(const StepReport& r, bool deterministic) {
  std::ostringstream ss;
  ss << std::setprecision(17) << r.step << ',' << r.worst_rel_error << ',' << r.newton_iters << ',' << r.volume_sum
     << ',' << r.kinetic_energy << ',' << r.free_surface_area << ',' << (deterministic ? 0.0 : r.total_ms) << ','
     << (r.converged ? 0 : 1);
  return ss.str();
}

}  // namespace potflow
