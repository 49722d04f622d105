// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>

#include "potflow/io.hpp"

using namespace potflow;

namespace {

const char* kMinimal = R"({
  "domain": {"box": {"lo": [0, 0, 0], "hi": [1, 1, 1]}},
  "phases": [{"id": 3, "density": 2.0}],
  "emitters": [{"shape": "box", "lo": [0, 0, 0], "hi": [1, 1, 1], "spacing": 1.0, "phase": 3}]
})";

std::string config_error(const std::string& text) {
  try {
    parse_config(text);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ConfigError);
    return e.what();
  }
  ADD_FAILURE() << "expected a ConfigError";
  return {};
}

std::string replace(std::string s, const std::string& from, const std::string& to) {
  const auto at = s.find(from);
  EXPECT_NE(at, std::string::npos);
  return s.replace(at, from.size(), to);
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("potflow_test_" + name);
}

FrameRecord small_frame() {
  const SceneConfig cfg = parse_config(replace(kMinimal, "\"spacing\": 1.0", "\"spacing\": 0.25"));
  const FluidModel m = make_model(cfg);
  FluidState s = make_initial_state(cfg, m.domain);
  for (std::size_t i = 0; i < s.size(); ++i) s.v[i] = {0.1 * double(i), -1.0, 3.5};
  const auto st = project(s, m);
  StepReport r;
  r.worst_rel_error = st.worst_rel_error;
  r.newton_iters = st.newton_iters;
  r.converged = st.converged();
  r.total_ms = 12.5;
  return make_frame(s, r, false);
}

}  // namespace

TEST(Config, MinimalSceneParses) {
  const SceneConfig cfg = parse_config(kMinimal);
  ASSERT_TRUE(cfg.box);
  ASSERT_EQ(cfg.phases.size(), 1u);
  EXPECT_EQ(cfg.phases[0].id, 3);
  const FluidModel m = make_model(cfg);
  const FluidState s = make_initial_state(cfg, m.domain);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_DOUBLE_EQ(s.x[0].x, 0.5);
  EXPECT_DOUBLE_EQ(s.nu[0], 1.0);
}

TEST(Config, UnknownPhaseNamesTheField) {
  const auto msg = config_error(replace(kMinimal, "\"phase\": 3", "\"phase\": 4"));
  EXPECT_NE(msg.find("emitters[0].phase"), std::string::npos) << msg;
}

TEST(Config, MissingFieldNamesTheField) {
  const auto msg = config_error(replace(kMinimal, "\"density\": 2.0", "\"viscosity\": 2.0"));
  EXPECT_NE(msg.find("phases[0].density"), std::string::npos) << msg;
}

TEST(Config, WrongTypeNamesTheField) {
  const auto msg = config_error(replace(kMinimal, "\"hi\": [1, 1, 1]}}", "\"hi\": [1, 1]}}"));
  EXPECT_NE(msg.find("domain.box.hi"), std::string::npos) << msg;
}

TEST(Config, SyntaxErrorReportsLine) {
  const auto msg = config_error(replace(kMinimal, "\"density\": 2.0}", "\"density\": 2.0,,}"));
  EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
}

TEST(Config, ParticleOutsideDomainRejected) {
  const SceneConfig cfg = parse_config(replace(kMinimal, "\"lo\": [0, 0, 0], \"hi\": [1, 1, 1], \"spacing\"",
                                               "\"lo\": [0.6, 0, 0], \"hi\": [1.6, 1, 1], \"spacing\""));
  const FluidModel m = make_model(cfg);
  EXPECT_THROW(make_initial_state(cfg, m.domain), Error);
}

TEST(Config, HalfspaceDomainIsNormalised) {
  const std::string text = replace(kMinimal, R"("box": {"lo": [0, 0, 0], "hi": [1, 1, 1]})",
                                   R"("halfspaces": [
    {"normal": [2, 0, 0], "offset": 2}, {"normal": [-1, 0, 0], "offset": 0},
    {"normal": [0, 1, 0], "offset": 1}, {"normal": [0, -1, 0], "offset": 0},
    {"normal": [0, 0, 1], "offset": 1}, {"normal": [0, 0, -1], "offset": 0}])");
  const SceneConfig cfg = parse_config(text);
  ASSERT_EQ(cfg.halfspaces.size(), 6u);
  EXPECT_DOUBLE_EQ(cfg.halfspaces[0].n.x, 1.0);
  EXPECT_DOUBLE_EQ(cfg.halfspaces[0].d, 1.0);
  EXPECT_NEAR(cell_volume_convex(make_model(cfg).domain.cell), 1.0, 1e-12);
}

TEST(Config, BundledScenesRoundTripCanonically) {
  for (const char* name : {"dam_break", "splash", "zero_g_blob"}) {
    SCOPED_TRACE(name);
    const std::string path = std::string(POTFLOW_SOURCE_DIR) + "/scenes/" + name + ".json";
    const SceneConfig a = load_config(path);
    const std::string first = save_config(a);
    const std::string second = save_config(parse_config(first));
    EXPECT_EQ(first, second);
  }
}

TEST(Config, DamBreakHasTwoThousandCells) {
  const SceneConfig cfg = load_config(std::string(POTFLOW_SOURCE_DIR) + "/scenes/dam_break.json");
  const FluidModel m = make_model(cfg);
  EXPECT_EQ(make_initial_state(cfg, m.domain).size(), 2000u);
}

TEST(Frame, RoundTripIsBitExact) {
  const FrameRecord f = small_frame();
  const auto path = temp_file("roundtrip.potf");
  write_frame(path.string(), f);
  const FrameRecord g = read_frame(path.string());
  EXPECT_EQ(encode_frame(f), encode_frame(g));
  EXPECT_EQ(g.size(), 64u);
  EXPECT_EQ(std::memcmp(&g.wall_ms, &f.wall_ms, sizeof(double)), 0);
  std::filesystem::remove(path);
}

TEST(Frame, LayoutIsLittleEndianWithHeaderFields) {
  const FrameRecord f = small_frame();
  const auto b = encode_frame(f);
  EXPECT_EQ(b.size(), 4 + 4 + 8 + 8 + 8 + f.size() * 8 * 10 + 8 + 4 + 4 + 8 + 4);
  EXPECT_EQ(std::string(b.begin(), b.begin() + 4), "POTF");
  EXPECT_EQ(b[4], kFrameVersion);
  EXPECT_EQ(b[8], 64);
  EXPECT_EQ(b[9], 0);
}

TEST(Frame, TruncationGivesCrcError) {
  auto b = encode_frame(small_frame());
  b.resize(b.size() - 17);
  try {
    decode_frame(b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::CrcError);
  }
}

TEST(Frame, FlippedBitGivesCrcError) {
  auto b = encode_frame(small_frame());
  b[100] ^= 0x10;
  try {
    decode_frame(b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::CrcError);
  }
}

TEST(Frame, BadMagicAndVersionGiveFrameError) {
  for (int which = 0; which < 2; ++which) {
    auto b = encode_frame(small_frame());
    b[which == 0 ? 0 : 4] = 'X';
    const std::size_t body = b.size() - 4;
    const std::uint32_t c = detail::crc32_of(b.data(), body);
    for (int k = 0; k < 4; ++k) b[body + k] = static_cast<unsigned char>(c >> (8 * k));
    try {
      decode_frame(b);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::FrameError);
    }
  }
}

TEST(Frame, DeterministicModeZeroesWallTime) {
  FluidState s;
  s.x = {{0.5, 0.5, 0.5}};
  s.v = {{}};
  s.nu = {0.1};
  s.phase = {0};
  s.psi = {0.1};
  s.cells.resize(1);
  StepReport r;
  r.total_ms = 3.0;
  EXPECT_EQ(make_frame(s, r, true).wall_ms, 0.0);
  EXPECT_EQ(make_frame(s, r, false).wall_ms, 3.0);
}

TEST(Frame, StoredVolumesMatchReEvaluation) {
  const FrameRecord f = small_frame();
  const auto path = temp_file("reeval.potf");
  write_frame(path.string(), f);
  const FrameRecord g = read_frame(path.string());
  std::filesystem::remove(path);

  const Domain d = Domain::box({0, 0, 0}, {1, 1, 1});
  std::vector<Site> sites;
  for (std::size_t i = 0; i < g.size(); ++i) sites.push_back({g.positions[i], g.psi[i], 0.0, g.phase[i]});
  const auto cells = evaluate_sites(sites, d, 1);
  for (std::size_t i = 0; i < g.size(); ++i) {
    EXPECT_NEAR(cells[i].volume, g.volumes[i], 1e-12 * std::max(1.0, g.volumes[i]));
    EXPECT_NEAR(cells[i].free_surface_area, g.free_surface[i], 1e-12);
  }
}

TEST(Stats, RowMatchesHeaderColumns) {
  StepReport r;
  r.step = 4;
  r.worst_rel_error = 0.002;
  r.converged = false;
  r.total_ms = 8.0;
  const std::string row = stats_row(r, true);
  EXPECT_EQ(std::count(row.begin(), row.end(), ','),
            std::count(kStatsHeader, kStatsHeader + std::strlen(kStatsHeader), ','));
  EXPECT_EQ(row.substr(0, 2), "4,");
  EXPECT_EQ(row.substr(row.size() - 4), ",0,1");
}
