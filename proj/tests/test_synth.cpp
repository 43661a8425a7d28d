#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <sstream>

#include "edenn/synth.hpp"

using namespace edenn;

namespace {

SceneSpec rotating(std::uint64_t seed = 1) {
  SceneSpec s;
  s.seed = seed;
  return s;
}

SceneSpec translating(std::uint64_t seed = 1) {
  SceneSpec s;
  s.scenario = Scenario::translating_edges;
  s.duration = Micros(48'000);
  s.seed = seed;
  return s;
}

std::string serialize(const LabelledSample& ls) {
  std::ostringstream os;
  write_events_csv(os, ls.events);
  write_ground_truth(os, ls);
  return os.str();
}

}  // namespace

TEST(Synth, StaticSceneEmitsNothing) {
  auto s = rotating();
  s.omega_const = std::array<double, 3>{0, 0, 0};
  const auto a = gen_angular(s);
  EXPECT_TRUE(a.events.empty());
  for (auto v : a.gt.values()) EXPECT_EQ(v, 0.0);

  auto f = translating();
  f.flow_const = std::array<double, 2>{0, 0};
  const auto b = gen_flow(f);
  EXPECT_TRUE(b.events.empty());
  for (auto v : b.gt.values()) EXPECT_EQ(v, 0.0);
}

TEST(Synth, Deterministic) {
  EXPECT_EQ(serialize(gen_angular(rotating(4))), serialize(gen_angular(rotating(4))));
  EXPECT_EQ(serialize(gen_flow(translating(4))), serialize(gen_flow(translating(4))));
  EXPECT_NE(serialize(gen_angular(rotating(4))), serialize(gen_angular(rotating(5))));
}

TEST(Synth, EventsInsideGeometryAndWindow) {
  for (const auto& ls : {gen_angular(rotating(2)), gen_flow(translating(2))}) {
    ASSERT_FALSE(ls.events.empty());
    std::int64_t last = 0;
    for (const auto& e : ls.events) {
      EXPECT_TRUE(ls.geometry.contains(e));
      EXPECT_GE(e.t_us, 0);
      EXPECT_LT(e.t_us, ls.window.length.count());
      EXPECT_GE(e.t_us, last);
      EXPECT_TRUE(e.p == 1 || e.p == -1);
      last = e.t_us;
    }
  }
}

TEST(Synth, GroundTruthShapesAndDefaults) {
  const auto a = gen_angular(rotating());
  EXPECT_EQ(a.gt.shape(), (Shape{3, 50}));  // 100 ms / 2 ms
  const auto b = gen_flow(translating());
  EXPECT_EQ(b.gt.shape(), (Shape{32, 32, 2, 24}));
  for (auto v : b.gt.values()) EXPECT_LE(std::abs(v), 1.0);
}

TEST(Synth, GroundTruthIsBinAveragedAngularVelocity) {
  auto s = rotating(3);
  const auto ls = gen_angular(s);
  const auto p = make_angular_profile(s);
  for (std::size_t t = 0; t < 50; t += 7) {
    const double mid = (t + 0.5) * 0.002;
    for (std::size_t a = 0; a < 3; ++a) EXPECT_NEAR(ls.gt(a, t), p.omega(a, mid), 0.01 * s.omega_max);
  }
}

TEST(Synth, ReversingOmegaNegatesGroundTruthAndMirrorsTheScene) {
  auto s = rotating(6);
  s.out_of_plane = 0.0;
  const auto fwd = gen_angular(s);
  auto r = s;
  r.reverse = true;
  const auto rev = gen_angular(r);
  for (std::size_t i = 0; i < fwd.gt.size(); ++i) EXPECT_EQ(rev.gt[i], -fwd.gt[i]);
  EXPECT_NE(fwd.events, rev.events);

  // Reversed rotation of a pattern is the mirror image of forward rotation of
  // the mirrored pattern; compare indicator volumes under the reflection.
  auto m = s;
  m.mirror = true;
  const auto mir = gen_angular(m);
  const auto v_rev = build_event_volume<double>(rev.events, rev.geometry, rev.window).tensor;
  const auto v_mir = build_event_volume<double>(mir.events, mir.geometry, mir.window).tensor;
  const std::size_t W = 32, H = 32;
  std::size_t differ = 0, active = 0;
  for (std::size_t x = 0; x < W; ++x)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t t = 0; t < 50; ++t) {
          const double a = v_rev(x, y, c, t), b = v_mir(x, H - 1 - y, c, t);
          active += a != 0.0 || b != 0.0;
          differ += a != b;
        }
  ASSERT_GT(active, 100u);
  EXPECT_LE(static_cast<double>(differ), 0.01 * static_cast<double>(active));
}

TEST(Synth, EventCentroidsFollowTheRotation) {
  const double cx = 15.5, cy = 15.5;
  int checked = 0;
  for (std::uint64_t seed = 1; seed <= 40; ++seed) {
    auto s = rotating(seed);
    s.blobs = 1;
    s.blob_sigma = 2.5;  // wide enough that the centroid is not pixel-quantized
    s.omega_const = std::array<double, 3>{0, 0, 400};
    const auto ls = gen_angular(s);
    // per-bin angle of the event centroid about the image centre
    std::vector<double> angles, times;
    bool inside = true;
    for (std::size_t t = 0; t < 50; ++t) {
      double sx = 0, sy = 0;
      int n = 0;
      for (const auto& e : ls.events)
        if (e.t_us / 2000 == static_cast<std::int64_t>(t)) {
          sx += e.x;
          sy += e.y;
          ++n;
        }
      if (n < 3) continue;
      const double mx = sx / n, my = sy / n;
      if (mx < 5 || my < 5 || mx > 26 || my > 26) inside = false;
      double a = std::atan2(sy / n - cy, sx / n - cx);
      if (!angles.empty()) {
        while (a - angles.back() > std::numbers::pi) a -= 2 * std::numbers::pi;
        while (a - angles.back() < -std::numbers::pi) a += 2 * std::numbers::pi;
      }
      angles.push_back(a);
      times.push_back((t + 0.5) * 0.002);
    }
    if (angles.size() < 45 || !inside) continue;  // blob (partly) out of view
    const double r = std::hypot(ls.events.front().x - cx, ls.events.front().y - cy);
    if (r < 6.0) continue;  // too close to the centre for a stable angle
    double mt = 0, ma = 0;
    for (std::size_t i = 0; i < angles.size(); ++i) {
      mt += times[i];
      ma += angles[i];
    }
    mt /= angles.size();
    ma /= angles.size();
    double num = 0, den = 0;
    for (std::size_t i = 0; i < angles.size(); ++i) {
      num += (times[i] - mt) * (angles[i] - ma);
      den += (times[i] - mt) * (times[i] - mt);
    }
    EXPECT_NEAR(num / den * 180.0 / std::numbers::pi, 400.0, 40.0) << "seed " << seed;
    ++checked;
  }
  EXPECT_GE(checked, 4);
}

TEST(Synth, UnitFlowSweepsOneColumnPerFrame) {
  auto s = translating(9);
  s.flow_const = std::array<double, 2>{1.0, 0.0};
  const auto sample = to_sample<double>(gen_flow(s));
  const auto& m = sample.mask;
  const long W = 32, H = 32;
  int agree = 0, total = 0;
  for (std::size_t t = 2; t + 1 < 24; ++t) {
    long best_dx = 0, best_dy = 0;
    double best = -1;
    for (long dx = -3; dx <= 3; ++dx)
      for (long dy = -3; dy <= 3; ++dy) {
        double overlap = 0;
        for (long x = 0; x < W; ++x)
          for (long y = 0; y < H; ++y)
            overlap += m(x, y, t) * m((x + dx + W) % W, (y + dy + H) % H, t + 1);
        if (overlap > best) {
          best = overlap;
          best_dx = dx;
          best_dy = dy;
        }
      }
    agree += best_dx == 1 && best_dy == 0;
    ++total;
  }
  EXPECT_GE(agree, total - 1);
}

TEST(Synth, IntegratedFlowMatchesDisplacement) {
  auto s = translating(10);
  s.flow_segments = 3;
  s.patches = 0;
  const auto ls = gen_flow(s);
  const auto p = make_flow_profile(s);
  ASSERT_EQ(p.segments.size(), 3u);
  double u = 0, v = 0;
  for (std::size_t t = 0; t < 24; ++t) {
    u += ls.gt(5, 9, 0, t);
    v += ls.gt(5, 9, 1, t);
  }
  const auto d = p.displacement(24.0);
  EXPECT_NEAR(u, d[0], 1e-12);
  EXPECT_NEAR(v, d[1], 1e-12);
}

TEST(Synth, ValidMaskIsEventSupport) {
  const auto ls = gen_flow(translating(11));
  const auto s = to_sample<double>(ls);
  EXPECT_EQ(s.valid, s.mask);
  EXPECT_EQ(s.target.shape(), (Shape{32, 32, 2, 24}));
  EXPECT_EQ(s.target(3, 4, 1, 7), ls.gt(3, 4, 1, 7));
}

TEST(Synth, PatchesCarryTheirOwnFlow) {
  auto s = translating(14);
  s.patches = 2;
  const auto ls = gen_flow(s);
  const FlowProfile layers[] = {make_flow_profile(s, 0), make_flow_profile(s, 1), make_flow_profile(s, 2)};
  std::size_t counts[3] = {0, 0, 0};
  for (std::size_t t = 0; t < 24; ++t)
    for (std::size_t x = 0; x < 32; ++x)
      for (std::size_t y = 0; y < 32; ++y) {
        const std::array<double, 2> f{ls.gt(x, y, 0, t), ls.gt(x, y, 1, t)};
        std::size_t match = 3;
        for (std::size_t l = 0; l < 3; ++l)
          if (f == layers[l].flow_at_bin(t)) match = l;
        ASSERT_LT(match, 3u) << x << "," << y << " bin " << t;
        ++counts[match];
      }
  // the background dominates, and each patch covers between 1/16 and 1/4 of the frame
  EXPECT_GT(counts[0], counts[1]);
  for (std::size_t l = 1; l < 3; ++l) {
    EXPECT_GE(counts[l], 24u * 1024 / 16 / 2) << "patch " << l;
    EXPECT_LE(counts[l], 24u * 1024 / 4) << "patch " << l;
  }
}

TEST(Synth, RigidFlowOverridesPatches) {
  auto s = translating(15);
  s.flow_const = std::array<double, 2>{0.5, -0.25};
  const auto ls = gen_flow(s);
  for (std::size_t i = 0; i < ls.gt.size(); i += 2) {
    EXPECT_EQ(ls.gt[i] == 0.5 || ls.gt[i] == -0.25, true);
  }
  for (std::size_t x = 0; x < 32; ++x) {
    EXPECT_EQ(ls.gt(x, 7, 0, 3), 0.5);
    EXPECT_EQ(ls.gt(x, 7, 1, 3), -0.25);
  }
}

TEST(Synth, DegenerateSpecsThrow) {
  auto a = rotating();
  a.geometry = {2, 2};
  EXPECT_THROW(gen_angular(a), std::invalid_argument);
  auto b = rotating();
  b.substeps = 0;
  EXPECT_THROW(gen_angular(b), std::invalid_argument);
  auto c = rotating();
  c.duration = Micros(3'000);
  EXPECT_THROW(gen_angular(c), std::invalid_argument);
  auto d = translating();
  d.flow_const = std::array<double, 2>{8.0, 0.0};  // min(W,H)/4 = 8
  EXPECT_THROW(gen_flow(d), std::invalid_argument);
  EXPECT_THROW(gen_flow(rotating()), std::invalid_argument);
}

TEST(Synth, GroundTruthSidecarRoundTrip) {
  const auto ls = gen_angular(rotating(12));
  std::stringstream ss;
  write_ground_truth(ss, ls);
  EXPECT_EQ(read_ground_truth(ss, 3, 50), ls.gt);
  std::istringstream bad("# header\n0 0 1 2\n");
  EXPECT_THROW(read_ground_truth(bad, 3, 1), ParseError);

  auto f = translating(16);
  f.geometry = {6, 5};
  f.duration = Micros(8'000);
  f.flow_max = 1.0;
  const auto fl = gen_flow(f);
  std::stringstream fs;
  write_ground_truth(fs, fl);
  EXPECT_EQ(read_flow_ground_truth(fs, f.geometry, 4), fl.gt);
  std::istringstream partial("0 0 1 1 0.5 0.5\n");
  EXPECT_THROW(read_flow_ground_truth(partial, f.geometry, 4), ParseError);
  std::istringstream outside("0 0 9 1 0.5 0.5\n");
  EXPECT_THROW(read_flow_ground_truth(outside, f.geometry, 4), ParseError);
}

TEST(Synth, DatasetRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "edenn_synth_roundtrip";
  std::filesystem::remove_all(dir);
  auto spec = translating(13);
  spec.duration = Micros(12'000);
  for (auto fmt : {EventFormat::csv, EventFormat::binary}) {
    const auto m = write_dataset(dir, spec, 2, fmt);
    EXPECT_EQ(m.bins(), 6u);
    const auto back = read_dataset(dir);
    ASSERT_EQ(back.size(), 2u);
    for (std::size_t i = 0; i < 2; ++i) {
      auto s = spec;
      s.seed = spec.seed + i;
      const auto ref = gen_flow(s);
      EXPECT_EQ(back[i].events, ref.events);
      EXPECT_EQ(back[i].gt, ref.gt);
    }
  }
  std::filesystem::remove_all(dir);
}
