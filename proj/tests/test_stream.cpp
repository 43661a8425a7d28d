#include <gtest/gtest.h>

#include <sstream>

#include "edenn/stream.hpp"
#include "test_util.hpp"

using namespace edenn;
using edenn::testing::random_mask;

namespace {

NetworkConfig random_config(Rng& rng) {
  NetworkConfig c;
  c.width = 5 + rng.below(8);
  c.height = 5 + rng.below(8);
  c.seed = rng.next();
  c.initial_gamma = rng.uniform(-0.95, 0.95);
  const EdecMode modes[] = {EdecMode::dense, EdecMode::streaming, EdecMode::partial_original, EdecMode::partial_weighted};
  const std::size_t layers = 1 + rng.below(3);
  for (std::size_t i = 0; i < layers; ++i) {
    LayerSpec l;
    l.kernel = 1 + 2 * rng.below(3);
    l.channels = 1 + rng.below(4);
    l.stride = 1 + rng.below(2);
    l.mode = modes[rng.below(4)];
    l.activation = rng.below(2) ? Activation::relu : Activation::identity;
    c.layers.push_back(l);
  }
  c.head = {HeadKind::scalar_regression, 1 + rng.below(3), rng.below(2) == 1};
  return c;
}

struct Window {
  Tensor<double> volume, mask;
};

Window random_window(const NetworkConfig& c, std::size_t T, Rng& rng, double density) {
  Window w{Tensor<double>({c.width, c.height, c.in_channels, T}), random_mask({c.width, c.height, T}, rng, density)};
  for (std::size_t x = 0; x < c.width; ++x)
    for (std::size_t y = 0; y < c.height; ++y)
      for (std::size_t t = 0; t < T; ++t)
        if (w.mask(x, y, t) == 1.0) w.volume(x, y, rng.below(c.in_channels), t) = 1.0;
  return w;
}

double scaled_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]) / std::max(1.0, std::abs(a[i])));
  return m;
}

}  // namespace

TEST(Stream, MatchesBatchForwardOnRandomNetworks) {
  Rng rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const auto c = random_config(rng);
    Network<double> net(c);
    const auto w = random_window(c, 2 + rng.below(8), rng, rng.uniform(0.05, 0.6));
    const auto batch = forward(net, w.volume, w.mask);
    auto session = open_session(net);
    for (std::size_t t = 0; t < w.volume.dim(3); ++t) {
      const auto y = session.step(time_slice(w.volume, t), mask_slice(w.mask, t));
      EXPECT_LT(scaled_diff(batch.slice(t), y), 1e-9) << "trial " << trial << " slice " << t;
    }
  }
}

TEST(Stream, FreshSessionZeroSliceGivesZero) {
  Rng rng(1);
  auto c = random_config(rng);
  c.head.bias = false;
  Network<double> net(c);
  auto s = open_session(net);
  const auto y = s.step(Tensor<double>({c.width, c.height, 2}), Tensor<double>({c.width, c.height}));
  for (auto v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(Stream, IdenticalSessionsAgreeAndInterleavingIsIsolated) {
  Rng rng(2);
  const auto c = random_config(rng);
  Network<double> net(c);
  const auto w1 = random_window(c, 6, rng, 0.3), w2 = random_window(c, 6, rng, 0.3);
  auto a = open_session(net), b = open_session(net);
  auto solo = open_session(net);
  std::vector<Tensor<double>> solo_out;
  for (std::size_t t = 0; t < 6; ++t) solo_out.push_back(solo.step(time_slice(w1.volume, t), mask_slice(w1.mask, t)));
  auto other = open_session(net);
  for (std::size_t t = 0; t < 6; ++t) {
    const auto ya = a.step(time_slice(w1.volume, t), mask_slice(w1.mask, t));
    other.step(time_slice(w2.volume, t), mask_slice(w2.mask, t));
    const auto yb = b.step(time_slice(w1.volume, t), mask_slice(w1.mask, t));
    EXPECT_EQ(ya, yb);
    EXPECT_EQ(ya, solo_out[t]);
  }
}

TEST(Stream, ZeroSliceAfterHistoryDecaysState) {
  NetworkConfig c;
  c.width = c.height = 6;
  c.layers = {{3, 2, 1, 1, EdecMode::streaming, Activation::identity, false}};
  c.initial_gamma = 0.5;
  Network<double> net(c);
  Rng rng(3);
  const auto w = random_window(c, 1, rng, 0.5);
  auto s = open_session(net);
  const auto y1 = s.step(time_slice(w.volume, 0), mask_slice(w.mask, 0));
  const auto state1 = s.states()[0].prev_output;
  const auto y2 = s.step(Tensor<double>({6, 6, 2}), Tensor<double>({6, 6}));
  const auto state2 = s.states()[0].prev_output;
  for (std::size_t i = 0; i < state1.size(); ++i) EXPECT_NEAR(state2[i], 0.5 * state1[i], 1e-15);
  for (std::size_t d = 0; d < y1.size(); ++d) EXPECT_NEAR(y2[d], 0.5 * y1[d], 1e-12);
  bool any = false;
  for (auto v : y2.values()) any = any || v != 0.0;
  EXPECT_TRUE(any);
}

TEST(Stream, ClockStatesAndLatencyLog) {
  Rng rng(4);
  const auto c = random_config(rng);
  Network<double> net(c);
  auto s = open_session(net);
  EXPECT_EQ(s.states().size(), c.layers.size());
  const auto w = random_window(c, 4, rng, 0.2);
  for (std::size_t t = 0; t < 4; ++t) {
    s.step(time_slice(w.volume, t), mask_slice(w.mask, t));
    EXPECT_EQ(s.clock(), t + 1);
  }
  EXPECT_EQ(s.latency_ns().size(), 4u);
  for (auto ns : s.latency_ns()) EXPECT_GT(ns, 0);
  EXPECT_THROW(s.step(Tensor<double>({c.width + 1, c.height, 2}), Tensor<double>({c.width + 1, c.height})), ShapeError);
  EXPECT_THROW(s.step(Tensor<double>({c.width, c.height, 2}), Tensor<double>({c.width, c.height, 1})), ShapeError);
}

TEST(LatencyReport, SummaryFormulas) {
  std::vector<LatencyRecord> recs;
  for (std::size_t i = 0; i < 101; ++i) recs.push_back({i, static_cast<std::int64_t>(1000 + 3 * i), 50});
  const auto r = summarize(recs, 50);
  EXPECT_DOUBLE_EQ(r.mean_ns, 1150.0);
  EXPECT_DOUBLE_EQ(r.p50_ns, 1150.0);
  EXPECT_NEAR(r.p99_ns, 1297.0, 1e-9);
  EXPECT_DOUBLE_EQ(r.per_cell_ns, 1150.0 / 50);
  EXPECT_NEAR(r.slope_ns, 3.0, 1e-12);
  EXPECT_NEAR(r.slope_stderr_ns, 0.0, 1e-9);
  EXPECT_DOUBLE_EQ(median_ns(recs, 10, 20), 1045.0);
}

TEST(Bench, ReportsPostWarmupRecordsAndRecompute) {
  NetworkConfig c;
  c.width = c.height = 6;
  c.layers = {{3, 2, 2, 1, EdecMode::partial_weighted, Activation::identity, false}};
  Network<double> net(c);
  Rng rng(5);
  SliceSource<double> src = [&](std::size_t) {
    auto m = random_mask({6, 6}, rng, 0.1);
    Tensor<double> s({6, 6, 2});
    for (std::size_t p = 0; p < 36; ++p) s[2 * p] = m[p];
    return std::pair{s, m};
  };
  BenchOptions opt;
  opt.slices = 500;
  opt.recompute_at = {10, 100};
  opt.recompute_repeats = 1;
  const auto r = bench(net, src, opt);
  ASSERT_EQ(r.records.size(), 490u);
  EXPECT_EQ(r.records.front().index, 10u);
  EXPECT_EQ(r.records.back().index, 499u);
  EXPECT_EQ(r.cells, 72u);
  ASSERT_EQ(r.recompute.size(), 2u);
  std::ostringstream os;
  write_report_records(os, r);
  std::istringstream is(os.str());
  std::string line;
  std::size_t steps = 0, recomputes = 0;
  while (std::getline(is, line)) {
    if (line.rfind("step ", 0) == 0) ++steps;
    if (line.rfind("recompute ", 0) == 0) ++recomputes;
  }
  EXPECT_EQ(steps, 490u);
  EXPECT_EQ(recomputes, 2u);

  opt.slices = opt.warmup;
  EXPECT_THROW(bench(net, src, opt), std::invalid_argument);
}
