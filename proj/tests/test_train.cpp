#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "edenn/synth.hpp"
#include "edenn/train.hpp"
#include "test_util.hpp"

using namespace edenn;
using edenn::testing::random_tensor;

namespace {

NetworkConfig small_regressor(std::size_t w, std::size_t h) {
  auto c = NetworkConfig::table1_reduced(w, h, 16, EdecMode::streaming);
  c.layers.resize(3);
  c.head.output_scale = 10.0;
  return c;
}

Dataset<double> angular_set(std::size_t n, std::uint64_t seed, std::size_t size = 16) {
  std::vector<LabelledSample> ls;
  for (std::size_t i = 0; i < n; ++i) {
    SceneSpec s;
    s.geometry = {static_cast<std::uint16_t>(size), static_cast<std::uint16_t>(size)};
    s.duration = Micros(40'000);
    s.blobs = 8;
    s.seed = seed + i;
    ls.push_back(gen_angular(s));
  }
  return to_dataset<double>(ls);
}

std::vector<Tensor<double>> snapshot(const Network<double>& net) {
  std::vector<Tensor<double>> out;
  for (const auto& p : net.parameters()) out.push_back(p.value());
  return out;
}

}  // namespace

TEST(Adam, ZeroLearningRateLeavesParametersUnchanged) {
  auto data = angular_set(2, 1);
  Network<double> net(small_regressor(16, 16));
  const auto before = snapshot(net);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.learning_rate = 0.0;
  train(net, data, cfg);
  const auto after = snapshot(net);
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(before[i], after[i]) << net.parameter_names()[i];
}

TEST(Adam, QuadraticConvergesToAnalyticMinimum) {
  auto w = ad::Var<double>::leaf(Tensor<double>({1}, -2.0));
  Adam<double> opt({w}, AdamConfig{0.05});
  const Tensor<double> target({1}, 3.0);
  for (int i = 0; i < 4000; ++i) {
    opt.zero_grad();
    auto d = ad::sub(w, ad::Var<double>::constant(target));
    ad::backward(ad::sum(ad::mul(d, d)));
    opt.step();
  }
  EXPECT_NEAR(w.value()[0], 3.0, 1e-6);
}

TEST(Adam, ConvexLinearTaskLossTrendsDown) {
  Rng rng(3);
  const std::size_t C = 4, D = 2, N = 16;
  const auto truth = random_tensor({C, D}, rng);
  std::vector<Tensor<double>> xs, ys;
  for (std::size_t n = 0; n < N; ++n) {
    xs.push_back(random_tensor({C}, rng));
    Tensor<double> y({D});
    for (std::size_t d = 0; d < D; ++d)
      for (std::size_t c = 0; c < C; ++c) y[d] += xs.back()[c] * truth(c, d);
    ys.push_back(y);
  }
  auto w = ad::Var<double>::leaf(Tensor<double>({C, D}));
  Adam<double> opt({w}, AdamConfig{0.01});
  std::vector<double> history;
  for (int epoch = 0; epoch < 300; ++epoch) {
    opt.zero_grad();
    std::vector<ad::Var<double>> terms;
    for (std::size_t n = 0; n < N; ++n) {
      auto e = ad::sub(ad::matvec(ad::Var<double>::constant(xs[n]), w), ad::Var<double>::constant(ys[n]));
      terms.push_back(ad::sum(ad::mul(e, e)));
    }
    auto loss = ad::scale(ad::add_n(terms), 1.0 / N);
    history.push_back(loss.value()[0]);
    ad::backward(loss);
    opt.step();
  }
  // windowed means decrease monotonically
  for (std::size_t s = 50; s < history.size(); s += 50) {
    double prev = 0, cur = 0;
    for (std::size_t i = s - 50; i < s; ++i) prev += history[i];
    for (std::size_t i = s; i < std::min(history.size(), s + 50); ++i) cur += history[i];
    EXPECT_LT(cur, prev) << "window at " << s;
  }
  EXPECT_LT(history.back(), 0.01 * history.front());
}

TEST(Train, DeterministicForFixedSeed) {
  auto data = angular_set(3, 5);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 2;
  cfg.seed = 9;
  Network<double> a(small_regressor(16, 16)), b(small_regressor(16, 16));
  const auto ha = train(a, data, cfg), hb = train(b, data, cfg);
  EXPECT_EQ(ha.loss_history, hb.loss_history);
  const auto sa = snapshot(a), sb = snapshot(b);
  for (std::size_t i = 0; i < sa.size(); ++i) EXPECT_EQ(sa[i], sb[i]);

  cfg.seed = 10;
  Network<double> c(small_regressor(16, 16));
  train(c, data, cfg);
  EXPECT_NE(snapshot(c)[0], sa[0]);
}

TEST(Train, SourceIsAskedOncePerEpochAndMatchesFixedData) {
  auto data = angular_set(3, 5);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 2;
  Network<double> a(small_regressor(16, 16)), b(small_regressor(16, 16));
  std::vector<std::size_t> asked;
  const auto ha = train(a, DatasetSource<double>([&](std::size_t e) {
                          asked.push_back(e);
                          return data;
                        }),
                        cfg);
  const auto hb = train(b, data, cfg);
  EXPECT_EQ(asked, (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(ha.loss_history, hb.loss_history);
  EXPECT_EQ(snapshot(a), snapshot(b));

  Network<double> c(small_regressor(16, 16));
  const auto hc = train(c, DatasetSource<double>([&](std::size_t e) { return angular_set(3, 100 + 3 * e); }), cfg);
  EXPECT_NE(hc.loss_history, ha.loss_history);
  EXPECT_THROW(train(c, DatasetSource<double>([](std::size_t) { return Dataset<double>{}; }), cfg),
               std::invalid_argument);
}

TEST(Train, NanLossAbortsWithDiagnostics) {
  auto data = angular_set(1, 2);
  data[0].target(0, 15) = std::numeric_limits<double>::quiet_NaN();
  Network<double> net(small_regressor(16, 16));
  TrainConfig cfg;
  cfg.epochs = 1;
  try {
    train(net, data, cfg);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("epoch 0"), std::string::npos) << msg;
    EXPECT_NE(msg.find("layer1.kernel"), std::string::npos) << msg;
  }
}

TEST(Train, RejectsEmptyDataAndLongSettle) {
  Network<double> net(small_regressor(16, 16));
  EXPECT_THROW(train(net, Dataset<double>{}, TrainConfig{}), std::invalid_argument);
  auto data = angular_set(1, 3);
  TrainConfig cfg;
  cfg.settle = Micros(40'000);  // equals the window
  EXPECT_THROW(train(net, data, cfg), std::invalid_argument);
}

TEST(Train, SettleDefaultsToHalfTheWindow) {
  auto data = angular_set(1, 4);
  EXPECT_EQ(first_scored_slice(data[0], TrainConfig{}), 10u);  // 40 ms window, 2 ms bins
  TrainConfig cfg;
  cfg.settle = Micros(6'000);
  EXPECT_EQ(first_scored_slice(data[0], cfg), 3u);
}

TEST(Train, TinyAngularTaskBeatsMeanPredictor) {
  auto data = angular_set(8, 20);
  Network<double> net(small_regressor(16, 16));
  TrainConfig cfg;
  cfg.epochs = 40;
  cfg.learning_rate = 3e-3;
  const auto before = evaluate(net, data, cfg);
  const auto hist = train(net, data, cfg);
  const auto after = evaluate(net, data, cfg);
  EXPECT_LT(after.relative_error, 1.0);
  EXPECT_LT(after.relative_error, before.relative_error);
  EXPECT_LT(hist.loss_history.back(), hist.loss_history.front());
}

TEST(Evaluate, MeanPredictorScoresOne) {
  auto data = angular_set(3, 30);
  auto c = small_regressor(16, 16);
  c.head.bias = true;
  Network<double> net(c);
  TrainConfig cfg;
  const auto mean = target_mean(data, cfg);
  // zero the head weights and put the mean in the bias: the network becomes the mean predictor
  for (std::size_t i = 0; i < net.parameters().size(); ++i) {
    if (net.parameter_names()[i] == "head.weight") net.parameters()[i].mutable_value().fill(0.0);
    if (net.parameter_names()[i] == "head.bias")
      for (std::size_t d = 0; d < 3; ++d) net.parameters()[i].mutable_value()[d] = mean[d] / c.head.output_scale;
  }
  EXPECT_NEAR(evaluate(net, data, cfg).relative_error, 1.0, 1e-12);
}

TEST(Evaluate, ZeroFlowBaselineAee) {
  SceneSpec s;
  s.scenario = Scenario::translating_edges;
  s.geometry = {16, 16};
  s.duration = Micros(16'000);
  s.flow_const = std::array<double, 2>{0.6, -0.8};
  auto data = to_dataset<double>({gen_flow(s)});
  auto c = NetworkConfig::flow_unet(16, 16, 2);
  Network<double> net(c);
  for (auto& p : net.parameters()) p.mutable_value().fill(0.0);
  const auto r = evaluate(net, data, TrainConfig{});
  EXPECT_NEAR(r.baseline_aee, 1.0, 1e-12);
  EXPECT_NEAR(r.aee, 1.0, 1e-12);
}
