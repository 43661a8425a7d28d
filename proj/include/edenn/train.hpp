#pragma once

// Mini-batch training with Adam, and dataset-level evaluation.

#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "edenn/autodiff.hpp"
#include "edenn/network.hpp"
#include "edenn/random.hpp"

namespace edenn {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T = double>
class Adam {
 public:
  Adam(std::vector<ad::Var<T>> params, AdamConfig cfg = {}) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
      m_.push_back(Tensor<T>::zeros_like(p.value()));
      v_.push_back(Tensor<T>::zeros_like(p.value()));
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  /// Applies one update from the gradients currently accumulated.
  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const auto g = params_[i].grad();
      auto& w = params_[i].mutable_value();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double gj = static_cast<double>(g[j]);
        m[j] = static_cast<T>(cfg_.beta1 * static_cast<double>(m[j]) + (1.0 - cfg_.beta1) * gj);
        v[j] = static_cast<T>(cfg_.beta2 * static_cast<double>(v[j]) + (1.0 - cfg_.beta2) * gj * gj);
        const double mh = static_cast<double>(m[j]) / c1, vh = static_cast<double>(v[j]) / c2;
        w[j] -= static_cast<T>(cfg_.learning_rate * mh / (std::sqrt(vh) + cfg_.epsilon));
      }
    }
  }

  std::size_t steps() const { return t_; }

 private:
  std::vector<ad::Var<T>> params_;
  AdamConfig cfg_;
  std::vector<Tensor<T>> m_, v_;
  std::size_t t_ = 0;
};

/// One training example. Scalar tasks: target (dim, T), valid unused.
/// Dense tasks: target (W, H, 2, T), valid (W, H, T).
template <typename T = double>
struct Sample {
  Tensor<T> volume;  // (W, H, 2, T)
  Tensor<T> mask;    // (W, H, T)
  Tensor<T> target;
  Tensor<T> valid;
  Micros bin_width{2'000};

  std::size_t slices() const { return volume.dim(3); }
};

template <typename T = double>
using Dataset = std::vector<Sample<T>>;

struct TrainConfig {
  std::size_t epochs = 500;
  std::size_t batch_size = 4;
  std::optional<Micros> settle;  // unset: half the window
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;

  Micros settle_for(Micros window) const { return settle ? *settle : window / 2; }
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  std::vector<double> loss_history;  // mean training loss per epoch
};

template <typename T>
std::size_t first_scored_slice(const Sample<T>& s, const TrainConfig& cfg) {
  const Micros window = s.bin_width * static_cast<std::int64_t>(s.slices());
  const Micros settle = cfg.settle_for(window);
  if (settle >= window) {
    throw std::invalid_argument("settle time " + std::to_string(settle.count()) + "us is not shorter than the " +
                                std::to_string(window.count()) + "us window");
  }
  return settle_bins(settle, s.bin_width);
}

/// Graph loss of one sample.
template <typename T>
ad::Var<T> sample_loss(const Network<T>& net, const Sample<T>& s, std::size_t first_slice) {
  return graph_loss(forward_graph(net, s.volume, s.mask), s.target, s.valid, first_slice);
}

template <typename T>
using DatasetSource = std::function<Dataset<T>(std::size_t epoch)>;

/// Shuffles with a seeded Fisher-Yates pass every epoch, averages gradients
/// over each mini-batch, and applies Adam. Deterministic for a fixed seed and
/// thread count. `on_epoch(epoch, loss)` is called after every epoch. The
/// source overload asks for a (possibly fresh) dataset at every epoch.
template <typename T>
TrainResult train(Network<T>& net, const DatasetSource<T>& source, const TrainConfig& cfg,
                  const std::function<void(std::size_t, double)>& on_epoch = {}) {
  if (cfg.batch_size == 0) throw std::invalid_argument("train: batch size must be positive");
  Adam<T> opt(net.parameters(), AdamConfig{cfg.learning_rate});
  Rng rng(cfg.seed);
  TrainResult result;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const Dataset<T> data = source(epoch);
    if (data.empty()) throw std::invalid_argument("train: dataset is empty");
    std::vector<std::size_t> first(data.size()), order(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) first[i] = first_scored_slice(data[i], cfg);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    double total = 0.0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), b + cfg.batch_size);
      opt.zero_grad();
      for (std::size_t k = b; k < e; ++k) {
        const std::size_t idx = order[k];
        auto loss = sample_loss(net, data[idx], first[idx]);
        const double value = static_cast<double>(loss.value()[0]);
        if (!std::isfinite(value)) {
          std::ostringstream msg;
          msg << "non-finite loss " << value << " at epoch " << epoch << ", sample " << idx;
          for (std::size_t p = 0; p < net.parameters().size(); ++p) {
            double mx = 0.0;
            for (auto v : net.parameters()[p].value().values()) mx = std::max(mx, std::abs(static_cast<double>(v)));
            msg << "; max|" << net.parameter_names()[p] << "|=" << mx;
          }
          throw TrainingError(msg.str());
        }
        total += value;
        ad::backward(ad::scale(loss, T{1} / static_cast<T>(e - b)));
      }
      opt.step();
    }
    result.loss_history.push_back(total / static_cast<double>(data.size()));
    if (on_epoch) on_epoch(epoch, result.loss_history.back());
  }
  opt.zero_grad();
  return result;
}

template <typename T>
TrainResult train(Network<T>& net, const Dataset<T>& data, const TrainConfig& cfg,
                  const std::function<void(std::size_t, double)>& on_epoch = {}) {
  if (data.empty()) throw std::invalid_argument("train: dataset is empty");
  for (const auto& s : data) first_scored_slice(s, cfg);
  return train(net, DatasetSource<T>([&](std::size_t) { return data; }), cfg, on_epoch);
}

struct EvalResult {
  HeadKind kind = HeadKind::scalar_regression;
  double loss = 0.0;  // mean L1 over samples
  // scalar head
  double rmse = 0.0;
  double baseline_rmse = 0.0;  // mean predictor
  double relative_error = 0.0;
  // dense head
  double aee = 0.0;
  double baseline_aee = 0.0;  // zero-flow predictor
};

/// Per-dimension mean of the scored target slices (the mean predictor).
template <typename T>
std::vector<double> target_mean(const Dataset<T>& data, const TrainConfig& cfg) {
  std::vector<double> mean;
  std::size_t n = 0;
  for (const auto& s : data) {
    const std::size_t D = s.target.dim(0), first = first_scored_slice(s, cfg);
    mean.resize(D, 0.0);
    for (std::size_t t = first; t < s.slices(); ++t) {
      for (std::size_t d = 0; d < D; ++d) mean[d] += static_cast<double>(s.target(d, t));
      ++n;
    }
  }
  for (auto& m : mean) m /= static_cast<double>(std::max<std::size_t>(1, n));
  return mean;
}

/// Scalar head: RMSE, mean-predictor RMSE and their ratio. The mean
/// predictor uses `baseline_mean` (defaults to this dataset's target mean).
/// Dense head: AEE over valid pixels of post-settle slices, and the AEE of
/// predicting zero flow.
template <typename T>
EvalResult evaluate(const Network<T>& net, const Dataset<T>& data, const TrainConfig& cfg,
                    std::optional<std::vector<double>> baseline_mean = std::nullopt) {
  if (data.empty()) throw std::invalid_argument("evaluate: dataset is empty");
  EvalResult r;
  r.kind = net.config().head.kind;
  if (r.kind == HeadKind::scalar_regression) {
    const auto mean = baseline_mean ? *baseline_mean : target_mean(data, cfg);
    RmseAccumulator model, base;
    for (const auto& s : data) {
      const std::size_t first = first_scored_slice(s, cfg);
      const auto pred = forward(net, s.volume, s.mask);
      Tensor<T> b(s.target.shape());
      for (std::size_t d = 0; d < b.dim(0); ++d)
        for (std::size_t t = 0; t < b.dim(1); ++t) b(d, t) = static_cast<T>(mean.at(d));
      model.add(pred.values, s.target, first);
      base.add(b, s.target, first);
      r.loss += static_cast<double>(loss_l1(pred.values, s.target, Tensor<T>::scalar(T{1}), first));
    }
    r.rmse = model.rmse();
    r.baseline_rmse = base.rmse();
    r.relative_error = metric_relative_error(r.rmse, r.baseline_rmse);
  } else {
    double err = 0.0, zero = 0.0;
    std::size_t n = 0;
    for (const auto& s : data) {
      const std::size_t first = first_scored_slice(s, cfg);
      const auto pred = forward(net, s.volume, s.mask);
      const std::size_t W = s.target.dim(0), H = s.target.dim(1);
      for (std::size_t x = 0; x < W; ++x)
        for (std::size_t y = 0; y < H; ++y)
          for (std::size_t t = first; t < s.slices(); ++t) {
            if (s.valid(x, y, t) == T{}) continue;
            const double gu = static_cast<double>(s.target(x, y, 0, t)), gv = static_cast<double>(s.target(x, y, 1, t));
            const double du = static_cast<double>(pred.values(x, y, 0, t)) - gu;
            const double dv = static_cast<double>(pred.values(x, y, 1, t)) - gv;
            err += std::sqrt(du * du + dv * dv);
            zero += std::sqrt(gu * gu + gv * gv);
            ++n;
          }
      r.loss += static_cast<double>(loss_l1(pred.values, s.target, s.valid, first));
    }
    r.aee = n ? err / static_cast<double>(n) : 0.0;
    r.baseline_aee = n ? zero / static_cast<double>(n) : 0.0;
  }
  r.loss /= static_cast<double>(data.size());
  return r;
}

}  // namespace edenn
