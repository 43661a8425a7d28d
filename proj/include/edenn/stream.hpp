#pragma once

// Online inference: one traversal of the layer chain per incoming slice,
// carrying each layer's previous output and mask forward.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <utility>
#include <vector>

#include "edenn/edec.hpp"
#include "edenn/network.hpp"

namespace edenn {

template <typename T = double>
class StreamSession {
 public:
  /// Cold start: every layer state is zero and fully unobserved.
  explicit StreamSession(const Network<T>& net) : net_(&net) {
    const auto& cfg = net.config();
    for (std::size_t i = 1; i <= cfg.layers.size(); ++i) {
      const auto& s = net.shapes()[i - 1];
      layers_.push_back(net.layer(i));
      states_.push_back(StreamState<T>::zeros(s.out_w, s.out_h, s.out_c));
    }
    if (cfg.head.kind == HeadKind::scalar_regression) {
      head_weight_ = net.param("head.weight").value();
      if (cfg.head.bias) head_bias_ = net.param("head.bias").value();
    } else {
      for (std::size_t i = cfg.layers.size(); i >= 1; --i) {
        if (!cfg.layers[i - 1].emits_flow) continue;
        head_layer_ = i;
        head_weight_ = net.param("flow" + std::to_string(i) + ".weight").value();
        if (cfg.head.bias) head_bias_ = net.param("flow" + std::to_string(i) + ".bias").value();
        break;
      }
    }
  }

  /// Consumes slice (W, H, C) with observation mask (W, H) and returns the
  /// head output for it: (dim) for a scalar head, (W, H, 2) for a dense one.
  Tensor<T> step(const Tensor<T>& slice, const Tensor<T>& mask) {
    const auto& cfg = net_->config();
    if (slice.shape() != Shape{cfg.width, cfg.height, cfg.in_channels}) {
      throw ShapeError("stream step: slice " + to_string(slice.shape()) + " does not match network input " +
                       std::to_string(cfg.width) + "x" + std::to_string(cfg.height) + "x" +
                       std::to_string(cfg.in_channels));
    }
    if (mask.shape() != Shape{cfg.width, cfg.height}) throw ShapeError("stream step: mask shape " + to_string(mask.shape()));

    const auto start = std::chrono::steady_clock::now();
    const std::size_t L = layers_.size();
    std::vector<Tensor<T>> acts(L + 1), masks(L + 1);
    acts[0] = slice;
    masks[0] = mask;
    for (std::size_t i = 1; i <= L; ++i) {
      const auto& spec = cfg.layers[i - 1];
      const auto& shape = net_->shapes()[i - 1];
      Tensor<T> x = acts[i - 1], m = masks[i - 1];
      if (spec.upsample > 1) {
        x = upsample_nearest(x, shape.in_w, shape.in_h);
        m = upsample_nearest(m, shape.in_w, shape.in_h);
      }
      if (auto from = cfg.skip_into(i)) {
        x = concat_channels(x, acts[*from]);
        m = mask_union(m, masks[*from]);
      }
      auto r = forward_step(x, m, states_[i - 1], layers_[i - 1]);
      states_[i - 1] = std::move(r.state);
      acts[i] = apply_activation(r.out, spec.activation);
      masks[i] = std::move(r.out_mask);
    }
    Tensor<T> out = head(acts);
    const auto stop = std::chrono::steady_clock::now();
    latency_ns_.push_back(std::chrono::duration_cast<std::chrono::nanoseconds>(stop - start).count());
    ++clock_;
    return out;
  }

  std::size_t clock() const { return clock_; }
  const std::vector<StreamState<T>>& states() const { return states_; }
  const std::vector<std::int64_t>& latency_ns() const { return latency_ns_; }
  const Network<T>& network() const { return *net_; }

 private:
  Tensor<T> head(const std::vector<Tensor<T>>& acts) const {
    const auto& h = net_->config().head;
    const T scale = static_cast<T>(h.output_scale);
    if (h.kind == HeadKind::scalar_regression) {
      const auto& a = acts.back();
      const std::size_t P = a.dim(0) * a.dim(1), C = a.dim(2), D = h.dim;
      Tensor<T> pooled({C});
      for (std::size_t p = 0; p < P; ++p)
        for (std::size_t c = 0; c < C; ++c) pooled[c] += a[p * C + c];
      for (std::size_t c = 0; c < C; ++c) pooled[c] /= static_cast<T>(P);
      Tensor<T> y({D});
      for (std::size_t d = 0; d < D; ++d) {
        T acc{};
        for (std::size_t c = 0; c < C; ++c) acc += pooled[c] * head_weight_(c, d);
        if (h.bias) acc += head_bias_[d];
        y[d] = acc * scale;
      }
      return y;
    }
    auto f = conv2d(acts[head_layer_], head_weight_, 1, Padding::same);
    const std::size_t D = f.dim(2);
    for (std::size_t i = 0; i < f.size(); ++i) {
      if (h.bias) f[i] += head_bias_[i % D];
      f[i] *= scale;
    }
    return f;
  }

  const Network<T>* net_;
  std::vector<EdecLayer<T>> layers_;
  std::vector<StreamState<T>> states_;
  Tensor<T> head_weight_, head_bias_;
  std::size_t head_layer_ = 0;
  std::size_t clock_ = 0;
  std::vector<std::int64_t> latency_ns_;
};

template <typename T>
StreamSession<T> open_session(const Network<T>& net) {
  return StreamSession<T>(net);
}

/// Steps a fresh session through every slice of a window and stacks the
/// outputs along a trailing time axis, matching forward().
template <typename T>
Prediction<T> stream_window(const Network<T>& net, const Tensor<T>& volume, const Tensor<T>& masks) {
  auto session = open_session(net);
  std::vector<Tensor<T>> outs;
  for (std::size_t t = 0; t < volume.dim(3); ++t) outs.push_back(session.step(time_slice(volume, t), mask_slice(masks, t)));
  return {net.config().head.kind, stack_time(outs)};
}

struct LatencyRecord {
  std::size_t index;  // slice index within the session
  std::int64_t ns;
  std::size_t cells;  // input elements W * H * C
};

struct LatencyReport {
  std::vector<LatencyRecord> records;    // streaming steps after warmup
  std::vector<LatencyRecord> recompute;  // full-history recompute ending at `index`
  std::size_t cells = 0;
  double mean_ns = 0, p50_ns = 0, p99_ns = 0;
  double per_cell_ns = 0;  // mean / cells
  double slope_ns = 0, slope_stderr_ns = 0;  // least squares of ns on index
};

namespace detail {
inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}
}  // namespace detail

/// Summary statistics over `records` (which must share one cell count).
inline LatencyReport summarize(std::vector<LatencyRecord> records, std::size_t cells) {
  LatencyReport r;
  r.records = std::move(records);
  r.cells = cells;
  const std::size_t n = r.records.size();
  if (n == 0) return r;
  std::vector<double> ns;
  double sx = 0, sy = 0;
  for (const auto& rec : r.records) {
    ns.push_back(static_cast<double>(rec.ns));
    sx += static_cast<double>(rec.index);
    sy += static_cast<double>(rec.ns);
  }
  r.mean_ns = sy / static_cast<double>(n);
  r.p50_ns = detail::percentile(ns, 0.5);
  r.p99_ns = detail::percentile(ns, 0.99);
  r.per_cell_ns = r.mean_ns / static_cast<double>(cells);
  if (n >= 3) {
    const double mx = sx / static_cast<double>(n), my = r.mean_ns;
    double sxx = 0, sxy = 0;
    for (const auto& rec : r.records) {
      const double dx = static_cast<double>(rec.index) - mx;
      sxx += dx * dx;
      sxy += dx * (static_cast<double>(rec.ns) - my);
    }
    if (sxx > 0) {
      r.slope_ns = sxy / sxx;
      const double intercept = my - r.slope_ns * mx;
      double sse = 0;
      for (const auto& rec : r.records) {
        const double e = static_cast<double>(rec.ns) - (intercept + r.slope_ns * static_cast<double>(rec.index));
        sse += e * e;
      }
      r.slope_stderr_ns = std::sqrt(sse / static_cast<double>(n - 2) / sxx);
    }
  }
  return r;
}

/// Median of the record times with index in [lo, hi].
inline double median_ns(const std::vector<LatencyRecord>& records, std::size_t lo, std::size_t hi) {
  std::vector<double> v;
  for (const auto& r : records)
    if (r.index >= lo && r.index <= hi) v.push_back(static_cast<double>(r.ns));
  return detail::percentile(std::move(v), 0.5);
}

template <typename T>
using SliceSource = std::function<std::pair<Tensor<T>, Tensor<T>>(std::size_t)>;

struct BenchOptions {
  std::size_t slices = 500;
  std::size_t warmup = 10;
  std::vector<std::size_t> recompute_at{10, 50, 100, 200};  // history lengths for the recompute contrast
  std::size_t recompute_repeats = 3;
};

/// Streams `slices` generated slices through a fresh session and records
/// per-step latency after `warmup`. For contrast, it also times recomputing
/// the latest output from scratch over the whole history at a few points.
template <typename T>
LatencyReport bench(const Network<T>& net, const SliceSource<T>& source, const BenchOptions& opt) {
  if (opt.slices <= opt.warmup) throw std::invalid_argument("bench: slice count must exceed warmup");
  const auto& cfg = net.config();
  const std::size_t cells = cfg.width * cfg.height * cfg.in_channels;
  std::vector<std::pair<Tensor<T>, Tensor<T>>> history;
  auto session = open_session(net);
  for (std::size_t i = 0; i < opt.slices; ++i) {
    history.push_back(source(i));
    session.step(history.back().first, history.back().second);
  }
  std::vector<LatencyRecord> records;
  for (std::size_t i = opt.warmup; i < opt.slices; ++i) records.push_back({i, session.latency_ns()[i], cells});
  auto report = summarize(std::move(records), cells);

  for (std::size_t at : opt.recompute_at) {
    if (at >= opt.slices) continue;
    std::vector<double> times;
    for (std::size_t rep = 0; rep < std::max<std::size_t>(1, opt.recompute_repeats); ++rep) {
      const auto start = std::chrono::steady_clock::now();
      auto replay = open_session(net);
      for (std::size_t i = 0; i <= at; ++i) replay.step(history[i].first, history[i].second);
      const auto stop = std::chrono::steady_clock::now();
      times.push_back(static_cast<double>(std::chrono::duration_cast<std::chrono::nanoseconds>(stop - start).count()));
    }
    report.recompute.push_back({at, static_cast<std::int64_t>(detail::percentile(times, 0.5)), cells});
  }
  return report;
}

/// Human-readable summary table.
inline void write_report_table(std::ostream& os, const LatencyReport& r) {
  os << "metric            value\n";
  os << "slices            " << r.records.size() << "\n";
  os << "cells             " << r.cells << "\n";
  os << "mean_ns           " << r.mean_ns << "\n";
  os << "p50_ns            " << r.p50_ns << "\n";
  os << "p99_ns            " << r.p99_ns << "\n";
  os << "per_cell_ns       " << r.per_cell_ns << "\n";
  os << "slope_ns/slice    " << r.slope_ns << " +- " << r.slope_stderr_ns << "\n";
  for (const auto& rc : r.recompute) os << "recompute@" << rc.index << "      " << rc.ns << "\n";
}

/// Machine-readable records, one per line: "step <index> <ns> <cells>" for
/// streaming steps and "recompute <history> <ns> <cells>" for the contrast.
inline void write_report_records(std::ostream& os, const LatencyReport& r) {
  for (const auto& rec : r.records) os << "step " << rec.index << ' ' << rec.ns << ' ' << rec.cells << '\n';
  for (const auto& rec : r.recompute) os << "recompute " << rec.index << ' ' << rec.ns << ' ' << rec.cells << '\n';
}

}  // namespace edenn
