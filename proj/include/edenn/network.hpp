#pragma once

// EDeC networks: a chain of EDeC layers with optional nearest-neighbour
// upsampling and concatenated skip connections, topped by either
//  - a scalar head: global average pool + linear map, emitted every slice, or
//  - a dense head: 1x1 projections to 2 flow channels on selected layers.
//
// Layers are numbered from 1; index 0 denotes the network input.

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "edenn/autodiff.hpp"
#include "edenn/edec.hpp"
#include "edenn/edec_graph.hpp"
#include "edenn/events.hpp"
#include "edenn/random.hpp"

namespace edenn {

enum class Activation { identity, relu };
enum class HeadKind { scalar_regression, dense_per_pixel };

inline const char* to_string(Activation a) { return a == Activation::relu ? "relu" : "identity"; }
inline const char* to_string(HeadKind h) { return h == HeadKind::dense_per_pixel ? "dense_per_pixel" : "scalar_regression"; }

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct LayerSpec {
  std::size_t kernel = 3;
  std::size_t channels = 8;
  std::size_t stride = 1;
  std::size_t upsample = 1;  // nearest-neighbour factor applied to the input first
  EdecMode mode = EdecMode::streaming;
  Activation activation = Activation::identity;
  bool emits_flow = false;  // dense head reads a flow estimate off this layer

  bool operator==(const LayerSpec&) const = default;
};

/// Concatenates the (activated) output of layer `from` onto the input of
/// layer `to`, after any upsampling of that input.
struct Skip {
  std::size_t from = 0;
  std::size_t to = 0;
  bool operator==(const Skip&) const = default;
};

struct HeadSpec {
  HeadKind kind = HeadKind::scalar_regression;
  std::size_t dim = 3;
  bool bias = false;
  double output_scale = 1.0;  // fixed multiplier on the head output (target units per unit activation)
  bool operator==(const HeadSpec&) const = default;
};

struct LayerShape {
  std::size_t in_w, in_h, in_c;
  std::size_t out_w, out_h, out_c;
};

struct NetworkConfig {
  std::size_t width = 64;
  std::size_t height = 64;
  std::size_t in_channels = 2;
  std::vector<LayerSpec> layers;
  std::vector<Skip> skips;
  HeadSpec head;
  double initial_gamma = 0.9;
  std::uint64_t seed = 1;

  bool operator==(const NetworkConfig&) const = default;

  /// Five 3x3 EDeC layers (16, 32, 64, 128, 256 channels; strides 2, 2, 2,
  /// 2, 1) and a bias-free linear head of output dimension 3.
  static NetworkConfig table1(std::size_t width = 240, std::size_t height = 180, EdecMode mode = EdecMode::partial_weighted) {
    NetworkConfig c;
    c.width = width;
    c.height = height;
    const std::size_t channels[] = {16, 32, 64, 128, 256};
    const std::size_t strides[] = {2, 2, 2, 2, 1};
    for (int i = 0; i < 5; ++i) c.layers.push_back({3, channels[i], strides[i], 1, mode, Activation::identity, false});
    c.head = {HeadKind::scalar_regression, 3, false};
    return c;
  }

  /// table1 topology with every channel count divided by `divisor`.
  static NetworkConfig table1_reduced(std::size_t width, std::size_t height, std::size_t divisor,
                                      EdecMode mode = EdecMode::partial_weighted) {
    auto c = table1(width, height, mode);
    for (auto& l : c.layers) l.channels = std::max<std::size_t>(1, l.channels / divisor);
    return c;
  }

  /// Four stride-2 encoder layers and four decoder layers, each decoder
  /// upsampling x2 and concatenating the mirrored encoder output (the last
  /// one the raw input). Every decoder emits a flow estimate.
  static NetworkConfig flow_unet(std::size_t width, std::size_t height, std::size_t base_channels = 8,
                                 EdecMode mode = EdecMode::streaming) {
    NetworkConfig c;
    c.width = width;
    c.height = height;
    const std::size_t b = base_channels;
    const std::size_t enc[] = {b, 2 * b, 4 * b, 8 * b};
    for (auto ch : enc) c.layers.push_back({3, ch, 2, 1, mode, Activation::relu, false});
    const std::size_t dec[] = {4 * b, 2 * b, b, b};
    for (std::size_t d = 0; d < 4; ++d) {
      c.layers.push_back({3, dec[d], 1, 2, mode, Activation::relu, true});
      c.skips.push_back({3 - d, 5 + d});  // layer 3 -> 5, 2 -> 6, 1 -> 7, input -> 8
    }
    c.head = {HeadKind::dense_per_pixel, 2, true};
    return c;
  }

  std::optional<std::size_t> skip_into(std::size_t layer) const {
    for (const auto& s : skips)
      if (s.to == layer) return s.from;
    return std::nullopt;
  }

  /// Resolves every layer's input/output geometry; throws ConfigError naming
  /// the offending layer.
  std::vector<LayerShape> resolve() const {
    if (layers.empty()) throw ConfigError("network has no layers");
    if (width == 0 || height == 0 || in_channels == 0) throw ConfigError("network input geometry must be positive");
    for (const auto& s : skips) {
      if (s.to == 0 || s.to > layers.size() || s.from >= s.to) {
        throw ConfigError("skip " + std::to_string(s.from) + " -> " + std::to_string(s.to) + " must go forward into a layer");
      }
    }
    std::vector<LayerShape> shapes;
    std::size_t w = width, h = height, c = in_channels;
    auto out_of = [&](std::size_t idx) -> std::array<std::size_t, 3> {
      if (idx == 0) return {width, height, in_channels};
      const auto& s = shapes[idx - 1];
      return {s.out_w, s.out_h, s.out_c};
    };
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      const std::string name = "layer " + std::to_string(i + 1);
      if (l.kernel % 2 == 0 || l.kernel == 0) throw ConfigError(name + ": kernel size must be odd");
      if (l.channels == 0) throw ConfigError(name + ": channel count must be positive");
      if (l.stride == 0 || l.upsample == 0) throw ConfigError(name + ": stride and upsample must be positive");
      std::size_t iw = w * l.upsample, ih = h * l.upsample, ic = c;
      if (auto from = skip_into(i + 1)) {
        const auto src = out_of(*from);
        if (l.upsample > 1) {
          // upsampling targets the skip source so odd sizes line up
          if (src[0] < w || src[0] > iw || src[1] < h || src[1] > ih) {
            throw ConfigError(name + ": cannot upsample " + std::to_string(w) + "x" + std::to_string(h) + " onto skip " +
                              std::to_string(src[0]) + "x" + std::to_string(src[1]));
          }
          iw = src[0];
          ih = src[1];
        } else if (src[0] != iw || src[1] != ih) {
          throw ConfigError(name + ": skip source geometry does not match the layer input");
        }
        ic += src[2];
      }
      const auto g = ConvGeometry::make(iw, ih, l.kernel, l.kernel, l.stride, Padding::same);
      shapes.push_back({iw, ih, ic, g.out_w, g.out_h, l.channels});
      w = g.out_w;
      h = g.out_h;
      c = l.channels;
    }
    if (head.kind == HeadKind::dense_per_pixel) {
      bool any = false;
      for (const auto& l : layers) any = any || l.emits_flow;
      if (!any) throw ConfigError("dense head needs at least one layer with flow output");
      if (w != width || h != height) throw ConfigError("dense head: final layer must be at input resolution");
      if (!layers.back().emits_flow) throw ConfigError("dense head: final layer must emit flow");
    }
    if (head.dim == 0) throw ConfigError("head dimension must be positive");
    if (!(head.output_scale > 0.0)) throw ConfigError("head output scale must be positive");
    return shapes;
  }
};

/// Named parameter-count entry, one per EDeC layer plus one per head part.
struct ParameterCount {
  std::string name;
  std::size_t count;
};

template <typename T = double>
class Network {
 public:
  Network() = default;

  explicit Network(NetworkConfig config) : config_(std::move(config)), shapes_(config_.resolve()) {
    Rng rng(config_.seed);
    for (std::size_t i = 0; i < config_.layers.size(); ++i) {
      const auto& spec = config_.layers[i];
      auto layer = EdecLayer<T>::init(spec.kernel, shapes_[i].in_c, spec.channels, spec.stride, spec.mode, rng,
                                      config_.initial_gamma);
      add_param("layer" + std::to_string(i + 1) + ".kernel", layer.kernel);
      add_param("layer" + std::to_string(i + 1) + ".theta", layer.theta);
    }
    if (config_.head.kind == HeadKind::scalar_regression) {
      const std::size_t c = shapes_.back().out_c, d = config_.head.dim;
      Tensor<T> w({c, d});
      const double bound = 1.0 / std::sqrt(static_cast<double>(c));
      for (auto& v : w.values()) v = static_cast<T>(rng.uniform(-bound, bound));
      add_param("head.weight", w);
      if (config_.head.bias) add_param("head.bias", Tensor<T>({d}));
    } else {
      for (std::size_t i = 0; i < config_.layers.size(); ++i) {
        if (!config_.layers[i].emits_flow) continue;
        const std::size_t c = shapes_[i].out_c, d = config_.head.dim;
        Tensor<T> w({1, 1, c, d});
        const double bound = 1.0 / std::sqrt(static_cast<double>(c));
        for (auto& v : w.values()) v = static_cast<T>(rng.uniform(-bound, bound));
        add_param("flow" + std::to_string(i + 1) + ".weight", w);
        if (config_.head.bias) add_param("flow" + std::to_string(i + 1) + ".bias", Tensor<T>({d}));
      }
    }
  }

  const NetworkConfig& config() const { return config_; }
  const std::vector<LayerShape>& shapes() const { return shapes_; }
  std::size_t layer_count() const { return config_.layers.size(); }

  std::vector<ad::Var<T>>& parameters() { return params_; }
  const std::vector<ad::Var<T>>& parameters() const { return params_; }
  const std::vector<std::string>& parameter_names() const { return names_; }

  const ad::Var<T>& param(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return params_[i];
    throw std::out_of_range("no parameter named " + name);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value().size();
    return n;
  }

  /// Counts grouped per EDeC layer (kernel + decays) and per head part.
  std::vector<ParameterCount> parameter_counts() const {
    std::vector<ParameterCount> out;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const auto& name = names_[i];
      const std::string group = name.substr(0, name.find('.'));
      if (out.empty() || out.back().name != group) out.push_back({group, 0});
      out.back().count += params_[i].value().size();
    }
    return out;
  }

  /// Copy of layer `i` (1-based) as a numeric EdecLayer.
  EdecLayer<T> layer(std::size_t i) const {
    const auto& spec = config_.layers.at(i - 1);
    EdecLayer<T> l;
    l.kernel = param("layer" + std::to_string(i) + ".kernel").value();
    l.theta = param("layer" + std::to_string(i) + ".theta").value();
    l.stride = spec.stride;
    l.mode = spec.mode;
    return l;
  }

  EdecParams<T> layer_params(std::size_t i) const {
    return {param("layer" + std::to_string(i) + ".kernel"), param("layer" + std::to_string(i) + ".theta")};
  }

 private:
  void add_param(std::string name, Tensor<T> value) {
    names_.push_back(std::move(name));
    params_.push_back(ad::Var<T>::leaf(std::move(value)));
  }

  NetworkConfig config_;
  std::vector<LayerShape> shapes_;
  std::vector<ad::Var<T>> params_;
  std::vector<std::string> names_;
};

template <typename T>
Tensor<T> apply_activation(const Tensor<T>& x, Activation a) {
  if (a == Activation::identity) return x;
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::max(T{}, x[i]);
  return out;
}

template <typename T>
ad::Var<T> apply_activation(const ad::Var<T>& x, Activation a) {
  return a == Activation::identity ? x : ad::relu(x);
}

template <typename T>
Tensor<T> mask_union(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = (a[i] > T{} || b[i] > T{}) ? T{1} : T{};
  return out;
}

/// Per-slice network output. Scalar head: (dim, T). Dense head: (W, H, 2, T).
template <typename T = double>
struct Prediction {
  HeadKind kind = HeadKind::scalar_regression;
  Tensor<T> values;

  std::size_t slices() const { return values.shape().back(); }

  /// Output for slice t: (dim) or (W, H, 2).
  Tensor<T> slice(std::size_t t) const {
    if (values.rank() == 4) return time_slice(values, t);
    Tensor<T> out({values.dim(0)});
    for (std::size_t d = 0; d < values.dim(0); ++d) out[d] = values(d, t);
    return out;
  }
};

/// Graph outputs of a whole-window forward pass.
template <typename T = double>
struct GraphOutputs {
  std::vector<ad::Var<T>> scalar;  // per slice, (dim)
  struct Flow {
    std::size_t layer;
    std::vector<ad::Var<T>> slices;  // per slice, (w, h, 2)
  };
  std::vector<Flow> flows;  // coarse to fine; the last one is full resolution
};

namespace detail {
template <typename T>
void check_input(const NetworkConfig& cfg, const Tensor<T>& volume, const Tensor<T>& masks) {
  if (volume.rank() != 4 || volume.dim(0) != cfg.width || volume.dim(1) != cfg.height || volume.dim(2) != cfg.in_channels) {
    throw ShapeError("network input " + to_string(volume.shape()) + " does not match configured " +
                     std::to_string(cfg.width) + "x" + std::to_string(cfg.height) + "x" + std::to_string(cfg.in_channels));
  }
  if (masks.shape() != Shape{cfg.width, cfg.height, volume.dim(3)}) {
    throw ShapeError("network mask " + to_string(masks.shape()) + " does not match input volume");
  }
}
}  // namespace detail

/// Whole-window forward pass on the autodiff graph, one layer at a time over
/// all slices (layer-major order).
template <typename T>
GraphOutputs<T> forward_graph(const Network<T>& net, const Tensor<T>& volume, const Tensor<T>& masks) {
  const auto& cfg = net.config();
  const auto& shapes = net.shapes();
  detail::check_input(cfg, volume, masks);
  const std::size_t TT = volume.dim(3), L = cfg.layers.size();

  std::vector<std::vector<ad::Var<T>>> acts(L + 1);
  std::vector<std::vector<Tensor<T>>> mask_of(L + 1);
  for (std::size_t t = 0; t < TT; ++t) {
    acts[0].push_back(ad::Var<T>::constant(time_slice(volume, t)));
    mask_of[0].push_back(mask_slice(masks, t));
  }
  for (std::size_t i = 1; i <= L; ++i) {
    const auto& spec = cfg.layers[i - 1];
    const auto& shape = shapes[i - 1];
    const EdecUnroll<T> unroll(net.layer_params(i), spec.stride, Padding::same, spec.mode, shape.in_w, shape.in_h);
    const auto skip = cfg.skip_into(i);
    auto state = unroll.initial_state();
    for (std::size_t t = 0; t < TT; ++t) {
      auto x = acts[i - 1][t];
      auto m = mask_of[i - 1][t];
      if (spec.upsample > 1) {
        x = ad::upsample_nearest(x, shape.in_w, shape.in_h);
        m = upsample_nearest(m, shape.in_w, shape.in_h);
      }
      if (skip) {
        x = ad::concat_channels(x, acts[*skip][t]);
        m = mask_union(m, mask_of[*skip][t]);
      }
      auto r = unroll.step(x, m, state);
      state = {r.out, r.out_mask};
      acts[i].push_back(apply_activation(r.out, spec.activation));
      mask_of[i].push_back(std::move(r.out_mask));
    }
  }

  GraphOutputs<T> out;
  if (cfg.head.kind == HeadKind::scalar_regression) {
    const auto& w = net.param("head.weight");
    for (std::size_t t = 0; t < TT; ++t) {
      auto y = ad::matvec(ad::global_avg_pool(acts[L][t]), w);
      if (cfg.head.bias) y = ad::add(y, net.param("head.bias"));
      if (cfg.head.output_scale != 1.0) y = ad::scale(y, static_cast<T>(cfg.head.output_scale));
      out.scalar.push_back(std::move(y));
    }
  } else {
    for (std::size_t i = 1; i <= L; ++i) {
      if (!cfg.layers[i - 1].emits_flow) continue;
      typename GraphOutputs<T>::Flow flow{i, {}};
      const std::string base = "flow" + std::to_string(i);
      for (std::size_t t = 0; t < TT; ++t) {
        auto f = ad::conv2d(acts[i][t], net.param(base + ".weight"), 1, Padding::same);
        if (cfg.head.bias) f = ad::add_channel_bias(f, net.param(base + ".bias"));
        if (cfg.head.output_scale != 1.0) f = ad::scale(f, static_cast<T>(cfg.head.output_scale));
        flow.slices.push_back(std::move(f));
      }
      out.flows.push_back(std::move(flow));
    }
  }
  return out;
}

template <typename T>
Prediction<T> to_prediction(const GraphOutputs<T>& g) {
  if (!g.scalar.empty()) {
    const std::size_t TT = g.scalar.size(), D = g.scalar.front().value().size();
    Tensor<T> v({D, TT});
    for (std::size_t t = 0; t < TT; ++t)
      for (std::size_t d = 0; d < D; ++d) v(d, t) = g.scalar[t].value()[d];
    return {HeadKind::scalar_regression, std::move(v)};
  }
  std::vector<Tensor<T>> slices;
  for (const auto& s : g.flows.back().slices) slices.push_back(s.value());
  return {HeadKind::dense_per_pixel, stack_time(slices)};
}

/// Batch inference over a whole window.
template <typename T>
Prediction<T> forward(const Network<T>& net, const Tensor<T>& volume, const Tensor<T>& masks) {
  ad::NoGradGuard no_grad;
  return to_prediction(forward_graph(net, volume, masks));
}

template <typename T>
Prediction<T> forward(const Network<T>& net, const EventVolume<T>& volume) {
  return forward(net, volume.tensor, initial_mask(volume));
}

/// First slice index whose start time t * bin_width is at or after `settle`.
inline std::size_t settle_bins(Micros settle, Micros bin_width) {
  if (settle.count() <= 0) return 0;
  return static_cast<std::size_t>((settle.count() + bin_width.count() - 1) / bin_width.count());
}

/// Mean |pred - gt| over cells with valid = 1 and slice index >= first_slice;
/// 0 if no cell qualifies. Scalar predictions (dim, T) take `valid` as
/// (dim, T) or an empty/size-1 tensor meaning all valid; dense predictions
/// (W, H, C, T) take `valid` as (W, H, T).
template <typename T>
T loss_l1(const Tensor<T>& pred, const Tensor<T>& gt, const Tensor<T>& valid, std::size_t first_slice) {
  if (pred.shape() != gt.shape()) throw ShapeError("loss_l1: prediction/ground-truth shape mismatch");
  const std::size_t TT = pred.shape().back();
  T total{}, count{};
  if (pred.rank() == 2) {
    const bool all = valid.size() == 1;
    if (!all && valid.shape() != pred.shape()) throw ShapeError("loss_l1: valid mask shape");
    for (std::size_t d = 0; d < pred.dim(0); ++d)
      for (std::size_t t = first_slice; t < TT; ++t) {
        if (!all && valid(d, t) == T{}) continue;
        total += std::abs(pred(d, t) - gt(d, t));
        count += T{1};
      }
  } else {
    const std::size_t W = pred.dim(0), H = pred.dim(1), C = pred.dim(2);
    if (valid.shape() != Shape{W, H, TT}) throw ShapeError("loss_l1: valid mask shape");
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t t = first_slice; t < TT; ++t) {
          if (valid(x, y, t) == T{}) continue;
          for (std::size_t c = 0; c < C; ++c) {
            total += std::abs(pred(x, y, c, t) - gt(x, y, c, t));
            count += T{1};
          }
        }
  }
  return count > T{} ? total / count : T{};
}

/// Root mean squared error over slices >= first_slice and all dimensions.
template <typename T>
T metric_rmse(const Tensor<T>& pred, const Tensor<T>& gt, std::size_t first_slice) {
  if (pred.shape() != gt.shape() || pred.rank() != 2) throw ShapeError("metric_rmse expects matching (dim, T)");
  T total{};
  std::size_t n = 0;
  for (std::size_t d = 0; d < pred.dim(0); ++d)
    for (std::size_t t = first_slice; t < pred.dim(1); ++t) {
      const T e = pred(d, t) - gt(d, t);
      total += e * e;
      ++n;
    }
  return n ? std::sqrt(total / static_cast<T>(n)) : T{};
}

/// Accumulates squared errors across samples for dataset-level RMSE.
struct RmseAccumulator {
  double sum_sq = 0.0;
  std::size_t count = 0;

  template <typename T>
  void add(const Tensor<T>& pred, const Tensor<T>& gt, std::size_t first_slice) {
    for (std::size_t d = 0; d < pred.dim(0); ++d)
      for (std::size_t t = first_slice; t < pred.dim(1); ++t) {
        const double e = static_cast<double>(pred(d, t) - gt(d, t));
        sum_sq += e * e;
        ++count;
      }
  }
  double rmse() const { return count ? std::sqrt(sum_sq / static_cast<double>(count)) : 0.0; }
};

/// RMSE of the model divided by RMSE of the baseline predictor. The baseline
/// scores exactly 1.
inline double metric_relative_error(double model_rmse, double baseline_rmse) {
  if (baseline_rmse == 0.0) throw std::domain_error("relative error: baseline RMSE is zero");
  return model_rmse / baseline_rmse;
}

template <typename T>
T metric_relative_error(const Tensor<T>& pred, const Tensor<T>& gt, const Tensor<T>& baseline, std::size_t first_slice) {
  return static_cast<T>(metric_relative_error(static_cast<double>(metric_rmse(pred, gt, first_slice)),
                                              static_cast<double>(metric_rmse(baseline, gt, first_slice))));
}

/// Average endpoint error of (W, H, 2, T) flows over cells with valid = 1.
template <typename T>
T metric_aee(const Tensor<T>& pred, const Tensor<T>& gt, const Tensor<T>& valid) {
  if (pred.shape() != gt.shape() || pred.rank() != 4 || pred.dim(2) != 2) throw ShapeError("metric_aee expects (W,H,2,T)");
  const std::size_t W = pred.dim(0), H = pred.dim(1), TT = pred.dim(3);
  if (valid.shape() != Shape{W, H, TT}) throw ShapeError("metric_aee: valid mask shape");
  T total{};
  std::size_t n = 0;
  for (std::size_t x = 0; x < W; ++x)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t t = 0; t < TT; ++t) {
        if (valid(x, y, t) == T{}) continue;
        const T du = pred(x, y, 0, t) - gt(x, y, 0, t), dv = pred(x, y, 1, t) - gt(x, y, 1, t);
        total += std::sqrt(du * du + dv * dv);
        ++n;
      }
  return n ? total / static_cast<T>(n) : T{};
}

/// Training loss on the graph. Scalar head: masked-mean L1 over post-settle
/// slices. Dense head: the same per flow scale, against ground truth
/// block-averaged over valid pixels to that scale, summed with equal weights.
template <typename T>
ad::Var<T> graph_loss(const GraphOutputs<T>& out, const Tensor<T>& target, const Tensor<T>& valid, std::size_t first_slice) {
  std::vector<ad::Var<T>> terms;
  if (!out.scalar.empty()) {
    const std::size_t TT = out.scalar.size(), D = target.dim(0);
    const Tensor<T> ones({D}, T{1});
    for (std::size_t t = first_slice; t < TT; ++t) {
      Tensor<T> gt({D});
      for (std::size_t d = 0; d < D; ++d) gt[d] = target(d, t);
      terms.push_back(ad::weighted_l1_sum(out.scalar[t], gt, ones));
    }
    if (terms.empty()) return ad::Var<T>::constant(Tensor<T>::scalar(T{}));
    return ad::scale(ad::add_n(terms), T{1} / static_cast<T>(D * terms.size()));
  }
  const std::size_t W = target.dim(0), C = target.dim(2), TT = target.dim(3);
  for (const auto& flow : out.flows) {
    std::vector<ad::Var<T>> scale_terms;
    T count{};
    for (std::size_t t = first_slice; t < TT; ++t) {
      const auto& pred = flow.slices[t];
      const std::size_t w = pred.shape()[0], h = pred.shape()[1];
      auto gt = time_slice(target, t);
      auto v = mask_slice(valid, t);
      if (w != W) {
        const std::size_t factor = (W + w - 1) / w;
        auto [g2, v2] = masked_block_average(gt, v, factor);
        if (g2.dim(0) != w || g2.dim(1) != h) throw ShapeError("flow scale is not an integer downsampling of the input");
        gt = std::move(g2);
        v = std::move(v2);
      }
      const T n = sum(v);
      if (n == T{}) continue;
      count += n * static_cast<T>(C);
      scale_terms.push_back(ad::weighted_l1_sum(pred, gt, v));
    }
    if (!scale_terms.empty()) terms.push_back(ad::scale(ad::add_n(scale_terms), T{1} / count));
  }
  if (terms.empty()) return ad::Var<T>::constant(Tensor<T>::scalar(T{}));
  return ad::add_n(terms);
}

}  // namespace edenn
