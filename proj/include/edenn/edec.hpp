#pragma once

// Event Decay Convolution (EDeC) layer, numeric path.
//
// Each output channel (neuron) co owns a spatial kernel K(:, :, :, co) and a
// decay gamma(co) = tanh(theta(co)). The spatio-temporal kernel is
// K(x) * gamma^(taps - t) for t = 1..taps, so the newest slice has weight 1.
// That makes the layer a causal recursion
//
//   E(t) = K * I(t) + gamma (.) E(t - 1)
//
// which needs only the previous output slice as state. forward_dense() is the
// direct spatio-temporal sum and serves as the reference for the recursion.
//
// Partial modes mask the input and the recurrent state and rescale:
//
//   E(t) = alpha (.) [K * (I(t) (.) M_in) + gamma (.) (E(t-1) (.) M_state)]
//
// The spatial footprint of an output cell is its kernel window over the
// input grid; the temporal footprint is the same-size window centred on the
// cell in the output grid. Taps that fall outside either grid are not part of
// the footprint, so a fully observed input gives alpha == 1 at borders too.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "edenn/ops.hpp"
#include "edenn/random.hpp"
#include "edenn/tensor.hpp"

namespace edenn {

enum class EdecMode { dense, streaming, partial_original, partial_weighted };
enum class AlphaMode { original, weighted };

inline const char* to_string(EdecMode m) {
  switch (m) {
    case EdecMode::dense: return "dense";
    case EdecMode::streaming: return "streaming";
    case EdecMode::partial_original: return "partial_original";
    case EdecMode::partial_weighted: return "partial_weighted";
  }
  return "?";
}

inline EdecMode parse_mode(const std::string& s) {
  if (s == "dense") return EdecMode::dense;
  if (s == "streaming") return EdecMode::streaming;
  if (s == "partial_original") return EdecMode::partial_original;
  if (s == "partial_weighted") return EdecMode::partial_weighted;
  throw std::invalid_argument("unknown EDeC mode '" + s + "'");
}

inline bool is_partial(EdecMode m) { return m == EdecMode::partial_original || m == EdecMode::partial_weighted; }

/// Denominators below this magnitude give alpha = 0.
inline constexpr double kAlphaEpsilon = 1e-12;

template <typename T = double>
struct EdecLayer {
  Tensor<T> kernel;  // (KW, KH, Cin, Cout)
  Tensor<T> theta;   // (Cout); gamma = tanh(theta)
  std::size_t stride = 1;
  Padding padding = Padding::same;
  EdecMode mode = EdecMode::streaming;

  std::size_t kernel_w() const { return kernel.dim(0); }
  std::size_t kernel_h() const { return kernel.dim(1); }
  std::size_t in_channels() const { return kernel.dim(2); }
  std::size_t out_channels() const { return kernel.dim(3); }

  ConvGeometry geometry(std::size_t in_w, std::size_t in_h) const {
    return ConvGeometry::make(in_w, in_h, kernel_w(), kernel_h(), stride, padding);
  }

  /// Fan-in scaled uniform kernel, gamma = `initial_gamma` on every channel.
  static EdecLayer init(std::size_t k, std::size_t cin, std::size_t cout, std::size_t stride, EdecMode mode, Rng& rng,
                        double initial_gamma = 0.9) {
    EdecLayer layer;
    layer.kernel = Tensor<T>({k, k, cin, cout});
    const double bound = 1.0 / std::sqrt(static_cast<double>(k * k * cin));
    for (auto& v : layer.kernel.values()) v = static_cast<T>(rng.uniform(-bound, bound));
    layer.theta = Tensor<T>({cout}, static_cast<T>(std::atanh(initial_gamma)));
    layer.stride = stride;
    layer.mode = mode;
    return layer;
  }
};

template <typename T>
Tensor<T> effective_gamma(const EdecLayer<T>& layer) {
  Tensor<T> g(layer.theta.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = std::tanh(layer.theta[i]);
  return g;
}

/// K(x) * gamma^(taps - t) for t = 1..taps, as (KW, KH, Cin, Cout, taps).
template <typename T>
Tensor<T> materialize_kernel(const EdecLayer<T>& layer, std::size_t taps) {
  if (taps == 0) throw std::invalid_argument("materialize_kernel: need at least one tap");
  const auto gamma = effective_gamma(layer);
  const std::size_t n = layer.kernel.size(), cout = layer.out_channels();
  Shape shape = layer.kernel.shape();
  shape.push_back(taps);
  Tensor<T> out(shape);
  for (std::size_t i = 0; i < n; ++i) {
    const T g = gamma[i % cout];
    for (std::size_t t = 1; t <= taps; ++t) {
      out[i * taps + (t - 1)] = layer.kernel[i] * static_cast<T>(std::pow(g, static_cast<T>(taps - t)));
    }
  }
  return out;
}

/// Direct causal spatio-temporal convolution of a (W, H, Cin, T) volume with
/// the materialised decay kernel. Quadratic in T.
template <typename T>
Tensor<T> forward_dense(const Tensor<T>& volume, const EdecLayer<T>& layer) {
  if (volume.rank() != 4) throw ShapeError("forward_dense expects (W,H,Cin,T), got " + to_string(volume.shape()));
  const std::size_t TT = volume.dim(3);
  const auto full = materialize_kernel(layer, TT);
  const std::size_t n = layer.kernel.size();

  // tap_kernels[lag] = K * gamma^lag, read out of the materialised kernel.
  std::vector<Tensor<T>> tap_kernels(TT, Tensor<T>(layer.kernel.shape()));
  for (std::size_t lag = 0; lag < TT; ++lag)
    for (std::size_t i = 0; i < n; ++i) tap_kernels[lag][i] = full[i * TT + (TT - 1 - lag)];

  std::vector<Tensor<T>> slices;
  slices.reserve(TT);
  for (std::size_t t = 0; t < TT; ++t) slices.push_back(time_slice(volume, t));

  std::vector<Tensor<T>> outputs;
  outputs.reserve(TT);
  for (std::size_t t = 0; t < TT; ++t) {
    Tensor<T> acc;
    for (std::size_t tau = 0; tau <= t; ++tau) {
      auto term = conv2d(slices[tau], tap_kernels[t - tau], layer.stride, layer.padding);
      acc = tau == 0 ? std::move(term) : add(acc, term);
    }
    outputs.push_back(std::move(acc));
  }
  return stack_time(outputs);
}

/// Per-layer recurrent state: the previous output slice and its mask.
template <typename T = double>
struct StreamState {
  Tensor<T> prev_output;  // (W', H', Cout)
  Tensor<T> prev_mask;    // (W', H')
  bool initialized = false;

  static StreamState zeros(std::size_t out_w, std::size_t out_h, std::size_t cout) {
    return StreamState{Tensor<T>({out_w, out_h, cout}), Tensor<T>({out_w, out_h}), false};
  }
  static StreamState for_layer(const EdecLayer<T>& layer, std::size_t in_w, std::size_t in_h) {
    const auto g = layer.geometry(in_w, in_h);
    return zeros(g.out_w, g.out_h, layer.out_channels());
  }
};

template <typename T = double>
struct StepResult {
  Tensor<T> out;       // (W', H', Cout)
  Tensor<T> out_mask;  // (W', H')
  StreamState<T> state;
};

namespace detail {
template <typename T>
ConvGeometry check_step(const Tensor<T>& slice, const StreamState<T>& state, const EdecLayer<T>& layer) {
  if (slice.rank() != 3 || slice.dim(2) != layer.in_channels()) {
    throw ShapeError("EDeC step: slice " + to_string(slice.shape()) + " does not match layer input channels " +
                     std::to_string(layer.in_channels()));
  }
  const auto g = layer.geometry(slice.dim(0), slice.dim(1));
  const Shape expect{g.out_w, g.out_h, layer.out_channels()};
  if (state.prev_output.shape() != expect || state.prev_mask.shape() != Shape{g.out_w, g.out_h}) {
    throw ShapeError("EDeC step: state " + to_string(state.prev_output.shape()) + " does not match output geometry " +
                     to_string(expect));
  }
  return g;
}

template <typename T>
void check_mask(const Tensor<T>& mask, std::size_t w, std::size_t h, const char* what) {
  if (mask.rank() != 2 || mask.dim(0) != w || mask.dim(1) != h) {
    throw ShapeError(std::string(what) + " mask " + to_string(mask.shape()) + " does not match grid " +
                     std::to_string(w) + "x" + std::to_string(h));
  }
}

template <typename T>
Tensor<T> as_single_channel(const Tensor<T>& mask) {
  return mask.reshaped({mask.dim(0), mask.dim(1), 1});
}
}  // namespace detail

/// One recursion step: out = K * slice + gamma (.) prev_output.
template <typename T>
StepResult<T> forward_streaming_step(const Tensor<T>& slice, const StreamState<T>& state, const EdecLayer<T>& layer) {
  const auto g = detail::check_step(slice, state, layer);
  auto out = conv2d(slice, layer.kernel, layer.stride, layer.padding);
  const auto gamma = effective_gamma(layer);
  const std::size_t C = layer.out_channels();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += gamma[i % C] * state.prev_output[i];
  Tensor<T> ones({g.out_w, g.out_h}, T{1});
  return {out, ones, StreamState<T>{out, ones, true}};
}

/// Count-based scaling: (|spatial footprint| + |temporal footprint|) divided
/// by the number of observed cells in both; 0 when nothing is observed. For
/// interior cells the numerator is 2|Omega|.
template <typename T>
Tensor<T> alpha_original(const Tensor<T>& in_mask, const Tensor<T>& state_mask, const ConvGeometry& g) {
  detail::check_mask(in_mask, g.in_w, g.in_h, "input");
  detail::check_mask(state_mask, g.out_w, g.out_h, "state");
  const Tensor<T> in_ones({g.in_w, g.in_h}, T{1});
  const Tensor<T> out_ones({g.out_w, g.out_h}, T{1});
  const auto spatial_total = footprint_sum(in_ones, g);
  const auto temporal_total = centered_window_sum(out_ones, g.k_w, g.k_h);
  const auto spatial_seen = footprint_sum(in_mask, g);
  const auto temporal_seen = centered_window_sum(state_mask, g.k_w, g.k_h);
  Tensor<T> alpha({g.out_w, g.out_h});
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    const T den = spatial_seen[i] + temporal_seen[i];
    alpha[i] = den == T{} ? T{} : (spatial_total[i] + temporal_total[i]) / den;
  }
  return alpha;
}

/// Weight-aware scaling per output channel co:
///
///   alpha(x, co) = (gamma(co) Cin |Omega_t(x)| + sum_{c, d in Omega_s(x)} K_c^co(d)) / (a + gamma(co) b)
///   a = sum_{c, d} K_c^co(d) M_in(x + d),   b = Cin sum_{d in Omega_t(x)} M_state(x + d)
///
/// and 0 where |a + gamma b| < kAlphaEpsilon.
template <typename T>
Tensor<T> alpha_weighted(const EdecLayer<T>& layer, const Tensor<T>& in_mask, const Tensor<T>& state_mask) {
  const auto g = layer.geometry(in_mask.dim(0), in_mask.rank() > 1 ? in_mask.dim(1) : 1);
  detail::check_mask(in_mask, g.in_w, g.in_h, "input");
  detail::check_mask(state_mask, g.out_w, g.out_h, "state");
  const std::size_t C = layer.out_channels();
  const T cin = static_cast<T>(layer.in_channels());
  const auto gamma = effective_gamma(layer);
  const auto k_sum = reduce_input_channels(layer.kernel);
  const auto a = conv2d(detail::as_single_channel(in_mask), k_sum, layer.stride, layer.padding);
  const auto full = conv2d(Tensor<T>({g.in_w, g.in_h, 1}, T{1}), k_sum, layer.stride, layer.padding);
  const auto temporal_total = centered_window_sum(Tensor<T>({g.out_w, g.out_h}, T{1}), g.k_w, g.k_h);
  const auto temporal_seen = centered_window_sum(state_mask, g.k_w, g.k_h);
  Tensor<T> alpha({g.out_w, g.out_h, C});
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    const std::size_t cell = i / C, co = i % C;
    const T num = gamma[co] * cin * temporal_total[cell] + full[i];
    const T den = a[i] + gamma[co] * cin * temporal_seen[cell];
    alpha[i] = std::abs(den) < static_cast<T>(kAlphaEpsilon) ? T{} : num / den;
  }
  return alpha;
}

/// Output mask: 1 where alpha > 0 (for per-channel alpha, on any channel).
template <typename T>
Tensor<T> propagate_mask(const Tensor<T>& alpha) {
  const std::size_t W = alpha.dim(0), H = alpha.rank() > 1 ? alpha.dim(1) : 1;
  const std::size_t C = alpha.rank() > 2 ? alpha.dim(2) : 1;
  Tensor<T> mask({W, H});
  for (std::size_t p = 0; p < W * H; ++p) {
    for (std::size_t c = 0; c < C; ++c) {
      if (alpha[p * C + c] > T{}) {
        mask[p] = T{1};
        break;
      }
    }
  }
  return mask;
}

template <typename T>
StepResult<T> forward_partial_step(const Tensor<T>& slice, const Tensor<T>& in_mask, const StreamState<T>& state,
                                   const EdecLayer<T>& layer, AlphaMode alpha_mode) {
  const auto g = detail::check_step(slice, state, layer);
  detail::check_mask(in_mask, g.in_w, g.in_h, "input");
  auto out = conv2d(hadamard(slice, in_mask), layer.kernel, layer.stride, layer.padding);
  const auto gamma = effective_gamma(layer);
  const std::size_t C = layer.out_channels();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += gamma[i % C] * state.prev_output[i] * state.prev_mask[i / C];

  Tensor<T> out_mask;
  if (alpha_mode == AlphaMode::original) {
    const auto alpha = alpha_original(in_mask, state.prev_mask, g);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= alpha[i / C];
    out_mask = propagate_mask(alpha);
  } else {
    const auto alpha = alpha_weighted(layer, in_mask, state.prev_mask);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= alpha[i];
    out_mask = propagate_mask(alpha);
  }
  return {out, out_mask, StreamState<T>{out, out_mask, true}};
}

/// Dispatches on the layer mode. Plain layers ignore `in_mask` and report a
/// fully observed output.
template <typename T>
StepResult<T> forward_step(const Tensor<T>& slice, const Tensor<T>& in_mask, const StreamState<T>& state,
                           const EdecLayer<T>& layer) {
  switch (layer.mode) {
    case EdecMode::partial_original: return forward_partial_step(slice, in_mask, state, layer, AlphaMode::original);
    case EdecMode::partial_weighted: return forward_partial_step(slice, in_mask, state, layer, AlphaMode::weighted);
    default: return forward_streaming_step(slice, state, layer);
  }
}

}  // namespace edenn
