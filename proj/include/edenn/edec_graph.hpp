#pragma once

// Differentiable EDeC step built from autodiff ops. Mirrors the numeric path
// in edec.hpp term for term; the weighted scaling factor is differentiated
// through the kernel and the decay.

#include <optional>

#include "edenn/autodiff.hpp"
#include "edenn/edec.hpp"

namespace edenn {

template <typename T = double>
struct EdecParams {
  ad::Var<T> kernel;  // (KW, KH, Cin, Cout)
  ad::Var<T> theta;   // (Cout)
};

template <typename T = double>
struct GraphState {
  ad::Var<T> prev_output;  // undefined before the first slice
  Tensor<T> prev_mask;     // (W', H')
};

template <typename T = double>
struct GraphStep {
  ad::Var<T> out;
  Tensor<T> out_mask;
};

/// Per-pass view of one layer over a fixed input grid. Caches the terms that
/// depend only on the parameters (gamma, full-footprint kernel sums).
template <typename T = double>
class EdecUnroll {
 public:
  EdecUnroll(const EdecParams<T>& params, std::size_t stride, Padding padding, EdecMode mode, std::size_t in_w,
             std::size_t in_h)
      : params_(params), stride_(stride), padding_(padding), mode_(mode) {
    const auto& ks = params.kernel.shape();
    geom_ = ConvGeometry::make(in_w, in_h, ks[0], ks[1], stride, padding);
    cin_ = ks[2];
    cout_ = ks[3];
    gamma_ = ad::tanh(params.theta);
    if (mode == EdecMode::partial_weighted) {
      k_sum_ = ad::reduce_input_channels(params.kernel);
      full_ = ad::conv2d(ad::Var<T>::constant(Tensor<T>({in_w, in_h, 1}, T{1})), k_sum_, stride, padding);
      const auto temporal_total = centered_window_sum(Tensor<T>({geom_.out_w, geom_.out_h}, T{1}), geom_.k_w, geom_.k_h);
      numerator_ = ad::add(full_, ad::scale_channels(broadcast(temporal_total, static_cast<T>(cin_)), gamma_));
    }
  }

  const ConvGeometry& geometry() const { return geom_; }
  std::size_t out_channels() const { return cout_; }
  GraphState<T> initial_state() const { return {ad::Var<T>(), Tensor<T>({geom_.out_w, geom_.out_h})}; }

  GraphStep<T> step(const ad::Var<T>& x, const Tensor<T>& in_mask, const GraphState<T>& state) const {
    const bool partial = is_partial(mode_);
    const auto input = partial ? ad::mul_const(x, in_mask) : x;
    auto pre = ad::conv2d(input, params_.kernel, stride_, padding_);
    if (state.prev_output.defined()) {
      const auto prev = partial ? ad::mul_const(state.prev_output, state.prev_mask) : state.prev_output;
      pre = ad::add(pre, ad::scale_channels(prev, gamma_));
    }
    if (!partial) return {pre, Tensor<T>({geom_.out_w, geom_.out_h}, T{1})};

    if (mode_ == EdecMode::partial_original) {
      const auto alpha = alpha_original(in_mask, state.prev_mask, geom_);
      return {ad::mul_const(pre, alpha), propagate_mask(alpha)};
    }
    const auto a = ad::conv2d(ad::Var<T>::constant(in_mask.reshaped({geom_.in_w, geom_.in_h, 1})), k_sum_, stride_, padding_);
    const auto seen = centered_window_sum(state.prev_mask, geom_.k_w, geom_.k_h);
    const auto den = ad::add(a, ad::scale_channels(broadcast(seen, static_cast<T>(cin_)), gamma_));
    const auto alpha = ad::div_guarded(numerator_, den, static_cast<T>(kAlphaEpsilon));
    return {ad::mul(pre, alpha), propagate_mask(alpha.value())};
  }

 private:
  /// (W', H') grid times `s`, repeated over the output channels.
  ad::Var<T> broadcast(const Tensor<T>& grid, T s) const {
    Tensor<T> out({geom_.out_w, geom_.out_h, cout_});
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * grid[i / cout_];
    return ad::Var<T>::constant(std::move(out));
  }

  EdecParams<T> params_;
  std::size_t stride_;
  Padding padding_;
  EdecMode mode_;
  ConvGeometry geom_;
  std::size_t cin_ = 0, cout_ = 0;
  ad::Var<T> gamma_, k_sum_, full_, numerator_;
};

}  // namespace edenn
