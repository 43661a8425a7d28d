#pragma once

// Plain tensor kernels shared by the differentiable graph and the streaming
// inference path. All convolutions are cross-correlations (the kernel is not
// flipped), matching deep-learning convention:
//
//   out(x, y, co) = sum_{i, j, ci} in(x*s + i - pad_w, y*s + j - pad_h, ci) * K(i, j, ci, co)
//
// `same` padding zero-fills and yields ceil(W / s) outputs per axis. Plain
// layers therefore see a zero border; partial layers treat taps that fall
// outside the grid as absent instead.

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>

#include "edenn/parallel.hpp"
#include "edenn/tensor.hpp"

namespace edenn {

enum class Padding { same, valid };

inline const char* to_string(Padding p) { return p == Padding::same ? "same" : "valid"; }

struct ConvGeometry {
  std::size_t in_w = 0, in_h = 0;
  std::size_t k_w = 1, k_h = 1;
  std::size_t stride = 1;
  std::size_t pad_w = 0, pad_h = 0;
  std::size_t out_w = 0, out_h = 0;

  static ConvGeometry make(std::size_t in_w, std::size_t in_h, std::size_t k_w, std::size_t k_h,
                           std::size_t stride, Padding padding) {
    if (k_w % 2 == 0 || k_h % 2 == 0) {
      throw ShapeError("kernel extents must be odd, got " + std::to_string(k_w) + "x" + std::to_string(k_h));
    }
    if (stride == 0) throw ShapeError("stride must be positive");
    ConvGeometry g{in_w, in_h, k_w, k_h, stride, 0, 0, 0, 0};
    if (padding == Padding::same) {
      g.pad_w = (k_w - 1) / 2;
      g.pad_h = (k_h - 1) / 2;
      g.out_w = (in_w + stride - 1) / stride;
      g.out_h = (in_h + stride - 1) / stride;
    } else {
      if (in_w < k_w || in_h < k_h) {
        throw ShapeError("valid convolution needs input >= kernel, got " + std::to_string(in_w) + "x" +
                         std::to_string(in_h));
      }
      g.out_w = (in_w - k_w) / stride + 1;
      g.out_h = (in_h - k_h) / stride + 1;
    }
    return g;
  }

  /// Input coordinate hit by tap `i` of output column `x`; negative or
  /// >= in_w when the tap falls in the padding.
  long in_x(std::size_t x, std::size_t i) const {
    return static_cast<long>(x * stride + i) - static_cast<long>(pad_w);
  }
  long in_y(std::size_t y, std::size_t j) const {
    return static_cast<long>(y * stride + j) - static_cast<long>(pad_h);
  }
  bool inside(long ix, long iy) const {
    return ix >= 0 && iy >= 0 && ix < static_cast<long>(in_w) && iy < static_cast<long>(in_h);
  }
};

namespace detail {
template <typename T>
ConvGeometry conv_geometry(const Tensor<T>& input, const Tensor<T>& kernel, std::size_t stride, Padding padding) {
  if (input.rank() != 3) throw ShapeError("conv2d input must be (W,H,Cin), got " + to_string(input.shape()));
  if (kernel.rank() != 4) throw ShapeError("conv2d kernel must be (KW,KH,Cin,Cout), got " + to_string(kernel.shape()));
  if (input.dim(2) != kernel.dim(2)) {
    throw ShapeError("conv2d channel mismatch: input has " + std::to_string(input.dim(2)) +
                     " channels, kernel expects " + std::to_string(kernel.dim(2)));
  }
  return ConvGeometry::make(input.dim(0), input.dim(1), kernel.dim(0), kernel.dim(1), stride, padding);
}
}  // namespace detail

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, std::size_t stride = 1,
                 Padding padding = Padding::same) {
  const auto g = detail::conv_geometry(input, kernel, stride, padding);
  const std::size_t cin = kernel.dim(2), cout = kernel.dim(3);
  Tensor<T> out({g.out_w, g.out_h, cout});
  parallel_for(g.out_w, 4, [&](std::size_t x0, std::size_t x1) {
    for (std::size_t x = x0; x < x1; ++x) {
      for (std::size_t y = 0; y < g.out_h; ++y) {
        T* acc = &out(x, y, 0);
        for (std::size_t i = 0; i < g.k_w; ++i) {
          const long ix = g.in_x(x, i);
          if (ix < 0 || ix >= static_cast<long>(g.in_w)) continue;
          for (std::size_t j = 0; j < g.k_h; ++j) {
            const long iy = g.in_y(y, j);
            if (iy < 0 || iy >= static_cast<long>(g.in_h)) continue;
            const T* src = &input(static_cast<std::size_t>(ix), static_cast<std::size_t>(iy), 0);
            const T* k = &kernel(i, j, 0, 0);
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const T v = src[ci];
              if (v == T{}) continue;
              const T* kr = k + ci * cout;
              for (std::size_t co = 0; co < cout; ++co) acc[co] += v * kr[co];
            }
          }
        }
      }
    }
  });
  return out;
}

/// d(sum(gout * conv2d(x, K))) / dx.
template <typename T>
Tensor<T> conv2d_grad_input(const Tensor<T>& gout, const Tensor<T>& kernel, const Shape& input_shape,
                            std::size_t stride, Padding padding) {
  const auto g = ConvGeometry::make(input_shape.at(0), input_shape.at(1), kernel.dim(0), kernel.dim(1), stride, padding);
  const std::size_t cin = kernel.dim(2), cout = kernel.dim(3);
  Tensor<T> gin(input_shape);
  for (std::size_t x = 0; x < g.out_w; ++x) {
    for (std::size_t y = 0; y < g.out_h; ++y) {
      const T* go = &gout(x, y, 0);
      for (std::size_t i = 0; i < g.k_w; ++i) {
        const long ix = g.in_x(x, i);
        if (ix < 0 || ix >= static_cast<long>(g.in_w)) continue;
        for (std::size_t j = 0; j < g.k_h; ++j) {
          const long iy = g.in_y(y, j);
          if (iy < 0 || iy >= static_cast<long>(g.in_h)) continue;
          T* dst = &gin(static_cast<std::size_t>(ix), static_cast<std::size_t>(iy), 0);
          const T* k = &kernel(i, j, 0, 0);
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const T* kr = k + ci * cout;
            T s{};
            for (std::size_t co = 0; co < cout; ++co) s += go[co] * kr[co];
            dst[ci] += s;
          }
        }
      }
    }
  }
  return gin;
}

/// d(sum(gout * conv2d(x, K))) / dK.
template <typename T>
Tensor<T> conv2d_grad_kernel(const Tensor<T>& gout, const Tensor<T>& input, const Shape& kernel_shape,
                             std::size_t stride, Padding padding) {
  const auto g = ConvGeometry::make(input.dim(0), input.dim(1), kernel_shape.at(0), kernel_shape.at(1), stride, padding);
  const std::size_t cin = kernel_shape.at(2), cout = kernel_shape.at(3);
  Tensor<T> gk(kernel_shape);
  // Each kernel row i is owned by one thread.
  parallel_for(g.k_w, 1, [&](std::size_t i0, std::size_t i1) {
    for (std::size_t x = 0; x < g.out_w; ++x) {
      for (std::size_t i = i0; i < i1; ++i) {
        const long ix = g.in_x(x, i);
        if (ix < 0 || ix >= static_cast<long>(g.in_w)) continue;
        for (std::size_t y = 0; y < g.out_h; ++y) {
          const T* go = &gout(x, y, 0);
          for (std::size_t j = 0; j < g.k_h; ++j) {
            const long iy = g.in_y(y, j);
            if (iy < 0 || iy >= static_cast<long>(g.in_h)) continue;
            const T* src = &input(static_cast<std::size_t>(ix), static_cast<std::size_t>(iy), 0);
            T* dk = &gk(i, j, 0, 0);
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const T v = src[ci];
              if (v == T{}) continue;
              T* dr = dk + ci * cout;
              for (std::size_t co = 0; co < cout; ++co) dr[co] += v * go[co];
            }
          }
        }
      }
    }
  });
  return gk;
}

namespace detail {
template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

/// Number of trailing elements each element of `b` is broadcast over when
/// multiplying into `a`: 1 for equal shapes, C when b is a channel-less mask
/// ((W,H) or (W,H,1)) against (W,H,C).
template <typename T>
std::size_t broadcast_inner(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() == b.shape()) return 1;
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  const bool leading_match = sa.size() >= 2 && sb.size() >= sa.size() - 1 &&
                             std::equal(sa.begin(), sa.end() - 1, sb.begin());
  const bool tail_ok = sb.size() == sa.size() - 1 || (sb.size() == sa.size() && sb.back() == 1);
  if (!leading_match || !tail_ok) {
    throw ShapeError("hadamard: cannot broadcast " + to_string(sb) + " over " + to_string(sa));
  }
  return sa.back();
}
}  // namespace detail

/// Elementwise product. `b` may omit the trailing channel axis of `a`.
template <typename T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t inner = detail::broadcast_inner(a, b);
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i / inner];
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * s;
  return out;
}

/// a(..., c) * g(c) for a per-channel vector g.
template <typename T>
Tensor<T> scale_channels(const Tensor<T>& a, const Tensor<T>& g) {
  const std::size_t C = a.shape().back();
  if (g.size() != C) throw ShapeError("scale_channels: " + to_string(g.shape()) + " over " + to_string(a.shape()));
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * g[i % C];
  return out;
}

template <typename T>
T sum(const Tensor<T>& a) {
  T s{};
  for (auto v : a.values()) s += v;
  return s;
}

/// Sums a (KW, KH, Cin, Cout) kernel over its input channels, giving (KW, KH, 1, Cout).
template <typename T>
Tensor<T> reduce_input_channels(const Tensor<T>& kernel) {
  const std::size_t kw = kernel.dim(0), kh = kernel.dim(1), cin = kernel.dim(2), cout = kernel.dim(3);
  Tensor<T> out({kw, kh, 1, cout});
  for (std::size_t i = 0; i < kw; ++i)
    for (std::size_t j = 0; j < kh; ++j)
      for (std::size_t ci = 0; ci < cin; ++ci)
        for (std::size_t co = 0; co < cout; ++co) out(i, j, 0, co) += kernel(i, j, ci, co);
  return out;
}

/// Nearest-neighbour upsampling of (W, H, C) to (out_w, out_h, C), where
/// source cell = floor(x * W / out_w).
template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& a, std::size_t out_w, std::size_t out_h) {
  const std::size_t W = a.dim(0), H = a.dim(1), C = a.rank() > 2 ? a.dim(2) : 1;
  Shape shape = a.rank() > 2 ? Shape{out_w, out_h, C} : Shape{out_w, out_h};
  Tensor<T> out(shape);
  for (std::size_t x = 0; x < out_w; ++x) {
    const std::size_t sx = x * W / out_w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const std::size_t sy = y * H / out_h;
      for (std::size_t c = 0; c < C; ++c) out[(x * out_h + y) * C + c] = a[(sx * H + sy) * C + c];
    }
  }
  return out;
}

/// Adjoint of upsample_nearest: sums gradient cells back onto their source.
template <typename T>
Tensor<T> upsample_nearest_grad(const Tensor<T>& gout, const Shape& in_shape) {
  const std::size_t W = in_shape.at(0), H = in_shape.at(1), C = in_shape.size() > 2 ? in_shape[2] : 1;
  const std::size_t out_w = gout.dim(0), out_h = gout.dim(1);
  Tensor<T> gin(in_shape);
  for (std::size_t x = 0; x < out_w; ++x) {
    const std::size_t sx = x * W / out_w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const std::size_t sy = y * H / out_h;
      for (std::size_t c = 0; c < C; ++c) gin[(sx * H + sy) * C + c] += gout[(x * out_h + y) * C + c];
    }
  }
  return gin;
}

/// Concatenates two (W, H, *) tensors along the channel axis.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(1) != b.dim(1)) {
    throw ShapeError("concat_channels: " + to_string(a.shape()) + " with " + to_string(b.shape()));
  }
  const std::size_t W = a.dim(0), H = a.dim(1), ca = a.dim(2), cb = b.dim(2);
  Tensor<T> out({W, H, ca + cb});
  for (std::size_t p = 0; p < W * H; ++p) {
    std::copy_n(a.data() + p * ca, ca, out.data() + p * (ca + cb));
    std::copy_n(b.data() + p * cb, cb, out.data() + p * (ca + cb) + ca);
  }
  return out;
}

/// Sum over the (KW, KH) window centred on each cell of a (W, H) grid,
/// skipping cells outside the grid.
template <typename T>
Tensor<T> centered_window_sum(const Tensor<T>& grid, std::size_t k_w, std::size_t k_h) {
  const std::size_t W = grid.dim(0), H = grid.dim(1);
  const long rw = static_cast<long>(k_w / 2), rh = static_cast<long>(k_h / 2);
  Tensor<T> out({W, H});
  for (std::size_t x = 0; x < W; ++x) {
    for (std::size_t y = 0; y < H; ++y) {
      T s{};
      for (long dx = -rw; dx <= rw; ++dx) {
        const long ix = static_cast<long>(x) + dx;
        if (ix < 0 || ix >= static_cast<long>(W)) continue;
        for (long dy = -rh; dy <= rh; ++dy) {
          const long iy = static_cast<long>(y) + dy;
          if (iy < 0 || iy >= static_cast<long>(H)) continue;
          s += grid(static_cast<std::size_t>(ix), static_cast<std::size_t>(iy));
        }
      }
      out(x, y) = s;
    }
  }
  return out;
}

/// Sum of a (W, H) grid over each output cell's strided kernel footprint,
/// skipping taps that fall outside the grid.
template <typename T>
Tensor<T> footprint_sum(const Tensor<T>& grid, const ConvGeometry& g) {
  Tensor<T> out({g.out_w, g.out_h});
  for (std::size_t x = 0; x < g.out_w; ++x) {
    for (std::size_t y = 0; y < g.out_h; ++y) {
      T s{};
      for (std::size_t i = 0; i < g.k_w; ++i) {
        for (std::size_t j = 0; j < g.k_h; ++j) {
          const long ix = g.in_x(x, i), iy = g.in_y(y, j);
          if (g.inside(ix, iy)) s += grid(static_cast<std::size_t>(ix), static_cast<std::size_t>(iy));
        }
      }
      out(x, y) = s;
    }
  }
  return out;
}

/// Block-average downsampling of a (W, H, C) field by an integer factor,
/// counting only cells where `valid` (W, H) is nonzero. Cells with no valid
/// source keep value 0; the returned mask marks blocks with any valid cell.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> masked_block_average(const Tensor<T>& field, const Tensor<T>& valid, std::size_t factor) {
  const std::size_t W = field.dim(0), H = field.dim(1), C = field.dim(2);
  const std::size_t ow = (W + factor - 1) / factor, oh = (H + factor - 1) / factor;
  Tensor<T> out({ow, oh, C});
  Tensor<T> mask({ow, oh});
  for (std::size_t x = 0; x < ow; ++x) {
    for (std::size_t y = 0; y < oh; ++y) {
      T n{};
      for (std::size_t sx = x * factor; sx < std::min(W, (x + 1) * factor); ++sx) {
        for (std::size_t sy = y * factor; sy < std::min(H, (y + 1) * factor); ++sy) {
          if (valid(sx, sy) == T{}) continue;
          n += T{1};
          for (std::size_t c = 0; c < C; ++c) out(x, y, c) += field(sx, sy, c);
        }
      }
      if (n > T{}) {
        mask(x, y) = T{1};
        for (std::size_t c = 0; c < C; ++c) out(x, y, c) /= n;
      }
    }
  }
  return {out, mask};
}

}  // namespace edenn
