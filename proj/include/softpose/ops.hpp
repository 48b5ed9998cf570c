#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "softpose/tensor.hpp"

namespace softpose {

enum class Padding { kSame, kValid };

namespace detail {

inline Tape& tape_of(const Tensor& t, const char* op) {
  if (!t) throw ValueError(std::string(op) + ": empty tensor handle");
  return *t.tape();
}

inline void check_same_tape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.tape() != b.tape())
    throw ValueError(std::string(op) + ": operands live on different tapes");
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
}

// Row-major group key over the kept (non-axis) dims, per element.
inline void fill_group_keys(const Shape& shape, const std::vector<std::size_t>& axes,
                            std::vector<std::size_t>& keys) {
  const std::size_t rank = shape.size();
  std::vector<char> is_axis(rank, 0);
  for (std::size_t a : axes) is_axis[a] = 1;
  const std::size_t n = numel(shape);
  keys.assign(n, 0);
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t key = 0;
    for (std::size_t d = 0; d < rank; ++d)
      if (!is_axis[d]) key = key * shape[d] + idx[d];
    keys[i] = key;
    for (std::size_t d = rank; d-- > 0;) {
      if (++idx[d] < shape[d]) break;
      idx[d] = 0;
    }
  }
}

inline std::vector<std::size_t> checked_axes(const Shape& shape,
                                             std::vector<std::size_t> axes,
                                             const char* op) {
  if (axes.empty()) throw ValueError(std::string(op) + ": axis set is empty");
  std::sort(axes.begin(), axes.end());
  for (std::size_t i = 0; i < axes.size(); ++i) {
    if (axes[i] >= shape.size())
      throw ShapeError(std::string(op) + ": axis " + std::to_string(axes[i]) +
                       " out of range for rank " + std::to_string(shape.size()));
    if (i > 0 && axes[i] == axes[i - 1])
      throw ValueError(std::string(op) + ": duplicate axis " + std::to_string(axes[i]));
    if (shape[axes[i]] == 0)
      throw ShapeError(std::string(op) + ": axis " + std::to_string(axes[i]) +
                       " has empty extent");
  }
  return axes;
}

inline Shape kept_shape(const Shape& shape, const std::vector<std::size_t>& axes) {
  std::vector<char> is_axis(shape.size(), 0);
  for (std::size_t a : axes) is_axis[a] = 1;
  Shape out;
  for (std::size_t d = 0; d < shape.size(); ++d)
    if (!is_axis[d]) out.push_back(shape[d]);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_tape(a, b, "add");
  detail::check_same_shape(a, b, "add");
  Tape& t = detail::tape_of(a, "add");
  auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return t.record(a.shape(), std::move(out), {a.node(), b.node()},
                  [ai = a.node(), bi = b.node()](Tape& tp, int self) {
                    auto g = tp.grad_of(self);
                    if (auto ga = tp.grad_accum(ai); !ga.empty())
                      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                    if (auto gb = tp.grad_accum(bi); !gb.empty())
                      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_tape(a, b, "sub");
  detail::check_same_shape(a, b, "sub");
  Tape& t = detail::tape_of(a, "sub");
  auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return t.record(a.shape(), std::move(out), {a.node(), b.node()},
                  [ai = a.node(), bi = b.node()](Tape& tp, int self) {
                    auto g = tp.grad_of(self);
                    if (auto ga = tp.grad_accum(ai); !ga.empty())
                      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                    if (auto gb = tp.grad_accum(bi); !gb.empty())
                      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                  });
}

inline Tensor multiply_elementwise(const Tensor& a, const Tensor& b) {
  detail::check_same_tape(a, b, "multiply_elementwise");
  detail::check_same_shape(a, b, "multiply_elementwise");
  Tape& t = detail::tape_of(a, "multiply_elementwise");
  auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return t.record(a.shape(), std::move(out), {a.node(), b.node()},
                  [ai = a.node(), bi = b.node()](Tape& tp, int self) {
                    auto g = tp.grad_of(self);
                    auto av = tp.value_of(ai), bv = tp.value_of(bi);
                    if (auto ga = tp.grad_accum(ai); !ga.empty())
                      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
                    if (auto gb = tp.grad_accum(bi); !gb.empty())
                      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                  });
}

inline Tensor scale(const Tensor& x, double c) {
  Tape& t = detail::tape_of(x, "scale");
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * c;
  return t.record(x.shape(), std::move(out), {x.node()},
                  [xi = x.node(), c](Tape& tp, int self) {
                    auto g = tp.grad_of(self);
                    if (auto gx = tp.grad_accum(xi); !gx.empty())
                      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * c;
                  });
}

inline Tensor relu(const Tensor& x) {
  Tape& t = detail::tape_of(x, "relu");
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  return t.record(x.shape(), std::move(out), {x.node()},
                  [xi = x.node()](Tape& tp, int self) {
                    auto g = tp.grad_of(self);
                    auto gx = tp.grad_accum(xi);
                    if (gx.empty()) return;
                    auto xv = tp.value_of(xi);
                    for (std::size_t i = 0; i < g.size(); ++i)
                      if (xv[i] > 0.0) gx[i] += g[i];
                  });
}

inline Tensor sigmoid(const Tensor& x) {
  Tape& t = detail::tape_of(x, "sigmoid");
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-xv[i]));
  return t.record(x.shape(), std::move(out), {x.node()},
                  [xi = x.node()](Tape& tp, int self) {
                    auto g = tp.grad_of(self);
                    auto gx = tp.grad_accum(xi);
                    if (gx.empty()) return;
                    auto y = tp.value_of(self);
                    for (std::size_t i = 0; i < g.size(); ++i)
                      gx[i] += g[i] * y[i] * (1.0 - y[i]);
                  });
}

// Subgradient 0 at the origin.
inline Tensor abs(const Tensor& x) {
  Tape& t = detail::tape_of(x, "abs");
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(xv[i]);
  return t.record(x.shape(), std::move(out), {x.node()},
                  [xi = x.node()](Tape& tp, int self) {
                    auto g = tp.grad_of(self);
                    auto gx = tp.grad_accum(xi);
                    if (gx.empty()) return;
                    auto xv = tp.value_of(xi);
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      if (xv[i] > 0.0) gx[i] += g[i];
                      else if (xv[i] < 0.0) gx[i] -= g[i];
                    }
                  });
}

// Natural log; callers clamp the input into a positive range first.
inline Tensor log(const Tensor& x) {
  Tape& t = detail::tape_of(x, "log");
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(xv[i]);
  return t.record(x.shape(), std::move(out), {x.node()},
                  [xi = x.node()](Tape& tp, int self) {
                    auto g = tp.grad_of(self);
                    auto gx = tp.grad_accum(xi);
                    if (gx.empty()) return;
                    auto xv = tp.value_of(xi);
                    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / xv[i];
                  });
}

// Gradient passes only strictly inside the interval.
inline Tensor clamp(const Tensor& x, double lo, double hi) {
  if (!(lo < hi)) throw ValueError("clamp: lo must be < hi");
  Tape& t = detail::tape_of(x, "clamp");
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(std::max(xv[i], lo), hi);
  return t.record(x.shape(), std::move(out), {x.node()},
                  [xi = x.node(), lo, hi](Tape& tp, int self) {
                    auto g = tp.grad_of(self);
                    auto gx = tp.grad_accum(xi);
                    if (gx.empty()) return;
                    auto xv = tp.value_of(xi);
                    for (std::size_t i = 0; i < g.size(); ++i)
                      if (xv[i] > lo && xv[i] < hi) gx[i] += g[i];
                  });
}

// ---------------------------------------------------------------------------
// Softmax over an axis set, stabilized by max-subtraction.
// ---------------------------------------------------------------------------

inline Tensor softmax(const Tensor& x, std::vector<std::size_t> axes) {
  Tape& t = detail::tape_of(x, "softmax");
  const Shape& shape = x.shape();
  axes = detail::checked_axes(shape, std::move(axes), "softmax");
  const Shape kept = detail::kept_shape(shape, axes);
  const std::size_t n_groups = numel(kept);

  std::vector<std::size_t> keys;
  detail::fill_group_keys(shape, axes, keys);

  auto xv = x.values();
  std::vector<double> maxv(n_groups, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < xv.size(); ++i) maxv[keys[i]] = std::max(maxv[keys[i]], xv[i]);
  std::vector<double> out(xv.size());
  std::vector<double> sum(n_groups, 0.0);
  for (std::size_t i = 0; i < xv.size(); ++i) {
    out[i] = std::exp(xv[i] - maxv[keys[i]]);
    sum[keys[i]] += out[i];
  }
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] /= sum[keys[i]];

  return t.record(shape, std::move(out), {x.node()},
                  [xi = x.node(), axes, n_groups](Tape& tp, int self) {
                    auto g = tp.grad_of(self);
                    auto gx = tp.grad_accum(xi);
                    if (gx.empty()) return;
                    auto y = tp.value_of(self);
                    std::vector<std::size_t> keys;
                    detail::fill_group_keys(tp.shape_of(self), axes, keys);
                    std::vector<double> dot(n_groups, 0.0);
                    for (std::size_t i = 0; i < g.size(); ++i) dot[keys[i]] += g[i] * y[i];
                    for (std::size_t i = 0; i < g.size(); ++i)
                      gx[i] += y[i] * (g[i] - dot[keys[i]]);
                  });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor reduce_sum(const Tensor& x) {
  Tape& t = detail::tape_of(x, "reduce_sum");
  auto xv = x.values();
  double s = 0.0;
  for (double v : xv) s += v;
  return t.record(Shape{}, {s}, {x.node()},
                  [xi = x.node()](Tape& tp, int self) {
                    const double g = tp.grad_of(self)[0];
                    if (auto gx = tp.grad_accum(xi); !gx.empty())
                      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
                  });
}

inline Tensor reduce_sum(const Tensor& x, std::vector<std::size_t> axes) {
  Tape& t = detail::tape_of(x, "reduce_sum");
  const Shape& shape = x.shape();
  axes = detail::checked_axes(shape, std::move(axes), "reduce_sum");
  const Shape kept = detail::kept_shape(shape, axes);
  std::vector<std::size_t> keys;
  detail::fill_group_keys(shape, axes, keys);
  auto xv = x.values();
  std::vector<double> out(numel(kept), 0.0);
  for (std::size_t i = 0; i < xv.size(); ++i) out[keys[i]] += xv[i];
  return t.record(kept, std::move(out), {x.node()},
                  [xi = x.node(), axes](Tape& tp, int self) {
                    auto g = tp.grad_of(self);
                    auto gx = tp.grad_accum(xi);
                    if (gx.empty()) return;
                    std::vector<std::size_t> keys;
                    detail::fill_group_keys(tp.shape_of(xi), axes, keys);
                    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[keys[i]];
                  });
}

inline Tensor reduce_mean(const Tensor& x) {
  Tape& t = detail::tape_of(x, "reduce_mean");
  auto xv = x.values();
  if (xv.empty()) throw ShapeError("reduce_mean: empty tensor");
  double s = 0.0;
  for (double v : xv) s += v;
  const double inv = 1.0 / static_cast<double>(xv.size());
  return t.record(Shape{}, {s * inv}, {x.node()},
                  [xi = x.node(), inv](Tape& tp, int self) {
                    const double g = tp.grad_of(self)[0] * inv;
                    if (auto gx = tp.grad_accum(xi); !gx.empty())
                      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
                  });
}

inline Tensor reduce_mean(const Tensor& x, std::vector<std::size_t> axes) {
  Tape& t = detail::tape_of(x, "reduce_mean");
  const Shape& shape = x.shape();
  axes = detail::checked_axes(shape, std::move(axes), "reduce_mean");
  std::size_t group = 1;
  for (std::size_t a : axes) group *= shape[a];
  const double inv = 1.0 / static_cast<double>(group);
  const Shape kept = detail::kept_shape(shape, axes);
  std::vector<std::size_t> keys;
  detail::fill_group_keys(shape, axes, keys);
  auto xv = x.values();
  std::vector<double> out(numel(kept), 0.0);
  for (std::size_t i = 0; i < xv.size(); ++i) out[keys[i]] += xv[i] * inv;
  return t.record(kept, std::move(out), {x.node()},
                  [xi = x.node(), axes, inv](Tape& tp, int self) {
                    auto g = tp.grad_of(self);
                    auto gx = tp.grad_accum(xi);
                    if (gx.empty()) return;
                    std::vector<std::size_t> keys;
                    detail::fill_group_keys(tp.shape_of(xi), axes, keys);
                    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[keys[i]] * inv;
                  });
}

// Full reduction; the gradient is routed to the first maximum in row-major
// order. Joint visibility depends on this tie rule.
inline Tensor reduce_max(const Tensor& x) {
  Tape& t = detail::tape_of(x, "reduce_max");
  auto xv = x.values();
  if (xv.empty()) throw ShapeError("reduce_max: empty tensor");
  std::size_t arg = 0;
  for (std::size_t i = 1; i < xv.size(); ++i)
    if (xv[i] > xv[arg]) arg = i;
  return t.record(Shape{}, {xv[arg]}, {x.node()},
                  [xi = x.node(), arg](Tape& tp, int self) {
                    if (auto gx = tp.grad_accum(xi); !gx.empty())
                      gx[arg] += tp.grad_of(self)[0];
                  });
}

inline Tensor reduce_min(const Tensor& x) {
  Tape& t = detail::tape_of(x, "reduce_min");
  auto xv = x.values();
  if (xv.empty()) throw ShapeError("reduce_min: empty tensor");
  std::size_t arg = 0;
  for (std::size_t i = 1; i < xv.size(); ++i)
    if (xv[i] < xv[arg]) arg = i;
  return t.record(Shape{}, {xv[arg]}, {x.node()},
                  [xi = x.node(), arg](Tape& tp, int self) {
                    if (auto gx = tp.grad_accum(xi); !gx.empty())
                      gx[arg] += tp.grad_of(self)[0];
                  });
}

// ---------------------------------------------------------------------------
// Matmul
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::check_same_tape(a, b, "matmul");
  Tape& t = detail::tape_of(a, "matmul");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2)
    throw ShapeError("matmul: expects rank-2 operands, got " + shape_str(sa) + " and " +
                     shape_str(sb));
  if (sa[1] != sb[0])
    throw ShapeError("matmul: inner extents differ (lhs dim 1 = " + std::to_string(sa[1]) +
                     ", rhs dim 0 = " + std::to_string(sb[0]) + ")");
  const std::size_t m = sa[0], k = sa[1], n = sb[1];
  auto av = a.values(), bv = b.values();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av_ip = av[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av_ip * bv[p * n + j];
    }
  return t.record({m, n}, std::move(out), {a.node(), b.node()},
                  [ai = a.node(), bi = b.node(), m, k, n](Tape& tp, int self) {
                    auto g = tp.grad_of(self);
                    auto av = tp.value_of(ai), bv = tp.value_of(bi);
                    if (auto ga = tp.grad_accum(ai); !ga.empty())
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j) {
                          const double gij = g[i * n + j];
                          for (std::size_t p = 0; p < k; ++p)
                            ga[i * k + p] += gij * bv[p * n + j];
                        }
                    if (auto gb = tp.grad_accum(bi); !gb.empty())
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j) {
                          const double gij = g[i * n + j];
                          for (std::size_t p = 0; p < k; ++p)
                            gb[p * n + j] += gij * av[i * k + p];
                        }
                  });
}

// ---------------------------------------------------------------------------
// Convolutions. Cross-correlation semantics; input [B,H,W,Cin], kernel
// [S,S,Cin,Cout]. "same" zero-pads to a ceil(H/stride) output extent.
// ---------------------------------------------------------------------------

namespace detail {

struct ConvDims {
  std::size_t B, H, W, Cin, S, Cout, Hout, Wout, stride;
  std::ptrdiff_t pad_top, pad_left;
};

inline ConvDims conv_dims(const Shape& in, std::size_t S, std::size_t Cout,
                          std::size_t stride, Padding pad, const char* op) {
  if (in.size() != 4)
    throw ShapeError(std::string(op) + ": input must be rank 4 [B,H,W,C], got " +
                     shape_str(in));
  if (stride == 0) throw ValueError(std::string(op) + ": stride must be positive");
  if (S % 2 == 0)
    throw ShapeError(std::string(op) + ": kernel extent must be odd, got " +
                     std::to_string(S));
  ConvDims d;
  d.B = in[0], d.H = in[1], d.W = in[2], d.Cin = in[3];
  d.S = S, d.Cout = Cout, d.stride = stride;
  if (pad == Padding::kValid) {
    if (d.H < S || d.W < S)
      throw ShapeError(std::string(op) + ": input spatial extents " + shape_str({d.H, d.W}) +
                       " smaller than kernel " + std::to_string(S));
    d.Hout = (d.H - S) / stride + 1;
    d.Wout = (d.W - S) / stride + 1;
    d.pad_top = d.pad_left = 0;
  } else {
    d.Hout = (d.H + stride - 1) / stride;
    d.Wout = (d.W + stride - 1) / stride;
    const std::ptrdiff_t ph = std::max<std::ptrdiff_t>(
        0, static_cast<std::ptrdiff_t>((d.Hout - 1) * stride + S) - static_cast<std::ptrdiff_t>(d.H));
    const std::ptrdiff_t pw = std::max<std::ptrdiff_t>(
        0, static_cast<std::ptrdiff_t>((d.Wout - 1) * stride + S) - static_cast<std::ptrdiff_t>(d.W));
    d.pad_top = ph / 2;
    d.pad_left = pw / 2;
  }
  return d;
}

}  // namespace detail

inline Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride,
                     Padding padding) {
  detail::check_same_tape(input, kernel, "conv2d");
  Tape& t = detail::tape_of(input, "conv2d");
  const Shape& ks = kernel.shape();
  if (ks.size() != 4)
    throw ShapeError("conv2d: kernel must be rank 4 [S,S,Cin,Cout], got " + shape_str(ks));
  if (ks[0] != ks[1])
    throw ShapeError("conv2d: kernel must be square, got extents " +
                     std::to_string(ks[0]) + "x" + std::to_string(ks[1]));
  const auto d = detail::conv_dims(input.shape(), ks[0], ks[3], stride, padding, "conv2d");
  if (ks[2] != d.Cin)
    throw ShapeError("conv2d: kernel input channels (dim 2 = " + std::to_string(ks[2]) +
                     ") do not match input channels (dim 3 = " + std::to_string(d.Cin) + ")");

  auto in = input.values();
  auto k = kernel.values();
  std::vector<double> out(d.B * d.Hout * d.Wout * d.Cout, 0.0);
  for (std::size_t b = 0; b < d.B; ++b)
    for (std::size_t oy = 0; oy < d.Hout; ++oy)
      for (std::size_t ox = 0; ox < d.Wout; ++ox) {
        double* orow = &out[((b * d.Hout + oy) * d.Wout + ox) * d.Cout];
        for (std::size_t dy = 0; dy < d.S; ++dy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * d.stride + dy) - d.pad_top;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.H)) continue;
          for (std::size_t dx = 0; dx < d.S; ++dx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * d.stride + dx) - d.pad_left;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.W)) continue;
            const double* irow = &in[((b * d.H + iy) * d.W + ix) * d.Cin];
            const double* krow = &k[(dy * d.S + dx) * d.Cin * d.Cout];
            for (std::size_t ci = 0; ci < d.Cin; ++ci) {
              const double v = irow[ci];
              if (v == 0.0) continue;
              const double* kc = &krow[ci * d.Cout];
              for (std::size_t co = 0; co < d.Cout; ++co) orow[co] += v * kc[co];
            }
          }
        }
      }

  return t.record(
      {d.B, d.Hout, d.Wout, d.Cout}, std::move(out), {input.node(), kernel.node()},
      [ii = input.node(), ki = kernel.node(), d](Tape& tp, int self) {
        auto g = tp.grad_of(self);
        auto in = tp.value_of(ii);
        auto k = tp.value_of(ki);
        auto gin = tp.grad_accum(ii);
        auto gk = tp.grad_accum(ki);
        if (gin.empty() && gk.empty()) return;
        for (std::size_t b = 0; b < d.B; ++b)
          for (std::size_t oy = 0; oy < d.Hout; ++oy)
            for (std::size_t ox = 0; ox < d.Wout; ++ox) {
              const double* grow = &g[((b * d.Hout + oy) * d.Wout + ox) * d.Cout];
              for (std::size_t dy = 0; dy < d.S; ++dy) {
                const std::ptrdiff_t iy =
                    static_cast<std::ptrdiff_t>(oy * d.stride + dy) - d.pad_top;
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.H)) continue;
                for (std::size_t dx = 0; dx < d.S; ++dx) {
                  const std::ptrdiff_t ix =
                      static_cast<std::ptrdiff_t>(ox * d.stride + dx) - d.pad_left;
                  if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.W)) continue;
                  const std::size_t ibase = ((b * d.H + iy) * d.W + ix) * d.Cin;
                  const std::size_t kbase = (dy * d.S + dx) * d.Cin * d.Cout;
                  for (std::size_t ci = 0; ci < d.Cin; ++ci) {
                    double acc = 0.0;
                    const double* kc = &k[kbase + ci * d.Cout];
                    if (!gin.empty()) {
                      for (std::size_t co = 0; co < d.Cout; ++co) acc += grow[co] * kc[co];
                      gin[ibase + ci] += acc;
                    }
                    if (!gk.empty()) {
                      const double v = in[ibase + ci];
                      if (v != 0.0) {
                        double* gkc = &gk[kbase + ci * d.Cout];
                        for (std::size_t co = 0; co < d.Cout; ++co) gkc[co] += v * grow[co];
                      }
                    }
                  }
                }
              }
            }
      });
}

// One filter per input channel; kernel [S,S,C].
inline Tensor depthwise_conv2d(const Tensor& input, const Tensor& kernel,
                               std::size_t stride, Padding padding) {
  detail::check_same_tape(input, kernel, "depthwise_conv2d");
  Tape& t = detail::tape_of(input, "depthwise_conv2d");
  const Shape& ks = kernel.shape();
  if (ks.size() != 3)
    throw ShapeError("depthwise_conv2d: kernel must be rank 3 [S,S,C], got " + shape_str(ks));
  if (ks[0] != ks[1])
    throw ShapeError("depthwise_conv2d: kernel must be square, got extents " +
                     std::to_string(ks[0]) + "x" + std::to_string(ks[1]));
  const auto d = detail::conv_dims(input.shape(), ks[0], ks[2], stride, padding,
                                   "depthwise_conv2d");
  if (ks[2] != d.Cin)
    throw ShapeError("depthwise_conv2d: kernel channels (dim 2 = " + std::to_string(ks[2]) +
                     ") do not match input channels (dim 3 = " + std::to_string(d.Cin) + ")");

  auto in = input.values();
  auto k = kernel.values();
  std::vector<double> out(d.B * d.Hout * d.Wout * d.Cin, 0.0);
  for (std::size_t b = 0; b < d.B; ++b)
    for (std::size_t oy = 0; oy < d.Hout; ++oy)
      for (std::size_t ox = 0; ox < d.Wout; ++ox) {
        double* orow = &out[((b * d.Hout + oy) * d.Wout + ox) * d.Cin];
        for (std::size_t dy = 0; dy < d.S; ++dy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * d.stride + dy) - d.pad_top;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.H)) continue;
          for (std::size_t dx = 0; dx < d.S; ++dx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * d.stride + dx) - d.pad_left;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.W)) continue;
            const double* irow = &in[((b * d.H + iy) * d.W + ix) * d.Cin];
            const double* krow = &k[(dy * d.S + dx) * d.Cin];
            for (std::size_t c = 0; c < d.Cin; ++c) orow[c] += irow[c] * krow[c];
          }
        }
      }

  return t.record(
      {d.B, d.Hout, d.Wout, d.Cin}, std::move(out), {input.node(), kernel.node()},
      [ii = input.node(), ki = kernel.node(), d](Tape& tp, int self) {
        auto g = tp.grad_of(self);
        auto in = tp.value_of(ii);
        auto k = tp.value_of(ki);
        auto gin = tp.grad_accum(ii);
        auto gk = tp.grad_accum(ki);
        if (gin.empty() && gk.empty()) return;
        for (std::size_t b = 0; b < d.B; ++b)
          for (std::size_t oy = 0; oy < d.Hout; ++oy)
            for (std::size_t ox = 0; ox < d.Wout; ++ox) {
              const double* grow = &g[((b * d.Hout + oy) * d.Wout + ox) * d.Cin];
              for (std::size_t dy = 0; dy < d.S; ++dy) {
                const std::ptrdiff_t iy =
                    static_cast<std::ptrdiff_t>(oy * d.stride + dy) - d.pad_top;
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.H)) continue;
                for (std::size_t dx = 0; dx < d.S; ++dx) {
                  const std::ptrdiff_t ix =
                      static_cast<std::ptrdiff_t>(ox * d.stride + dx) - d.pad_left;
                  if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.W)) continue;
                  const std::size_t ibase = ((b * d.H + iy) * d.W + ix) * d.Cin;
                  const std::size_t kbase = (dy * d.S + dx) * d.Cin;
                  for (std::size_t c = 0; c < d.Cin; ++c) {
                    if (!gin.empty()) gin[ibase + c] += grow[c] * k[kbase + c];
                    if (!gk.empty()) gk[kbase + c] += grow[c] * in[ibase + c];
                  }
                }
              }
            }
      });
}

// Depthwise followed by 1x1 pointwise; pointwise kernel is [1,1,C,Cout].
inline Tensor separable_conv2d(const Tensor& input, const Tensor& depthwise_kernel,
                               const Tensor& pointwise_kernel, std::size_t stride = 1,
                               Padding padding = Padding::kSame) {
  const Shape& ps = pointwise_kernel.shape();
  if (ps.size() != 4 || ps[0] != 1 || ps[1] != 1)
    throw ShapeError("separable_conv2d: pointwise kernel must be [1,1,C,Cout], got " +
                     shape_str(ps));
  const Shape& ds = depthwise_kernel.shape();
  if (ds.size() == 3 && ps[2] != ds[2])
    throw ShapeError("separable_conv2d: pointwise input channels (dim 2 = " +
                     std::to_string(ps[2]) + ") do not match depthwise channels (dim 2 = " +
                     std::to_string(ds[2]) + ")");
  Tensor mid = depthwise_conv2d(input, depthwise_kernel, stride, padding);
  return conv2d(mid, pointwise_kernel, 1, Padding::kSame);
}

// ---------------------------------------------------------------------------
// Pooling / resampling
// ---------------------------------------------------------------------------

// 2x2 window, stride 2; odd trailing rows/columns are dropped. Ties go to the
// first element in row-major window order.
inline Tensor maxpool2x(const Tensor& x) {
  Tape& t = detail::tape_of(x, "maxpool2x");
  const Shape& s = x.shape();
  if (s.size() != 4)
    throw ShapeError("maxpool2x: input must be rank 4 [B,H,W,C], got " + shape_str(s));
  const std::size_t B = s[0], H = s[1], W = s[2], C = s[3];
  if (H < 2 || W < 2)
    throw ShapeError("maxpool2x: spatial extents must be >= 2, got " + shape_str({H, W}));
  const std::size_t Ho = H / 2, Wo = W / 2;
  auto xv = x.values();
  std::vector<double> out(B * Ho * Wo * C);
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t oy = 0; oy < Ho; ++oy)
      for (std::size_t ox = 0; ox < Wo; ++ox)
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t o = ((b * Ho + oy) * Wo + ox) * C + c;
          std::size_t best = ((b * H + oy * 2) * W + ox * 2) * C + c;
          double bv = xv[best];
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t idx = ((b * H + oy * 2 + dy) * W + ox * 2 + dx) * C + c;
              if (xv[idx] > bv) {
                bv = xv[idx];
                best = idx;
              }
            }
          out[o] = bv;
          argmax[o] = best;
        }
  return t.record({B, Ho, Wo, C}, std::move(out), {x.node()},
                  [xi = x.node(), argmax = std::move(argmax)](Tape& tp, int self) {
                    auto g = tp.grad_of(self);
                    auto gx = tp.grad_accum(xi);
                    if (gx.empty()) return;
                    for (std::size_t i = 0; i < g.size(); ++i) gx[argmax[i]] += g[i];
                  });
}

// Nearest-neighbour doubling of both spatial extents.
inline Tensor upsample2x(const Tensor& x) {
  Tape& t = detail::tape_of(x, "upsample2x");
  const Shape& s = x.shape();
  if (s.size() != 4)
    throw ShapeError("upsample2x: input must be rank 4 [B,H,W,C], got " + shape_str(s));
  const std::size_t B = s[0], H = s[1], W = s[2], C = s[3];
  auto xv = x.values();
  std::vector<double> out(B * 2 * H * 2 * W * C);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t y = 0; y < 2 * H; ++y)
      for (std::size_t w = 0; w < 2 * W; ++w) {
        const double* src = &xv[((b * H + y / 2) * W + w / 2) * C];
        double* dst = &out[((b * 2 * H + y) * 2 * W + w) * C];
        for (std::size_t c = 0; c < C; ++c) dst[c] = src[c];
      }
  return t.record({B, 2 * H, 2 * W, C}, std::move(out), {x.node()},
                  [xi = x.node(), B, H, W, C](Tape& tp, int self) {
                    auto g = tp.grad_of(self);
                    auto gx = tp.grad_accum(xi);
                    if (gx.empty()) return;
                    for (std::size_t b = 0; b < B; ++b)
                      for (std::size_t y = 0; y < 2 * H; ++y)
                        for (std::size_t w = 0; w < 2 * W; ++w) {
                          const double* src = &g[((b * 2 * H + y) * 2 * W + w) * C];
                          double* dst = &gx[((b * H + y / 2) * W + w / 2) * C];
                          for (std::size_t c = 0; c < C; ++c) dst[c] += src[c];
                        }
                  });
}

// ---------------------------------------------------------------------------
// Batchnorm (inference form): per-channel affine with fixed statistics.
// ---------------------------------------------------------------------------

inline Tensor batchnorm_inference(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                                  const Tensor& mean, const Tensor& var,
                                  double eps = 1e-5) {
  Tape& t = detail::tape_of(x, "batchnorm_inference");
  const Shape& s = x.shape();
  if (s.empty()) throw ShapeError("batchnorm_inference: input must have rank >= 1");
  const std::size_t C = s.back();
  for (const Tensor* p : {&gamma, &beta, &mean, &var}) {
    detail::check_same_tape(x, *p, "batchnorm_inference");
    if (p->shape() != Shape{C})
      throw ShapeError("batchnorm_inference: per-channel tensor must have shape [" +
                       std::to_string(C) + "], got " + shape_str(p->shape()));
  }
  auto xv = x.values();
  auto gv = gamma.values(), bv = beta.values(), mv = mean.values(), vv = var.values();
  std::vector<double> istd(C);
  for (std::size_t c = 0; c < C; ++c) istd[c] = 1.0 / std::sqrt(vv[c] + eps);
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const std::size_t c = i % C;
    out[i] = (xv[i] - mv[c]) * istd[c] * gv[c] + bv[c];
  }
  return t.record(
      s, std::move(out),
      {x.node(), gamma.node(), beta.node(), mean.node(), var.node()},
      [xi = x.node(), gi = gamma.node(), bi = beta.node(), mi = mean.node(),
       vi = var.node(), C, istd = std::move(istd)](Tape& tp, int self) {
        auto g = tp.grad_of(self);
        auto xv = tp.value_of(xi);
        auto gv = tp.value_of(gi);
        auto mv = tp.value_of(mi);
        auto gx = tp.grad_accum(xi);
        auto gg = tp.grad_accum(gi);
        auto gb = tp.grad_accum(bi);
        auto gm = tp.grad_accum(mi);
        auto gvr = tp.grad_accum(vi);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const std::size_t c = i % C;
          const double xhat = (xv[i] - mv[c]) * istd[c];
          if (!gx.empty()) gx[i] += g[i] * gv[c] * istd[c];
          if (!gg.empty()) gg[c] += g[i] * xhat;
          if (!gb.empty()) gb[c] += g[i];
          if (!gm.empty()) gm[c] -= g[i] * gv[c] * istd[c];
          if (!gvr.empty()) gvr[c] -= 0.5 * g[i] * gv[c] * xhat * istd[c] * istd[c];
        }
      });
}

// Adds a rank-1 bias over the last axis.
inline Tensor bias_add(const Tensor& x, const Tensor& bias) {
  detail::check_same_tape(x, bias, "bias_add");
  Tape& t = detail::tape_of(x, "bias_add");
  const Shape& s = x.shape();
  if (s.empty()) throw ShapeError("bias_add: input must have rank >= 1");
  const std::size_t C = s.back();
  if (bias.shape() != Shape{C})
    throw ShapeError("bias_add: bias must have shape [" + std::to_string(C) + "], got " +
                     shape_str(bias.shape()));
  auto xv = x.values();
  auto bv = bias.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] + bv[i % C];
  return t.record(s, std::move(out), {x.node(), bias.node()},
                  [xi = x.node(), bi = bias.node(), C](Tape& tp, int self) {
                    auto g = tp.grad_of(self);
                    if (auto gx = tp.grad_accum(xi); !gx.empty())
                      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                    if (auto gb = tp.grad_accum(bi); !gb.empty())
                      for (std::size_t i = 0; i < g.size(); ++i) gb[i % C] += g[i];
                  });
}

// ---------------------------------------------------------------------------
// Layout ops (value copies with gradient routing)
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& x, Shape new_shape) {
  Tape& t = detail::tape_of(x, "reshape");
  if (numel(new_shape) != x.size())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(new_shape));
  auto xv = x.values();
  return t.record(std::move(new_shape), std::vector<double>(xv.begin(), xv.end()),
                  {x.node()}, [xi = x.node()](Tape& tp, int self) {
                    auto g = tp.grad_of(self);
                    if (auto gx = tp.grad_accum(xi); !gx.empty())
                      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                  });
}

inline Tensor concat1d(const Tensor& a, const Tensor& b) {
  detail::check_same_tape(a, b, "concat1d");
  Tape& t = detail::tape_of(a, "concat1d");
  if (a.rank() != 1 || b.rank() != 1)
    throw ShapeError("concat1d: expects rank-1 operands, got " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  auto av = a.values(), bv = b.values();
  std::vector<double> out;
  out.reserve(av.size() + bv.size());
  out.insert(out.end(), av.begin(), av.end());
  out.insert(out.end(), bv.begin(), bv.end());
  return t.record({av.size() + bv.size()}, std::move(out), {a.node(), b.node()},
                  [ai = a.node(), bi = b.node(), na = av.size()](Tape& tp, int self) {
                    auto g = tp.grad_of(self);
                    if (auto ga = tp.grad_accum(ai); !ga.empty())
                      for (std::size_t i = 0; i < na; ++i) ga[i] += g[i];
                    if (auto gb = tp.grad_accum(bi); !gb.empty())
                      for (std::size_t i = na; i < g.size(); ++i) gb[i - na] += g[i];
                  });
}

inline Tensor stack_scalars(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ValueError("stack_scalars: empty input");
  Tape& t = detail::tape_of(xs[0], "stack_scalars");
  std::vector<double> out(xs.size());
  std::vector<int> parents(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    detail::check_same_tape(xs[0], xs[i], "stack_scalars");
    if (xs[i].size() != 1)
      throw ShapeError("stack_scalars: element " + std::to_string(i) + " has shape " +
                       shape_str(xs[i].shape()));
    out[i] = xs[i].values()[0];
    parents[i] = xs[i].node();
  }
  auto ids = parents;
  return t.record({xs.size()}, std::move(out), std::move(parents),
                  [ids = std::move(ids)](Tape& tp, int self) {
                    auto g = tp.grad_of(self);
                    for (std::size_t i = 0; i < ids.size(); ++i)
                      if (auto gp = tp.grad_accum(ids[i]); !gp.empty()) gp[0] += g[i];
                  });
}

// Stacks equally-shaped tensors along a new trailing axis.
inline Tensor stack_last_axis(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ValueError("stack_last_axis: empty input");
  Tape& t = detail::tape_of(xs[0], "stack_last_axis");
  const Shape base = xs[0].shape();
  const std::size_t n = xs.size(), m = numel(base);
  std::vector<double> out(m * n);
  std::vector<int> parents(n);
  for (std::size_t i = 0; i < n; ++i) {
    detail::check_same_tape(xs[0], xs[i], "stack_last_axis");
    if (xs[i].shape() != base)
      throw ShapeError("stack_last_axis: element " + std::to_string(i) + " has shape " +
                       shape_str(xs[i].shape()) + ", expected " + shape_str(base));
    auto v = xs[i].values();
    for (std::size_t j = 0; j < m; ++j) out[j * n + i] = v[j];
    parents[i] = xs[i].node();
  }
  Shape out_shape = base;
  out_shape.push_back(n);
  auto ids = parents;
  return t.record(std::move(out_shape), std::move(out), std::move(parents),
                  [ids = std::move(ids), m, n](Tape& tp, int self) {
                    auto g = tp.grad_of(self);
                    for (std::size_t i = 0; i < n; ++i)
                      if (auto gp = tp.grad_accum(ids[i]); !gp.empty())
                        for (std::size_t j = 0; j < m; ++j) gp[j] += g[j * n + i];
                  });
}

// Drops the last axis, keeping entry `index` of it.
inline Tensor index_last_axis(const Tensor& x, std::size_t index) {
  Tape& t = detail::tape_of(x, "index_last_axis");
  const Shape& s = x.shape();
  if (s.empty()) throw ShapeError("index_last_axis: input must have rank >= 1");
  const std::size_t C = s.back();
  if (index >= C)
    throw ShapeError("index_last_axis: index " + std::to_string(index) +
                     " out of range for extent " + std::to_string(C));
  Shape out_shape(s.begin(), s.end() - 1);
  const std::size_t m = numel(out_shape);
  auto xv = x.values();
  std::vector<double> out(m);
  for (std::size_t j = 0; j < m; ++j) out[j] = xv[j * C + index];
  return t.record(std::move(out_shape), std::move(out), {x.node()},
                  [xi = x.node(), C, index, m](Tape& tp, int self) {
                    auto g = tp.grad_of(self);
                    if (auto gx = tp.grad_accum(xi); !gx.empty())
                      for (std::size_t j = 0; j < m; ++j) gx[j * C + index] += g[j];
                  });
}

// Moves the last axis to the front: [d0,...,dk,C] -> [C,d0,...,dk]. Used to
// turn channel-stacked depth maps into [N_d,H,W] volumes.
inline Tensor move_last_axis_front(const Tensor& x) {
  Tape& t = detail::tape_of(x, "move_last_axis_front");
  const Shape s = x.shape();
  if (s.size() < 2)
    throw ShapeError("move_last_axis_front: input must have rank >= 2, got " + shape_str(s));
  const std::size_t C = s.back();
  Shape out_shape;
  out_shape.push_back(C);
  out_shape.insert(out_shape.end(), s.begin(), s.end() - 1);
  const std::size_t m = numel(s) / C;
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t c = 0; c < C; ++c) out[c * m + j] = xv[j * C + c];
  return t.record(std::move(out_shape), std::move(out), {x.node()},
                  [xi = x.node(), C, m](Tape& tp, int self) {
                    auto g = tp.grad_of(self);
                    if (auto gx = tp.grad_accum(xi); !gx.empty())
                      for (std::size_t j = 0; j < m; ++j)
                        for (std::size_t c = 0; c < C; ++c) gx[j * C + c] += g[c * m + j];
                  });
}

// Contiguous [c0, c1) range of the last axis.
inline Tensor slice_last_axis(const Tensor& x, std::size_t c0, std::size_t c1) {
  Tape& t = detail::tape_of(x, "slice_last_axis");
  const Shape& s = x.shape();
  if (s.empty()) throw ShapeError("slice_last_axis: input must have rank >= 1");
  const std::size_t C = s.back();
  if (c0 >= c1 || c1 > C)
    throw ShapeError("slice_last_axis: range [" + std::to_string(c0) + "," +
                     std::to_string(c1) + ") invalid for extent " + std::to_string(C));
  Shape out_shape(s.begin(), s.end() - 1);
  const std::size_t m = numel(out_shape), w = c1 - c0;
  out_shape.push_back(w);
  auto xv = x.values();
  std::vector<double> out(m * w);
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t c = 0; c < w; ++c) out[j * w + c] = xv[j * C + c0 + c];
  return t.record(std::move(out_shape), std::move(out), {x.node()},
                  [xi = x.node(), C, c0, w, m](Tape& tp, int self) {
                    auto g = tp.grad_of(self);
                    if (auto gx = tp.grad_accum(xi); !gx.empty())
                      for (std::size_t j = 0; j < m; ++j)
                        for (std::size_t c = 0; c < w; ++c)
                          gx[j * C + c0 + c] += g[j * w + c];
                  });
}

}  // namespace softpose
