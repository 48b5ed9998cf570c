#pragma once

// Brute-force reference implementations used as independent oracles. These
// deliberately avoid the library's op code paths: each is a direct nested
// loop over an explicitly padded buffer or the plain textbook formula.

#include <cmath>
#include <cstddef>
#include <vector>

#include "softpose/tensor.hpp"

namespace oracle {

using softpose::TensorData;

// Straightforward 6-nested-loop cross-correlation over an explicitly padded
// copy of the input. Matches TF-style "same" padding.
inline TensorData conv2d(const TensorData& in, const TensorData& k, std::size_t stride,
                         bool same) {
  const std::size_t B = in.shape[0], H = in.shape[1], W = in.shape[2], Cin = in.shape[3];
  const std::size_t S = k.shape[0], Cout = k.shape[3];
  std::size_t Hout, Wout, pad_top = 0, pad_left = 0;
  if (same) {
    Hout = (H + stride - 1) / stride;
    Wout = (W + stride - 1) / stride;
    const std::size_t need_h = (Hout - 1) * stride + S;
    const std::size_t need_w = (Wout - 1) * stride + S;
    pad_top = need_h > H ? (need_h - H) / 2 : 0;
    pad_left = need_w > W ? (need_w - W) / 2 : 0;
  } else {
    Hout = (H - S) / stride + 1;
    Wout = (W - S) / stride + 1;
  }
  const std::size_t Hp = H + 2 * S, Wp = W + 2 * S;  // generous padding
  std::vector<double> padded(B * Hp * Wp * Cin, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x)
        for (std::size_t c = 0; c < Cin; ++c)
          padded[((b * Hp + y + S) * Wp + (x + S)) * Cin + c] =
              in.values[((b * H + y) * W + x) * Cin + c];

  TensorData out = TensorData::zeros({B, Hout, Wout, Cout});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t oy = 0; oy < Hout; ++oy)
      for (std::size_t ox = 0; ox < Wout; ++ox)
        for (std::size_t co = 0; co < Cout; ++co) {
          double acc = 0.0;
          for (std::size_t dy = 0; dy < S; ++dy)
            for (std::size_t dx = 0; dx < S; ++dx)
              for (std::size_t ci = 0; ci < Cin; ++ci) {
                const std::size_t py = oy * stride + dy + S - pad_top;
                const std::size_t px = ox * stride + dx + S - pad_left;
                acc += padded[((b * Hp + py) * Wp + px) * Cin + ci] *
                       k.values[((dy * S + dx) * Cin + ci) * Cout + co];
              }
          out.values[((b * Hout + oy) * Wout + ox) * Cout + co] = acc;
        }
  return out;
}

inline TensorData matmul(const TensorData& a, const TensorData& b) {
  const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
  TensorData out = TensorData::zeros({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a.values[i * k + p] * b.values[p * n + j];
      out.values[i * n + j] = acc;
    }
  return out;
}

// Plain exp/sum softmax over the whole tensor, computed in extended precision.
inline std::vector<double> softmax_all(const std::vector<double>& x) {
  long double mx = x[0];
  for (double v : x) mx = std::max<long double>(mx, v);
  long double sum = 0.0L;
  std::vector<long double> e(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    e[i] = std::exp(static_cast<long double>(x[i]) - mx);
    sum += e[i];
  }
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<double>(e[i] / sum);
  return out;
}

// Direct double-loop expectation of (c/W, l/H) under softmax_all.
inline std::pair<double, double> soft_argmax_2d(const TensorData& h) {
  const std::size_t H = h.shape[0], W = h.shape[1];
  const std::vector<double> p = softmax_all(h.values);
  double x = 0.0, y = 0.0;
  for (std::size_t l = 0; l < H; ++l)
    for (std::size_t c = 0; c < W; ++c) {
      x += p[l * W + c] * static_cast<double>(c) / static_cast<double>(W);
      y += p[l * W + c] * static_cast<double>(l) / static_cast<double>(H);
    }
  return {x, y};
}

inline double soft_argmax_1d(const std::vector<double>& v) {
  const std::vector<double> p = softmax_all(v);
  double z = 0.0;
  for (std::size_t d = 0; d < v.size(); ++d)
    z += p[d] * static_cast<double>(d) / static_cast<double>(v.size());
  return z;
}

// 4-nested-loop attention pooling: out[j,f] = sum_{y,x} M[y,x,j] * F[y,x,f].
inline TensorData extract_appearance(const TensorData& F, const TensorData& M) {
  const std::size_t H = F.shape[0], W = F.shape[1], Nf = F.shape[2];
  const std::size_t Nj = M.shape[2];
  TensorData out = TensorData::zeros({Nj, Nf});
  for (std::size_t j = 0; j < Nj; ++j)
    for (std::size_t f = 0; f < Nf; ++f) {
      double acc = 0.0;
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
          acc += M.values[(y * W + x) * Nj + j] * F.values[(y * W + x) * Nf + f];
      out.values[j * Nf + f] = acc;
    }
  return out;
}

}  // namespace oracle
