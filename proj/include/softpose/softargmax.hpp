#pragma once

#include <cmath>
#include <vector>

#include "softpose/ops.hpp"
#include "softpose/tensor.hpp"

namespace softpose {

// Differentiable conversion of heat maps to coordinates: the expectation of
// the pixel position under the softmax-normalized map. Coordinates are
// normalized to [0,1) with one sample per pixel, so a map with the mass at
// column c reads as x = c / W.

namespace detail {

inline void check_heatmap(const Tensor& h, std::size_t expect_rank, const char* op) {
  if (h.rank() != expect_rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(expect_rank) +
                     " input, got " + shape_str(h.shape()));
  for (std::size_t e : h.shape())
    if (e == 0) throw ShapeError(std::string(op) + ": empty extent in " + shape_str(h.shape()));
  for (double v : h.values())
    if (!std::isfinite(v)) throw ValueError(std::string(op) + ": non-finite heat map entry");
}

// Constant grid with value f(l, c) at position (l, c).
template <typename F>
Tensor coord_grid(Tape& tape, std::size_t H, std::size_t W, F f) {
  std::vector<double> g(H * W);
  for (std::size_t l = 0; l < H; ++l)
    for (std::size_t c = 0; c < W; ++c) g[l * W + c] = f(l, c);
  return tape.constant({H, W}, std::move(g));
}

}  // namespace detail

struct JointCoordinate2d {
  Tensor x;  // column expectation, in [0,1)
  Tensor y;  // line expectation, in [0,1)
};

// Softmax-normalized map; non-negative and sums to one. The byproduct used
// as spatial attention for appearance pooling.
inline Tensor probability_map(const Tensor& h) {
  detail::check_heatmap(h, 2, "probability_map");
  return softmax(h, {0, 1});
}

inline JointCoordinate2d soft_argmax_2d(const Tensor& h) {
  detail::check_heatmap(h, 2, "soft_argmax_2d");
  Tape& tape = *h.tape();
  const std::size_t H = h.shape()[0], W = h.shape()[1];
  Tensor p = softmax(h, {0, 1});
  Tensor gx = detail::coord_grid(tape, H, W, [W](std::size_t, std::size_t c) {
    return static_cast<double>(c) / static_cast<double>(W);
  });
  Tensor gy = detail::coord_grid(tape, H, W, [H](std::size_t l, std::size_t) {
    return static_cast<double>(l) / static_cast<double>(H);
  });
  return {reduce_sum(multiply_elementwise(p, gx)),
          reduce_sum(multiply_elementwise(p, gy))};
}

// One-dimensional variant used for the depth coordinate.
inline Tensor soft_argmax_1d(const Tensor& v) {
  detail::check_heatmap(v, 1, "soft_argmax_1d");
  Tape& tape = *v.tape();
  const std::size_t N = v.shape()[0];
  Tensor p = softmax(v, {0});
  std::vector<double> g(N);
  for (std::size_t d = 0; d < N; ++d) g[d] = static_cast<double>(d) / static_cast<double>(N);
  Tensor grid = tape.constant({N}, std::move(g));
  return reduce_sum(multiply_elementwise(p, grid));
}

// Sigmoid of the map maximum; the gradient reaches only the (first) argmax
// entry, matching the reduce_max tie rule.
inline Tensor joint_visibility(const Tensor& h) {
  detail::check_heatmap(h, 2, "joint_visibility");
  return sigmoid(reduce_max(h));
}

}  // namespace softpose
