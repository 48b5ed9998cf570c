#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "softpose/rng.hpp"
#include "softpose/tensor.hpp"

namespace softpose {

// Finite-difference verification of reverse-mode gradients. A builder
// constructs the graph from plain input tensors and returns the scalar loss
// together with the leaves whose gradients are under test; the checker
// compares backward results against central differences along random
// directions. This is the independent oracle behind the `gradcheck` command.

struct GradProbe {
  Tensor loss;
  std::vector<Tensor> inputs;
};

using GradBuilder = std::function<GradProbe(Tape&, const std::vector<TensorData>&)>;

inline double eval_loss(const GradBuilder& build, const std::vector<TensorData>& inputs) {
  Tape tape;
  return build(tape, inputs).loss.value();
}

// Worst relative error |g_ad . d - g_fd| / max(1, |g_fd|) over `directions`
// random unit perturbation directions. Only the leading inputs that the
// probe declared (probe.inputs[i] built from inputs[i]) are perturbed;
// trailing inputs act as fixed constants.
inline double gradcheck_max_rel_error(const GradBuilder& build,
                                      const std::vector<TensorData>& inputs, Rng& rng,
                                      int directions = 10, double h = 1e-5) {
  Tape tape;
  GradProbe probe = build(tape, inputs);
  tape.backward(probe.loss);
  const std::size_t n_perturb = probe.inputs.size();
  if (n_perturb > inputs.size())
    throw ValueError("gradcheck: probe declares more inputs than were provided");
  std::vector<std::vector<double>> ad_grads;
  ad_grads.reserve(n_perturb);
  std::size_t total = 0;
  for (const Tensor& in : probe.inputs) {
    ad_grads.push_back(tape.gradient(in));
    total += in.size();
  }

  double worst = 0.0;
  for (int dir = 0; dir < directions; ++dir) {
    std::vector<double> d(total);
    double norm2 = 0.0;
    for (double& v : d) {
      v = rng.normal();
      norm2 += v * v;
    }
    const double inv_norm = 1.0 / std::sqrt(norm2);
    for (double& v : d) v *= inv_norm;

    std::vector<TensorData> plus = inputs, minus = inputs;
    std::size_t off = 0;
    double ad = 0.0;
    for (std::size_t i = 0; i < n_perturb; ++i) {
      for (std::size_t j = 0; j < inputs[i].size(); ++j) {
        plus[i].values[j] += h * d[off];
        minus[i].values[j] -= h * d[off];
        ad += ad_grads[i][j] * d[off];
        ++off;
      }
    }
    const double fd = (eval_loss(build, plus) - eval_loss(build, minus)) / (2.0 * h);
    const double rel = std::fabs(ad - fd) / std::max(1.0, std::fabs(fd));
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace softpose
