#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "softpose/gradcheck.hpp"
#include "softpose/softargmax.hpp"

using namespace softpose;

namespace {

// Gaussian bump truncated at radius 5 so that interior translations are exact
// spatial permutations of the map.
TensorData bump_map(std::size_t H, std::size_t W, double cy, double cx, double amplitude,
                    double sigma = 1.0) {
  TensorData m = TensorData::zeros({H, W});
  for (std::size_t l = 0; l < H; ++l)
    for (std::size_t c = 0; c < W; ++c) {
      const double dy = static_cast<double>(l) - cy;
      const double dx = static_cast<double>(c) - cx;
      const double r2 = dx * dx + dy * dy;
      if (r2 > 25.0) continue;
      m.values[l * W + c] = amplitude * std::exp(-r2 / (2.0 * sigma * sigma));
    }
  return m;
}

}  // namespace

TEST_CASE("soft_argmax_2d approaches the spike position") {
  TensorData m = TensorData::zeros({8, 8});
  m.at({3, 5}) = 50.0;
  Tape tape;
  auto xy = soft_argmax_2d(tape.leaf(m));
  CHECK(std::fabs(xy.x.value() - 5.0 / 8.0) < 1e-6);
  CHECK(std::fabs(xy.y.value() - 3.0 / 8.0) < 1e-6);
}

TEST_CASE("soft_argmax_2d of a constant map is the uniform expectation") {
  Tape tape;
  auto xy = soft_argmax_2d(tape.constant({8, 8}, std::vector<double>(64, 2.0)));
  CHECK(xy.x.value() == doctest::Approx(0.4375).epsilon(1e-12));
  CHECK(xy.y.value() == doctest::Approx(0.4375).epsilon(1e-12));
}

TEST_CASE("soft_argmax_2d matches the double-loop expectation oracle") {
  Rng rng(101);
  for (int trial = 0; trial < 20; ++trial) {
    TensorData m = TensorData::zeros({12, 16});
    for (double& v : m.values) v = rng.uniform(-2.0, 2.0);
    Tape tape;
    auto xy = soft_argmax_2d(tape.leaf(m));
    auto [ox, oy] = oracle::soft_argmax_2d(m);
    CHECK(std::fabs(xy.x.value() - ox) < 1e-12);
    CHECK(std::fabs(xy.y.value() - oy) < 1e-12);
  }
}

TEST_CASE("soft_argmax_2d rejects non-finite maps") {
  TensorData m = TensorData::zeros({4, 4});
  m.values[5] = std::numeric_limits<double>::quiet_NaN();
  Tape tape;
  CHECK_THROWS_AS(soft_argmax_2d(tape.leaf(m)), ValueError);
}

TEST_CASE("soft_argmax_1d matches spike, constant and oracle cases") {
  Tape tape;
  std::vector<double> spike(16, 0.0);
  spike[7] = 50.0;
  CHECK(std::fabs(soft_argmax_1d(tape.constant({16}, spike)).value() - 7.0 / 16.0) < 1e-6);

  CHECK(soft_argmax_1d(tape.constant({16}, std::vector<double>(16, 1.0))).value() ==
        doctest::Approx(0.46875).epsilon(1e-12));

  Rng rng(103);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> v(16);
    for (double& e : v) e = rng.uniform(-2.0, 2.0);
    Tape t2;
    CHECK(std::fabs(soft_argmax_1d(t2.constant({16}, v)).value() - oracle::soft_argmax_1d(v)) <
          1e-12);
  }
}

TEST_CASE("joint_visibility is the sigmoid of the map maximum") {
  Tape tape;
  CHECK(joint_visibility(tape.constant({4, 4}, std::vector<double>(16, 0.0))).value() ==
        doctest::Approx(0.5));

  TensorData m = TensorData::zeros({4, 4});
  m.at({2, 1}) = 10.0;
  CHECK(joint_visibility(tape.leaf(m)).value() ==
        doctest::Approx(1.0 / (1.0 + std::exp(-10.0))).epsilon(1e-12));

  TensorData neg = TensorData::full({4, 4}, -12.0);
  neg.at({1, 3}) = -10.0;
  CHECK(joint_visibility(tape.leaf(neg)).value() ==
        doctest::Approx(1.0 / (1.0 + std::exp(10.0))).epsilon(1e-9));
}

TEST_CASE("visibility gradient reaches only the argmax entry") {
  TensorData m = TensorData::zeros({3, 3});
  m.at({1, 2}) = 4.0;
  Tape tape;
  Tensor h = tape.leaf(m, true);
  tape.backward(joint_visibility(h));
  const auto g = tape.gradient(h);
  int nonzero = 0;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (g[i] != 0.0) {
      ++nonzero;
      CHECK(i == 1 * 3 + 2);
    }
  CHECK(nonzero == 1);
}

TEST_CASE("probability_map is a distribution") {
  Tape tape;
  Tensor uniform = probability_map(tape.constant({5, 4}, std::vector<double>(20, 1.5)));
  for (double v : uniform.values()) CHECK(v == doctest::Approx(1.0 / 20.0).epsilon(1e-12));

  TensorData spike = TensorData::zeros({8, 8});
  spike.at({2, 2}) = 60.0;
  Tensor p = probability_map(tape.leaf(spike));
  CHECK(p.at({2, 2}) == doctest::Approx(1.0).epsilon(1e-9));

  Rng rng(107);
  for (int trial = 0; trial < 20; ++trial) {
    TensorData m = TensorData::zeros({6, 6});
    for (double& v : m.values) v = rng.uniform(-3.0, 3.0);
    Tensor q = probability_map(tape.leaf(m));
    double sum = 0.0;
    for (double v : q.values()) {
      CHECK(v >= 0.0);
      sum += v;
    }
    CHECK(std::fabs(sum - 1.0) < 1e-9);
  }
}

TEST_CASE("peak recovery within half a pixel over all interior centers") {
  // Amplitude 16: at the low end of the admissible range (>= 8) the uniform
  // e^0 background of a 32x32 map still carries >20% of the softmax mass and
  // biases the expectation by pixels; 16 leaves it below 1e-4.
  const std::size_t N = 32;
  double worst = 0.0;
  for (std::size_t cy = 1; cy < N - 1; ++cy)
    for (std::size_t cx = 1; cx < N - 1; ++cx) {
      TensorData m = bump_map(N, N, static_cast<double>(cy), static_cast<double>(cx), 16.0);
      Tape tape;
      auto xy = soft_argmax_2d(tape.leaf(m));
      const double px = xy.x.value() * static_cast<double>(N);
      const double py = xy.y.value() * static_cast<double>(N);
      const double err = std::hypot(px - static_cast<double>(cx), py - static_cast<double>(cy));
      worst = std::max(worst, err);
    }
  CHECK(worst <= 0.5);
}

TEST_CASE("shift equivariance of the bump response") {
  // The complement of the bump support does not translate with it, so the
  // residual background mass must sit below the 1e-6 budget; amplitude 24
  // keeps it near 4e-8.
  const std::size_t N = 32;
  TensorData base = bump_map(N, N, 12.0, 9.0, 24.0);
  Tape tape;
  auto base_xy = soft_argmax_2d(tape.leaf(base));
  for (int dl = -3; dl <= 3; dl += 2)
    for (int dc = -2; dc <= 4; dc += 3) {
      TensorData shifted = bump_map(N, N, 12.0 + dl, 9.0 + dc, 24.0);
      auto xy = soft_argmax_2d(tape.leaf(shifted));
      CHECK(std::fabs(xy.x.value() - base_xy.x.value() - dc / static_cast<double>(N)) < 1e-6);
      CHECK(std::fabs(xy.y.value() - base_xy.y.value() - dl / static_cast<double>(N)) < 1e-6);
    }
}

TEST_CASE("sharpening the map moves the output toward the hard argmax") {
  Rng rng(109);
  for (int trial = 0; trial < 5; ++trial) {
    TensorData m = bump_map(32, 32, 11.0 + trial, 17.0 - trial, 6.0, 1.5);
    for (double& v : m.values) v += rng.uniform(0.0, 0.35);
    std::size_t arg = 0;
    for (std::size_t i = 1; i < m.size(); ++i)
      if (m.values[i] > m.values[arg]) arg = i;
    const double ax = static_cast<double>(arg % 32) / 32.0;
    const double ay = static_cast<double>(arg / 32) / 32.0;

    double prev = std::numeric_limits<double>::infinity();
    for (double alpha : {1.0, 2.0, 4.0, 8.0}) {
      TensorData s = m;
      for (double& v : s.values) v *= alpha;
      Tape tape;
      auto xy = soft_argmax_2d(tape.leaf(s));
      const double dist = std::hypot(xy.x.value() - ax, xy.y.value() - ay);
      CHECK(dist <= prev);
      prev = dist;
    }
  }
}

TEST_CASE("soft_argmax gradients match finite differences") {
  Rng rng(113);
  GradBuilder build_x = [](Tape& tape, const std::vector<TensorData>& in) -> GradProbe {
    Tensor h = tape.leaf(in[0], true);
    auto xy = soft_argmax_2d(h);
    return {add(xy.x, scale(xy.y, 0.5)), {h}};
  };
  TensorData m = TensorData::zeros({6, 7});
  for (double& v : m.values) v = rng.uniform(-1.0, 1.0);
  CHECK(gradcheck_max_rel_error(build_x, {m}, rng) < 1e-4);

  GradBuilder build_vis = [](Tape& tape, const std::vector<TensorData>& in) -> GradProbe {
    Tensor h = tape.leaf(in[0], true);
    return {joint_visibility(h), {h}};
  };
  CHECK(gradcheck_max_rel_error(build_vis, {m}, rng) < 1e-4);

  GradBuilder build_1d = [](Tape& tape, const std::vector<TensorData>& in) -> GradProbe {
    Tensor v = tape.leaf(in[0], true);
    return {soft_argmax_1d(v), {v}};
  };
  TensorData v = TensorData::zeros({16});
  for (double& e : v.values) e = rng.uniform(-1.0, 1.0);
  CHECK(gradcheck_max_rel_error(build_1d, {v}, rng) < 1e-4);
}
