#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "softpose/gradcheck.hpp"
#include "softpose/pose.hpp"

using namespace softpose;

namespace {

TensorData random_volume(std::size_t nd, std::size_t h, std::size_t w, Rng& rng) {
  TensorData v = TensorData::zeros({nd, h, w});
  for (double& e : v.values) e = rng.uniform(-2.0, 2.0);
  return v;
}

Pose make_target(const std::vector<double>& coords, std::size_t nj, int label_dim) {
  Pose p = Pose::make(nj, label_dim);
  p.coords = TensorData({nj, static_cast<std::size_t>(label_dim)}, coords);
  return p;
}

}  // namespace

TEST_CASE("volume_to_pose approaches the spike position") {
  TensorData vol = TensorData::zeros({16, 8, 8});
  vol.at({7, 3, 5}) = 2048.0;
  Tape tape;
  auto r = volume_to_pose_single(tape.leaf(vol));
  CHECK(std::fabs(r.x.value() - 5.0 / 8.0) < 1e-5);
  CHECK(std::fabs(r.y.value() - 3.0 / 8.0) < 1e-5);
  CHECK(std::fabs(r.z.value() - 7.0 / 16.0) < 1e-5);
}

TEST_CASE("depth-constant volume reduces to the 2D soft-argmax") {
  Rng rng(211);
  TensorData slice = TensorData::zeros({8, 8});
  for (double& v : slice.values) v = rng.uniform(-2.0, 2.0);
  TensorData vol = TensorData::zeros({16, 8, 8});
  for (std::size_t d = 0; d < 16; ++d)
    for (std::size_t i = 0; i < 64; ++i) vol.values[d * 64 + i] = slice.values[i];

  Tape tape;
  auto r = volume_to_pose_single(tape.leaf(vol));
  auto xy = soft_argmax_2d(tape.leaf(slice));
  CHECK(r.x.value() == doctest::Approx(xy.x.value()).epsilon(1e-14));
  CHECK(r.y.value() == doctest::Approx(xy.y.value()).epsilon(1e-14));
  CHECK(r.z.value() == doctest::Approx(7.5 / 16.0).epsilon(1e-14));
}

TEST_CASE("volume_to_pose matches the marginalization oracle") {
  Rng rng(223);
  for (int trial = 0; trial < 20; ++trial) {
    TensorData vol = random_volume(16, 8, 8, rng);
    Tape tape;
    auto r = volume_to_pose_single(tape.leaf(vol));

    // Explicit marginal means, then the direct expectation formulas.
    TensorData mean_map = TensorData::zeros({8, 8});
    for (std::size_t d = 0; d < 16; ++d)
      for (std::size_t i = 0; i < 64; ++i) mean_map.values[i] += vol.values[d * 64 + i] / 16.0;
    std::vector<double> depth(16, 0.0);
    for (std::size_t d = 0; d < 16; ++d)
      for (std::size_t i = 0; i < 64; ++i) depth[d] += vol.values[d * 64 + i] / 64.0;

    auto [ox, oy] = oracle::soft_argmax_2d(mean_map);
    const double oz = oracle::soft_argmax_1d(depth);
    CHECK(std::fabs(r.x.value() - ox) < 1e-12);
    CHECK(std::fabs(r.y.value() - oy) < 1e-12);
    CHECK(std::fabs(r.z.value() - oz) < 1e-12);
  }
}

TEST_CASE("product volumes decompose exactly into their marginals") {
  // softmax(a) (x) softmax(b) is the softmax of the additive volume
  // v[d,l,c] = a[d] + b[l,c]; the readout must equal the per-marginal
  // soft-argmax results.
  Rng rng(227);
  std::vector<double> a(16);
  for (double& v : a) v = rng.uniform(-2.0, 2.0);
  TensorData b = TensorData::zeros({8, 8});
  for (double& v : b.values) v = rng.uniform(-2.0, 2.0);

  TensorData vol = TensorData::zeros({16, 8, 8});
  for (std::size_t d = 0; d < 16; ++d)
    for (std::size_t i = 0; i < 64; ++i) vol.values[d * 64 + i] = a[d] + b.values[i];

  Tape tape;
  auto r = volume_to_pose_single(tape.leaf(vol));
  auto xy = soft_argmax_2d(tape.leaf(b));
  Tensor z = soft_argmax_1d(tape.constant({16}, a));
  CHECK(std::fabs(r.x.value() - xy.x.value()) < 1e-9);
  CHECK(std::fabs(r.y.value() - xy.y.value()) < 1e-9);
  CHECK(std::fabs(r.z.value() - z.value()) < 1e-9);
}

TEST_CASE("multi-joint readout emits normalized probability maps") {
  Rng rng(229);
  Tape tape;
  std::vector<Tensor> vols;
  for (int j = 0; j < 3; ++j) vols.push_back(tape.leaf(random_volume(4, 6, 6, rng)));
  auto out = volume_to_pose(vols);
  CHECK(out.pose.coords.shape() == Shape{3, 3});
  CHECK(out.pose.visibility.shape() == Shape{3});
  REQUIRE(out.prob_maps.size() == 3);
  for (const Tensor& p : out.prob_maps) {
    double sum = 0.0;
    for (double v : p.values()) sum += v;
    CHECK(std::fabs(sum - 1.0) < 1e-9);
  }
}

TEST_CASE("elastic_net_loss of a perfect prediction is zero") {
  Tape tape;
  Pose target = make_target({0.1, 0.2, 0.7, 0.8}, 2, 2);
  Tensor pred = tape.leaf(target.coords, true);
  CHECK(elastic_net_loss(pred, target).value() == 0.0);
}

TEST_CASE("elastic_net_loss hand-computed example") {
  // Joint deltas (0.3, 0.4) and (0, 0): L1 = 0.7, L2^2 = 0.25 -> 0.95 / 2.
  Tape tape;
  Pose target = make_target({0.0, 0.0, 0.5, 0.5}, 2, 2);
  Tensor pred = tape.constant({2, 2}, {0.3, 0.4, 0.5, 0.5});
  CHECK(elastic_net_loss(pred, target).value() == doctest::Approx(0.475).epsilon(1e-12));
}

TEST_CASE("elastic_net_loss matches a per-joint loop oracle") {
  Rng rng(233);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t nj = 5;
    Pose target = Pose::make(nj, 3);
    TensorData pred = TensorData::zeros({nj, 3});
    for (double& v : target.coords.values) v = rng.uniform(0.0, 1.0);
    for (double& v : pred.values) v = rng.uniform(0.0, 1.0);
    target.valid[1] = 0;

    double expected = 0.0;
    std::size_t count = 0;
    for (std::size_t j = 0; j < nj; ++j) {
      if (!target.valid[j]) continue;
      ++count;
      double l1 = 0.0, l2 = 0.0;
      for (std::size_t d = 0; d < 3; ++d) {
        const double delta = pred.values[j * 3 + d] - target.coords.values[j * 3 + d];
        l1 += std::fabs(delta);
        l2 += delta * delta;
      }
      expected += l1 + l2;
    }
    expected /= static_cast<double>(count);

    Tape tape;
    CHECK(std::fabs(elastic_net_loss(tape.leaf(pred), target).value() - expected) < 1e-12);
  }
}

TEST_CASE("elastic_net_loss is invariant to joint permutation") {
  Rng rng(239);
  const std::size_t nj = 6;
  Pose target = Pose::make(nj, 2);
  TensorData pred = TensorData::zeros({nj, 2});
  for (double& v : target.coords.values) v = rng.uniform(0.0, 1.0);
  for (double& v : pred.values) v = rng.uniform(0.0, 1.0);

  Tape tape;
  const double base = elastic_net_loss(tape.leaf(pred), target).value();

  std::vector<std::size_t> perm = {3, 0, 5, 1, 4, 2};
  Pose ptarget = Pose::make(nj, 2);
  TensorData ppred = TensorData::zeros({nj, 2});
  for (std::size_t j = 0; j < nj; ++j)
    for (std::size_t d = 0; d < 2; ++d) {
      ptarget.coords.values[j * 2 + d] = target.coords.values[perm[j] * 2 + d];
      ppred.values[j * 2 + d] = pred.values[perm[j] * 2 + d];
    }
  CHECK(elastic_net_loss(tape.leaf(ppred), ptarget).value() == doctest::Approx(base).epsilon(1e-14));
}

TEST_CASE("elastic_net_loss requires a valid joint and never reads invalid targets") {
  Tape tape;
  Pose none = make_target({0.1, 0.2}, 1, 2);
  none.valid[0] = 0;
  Tensor pred = tape.constant({1, 2}, {0.3, 0.4});
  CHECK_THROWS_AS(elastic_net_loss(pred, none), ValueError);

  // NaN-poisoned invalid joints must not leak into the loss.
  Pose poisoned = Pose::make(3, 2);
  poisoned.coords.values = {0.1, 0.2, std::nan(""), std::nan(""), 0.5, 0.6};
  poisoned.valid[1] = 0;
  Tensor p3 = tape.constant({3, 2}, {0.15, 0.25, 0.9, 0.9, 0.55, 0.65});
  const double loss = elastic_net_loss(p3, poisoned).value();
  CHECK(std::isfinite(loss));

  // Perturbing the invalid target leaves the loss bitwise unchanged.
  Pose perturbed = poisoned;
  perturbed.coords.values[2] = 123.0;
  perturbed.coords.values[3] = -7.0;
  CHECK(elastic_net_loss(p3, perturbed).value() == loss);
}

TEST_CASE("visibility_loss constant and clamped limits") {
  Tape tape;
  Tensor half = tape.constant({3}, {0.5, 0.5, 0.5});
  Tensor perfect = tape.constant({3}, {1.0, 1.0, 1.0});
  std::vector<double> ones = {1.0, 1.0, 1.0};
  std::vector<std::uint8_t> valid = {1, 1, 1};
  CHECK(visibility_loss(half, ones, valid).value() ==
        doctest::Approx(-std::log(0.5)).epsilon(1e-12));
  CHECK(visibility_loss(perfect, ones, valid).value() ==
        doctest::Approx(-std::log(1.0 - 1e-7)).epsilon(1e-6));
}

TEST_CASE("visibility_loss matches the BCE formula oracle") {
  Rng rng(241);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t nj = 6;
    std::vector<double> v(nj), t(nj);
    std::vector<std::uint8_t> valid(nj, 1);
    for (std::size_t j = 0; j < nj; ++j) {
      v[j] = rng.uniform(0.05, 0.95);
      t[j] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    }
    valid[2] = 0;
    double expected = 0.0;
    for (std::size_t j = 0; j < nj; ++j) {
      if (!valid[j]) continue;
      expected += -(t[j] * std::log(v[j]) + (1.0 - t[j]) * std::log(1.0 - v[j]));
    }
    expected /= 5.0;
    Tape tape;
    CHECK(std::fabs(visibility_loss(tape.constant({nj}, v), t, valid).value() - expected) <
          1e-12);
  }
}

TEST_CASE("masked backward: 2D samples leave the depth path untouched") {
  Rng rng(251);
  TensorData vol = random_volume(8, 6, 6, rng);
  TensorData bias = TensorData::zeros({8});
  for (double& v : bias.values) v = rng.uniform(-0.5, 0.5);

  auto run = [&](int label_dim) {
    Tape tape;
    Tensor v = tape.leaf(vol, true);
    Tensor b = tape.leaf(bias, true);  // exclusive to the depth readout
    auto r = volume_to_pose_single(v, b);
    Tensor coords = reshape(stack_scalars({r.x, r.y, r.z}), {1, 3});
    Pose target = Pose::make(1, label_dim);
    target.coords.values.assign(static_cast<std::size_t>(label_dim), 0.25);
    tape.backward(elastic_net_loss(coords, target));
    return std::make_pair(tape.gradient(b), tape.gradient(v));
  };

  auto [gb2, gv2] = run(2);
  for (double g : gb2) CHECK(g == 0.0);  // exact zeros, not small values
  bool any_vol_grad = false;
  for (double g : gv2) any_vol_grad |= (g != 0.0);
  CHECK(any_vol_grad);  // (x,y) supervision still trains the volume

  auto [gb3, gv3] = run(3);
  bool any_bias_grad = false;
  for (double g : gb3) any_bias_grad |= (g != 0.0);
  CHECK(any_bias_grad);
}

TEST_CASE("mixed batch gradient is the sum of single-sample gradients") {
  Rng rng(257);
  TensorData vol2 = random_volume(8, 6, 6, rng);
  TensorData vol3 = random_volume(8, 6, 6, rng);
  TensorData bias = TensorData::zeros({8});
  for (double& v : bias.values) v = rng.uniform(-0.5, 0.5);

  Pose t2 = Pose::make(1, 2);
  t2.coords.values = {0.3, 0.6};
  Pose t3 = Pose::make(1, 3);
  t3.coords.values = {0.2, 0.4, 0.8};

  auto single = [&](const TensorData& vol, const Pose& target) {
    Tape tape;
    Tensor v = tape.leaf(vol, true);
    Tensor b = tape.leaf(bias, true);
    auto r = volume_to_pose_single(v, b);
    Tensor coords = reshape(stack_scalars({r.x, r.y, r.z}), {1, 3});
    tape.backward(elastic_net_loss(coords, target));
    return tape.gradient(b);
  };
  const auto gb_2d = single(vol2, t2);
  const auto gb_3d = single(vol3, t3);

  Tape tape;
  Tensor v2 = tape.leaf(vol2, true);
  Tensor v3 = tape.leaf(vol3, true);
  Tensor b = tape.leaf(bias, true);  // shared across the batch
  auto r2 = volume_to_pose_single(v2, b);
  auto r3 = volume_to_pose_single(v3, b);
  Tensor c2 = reshape(stack_scalars({r2.x, r2.y, r2.z}), {1, 3});
  Tensor c3 = reshape(stack_scalars({r3.x, r3.y, r3.z}), {1, 3});
  tape.backward(mixed_batch_loss({c2, c3}, {&t2, &t3}));
  const auto gb_mixed = tape.gradient(b);

  for (std::size_t i = 0; i < gb_mixed.size(); ++i)
    CHECK(std::fabs(gb_mixed[i] - (gb_2d[i] + gb_3d[i])) < 1e-12);
}

TEST_CASE("pose head gradient matches finite differences end to end") {
  Rng rng(263);
  Pose target = Pose::make(1, 3);
  target.coords.values = {0.4, 0.3, 0.6};
  GradBuilder build = [&target](Tape& tape, const std::vector<TensorData>& in) -> GradProbe {
    Tensor vol = tape.leaf(in[0], true);
    auto r = volume_to_pose_single(vol);
    Tensor coords = reshape(stack_scalars({r.x, r.y, r.z}), {1, 3});
    return {elastic_net_loss(coords, target), {vol}};
  };
  CHECK(gradcheck_max_rel_error(build, {random_volume(6, 5, 5, rng)}, rng) < 1e-4);
}

TEST_CASE("multi_crop_average: single prediction is returned unchanged") {
  Pose p = Pose::make(2, 2);
  p.coords.values = {0.2, 0.3, 0.6, 0.7};
  Pose avg = multi_crop_average({{p, CropTransform::identity()}});
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(avg.coords.values[i] == doctest::Approx(p.coords.values[i]).epsilon(1e-15));
}

TEST_CASE("multi_crop_average cancels a perfect mirror") {
  const std::size_t W = 32;
  Pose p = Pose::make(2, 2);
  p.coords.values = {0.25, 0.40, 0.70, 0.55};  // joints: left, right
  std::vector<std::pair<std::size_t, std::size_t>> pairs = {{0, 1}};

  CropTransform flip = CropTransform::horizontal_flip(W);
  Pose mirrored = Pose::make(2, 2);
  for (std::size_t j = 0; j < 2; ++j) {
    const std::size_t src = 1 - j;  // label swap
    double x = p.coords.values[src * 2 + 0], y = p.coords.values[src * 2 + 1];
    flip.apply(x, y);
    mirrored.coords.values[j * 2 + 0] = x;
    mirrored.coords.values[j * 2 + 1] = y;
  }

  Pose avg = multi_crop_average({{p, CropTransform::identity()}, {mirrored, flip}}, pairs);
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(std::fabs(avg.coords.values[i] - p.coords.values[i]) < 1e-12);
}

TEST_CASE("multi_crop_average recovers the pose from shifted crops") {
  Pose truth = Pose::make(3, 2);
  truth.coords.values = {0.30, 0.35, 0.55, 0.50, 0.45, 0.75};

  std::vector<CropPrediction> preds;
  for (const auto& [s, dx, dy] : std::vector<std::tuple<double, double, double>>{
           {1.0, 0.02, -0.03}, {0.9, -0.05, 0.04}, {1.1, 0.03, 0.01}}) {
    CropTransform t = CropTransform::shift_scale(s, dx, dy);
    Pose view = truth;
    for (std::size_t j = 0; j < 3; ++j) {
      double x = truth.coords.values[j * 2 + 0], y = truth.coords.values[j * 2 + 1];
      t.apply(x, y);
      view.coords.values[j * 2 + 0] = x;
      view.coords.values[j * 2 + 1] = y;
    }
    preds.push_back({view, t});
  }
  Pose avg = multi_crop_average(preds);
  for (std::size_t i = 0; i < 6; ++i)
    CHECK(std::fabs(avg.coords.values[i] - truth.coords.values[i]) < 1e-6);
}

TEST_CASE("multi_crop_average rejects an empty list") {
  CHECK_THROWS_AS(multi_crop_average({}), ValueError);
}
