#pragma once

#include <string>
#include <vector>

#include "softpose/action.hpp"
#include "softpose/gradcheck.hpp"
#include "softpose/pose.hpp"
#include "softpose/softargmax.hpp"

namespace softpose {

// Named finite-difference probes grouped by module, behind the `gradcheck`
// command and acceptance criterion 1. Fixtures are drawn from the given seed;
// every probe reports its worst relative error over 10 random directions.

struct GradSuiteEntry {
  std::string module;
  std::string op;
  double worst_rel_err = 0.0;
};

namespace detail {

inline TensorData rand_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  TensorData t = TensorData::zeros(std::move(shape));
  for (double& v : t.values) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace detail

inline std::vector<GradSuiteEntry> run_gradcheck_suite(const std::string& module,
                                                       std::uint64_t seed,
                                                       int directions = 10) {
  if (module != "all" && module != "softargmax" && module != "pose" && module != "action")
    throw ValueError("gradcheck: unknown module '" + module +
                     "' (expected all|softargmax|pose|action)");
  std::vector<GradSuiteEntry> results;
  const bool want_softargmax = module == "all" || module == "softargmax";
  const bool want_pose = module == "all" || module == "pose";
  const bool want_action = module == "all" || module == "action";

  auto run = [&](const char* mod, const char* op, const GradBuilder& build,
                 std::vector<TensorData> inputs, std::uint64_t salt) {
    Rng rng(seed * 1000003 + salt);
    results.push_back({mod, op, gradcheck_max_rel_error(build, inputs, rng, directions)});
  };
  Rng fix(seed);

  if (want_softargmax) {
    run("softargmax", "soft_argmax_2d",
        [](Tape& t, const std::vector<TensorData>& in) -> GradProbe {
          Tensor h = t.leaf(in[0], true);
          auto xy = soft_argmax_2d(h);
          return {add(xy.x, scale(xy.y, 0.5)), {h}};
        },
        {detail::rand_tensor({8, 9}, fix)}, 11);

    run("softargmax", "soft_argmax_1d",
        [](Tape& t, const std::vector<TensorData>& in) -> GradProbe {
          Tensor v = t.leaf(in[0], true);
          return {soft_argmax_1d(v), {v}};
        },
        {detail::rand_tensor({12}, fix)}, 12);

    run("softargmax", "joint_visibility",
        [](Tape& t, const std::vector<TensorData>& in) -> GradProbe {
          Tensor h = t.leaf(in[0], true);
          return {joint_visibility(h), {h}};
        },
        {detail::rand_tensor({7, 6}, fix)}, 13);

    run("softargmax", "probability_map",
        [](Tape& t, const std::vector<TensorData>& in) -> GradProbe {
          Tensor h = t.leaf(in[0], true);
          Tensor p = probability_map(h);
          return {reduce_sum(multiply_elementwise(p, p)), {h}};
        },
        {detail::rand_tensor({6, 6}, fix)}, 14);
  }

  if (want_pose) {
    run("pose", "conv2d_stack",
        [](Tape& t, const std::vector<TensorData>& in) -> GradProbe {
          Tensor x = t.leaf(in[0], true);
          Tensor k1 = t.leaf(in[1], true);
          Tensor k2 = t.leaf(in[2], true);
          Tensor h = relu(conv2d(x, k1, 2, Padding::kSame));
          return {reduce_sum(conv2d(h, k2, 1, Padding::kValid)), {x, k1, k2}};
        },
        {detail::rand_tensor({1, 8, 8, 2}, fix), detail::rand_tensor({3, 3, 2, 3}, fix),
         detail::rand_tensor({3, 3, 3, 2}, fix)},
        21);

    run("pose", "separable_conv_stack",
        [](Tape& t, const std::vector<TensorData>& in) -> GradProbe {
          Tensor x = t.leaf(in[0], true);
          Tensor dw1 = t.leaf(in[1], true);
          Tensor pw1 = t.leaf(in[2], true);
          Tensor dw2 = t.leaf(in[3], true);
          Tensor pw2 = t.leaf(in[4], true);
          Tensor h = relu(separable_conv2d(x, dw1, pw1));
          return {reduce_sum(separable_conv2d(h, dw2, pw2)), {x, dw1, pw1, dw2, pw2}};
        },
        {detail::rand_tensor({1, 6, 6, 2}, fix), detail::rand_tensor({3, 3, 2}, fix),
         detail::rand_tensor({1, 1, 2, 3}, fix), detail::rand_tensor({3, 3, 3}, fix),
         detail::rand_tensor({1, 1, 3, 2}, fix)},
        22);

    run("pose", "volume_to_pose",
        [](Tape& t, const std::vector<TensorData>& in) -> GradProbe {
          Tensor vol = t.leaf(in[0], true);
          Tensor bias = t.leaf(in[1], true);
          auto r = volume_to_pose_single(vol, bias);
          return {add(add(r.x, scale(r.y, 2.0)), scale(r.z, 3.0)), {vol, bias}};
        },
        {detail::rand_tensor({6, 5, 5}, fix), detail::rand_tensor({6}, fix)}, 23);

    {
      Pose target = Pose::make(4, 3);
      for (double& v : target.coords.values) v = fix.uniform(0.0, 1.0);
      target.valid[2] = 0;
      run("pose", "elastic_net_loss",
          [target](Tape& t, const std::vector<TensorData>& in) -> GradProbe {
            Tensor pred = t.leaf(in[0], true);
            return {elastic_net_loss(pred, target), {pred}};
          },
          {detail::rand_tensor({4, 3}, fix, 0.0, 1.0)}, 24);
    }

    {
      std::vector<double> targets = {1.0, 0.0, 1.0, 1.0};
      std::vector<std::uint8_t> valid = {1, 1, 0, 1};
      run("pose", "visibility_loss",
          [targets, valid](Tape& t, const std::vector<TensorData>& in) -> GradProbe {
            Tensor logits = t.leaf(in[0], true);
            return {visibility_loss(sigmoid(logits), targets, valid), {logits}};
          },
          {detail::rand_tensor({4}, fix, -2.0, 2.0)}, 25);
    }

    {
      Pose target = Pose::make(2, 3);
      for (double& v : target.coords.values) v = fix.uniform(0.2, 0.8);
      run("pose", "pose_head_composed",
          [target](Tape& t, const std::vector<TensorData>& in) -> GradProbe {
            Tensor v0 = t.leaf(in[0], true);
            Tensor v1 = t.leaf(in[1], true);
            auto readout = volume_to_pose({v0, v1});
            return {elastic_net_loss(readout.pose.coords, target), {v0, v1}};
          },
          {detail::rand_tensor({4, 5, 5}, fix), detail::rand_tensor({4, 5, 5}, fix)}, 26);
    }
  }

  if (want_action) {
    run("action", "extract_appearance",
        [](Tape& t, const std::vector<TensorData>& in) -> GradProbe {
          Tensor F = t.leaf(in[0], true);
          Tensor M = t.leaf(in[1], true);
          Tensor out = extract_appearance(F, M);
          return {reduce_sum(multiply_elementwise(out, out)), {F, M}};
        },
        {detail::rand_tensor({5, 4, 3}, fix), detail::rand_tensor({5, 4, 2}, fix)}, 31);

    run("action", "max_plus_min_pool",
        [](Tape& t, const std::vector<TensorData>& in) -> GradProbe {
          Tensor maps = t.leaf(in[0], true);
          return {action_loss(max_plus_min_pool(maps), 1), {maps}};
        },
        {detail::rand_tensor({5, 4, 3}, fix)}, 32);

    run("action", "aggregate",
        [](Tape& t, const std::vector<TensorData>& in) -> GradProbe {
          Tensor w = t.leaf(in[0], true);
          Tensor b = t.leaf(in[1], true);
          Tensor p = softmax(t.leaf(in[2]), {0});
          Tensor q = softmax(t.leaf(in[3]), {0});
          Tensor c = reshape(concat1d(p, q), {8, 1});
          Tensor out = softmax(bias_add(reshape(matmul(w, c), {4}), b), {0});
          return {action_loss(out, 2), {w, b}};
        },
        {detail::rand_tensor({4, 8}, fix), detail::rand_tensor({4}, fix),
         detail::rand_tensor({4}, fix), detail::rand_tensor({4}, fix)},
        33);

    run("action", "action_block_stack",
        [](Tape& t, const std::vector<TensorData>& in) -> GradProbe {
          Tensor x = t.leaf(in[0], true);
          Tensor k1 = t.leaf(in[1], true);
          Tensor k2 = t.leaf(in[2], true);
          Tensor u = relu(conv2d(reshape(x, {1, 6, 4, 2}), k1, 1, Padding::kSame));
          Tensor maps = reshape(conv2d(u, k2, 1, Padding::kSame), {6, 4, 3});
          return {action_loss(max_plus_min_pool(maps), 0), {x, k1, k2}};
        },
        {detail::rand_tensor({6, 4, 2}, fix), detail::rand_tensor({3, 3, 2, 5}, fix),
         detail::rand_tensor({1, 1, 5, 3}, fix)},
        34);
  }

  return results;
}

}  // namespace softpose
