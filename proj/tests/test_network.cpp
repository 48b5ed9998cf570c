#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "softpose/network.hpp"
#include "softpose/optim.hpp"

using namespace softpose;

namespace {

NetworkConfig tiny_config(std::size_t njoints = 2, std::size_t blocks = 1) {
  NetworkConfig cfg;
  cfg.input_height = 16;
  cfg.input_width = 16;
  cfg.num_joints = njoints;
  cfg.depth_bins = 4;
  cfg.num_blocks = blocks;
  cfg.feature_channels = 8;
  cfg.stem_channels = 4;
  cfg.mid_channels = 6;
  return cfg;
}

TensorData random_image(std::size_t h, std::size_t w, Rng& rng) {
  TensorData img = TensorData::zeros({h, w, 3});
  for (double& v : img.values) v = rng.uniform(0.0, 1.0);
  return img;
}

}  // namespace

TEST_CASE("entry flow produces [4,4,64] features for a 32x32 input") {
  NetworkConfig cfg;
  cfg.input_height = 32;
  cfg.input_width = 32;
  cfg.num_joints = 4;
  cfg.depth_bins = 4;
  cfg.num_blocks = 1;
  cfg.feature_channels = 64;
  cfg.stem_channels = 8;
  cfg.mid_channels = 16;
  Rng rng(1);
  PoseNetwork net(cfg, rng);
  Tape tape;
  auto bound = net.bind(tape);
  auto out = net.forward(tape, bound, random_image(32, 32, rng));
  CHECK(out.features.shape() == Shape{4, 4, 64});
}

TEST_CASE("forward rejects images with the wrong extent") {
  Rng rng(14);
  PoseNetwork net(tiny_config(), rng);
  Tape tape;
  auto bound = net.bind(tape);
  CHECK_THROWS_WITH_AS(net.forward(tape, bound, TensorData::zeros({24, 24, 3})),
                       doctest::Contains("expected image"), ShapeError);
  CHECK_THROWS_AS(net.forward(tape, bound, TensorData::zeros({16, 16, 1})), ShapeError);
}

TEST_CASE("zero image with zero biases yields a zero feature map") {
  Rng rng(2);
  PoseNetwork net(tiny_config(), rng);
  Tape tape;
  auto bound = net.bind(tape);
  auto out = net.forward(tape, bound, TensorData::zeros({16, 16, 3}));
  for (double v : out.features.values()) CHECK(v == 0.0);
}

TEST_CASE("forward is bitwise reproducible for fixed weights and input") {
  Rng rng(3);
  PoseNetwork net(tiny_config(3, 2), rng);
  TensorData img = random_image(16, 16, rng);
  auto run = [&]() {
    Tape tape;
    auto bound = net.bind(tape);
    auto out = net.forward(tape, bound, img);
    std::vector<double> flat;
    for (double v : out.features.values()) flat.push_back(v);
    for (const auto& p : out.block_poses)
      for (double v : p.coords.values()) flat.push_back(v);
    return flat;
  };
  const auto a = run(), b = run();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("zero weights give uniform probability maps") {
  Rng rng(4);
  PoseNetwork net(tiny_config(), rng);
  for (Parameter& p : net.params().all())
    if (p.trainable) std::fill(p.data.values.begin(), p.data.values.end(), 0.0);
  Tape tape;
  auto bound = net.bind(tape);
  auto out = net.forward(tape, bound, random_image(16, 16, rng));
  const std::size_t hw = 2 * 2;  // 16/8 per side
  for (const Tensor& p : out.block_prob_maps.back())
    for (double v : p.values()) CHECK(v == doctest::Approx(1.0 / hw).epsilon(1e-12));
}

TEST_CASE("stacked blocks refine: block outputs differ") {
  Rng rng(5);
  NetworkConfig cfg = tiny_config(2, 2);
  cfg.init_stddev = 0.1;  // generic weights
  PoseNetwork net(cfg, rng);
  Tape tape;
  auto bound = net.bind(tape);
  auto out = net.forward(tape, bound, random_image(16, 16, rng));
  REQUIRE(out.block_poses.size() == 2);
  auto a = out.block_poses[0].coords.values();
  auto b = out.block_poses[1].coords.values();
  double max_diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) max_diff = std::max(max_diff, std::fabs(a[i] - b[i]));
  CHECK(max_diff > 1e-12);
}

TEST_CASE("heat-map channel count is N_J * N_d") {
  NetworkConfig cfg = tiny_config(8, 1);
  cfg.depth_bins = 16;
  Rng rng(6);
  PoseNetwork net(cfg, rng);
  bool found = false;
  for (const Parameter& p : net.params().all())
    if (p.name == "block0.heat.weight") {
      found = true;
      CHECK(p.data.shape == Shape{1, 1, 8, 128});
    }
  CHECK(found);
}

TEST_CASE("a K=1 network emits exactly one pose prediction") {
  Rng rng(7);
  PoseNetwork net(tiny_config(2, 1), rng);
  Tape tape;
  auto bound = net.bind(tape);
  auto out = net.forward(tape, bound, random_image(16, 16, rng));
  CHECK(out.block_poses.size() == 1);
  CHECK(out.block_poses[0].coords.shape() == Shape{2, 3});
  CHECK(out.block_poses[0].visibility.shape() == Shape{2});
}

TEST_CASE("probability maps from every block sum to one per joint") {
  Rng rng(8);
  PoseNetwork net(tiny_config(3, 3), rng);
  Tape tape;
  auto bound = net.bind(tape);
  auto out = net.forward(tape, bound, random_image(16, 16, rng));
  for (const auto& block : out.block_prob_maps)
    for (const Tensor& p : block) {
      double sum = 0.0;
      for (double v : p.values()) sum += v;
      CHECK(std::fabs(sum - 1.0) < 1e-9);
    }
}

TEST_CASE("sum of per-block losses equals independently evaluated blocks") {
  Rng rng(9);
  PoseNetwork net(tiny_config(2, 3), rng);
  TensorData img = random_image(16, 16, rng);
  Pose target = Pose::make(2, 3);
  target.coords.values = {0.3, 0.4, 0.5, 0.6, 0.7, 0.2};

  Tape tape;
  auto bound = net.bind(tape);
  auto out = net.forward(tape, bound, img);
  double joint_total = 0.0;
  for (const auto& p : out.block_poses)
    joint_total += elastic_net_loss(p.coords, target).value();

  double independent_total = 0.0;
  for (std::size_t k = 0; k < 3; ++k) {
    Tape t2;
    auto b2 = net.bind(t2);
    auto o2 = net.forward(t2, b2, img);
    independent_total += elastic_net_loss(o2.block_poses[k].coords, target).value();
  }
  CHECK(std::fabs(joint_total - independent_total) < 1e-12);
}

TEST_CASE("end-to-end gradient reaches the first conv kernel") {
  Rng rng(10);
  NetworkConfig cfg = tiny_config(2, 1);
  cfg.init_stddev = 0.05;
  PoseNetwork net(cfg, rng);
  TensorData img = random_image(16, 16, rng);
  Pose target = Pose::make(2, 3);
  target.coords.values = {0.2, 0.3, 0.4, 0.6, 0.7, 0.8};

  auto loss_at = [&]() {
    Tape tape;
    auto bound = net.bind(tape);
    auto out = net.forward(tape, bound, img);
    return elastic_net_loss(out.block_poses.back().coords, target).value();
  };

  Tape tape;
  auto bound = net.bind(tape);
  auto out = net.forward(tape, bound, img);
  tape.backward(elastic_net_loss(out.block_poses.back().coords, target));
  net.params().zero_grads();
  net.params().accumulate_grads(tape, bound);

  Parameter& stem = net.params().at(0);
  REQUIRE(stem.name == "stem.conv.weight");
  bool any_nonzero = false;
  for (double g : stem.grad) any_nonzero |= (g != 0.0);
  CHECK(any_nonzero);

  // Finite-difference spot check on 5 kernel coordinates.
  const double h = 1e-5;
  for (std::size_t probe = 0; probe < 5; ++probe) {
    const std::size_t idx = (probe * 17) % stem.data.size();
    const double keep = stem.data.values[idx];
    stem.data.values[idx] = keep + h;
    const double up = loss_at();
    stem.data.values[idx] = keep - h;
    const double down = loss_at();
    stem.data.values[idx] = keep;
    const double fd = (up - down) / (2.0 * h);
    CHECK(std::fabs(stem.grad[idx] - fd) / std::max(1.0, std::fabs(fd)) < 1e-4);
  }
}

TEST_CASE("pose network checkpoint round-trips through the container") {
  Rng rng(11);
  PoseNetwork net(tiny_config(2, 2), rng);
  TensorData img = random_image(16, 16, rng);

  const std::string path = "sp_net_ckpt_test.bin";
  save_pose_network(path, net);
  PoseNetwork back = load_pose_network(path);
  std::remove(path.c_str());

  Tape t1, t2;
  auto o1 = net.forward(t1, net.bind(t1), img);
  auto o2 = back.forward(t2, back.bind(t2), img);
  auto a = o1.block_poses.back().coords.values();
  auto b = o2.block_poses.back().coords.values();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("a short RMSProp run reduces the pose loss") {
  Rng rng(12);
  NetworkConfig cfg = tiny_config(2, 1);
  PoseNetwork net(cfg, rng);
  TensorData img = random_image(16, 16, rng);
  Pose target = Pose::make(2, 3);
  target.coords.values = {0.25, 0.3, 0.4, 0.7, 0.6, 0.5};

  RmsProp opt(0.001);
  double first = 0.0, last = 0.0;
  for (int step = 0; step < 40; ++step) {
    Tape tape;
    auto bound = net.bind(tape);
    auto out = net.forward(tape, bound, img);
    Tensor loss = elastic_net_loss(out.block_poses.back().coords, target);
    if (step == 0) first = loss.value();
    last = loss.value();
    net.params().zero_grads();
    tape.backward(loss);
    net.params().accumulate_grads(tape, bound);
    opt.step(net.params());
  }
  CHECK(last < first);
}
