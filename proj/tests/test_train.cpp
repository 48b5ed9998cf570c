#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <thread>

#include "softpose/train.hpp"

using namespace softpose;

TEST_CASE("toy overfit on the 16-image fixture refines across blocks") {
  PoseTrainConfig cfg;
  cfg.seed = 1;
  cfg.steps = 300;
  cfg.batch = 16;
  cfg.learning_rate = 0.01;
  cfg.train_count = 16;
  cfg.test_count = 8;
  cfg.extent = 32;
  cfg.njoints = 4;
  cfg.depth_bins = 16;
  cfg.blocks = 2;
  cfg.feature_channels = 32;
  cfg.stem_channels = 12;
  cfg.mid_channels = 24;

  PoseTrainResult r = train_pose_toy(cfg);
  CHECK(r.initial_loss / r.final_loss >= 10.0);
  CHECK(r.train_pixel_error <= 2.0);
  // Intermediate supervision: later blocks do not do worse on average.
  REQUIRE(r.block_losses.size() == 2);
  CHECK(r.block_losses[1] <= r.block_losses[0]);
}

TEST_CASE("skeleton action training learns a small two-class task") {
  ActionTrainConfig cfg;
  cfg.seed = 1;
  cfg.steps = 120;
  cfg.batch_clips = 4;
  cfg.app_channels = 8;
  cfg.action_blocks = 2;
  cfg.data.classes = 2;
  cfg.data.train_clips_per_class = 8;
  cfg.data.test_clips_per_class = 4;
  cfg.data.frames = 8;
  cfg.data.njoints = 3;
  cfg.data.feat_signal = 0.05;
  ActionTrainResult r = train_action_toy(cfg);
  CHECK(r.train_eval.agg_acc >= 75.0);
  // predictions are distributions
  Tape tape;
  auto bound = r.model.bind(tape, false);
  ActionModelForward out = forward_encoded(r.model, tape, bound, r.train_clips[0]);
  double sum = 0.0;
  for (double v : out.aggregate.values()) sum += v;
  CHECK(std::fabs(sum - 1.0) < 1e-9);
}

TEST_CASE("multitask fine-tune phase keeps the frozen-phase training accuracy") {
  PoseTrainConfig pose_cfg;
  pose_cfg.seed = 3;
  pose_cfg.steps = 120;
  pose_cfg.batch = 8;
  pose_cfg.learning_rate = 0.01;
  pose_cfg.train_count = 8;
  pose_cfg.test_count = 2;
  pose_cfg.extent = 16;
  pose_cfg.njoints = 3;
  pose_cfg.depth_bins = 4;
  pose_cfg.blocks = 1;
  pose_cfg.feature_channels = 12;
  pose_cfg.stem_channels = 6;
  pose_cfg.mid_channels = 8;
  PoseTrainResult pose = train_pose_toy(pose_cfg);

  MultitaskTrainConfig mt;
  mt.seed = 3;
  mt.frozen_steps = 200;
  mt.finetune_steps = 10;
  mt.batch_clips = 4;
  mt.action_blocks = 1;
  mt.app_channels = 8;
  mt.data.seed = 3;
  mt.data.classes = 2;
  mt.data.train_clips_per_class = 4;
  mt.data.test_clips_per_class = 1;
  mt.data.frames = 8;
  mt.data.njoints = 3;
  mt.data.dim = 2;
  MultitaskTrainResult r = train_multitask_toy(mt, std::move(pose.net));
  CHECK(r.agg_train_finetuned >= r.agg_train_frozen);
}

TEST_CASE("independent model instances run on separate threads") {
  NetworkConfig cfg;
  cfg.input_height = cfg.input_width = 16;
  cfg.num_joints = 2;
  cfg.depth_bins = 4;
  cfg.num_blocks = 1;
  cfg.feature_channels = 8;
  cfg.stem_channels = 4;
  cfg.mid_channels = 6;

  Rng rng(5);
  PoseNetwork net(cfg, rng);  // weights shared read-only across threads
  TensorData img = TensorData::zeros({16, 16, 3});
  for (double& v : img.values) v = rng.uniform(0.0, 1.0);

  std::vector<std::vector<double>> outputs(4);
  std::vector<std::thread> workers;
  for (int i = 0; i < 4; ++i)
    workers.emplace_back([&net, &img, &outputs, i]() {
      Tape tape;  // one tape per thread
      auto bound = net.bind(tape, false);
      PoseForward out = net.forward(tape, bound, img);
      auto v = out.block_poses.back().coords.values();
      outputs[static_cast<std::size_t>(i)].assign(v.begin(), v.end());
    });
  for (auto& w : workers) w.join();
  for (int i = 1; i < 4; ++i) CHECK(outputs[std::size_t(i)] == outputs[0]);
}

TEST_CASE("train schedule defaults are pinned") {
  TrainSchedule pose;
  CHECK(pose.optimizer == TrainSchedule::Optimizer::kRmsProp);
  CHECK(pose.learning_rate == 0.001);
  CHECK(pose.plateau_factor == 0.2);
  CHECK(pose.batch_size == 24);
  pose.validate();

  TrainSchedule action;
  action.optimizer = TrainSchedule::Optimizer::kSgdNesterov;
  action.learning_rate = 0.0002;
  action.batch_size = 2;
  CHECK(action.momentum == 0.98);
  CHECK(action.finetune_rate_divisor == 10.0);
  action.validate();

  TrainSchedule bad;
  bad.plateau_factor = 1.5;
  CHECK_THROWS_AS(bad.validate(), ValueError);
}
