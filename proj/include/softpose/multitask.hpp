#pragma once

#include <vector>

#include "softpose/action.hpp"
#include "softpose/network.hpp"

namespace softpose {

// Full image-clip pipeline: the shared pose network runs time-distributed
// over the frames; predicted joint coordinates feed the pose stream and
// probability-map-pooled features feed the appearance stream. Everything
// stays on one tape, so the action loss backpropagates into the entry flow.
struct MultitaskConfig {
  NetworkConfig pose;          // num_blocks defaults to 4 in multitask use
  std::size_t num_actions = 4;
  std::size_t frames = 16;     // T
  std::size_t action_dim = 2;  // coordinates consumed by the pose stream (2 or 3)
  std::size_t action_blocks = 4;
  std::size_t app_channels = 16;  // pose stream uses half of this

  ActionModelConfig action_config() const {
    ActionModelConfig a;
    a.pose_stream.num_actions = num_actions;
    a.pose_stream.num_joints = pose.num_joints;
    a.pose_stream.frames = frames;
    a.pose_stream.in_channels = action_dim;
    a.pose_stream.num_blocks = action_blocks;
    a.pose_stream.channels = std::max<std::size_t>(1, app_channels / 2);
    a.app_stream = a.pose_stream;
    a.app_stream.in_channels = pose.feature_channels;
    a.app_stream.channels = app_channels;
    a.use_appearance = true;
    return a;
  }
};

struct MultitaskBound {
  std::vector<Tensor> pose_net;
  ActionModelBound action;
};

struct ClipForward {
  std::vector<PosePrediction> frame_poses;  // final-block pose per frame
  Tensor pose_seq;                          // [T,N_J,D]
  Tensor app_seq;                           // [T,N_J,N_f]
  ActionModelForward action;
};

class MultitaskModel {
 public:
  MultitaskModel(MultitaskConfig cfg, Rng& rng)
      : cfg_(cfg), pose_net_(cfg.pose, rng), action_(cfg.action_config(), rng) {
    if (cfg_.action_dim != 2 && cfg_.action_dim != 3)
      throw ValueError("MultitaskModel: action_dim must be 2 or 3");
  }

  const MultitaskConfig& config() const { return cfg_; }
  PoseNetwork& pose_net() { return pose_net_; }
  ActionModel& action() { return action_; }

  MultitaskBound bind(Tape& tape, bool train_pose, bool train_action) const {
    return {pose_net_.bind(tape, train_pose), action_.bind(tape, train_action)};
  }

  ClipForward forward_clip(Tape& tape, const MultitaskBound& bound,
                           const std::vector<TensorData>& frames) const {
    if (frames.size() != cfg_.frames)
      throw ShapeError("forward_clip: expected " + std::to_string(cfg_.frames) +
                       " frames, got " + std::to_string(frames.size()));
    ClipForward out;
    std::vector<Tensor> coord_frames, app_frames;
    for (const TensorData& img : frames) {
      PoseForward pf = pose_net_.forward(tape, bound.pose_net, img);
      out.frame_poses.push_back(pf.block_poses.back());
      Tensor coords = pf.block_poses.back().coords;  // [N_J,3]
      coord_frames.push_back(cfg_.action_dim == 3 ? coords
                                                  : slice_last_axis(coords, 0, 2));
      app_frames.push_back(extract_appearance(pf.features, pf.prob_stack));
    }
    out.pose_seq = move_last_axis_front(stack_last_axis(coord_frames));  // [T,N_J,D]
    out.app_seq = move_last_axis_front(stack_last_axis(app_frames));     // [T,N_J,N_f]
    out.action = action_.forward(tape, bound.action, out.pose_seq, out.app_seq);
    return out;
  }

 private:
  MultitaskConfig cfg_;
  PoseNetwork pose_net_;
  ActionModel action_;
};

}  // namespace softpose
