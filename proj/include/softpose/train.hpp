#pragma once

#include <string>
#include <vector>

#include "softpose/action.hpp"
#include "softpose/data.hpp"
#include "softpose/metrics.hpp"
#include "softpose/multitask.hpp"
#include "softpose/network.hpp"
#include "softpose/optim.hpp"

namespace softpose {

// ---------------------------------------------------------------------------
// Pose training on the synthetic bump fixture (RMSprop, plateau decay).
// ---------------------------------------------------------------------------

struct PoseTrainConfig {
  std::uint64_t seed = 1;
  std::size_t steps = 300;
  std::size_t batch = 24;  // clamped to the fixture size
  double learning_rate = 0.001;
  double visibility_weight = 0.01;
  double plateau_factor = 0.2;
  int plateau_patience = 3;
  std::size_t eval_every = 25;
  std::size_t train_count = 16, test_count = 8;
  std::size_t extent = 32;
  std::size_t njoints = 4;
  std::size_t depth_bins = 16;
  std::size_t blocks = 2;
  std::size_t feature_channels = 32;
  std::size_t stem_channels = 12;
  std::size_t mid_channels = 24;

  NetworkConfig network() const {
    NetworkConfig n;
    n.input_height = n.input_width = extent;
    n.num_joints = njoints;
    n.depth_bins = depth_bins;
    n.num_blocks = blocks;
    n.feature_channels = feature_channels;
    n.stem_channels = stem_channels;
    n.mid_channels = mid_channels;
    return n;
  }
};

inline Pose predict_pose(const PoseNetwork& net, const TensorData& image) {
  Tape tape;
  auto bound = net.bind(tape, /*trainable=*/false);
  PoseForward out = net.forward(tape, bound, image);
  Pose p = Pose::make(net.config().num_joints, 3);
  auto cv = out.block_poses.back().coords.values();
  p.coords.values.assign(cv.begin(), cv.end());
  auto vv = out.block_poses.back().visibility.values();
  p.visibility.assign(vv.begin(), vv.end());
  p.label_dim = 3;
  return p;
}

// Mean last-block elastic-net loss over a sample set (no gradients).
inline double mean_pose_loss(const PoseNetwork& net, const std::vector<PoseSample>& samples,
                             std::size_t block_index) {
  double total = 0.0;
  for (const PoseSample& s : samples) {
    Tape tape;
    auto bound = net.bind(tape, /*trainable=*/false);
    PoseForward out = net.forward(tape, bound, s.image);
    total += elastic_net_loss(out.block_poses[block_index].coords, s.pose).value();
  }
  return total / static_cast<double>(samples.size());
}

inline double mean_pixel_error(const PoseNetwork& net, const std::vector<PoseSample>& samples,
                               std::size_t extent) {
  double total = 0.0;
  std::size_t count = 0;
  for (const PoseSample& s : samples) {
    const Pose pred = predict_pose(net, s.image);
    const std::size_t nj = s.pose.njoints();
    for (std::size_t j = 0; j < nj; ++j) {
      if (!s.pose.valid[j]) continue;
      const double dx = (pred.coords.values[j * 3 + 0] - s.pose.coords.values[j * 2 + 0]) *
                        static_cast<double>(extent);
      const double dy = (pred.coords.values[j * 3 + 1] - s.pose.coords.values[j * 2 + 1]) *
                        static_cast<double>(extent);
      total += std::hypot(dx, dy);
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

struct PoseTrainResult {
  PoseNetwork net;
  PoseDataset data;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double train_pixel_error = 0.0;
  std::vector<double> block_losses;  // per block, after training
};

inline PoseTrainResult train_pose_toy(const PoseTrainConfig& cfg) {
  Rng rng(cfg.seed);
  PoseDataset data = synth_pose_dataset(cfg.seed, cfg.train_count, cfg.test_count,
                                        cfg.extent, cfg.njoints);
  PoseNetwork net(cfg.network(), rng);
  const std::size_t batch = std::min<std::size_t>(std::max<std::size_t>(cfg.batch, 1),
                                                  data.train.size());
  const std::size_t K = cfg.blocks;

  const double initial_loss = mean_pose_loss(net, data.train, K - 1);
  RmsProp opt(cfg.learning_rate);
  PlateauScheduler sched(cfg.learning_rate, cfg.plateau_factor, cfg.plateau_patience,
                         /*higher_is_better=*/false);

  std::vector<double> vis_targets(cfg.njoints, 1.0);
  std::size_t cursor = 0;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    Tape tape;
    auto bound = net.bind(tape);
    Tensor total;
    for (std::size_t b = 0; b < batch; ++b) {
      const PoseSample& s = data.train[cursor];
      cursor = (cursor + 1) % data.train.size();
      PoseForward out = net.forward(tape, bound, s.image);
      for (std::size_t k = 0; k < K; ++k) {
        Tensor l = elastic_net_loss(out.block_poses[k].coords, s.pose);
        if (cfg.visibility_weight > 0.0)
          l = add(l, scale(visibility_loss(out.block_poses[k].visibility, vis_targets,
                                           s.pose.valid),
                           cfg.visibility_weight));
        total = total ? add(total, l) : l;
      }
    }
    Tensor loss = scale(total, 1.0 / static_cast<double>(batch));
    net.params().zero_grads();
    tape.backward(loss);
    net.params().accumulate_grads(tape, bound);
    opt.step(net.params());

    if (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0)
      opt.learning_rate() = sched.observe(mean_pose_loss(net, data.train, K - 1));
  }

  PoseTrainResult result{std::move(net), std::move(data), initial_loss, 0.0, 0.0, {}};
  result.final_loss = mean_pose_loss(result.net, result.data.train, K - 1);
  result.train_pixel_error = mean_pixel_error(result.net, result.data.train, cfg.extent);
  for (std::size_t k = 0; k < K; ++k)
    result.block_losses.push_back(mean_pose_loss(result.net, result.data.train, k));
  return result;
}

// ---------------------------------------------------------------------------
// Skeleton-clip action training (SGD + Nesterov momentum, both streams and
// the aggregator trained jointly with intermediate supervision).
// ---------------------------------------------------------------------------

struct ActionTrainConfig {
  std::uint64_t seed = 1;
  std::size_t steps = 500;
  std::size_t batch_clips = 2;
  double learning_rate = 0.0002;
  double momentum = 0.98;
  double plateau_factor = 0.2;
  int plateau_patience = 3;
  std::size_t eval_every = 50;
  std::size_t finetune_steps = 0;  // joint pass at lr/10 after the main phase
  double finetune_divisor = 10.0;
  bool use_appearance = true;
  std::size_t action_blocks = 4;
  std::size_t app_channels = 16;  // pose stream runs at half of this
  ActionSynthConfig data;

  ActionModelConfig model() const {
    ActionModelConfig m;
    m.pose_stream.num_actions = data.classes;
    m.pose_stream.num_joints = data.njoints;
    m.pose_stream.frames = data.frames;
    m.pose_stream.in_channels = data.dim;
    m.pose_stream.num_blocks = action_blocks;
    m.pose_stream.channels = std::max<std::size_t>(1, app_channels / 2);
    m.app_stream = m.pose_stream;
    m.app_stream.in_channels = data.feat_channels;
    m.app_stream.channels = app_channels;
    m.use_appearance = use_appearance;
    return m;
  }
};

// Per-clip constant inputs for the skeleton pipeline: encoded coordinates
// plus the appearance sequence pooled from the (synthetic) feature and
// probability maps.
struct EncodedClip {
  TensorData pose_seq;  // [T,N_J,D]
  TensorData app_seq;   // [T,N_J,N_f]; empty when appearance is off
  std::size_t label = 0;
};

inline TensorData appearance_sequence(const std::vector<TensorData>& feature_maps,
                                      const std::vector<TensorData>& prob_maps,
                                      std::size_t t0, std::size_t T) {
  Tape tape;
  std::vector<Tensor> rows;
  rows.reserve(T);
  for (std::size_t t = 0; t < T; ++t)
    rows.push_back(extract_appearance(tape.leaf(feature_maps[t0 + t]),
                                      tape.leaf(prob_maps[t0 + t])));
  return move_last_axis_front(stack_last_axis(rows)).to_data();
}

inline EncodedClip encode_clip(const ActionClipSample& sample, std::size_t t0, std::size_t T,
                               bool use_appearance) {
  EncodedClip e;
  SkeletonClip window = cut_clip(sample.clip, t0, T);
  e.pose_seq = encode_pose_sequence(window.frames);
  if (use_appearance) {
    if (sample.feature_maps.empty())
      throw ValueError("encode_clip: appearance requested but no feature maps present");
    e.app_seq = appearance_sequence(sample.feature_maps, sample.prob_maps, t0, T);
  }
  e.label = static_cast<std::size_t>(sample.clip.action_label);
  return e;
}

struct ActionEval {
  double pose_acc = 0.0, app_acc = 0.0, agg_acc = 0.0;
};

inline ActionModelForward forward_encoded(const ActionModel& model, Tape& tape,
                                          const ActionModelBound& bound,
                                          const EncodedClip& clip) {
  Tensor pose_seq = tape.leaf(clip.pose_seq);
  Tensor app_seq = clip.app_seq.size() > 0 ? tape.leaf(clip.app_seq) : Tensor();
  if (model.config().use_appearance && !app_seq)
    throw ValueError("forward_encoded: model expects an appearance sequence");
  if (!app_seq) app_seq = pose_seq;  // unused when appearance is off
  return model.forward(tape, bound, pose_seq, app_seq);
}

inline ActionEval evaluate_action(const ActionModel& model,
                                  const std::vector<EncodedClip>& clips) {
  std::vector<std::size_t> labels, pose_pred, app_pred, agg_pred;
  for (const EncodedClip& c : clips) {
    Tape tape;
    auto bound = model.bind(tape, /*trainable=*/false);
    ActionModelForward out = forward_encoded(model, tape, bound, c);
    auto arg = [](const Tensor& probs) {
      auto v = probs.values();
      std::size_t best = 0;
      for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
      return best;
    };
    labels.push_back(c.label);
    pose_pred.push_back(arg(out.pose.probs));
    app_pred.push_back(model.config().use_appearance ? arg(out.appearance.probs)
                                                     : arg(out.pose.probs));
    agg_pred.push_back(arg(out.aggregate));
  }
  return {accuracy(pose_pred, labels), accuracy(app_pred, labels),
          accuracy(agg_pred, labels)};
}

struct ActionTrainResult {
  ActionModel model;
  ActionDataset data;
  std::vector<EncodedClip> train_clips, test_clips;
  ActionEval train_eval, test_eval;
  double agg_train_before_finetune = -1.0;
  double agg_train_after_finetune = -1.0;
};

inline void train_action_steps(ActionModel& model, const std::vector<EncodedClip>& clips,
                               std::size_t steps, std::size_t batch, double lr,
                               double momentum, double plateau_factor, int patience,
                               std::size_t eval_every) {
  SgdNesterov opt_pose(lr, momentum), opt_app(lr, momentum), opt_agg(lr, momentum);
  // Plateau signal: windowed mean of the training loss.
  PlateauScheduler sched(lr, plateau_factor, patience, /*higher_is_better=*/false);
  std::size_t cursor = 0;
  double window_loss = 0.0;
  std::size_t window_n = 0;
  for (std::size_t step = 0; step < steps; ++step) {
    Tape tape;
    auto bound = model.bind(tape);
    Tensor total;
    for (std::size_t b = 0; b < batch; ++b) {
      const EncodedClip& clip = clips[cursor];
      cursor = (cursor + 1) % clips.size();
      ActionModelForward out = forward_encoded(model, tape, bound, clip);
      Tensor l = model.supervision_loss(out, clip.label);
      total = total ? add(total, l) : l;
    }
    Tensor loss = scale(total, 1.0 / static_cast<double>(batch));
    window_loss += loss.value();
    ++window_n;
    model.zero_grads();
    tape.backward(loss);
    model.accumulate_grads(tape, bound);
    model.step(opt_pose, opt_app, opt_agg);

    if (eval_every > 0 && (step + 1) % eval_every == 0) {
      const double rate = sched.observe(window_loss / static_cast<double>(window_n));
      window_loss = 0.0;
      window_n = 0;
      opt_pose.learning_rate() = rate;
      opt_app.learning_rate() = rate;
      opt_agg.learning_rate() = rate;
    }
  }
}

inline ActionTrainResult train_action_toy(ActionTrainConfig cfg) {
  cfg.data.with_features = cfg.use_appearance;
  Rng rng(cfg.seed);
  ActionDataset data = synth_action_dataset(cfg.data);
  ActionModel model(cfg.model(), rng);

  const std::size_t T = cfg.data.frames;
  std::vector<EncodedClip> train_clips, test_clips;
  for (const ActionClipSample& s : data.train)
    train_clips.push_back(encode_clip(s, single_clip_offset(s.clip.frames.size(), T), T,
                                      cfg.use_appearance));
  for (const ActionClipSample& s : data.test)
    test_clips.push_back(encode_clip(s, single_clip_offset(s.clip.frames.size(), T), T,
                                     cfg.use_appearance));

  const std::size_t batch = std::min<std::size_t>(std::max<std::size_t>(cfg.batch_clips, 1),
                                                  train_clips.size());
  train_action_steps(model, train_clips, cfg.steps, batch, cfg.learning_rate, cfg.momentum,
                     cfg.plateau_factor, cfg.plateau_patience, cfg.eval_every);

  ActionTrainResult result{std::move(model), std::move(data), std::move(train_clips),
                           std::move(test_clips), {}, {}};
  if (cfg.finetune_steps > 0) {
    result.agg_train_before_finetune =
        evaluate_action(result.model, result.train_clips).agg_acc;
    train_action_steps(result.model, result.train_clips, cfg.finetune_steps, batch,
                       cfg.learning_rate / cfg.finetune_divisor, cfg.momentum,
                       cfg.plateau_factor, cfg.plateau_patience, /*eval_every=*/0);
    result.agg_train_after_finetune =
        evaluate_action(result.model, result.train_clips).agg_acc;
  }
  result.train_eval = evaluate_action(result.model, result.train_clips);
  result.test_eval = evaluate_action(result.model, result.test_clips);
  return result;
}

// Multi-clip evaluation: average the aggregate probabilities of clips spaced
// T/2 apart and classify the mean.
inline double multi_clip_accuracy(const ActionModel& model,
                                  const std::vector<ActionClipSample>& videos,
                                  std::size_t T, bool use_appearance) {
  std::vector<std::size_t> preds, labels;
  for (const ActionClipSample& v : videos) {
    std::vector<std::vector<double>> clip_probs;
    for (std::size_t off : multi_clip_offsets(v.clip.frames.size(), T)) {
      EncodedClip c = encode_clip(v, off, T, use_appearance);
      Tape tape;
      auto bound = model.bind(tape, /*trainable=*/false);
      ActionModelForward out = forward_encoded(model, tape, bound, c);
      auto pv = out.aggregate.values();
      clip_probs.emplace_back(pv.begin(), pv.end());
    }
    const std::vector<double> mean = multi_clip_average(clip_probs);
    std::size_t best = 0;
    for (std::size_t i = 1; i < mean.size(); ++i)
      if (mean[i] > mean[best]) best = i;
    preds.push_back(best);
    labels.push_back(static_cast<std::size_t>(v.clip.action_label));
  }
  return accuracy(preds, labels);
}

// ---------------------------------------------------------------------------
// Multitask training on image clips: phase one trains the action model on
// the frozen pose network's outputs, phase two fine-tunes end to end at a
// tenth of the rate.
// ---------------------------------------------------------------------------

struct MultitaskTrainConfig {
  std::uint64_t seed = 1;
  std::size_t frozen_steps = 150;
  std::size_t finetune_steps = 20;
  std::size_t batch_clips = 2;
  double learning_rate = 0.0002;
  double momentum = 0.98;
  double finetune_divisor = 10.0;
  std::size_t action_blocks = 1;
  std::size_t app_channels = 8;
  ActionSynthConfig data;  // with_images is forced on

  MultitaskConfig model(const NetworkConfig& pose_cfg) const {
    MultitaskConfig m;
    m.pose = pose_cfg;
    m.num_actions = data.classes;
    m.frames = data.frames;
    m.action_dim = data.dim;
    m.action_blocks = action_blocks;
    m.app_channels = app_channels;
    return m;
  }
};

struct MultitaskTrainResult {
  MultitaskModel model;
  ActionDataset data;
  double agg_train_frozen = 0.0;     // after the frozen phase
  double agg_train_finetuned = 0.0;  // after end-to-end fine-tuning
};

// Runs the frozen pose network over a clip and returns the constant
// sequences the action model consumes.
inline EncodedClip encode_clip_with_pose_net(const PoseNetwork& net,
                                             const ActionClipSample& sample, std::size_t t0,
                                             std::size_t T, std::size_t action_dim) {
  EncodedClip e;
  Tape tape;
  auto bound = net.bind(tape, /*trainable=*/false);
  std::vector<Tensor> coords, apps;
  for (std::size_t t = 0; t < T; ++t) {
    PoseForward pf = net.forward(tape, bound, sample.images[t0 + t]);
    Tensor c = pf.block_poses.back().coords;
    coords.push_back(action_dim == 3 ? c : slice_last_axis(c, 0, 2));
    apps.push_back(extract_appearance(pf.features, pf.prob_stack));
  }
  e.pose_seq = move_last_axis_front(stack_last_axis(coords)).to_data();
  e.app_seq = move_last_axis_front(stack_last_axis(apps)).to_data();
  e.label = static_cast<std::size_t>(sample.clip.action_label);
  return e;
}

inline double multitask_clip_accuracy(const MultitaskModel& model,
                                      const std::vector<ActionClipSample>& samples,
                                      std::size_t T) {
  std::vector<std::size_t> preds, labels;
  for (const ActionClipSample& s : samples) {
    const std::size_t off = single_clip_offset(s.clip.frames.size(), T);
    std::vector<TensorData> frames(s.images.begin() + static_cast<std::ptrdiff_t>(off),
                                   s.images.begin() + static_cast<std::ptrdiff_t>(off + T));
    Tape tape;
    auto bound = model.bind(tape, false, false);
    ClipForward out = model.forward_clip(tape, bound, frames);
    auto pv = out.action.aggregate.values();
    std::size_t best = 0;
    for (std::size_t i = 1; i < pv.size(); ++i)
      if (pv[i] > pv[best]) best = i;
    preds.push_back(best);
    labels.push_back(static_cast<std::size_t>(s.clip.action_label));
  }
  return accuracy(preds, labels);
}

inline MultitaskTrainResult train_multitask_toy(MultitaskTrainConfig cfg,
                                                PoseNetwork pretrained_pose) {
  cfg.data.with_images = true;
  cfg.data.image_extent = pretrained_pose.config().input_height;
  if (cfg.data.njoints != pretrained_pose.config().num_joints)
    throw ValueError("train_multitask_toy: pose network joint count differs from the data");
  Rng rng(cfg.seed);
  ActionDataset data = synth_action_dataset(cfg.data);

  MultitaskConfig mcfg = cfg.model(pretrained_pose.config());
  MultitaskModel model(mcfg, rng);
  // Adopt the pretrained pose weights.
  restore_parameters(model.pose_net().params(),
                     to_named_tensors(pretrained_pose.params()));

  // Phase 1: pose frozen. The pose outputs are constants, so they are
  // computed once per clip and the action model trains on them.
  const std::size_t T = cfg.data.frames;
  std::vector<EncodedClip> train_clips;
  for (const ActionClipSample& s : data.train)
    train_clips.push_back(encode_clip_with_pose_net(
        model.pose_net(), s, single_clip_offset(s.clip.frames.size(), T), T,
        cfg.data.dim));
  const std::size_t batch = std::min<std::size_t>(std::max<std::size_t>(cfg.batch_clips, 1),
                                                  train_clips.size());
  train_action_steps(model.action(), train_clips, cfg.frozen_steps, batch,
                     cfg.learning_rate, cfg.momentum, 0.2, 3, /*eval_every=*/0);

  MultitaskTrainResult result{std::move(model), std::move(data), 0.0, 0.0};
  result.agg_train_frozen = multitask_clip_accuracy(result.model, result.data.train, T);

  // Phase 2: end-to-end fine-tune at a tenth of the rate.
  const double ft_lr = cfg.learning_rate / cfg.finetune_divisor;
  SgdNesterov opt_pose_net(ft_lr, cfg.momentum), opt_ps(ft_lr, cfg.momentum),
      opt_as(ft_lr, cfg.momentum), opt_agg(ft_lr, cfg.momentum);
  std::size_t cursor = 0;
  for (std::size_t step = 0; step < cfg.finetune_steps; ++step) {
    Tape tape;
    auto bound = result.model.bind(tape, true, true);
    Tensor total;
    for (std::size_t b = 0; b < batch; ++b) {
      const ActionClipSample& s = result.data.train[cursor];
      cursor = (cursor + 1) % result.data.train.size();
      const std::size_t off = single_clip_offset(s.clip.frames.size(), T);
      std::vector<TensorData> frames(s.images.begin() + static_cast<std::ptrdiff_t>(off),
                                     s.images.begin() + static_cast<std::ptrdiff_t>(off + T));
      ClipForward out = result.model.forward_clip(tape, bound, frames);
      Tensor l = result.model.action().supervision_loss(out.action,
          static_cast<std::size_t>(s.clip.action_label));
      total = total ? add(total, l) : l;
    }
    Tensor loss = scale(total, 1.0 / static_cast<double>(batch));
    result.model.pose_net().params().zero_grads();
    result.model.action().zero_grads();
    tape.backward(loss);
    result.model.pose_net().params().accumulate_grads(tape, bound.pose_net);
    result.model.action().accumulate_grads(tape, bound.action);
    opt_pose_net.step(result.model.pose_net().params());
    result.model.action().step(opt_ps, opt_as, opt_agg);
  }
  result.agg_train_finetuned = multitask_clip_accuracy(result.model, result.data.train, T);
  return result;
}

}  // namespace softpose
