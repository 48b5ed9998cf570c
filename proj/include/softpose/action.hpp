#pragma once

#include <string>
#include <vector>

#include "softpose/io.hpp"
#include "softpose/network.hpp"
#include "softpose/ops.hpp"
#include "softpose/params.hpp"
#include "softpose/pose.hpp"

namespace softpose {

// ---------------------------------------------------------------------------
// Pose-sequence encoding: time as the vertical axis, joints as the horizontal
// axis, coordinates as channels. Invalid joints carry the sentinel -1; a
// parallel validity channel can be appended.
// ---------------------------------------------------------------------------

inline TensorData encode_pose_sequence(const std::vector<Pose>& frames,
                                       bool validity_channel = false) {
  if (frames.empty()) throw ValueError("encode_pose_sequence: empty frame list");
  const std::size_t T = frames.size();
  const std::size_t nj = frames[0].njoints();
  const std::size_t dim = frames[0].coords.shape[1];
  const std::size_t channels = dim + (validity_channel ? 1 : 0);
  TensorData out = TensorData::zeros({T, nj, channels});
  for (std::size_t t = 0; t < T; ++t) {
    const Pose& p = frames[t];
    if (p.njoints() != nj || p.coords.shape[1] != dim)
      throw ShapeError("encode_pose_sequence: frame " + std::to_string(t) +
                       " has shape " + shape_str(p.coords.shape) + ", expected " +
                       shape_str({nj, dim}));
    for (std::size_t j = 0; j < nj; ++j) {
      const bool ok = p.valid[j] != 0;
      for (std::size_t d = 0; d < dim; ++d)
        out.values[(t * nj + j) * channels + d] =
            ok ? p.coords.values[j * dim + d] : -1.0;
      if (validity_channel) out.values[(t * nj + j) * channels + dim] = ok ? 1.0 : 0.0;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Appearance pooling: out[j,f] = sum_{y,x} M[y,x,j] * F[y,x,f].
// ---------------------------------------------------------------------------

inline Tensor extract_appearance(const Tensor& features, const Tensor& prob_maps) {
  detail::check_same_tape(features, prob_maps, "extract_appearance");
  Tape& t = detail::tape_of(features, "extract_appearance");
  const Shape fs = features.shape();
  const Shape ms = prob_maps.shape();
  if (fs.size() != 3 || ms.size() != 3)
    throw ShapeError("extract_appearance: expected rank-3 [H,W,C] inputs, got " +
                     shape_str(fs) + " and " + shape_str(ms));
  if (fs[0] != ms[0] || fs[1] != ms[1])
    throw ShapeError("extract_appearance: spatial extents differ, features " +
                     shape_str({fs[0], fs[1]}) + " vs probability maps " +
                     shape_str({ms[0], ms[1]}));
  const std::size_t H = fs[0], W = fs[1], Nf = fs[2], Nj = ms[2];
  auto fv = features.values();
  auto mv = prob_maps.values();
  std::vector<double> out(Nj * Nf, 0.0);
  for (std::size_t i = 0; i < H * W; ++i) {
    const double* frow = &fv[i * Nf];
    const double* mrow = &mv[i * Nj];
    for (std::size_t j = 0; j < Nj; ++j) {
      const double m = mrow[j];
      if (m == 0.0) continue;
      double* orow = &out[j * Nf];
      for (std::size_t f = 0; f < Nf; ++f) orow[f] += m * frow[f];
    }
  }
  return t.record({Nj, Nf}, std::move(out), {features.node(), prob_maps.node()},
                  [fi = features.node(), mi = prob_maps.node(), H, W, Nf, Nj](Tape& tp,
                                                                              int self) {
                    auto g = tp.grad_of(self);
                    auto fv = tp.value_of(fi);
                    auto mv = tp.value_of(mi);
                    auto gf = tp.grad_accum(fi);
                    auto gm = tp.grad_accum(mi);
                    if (gf.empty() && gm.empty()) return;
                    for (std::size_t i = 0; i < H * W; ++i)
                      for (std::size_t j = 0; j < Nj; ++j) {
                        const double* grow = &g[j * Nf];
                        if (!gf.empty()) {
                          const double m = mv[i * Nj + j];
                          for (std::size_t f = 0; f < Nf; ++f)
                            gf[i * Nf + f] += grow[f] * m;
                        }
                        if (!gm.empty()) {
                          double acc = 0.0;
                          for (std::size_t f = 0; f < Nf; ++f)
                            acc += grow[f] * fv[i * Nf + f];
                          gm[i * Nj + j] += acc;
                        }
                      }
                  });
}

// ---------------------------------------------------------------------------
// Max-plus-min pooling
// ---------------------------------------------------------------------------

// Per-channel global max plus global min over the spatial axes of [T,J,N_a].
inline Tensor max_plus_min(const Tensor& maps) {
  if (maps.rank() != 3)
    throw ShapeError("max_plus_min: expected [T,J,N_a] maps, got " + shape_str(maps.shape()));
  const std::size_t na = maps.shape()[2];
  std::vector<Tensor> pooled;
  pooled.reserve(na);
  for (std::size_t a = 0; a < na; ++a) {
    Tensor ch = index_last_axis(maps, a);
    pooled.push_back(add(reduce_max(ch), reduce_min(ch)));
  }
  return stack_scalars(pooled);
}

// The pooling op of the action head: softmax over the pooled scores.
// Gradients reach exactly the max and min element of each channel.
inline Tensor max_plus_min_pool(const Tensor& maps) {
  return softmax(max_plus_min(maps), {0});
}

// ---------------------------------------------------------------------------
// Losses and clip averaging
// ---------------------------------------------------------------------------

// Categorical cross entropy -ln(pred[label]) with a 1e-7 clamp.
inline Tensor action_loss(const Tensor& pred, std::size_t label) {
  if (pred.rank() != 1)
    throw ShapeError("action_loss: prediction must be rank 1, got " +
                     shape_str(pred.shape()));
  if (label >= pred.shape()[0])
    throw ValueError("action_loss: label " + std::to_string(label) +
                     " out of range for " + std::to_string(pred.shape()[0]) + " actions");
  return scale(softpose::log(clamp(index_last_axis(pred, label), 1e-7, 1.0)), -1.0);
}

// Arithmetic mean of per-clip probability vectors; renormalized only when
// numerically drifted.
inline std::vector<double> multi_clip_average(
    const std::vector<std::vector<double>>& clip_probs) {
  if (clip_probs.empty()) throw ValueError("multi_clip_average: empty clip list");
  const std::size_t na = clip_probs[0].size();
  std::vector<double> mean(na, 0.0);
  for (const auto& probs : clip_probs) {
    if (probs.size() != na)
      throw ShapeError("multi_clip_average: inconsistent prediction lengths");
    for (std::size_t a = 0; a < na; ++a) mean[a] += probs[a];
  }
  for (double& v : mean) v /= static_cast<double>(clip_probs.size());
  double sum = 0.0;
  for (double v : mean) sum += v;
  if (std::fabs(sum - 1.0) > 1e-12 && sum > 0.0)
    for (double& v : mean) v /= sum;
  return mean;
}

// ---------------------------------------------------------------------------
// Action recognition stream (pose-based or appearance-based)
// ---------------------------------------------------------------------------

struct ActionConfig {
  std::size_t num_actions = 4;
  std::size_t num_joints = 4;
  std::size_t frames = 16;      // T
  std::size_t in_channels = 2;  // D for the pose stream, N_f for appearance
  std::size_t num_blocks = 4;   // K
  std::size_t channels = 16;    // halved for the pose stream relative to appearance
  // Kernel init is fan-in scaled (std = gain * sqrt(2 / fan_in)); without
  // live batch statistics a fixed tiny std starves the deeper blocks.
  double init_gain = 1.0;

  void validate() const {
    for (std::size_t v : {num_actions, num_joints, frames, in_channels, num_blocks, channels})
      if (v == 0) throw ValueError("ActionConfig: all extents must be positive");
    if (num_actions < 2) throw ValueError("ActionConfig: need at least two actions");
  }
};

struct ActionForward {
  std::vector<Tensor> block_heatmaps;  // per block [T,J,N_a]
  std::vector<Tensor> block_probs;     // per block [N_a], each sums to 1
  Tensor probs;                        // last block's probabilities
};

// Fully convolutional stack over the (time, joint) grid producing
// N_a-channel action heat maps; heat maps from each block are re-injected
// into the next block's feature path.
class ActionNetwork {
 public:
  ActionNetwork(ActionConfig cfg, const std::string& prefix, Rng& rng)
      : cfg_(cfg), prefix_(prefix) {
    cfg_.validate();
    auto fan_std = [this](std::size_t S, std::size_t cin) {
      return cfg_.init_gain * std::sqrt(2.0 / (double(S) * double(S) * double(cin)));
    };
    proj_w_ = params_.add_trunc_normal(prefix_ + ".proj.weight",
                                       {3, 3, cfg_.in_channels, cfg_.channels},
                                       fan_std(3, cfg_.in_channels), rng);
    proj_b_ = params_.add_zeros(prefix_ + ".proj.bias", {cfg_.channels});
    for (std::size_t k = 0; k < cfg_.num_blocks; ++k) {
      const std::string p = prefix_ + ".block" + std::to_string(k);
      Block b;
      b.conv_w = params_.add_trunc_normal(p + ".conv.weight",
                                          {3, 3, cfg_.channels, cfg_.channels},
                                          fan_std(3, cfg_.channels), rng);
      b.conv_b = params_.add_zeros(p + ".conv.bias", {cfg_.channels});
      b.heat_w = params_.add_trunc_normal(p + ".heat.weight",
                                          {1, 1, cfg_.channels, cfg_.num_actions},
                                          fan_std(1, cfg_.channels), rng);
      b.heat_b = params_.add_zeros(p + ".heat.bias", {cfg_.num_actions});
      b.reinject_w = params_.add_trunc_normal(p + ".reinject.weight",
                                              {1, 1, cfg_.num_actions, cfg_.channels},
                                              fan_std(1, cfg_.num_actions), rng);
      b.reinject_b = params_.add_zeros(p + ".reinject.bias", {cfg_.channels});
      blocks_.push_back(b);
    }
  }

  const ActionConfig& config() const { return cfg_; }
  const std::string& prefix() const { return prefix_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  std::vector<Tensor> bind(Tape& tape, bool trainable = true) const {
    return params_.bind(tape, trainable);
  }

  // `input` is [T, N_J, C] on the tape.
  ActionForward forward(Tape& tape, const std::vector<Tensor>& bound,
                        const Tensor& input) const {
    if (input.rank() != 3 || input.shape()[0] != cfg_.frames ||
        input.shape()[1] != cfg_.num_joints || input.shape()[2] != cfg_.in_channels)
      throw ShapeError(prefix_ + ": expected input [" + std::to_string(cfg_.frames) + "," +
                       std::to_string(cfg_.num_joints) + "," +
                       std::to_string(cfg_.in_channels) + "], got " +
                       shape_str(input.shape()));
    const std::size_t T = cfg_.frames, J = cfg_.num_joints;
    Tensor x = reshape(input, {1, T, J, cfg_.in_channels});
    x = relu(bias_add(conv2d(x, bound[std::size_t(proj_w_)], 1, Padding::kSame),
                      bound[std::size_t(proj_b_)]));

    ActionForward out;
    for (const Block& blk : blocks_) {
      Tensor u = relu(bias_add(conv2d(x, bound[std::size_t(blk.conv_w)], 1, Padding::kSame),
                               bound[std::size_t(blk.conv_b)]));
      Tensor heat = bias_add(conv2d(u, bound[std::size_t(blk.heat_w)], 1, Padding::kSame),
                             bound[std::size_t(blk.heat_b)]);
      Tensor maps = reshape(heat, {T, J, cfg_.num_actions});
      out.block_heatmaps.push_back(maps);
      out.block_probs.push_back(max_plus_min_pool(maps));
      x = add(u, bias_add(conv2d(heat, bound[std::size_t(blk.reinject_w)], 1, Padding::kSame),
                          bound[std::size_t(blk.reinject_b)]));
    }
    out.probs = out.block_probs.back();
    return out;
  }

 private:
  struct Block {
    int conv_w = -1, conv_b = -1;
    int heat_w = -1, heat_b = -1;
    int reinject_w = -1, reinject_b = -1;
  };

  ActionConfig cfg_;
  std::string prefix_;
  ParameterSet params_;
  int proj_w_ = -1, proj_b_ = -1;
  std::vector<Block> blocks_;
};

// ---------------------------------------------------------------------------
// Aggregation of the two streams
// ---------------------------------------------------------------------------

// softmax(W . concat(pose_probs, appearance_probs) + b). W starts as
// [I | I] / 2 so identical inputs pass through argmax-preservingly.
class Aggregator {
 public:
  Aggregator(std::size_t num_actions, const std::string& prefix = "agg")
      : na_(num_actions) {
    std::vector<double> w(na_ * 2 * na_, 0.0);
    for (std::size_t i = 0; i < na_; ++i) {
      w[i * 2 * na_ + i] = 0.5;
      w[i * 2 * na_ + na_ + i] = 0.5;
    }
    w_ = params_.add(prefix + ".weight", {na_, 2 * na_}, std::move(w));
    b_ = params_.add_zeros(prefix + ".bias", {na_});
  }

  std::size_t num_actions() const { return na_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  std::vector<Tensor> bind(Tape& tape, bool trainable = true) const {
    return params_.bind(tape, trainable);
  }

  Tensor forward(Tape& tape, const std::vector<Tensor>& bound, const Tensor& pose_probs,
                 const Tensor& appearance_probs) const {
    if (pose_probs.shape() != Shape{na_} || appearance_probs.shape() != Shape{na_})
      throw ShapeError("Aggregator: stream predictions must both be [" +
                       std::to_string(na_) + "], got " + shape_str(pose_probs.shape()) +
                       " and " + shape_str(appearance_probs.shape()));
    Tensor c = reshape(concat1d(pose_probs, appearance_probs), {2 * na_, 1});
    Tensor scores = reshape(matmul(bound[std::size_t(w_)], c), {na_});
    return softmax(bias_add(scores, bound[std::size_t(b_)]), {0});
  }

 private:
  std::size_t na_;
  ParameterSet params_;
  int w_ = -1, b_ = -1;
};

// ---------------------------------------------------------------------------
// Two-stream action model: pose stream, appearance stream, and the
// aggregator. The appearance stream can be disabled for skeleton-only runs.
// ---------------------------------------------------------------------------

struct ActionModelConfig {
  ActionConfig pose_stream;  // in_channels = D
  ActionConfig app_stream;   // in_channels = N_f; channels typically 2x the pose stream
  bool use_appearance = true;
};

struct ActionModelBound {
  std::vector<Tensor> pose_stream, app_stream, aggregator;
};

struct ActionModelForward {
  ActionForward pose;
  ActionForward appearance;  // empty tensors when the stream is disabled
  Tensor aggregate;          // [N_a]; equals pose probs when appearance is off
};

class ActionModel {
 public:
  ActionModel(ActionModelConfig cfg, Rng& rng)
      : cfg_(cfg),
        pose_stream_(cfg.pose_stream, "act_pose", rng),
        app_stream_(cfg.app_stream, "act_app", rng),
        agg_(cfg.pose_stream.num_actions) {
    if (cfg_.pose_stream.num_actions != cfg_.app_stream.num_actions)
      throw ValueError("ActionModel: streams disagree on the number of actions");
  }

  const ActionModelConfig& config() const { return cfg_; }
  ActionNetwork& pose_stream() { return pose_stream_; }
  ActionNetwork& app_stream() { return app_stream_; }
  Aggregator& aggregator() { return agg_; }

  ActionModelBound bind(Tape& tape, bool trainable = true) const {
    return {pose_stream_.bind(tape, trainable), app_stream_.bind(tape, trainable),
            agg_.bind(tape, trainable)};
  }

  ActionModelForward forward(Tape& tape, const ActionModelBound& bound,
                             const Tensor& pose_seq, const Tensor& app_seq) const {
    ActionModelForward out;
    out.pose = pose_stream_.forward(tape, bound.pose_stream, pose_seq);
    if (cfg_.use_appearance) {
      out.appearance = app_stream_.forward(tape, bound.app_stream, app_seq);
      out.aggregate = agg_.forward(tape, bound.aggregator, out.pose.probs,
                                   out.appearance.probs);
    } else {
      out.aggregate = out.pose.probs;
    }
    return out;
  }

  // Intermediate supervision: every block of every active stream plus the
  // aggregate, equally weighted.
  Tensor supervision_loss(const ActionModelForward& fwd, std::size_t label) const {
    Tensor total = action_loss(fwd.pose.block_probs[0], label);
    for (std::size_t k = 1; k < fwd.pose.block_probs.size(); ++k)
      total = add(total, action_loss(fwd.pose.block_probs[k], label));
    if (cfg_.use_appearance) {
      for (const Tensor& p : fwd.appearance.block_probs)
        total = add(total, action_loss(p, label));
      total = add(total, action_loss(fwd.aggregate, label));
    }
    return total;
  }

  void zero_grads() {
    pose_stream_.params().zero_grads();
    app_stream_.params().zero_grads();
    agg_.params().zero_grads();
  }

  void accumulate_grads(const Tape& tape, const ActionModelBound& bound) {
    pose_stream_.params().accumulate_grads(tape, bound.pose_stream);
    app_stream_.params().accumulate_grads(tape, bound.app_stream);
    agg_.params().accumulate_grads(tape, bound.aggregator);
  }

  template <typename Optimizer>
  void step(Optimizer& pose_opt, Optimizer& app_opt, Optimizer& agg_opt) {
    pose_opt.step(pose_stream_.params());
    app_opt.step(app_stream_.params());
    agg_opt.step(agg_.params());
  }

  NamedTensors to_named_tensors_with_config() const {
    auto cfg_entry = [](const std::string& key, double v) {
      return std::make_pair(key, TensorData::scalar(v));
    };
    auto stream_cfg = [&](const std::string& p, const ActionConfig& c) {
      NamedTensors t;
      t.push_back(cfg_entry(p + ".num_actions", double(c.num_actions)));
      t.push_back(cfg_entry(p + ".num_joints", double(c.num_joints)));
      t.push_back(cfg_entry(p + ".frames", double(c.frames)));
      t.push_back(cfg_entry(p + ".in_channels", double(c.in_channels)));
      t.push_back(cfg_entry(p + ".num_blocks", double(c.num_blocks)));
      t.push_back(cfg_entry(p + ".channels", double(c.channels)));
      return t;
    };
    NamedTensors out = stream_cfg("cfg.act_pose", cfg_.pose_stream);
    for (auto& e : stream_cfg("cfg.act_app", cfg_.app_stream)) out.push_back(std::move(e));
    out.push_back(cfg_entry("cfg.act.use_appearance", cfg_.use_appearance ? 1.0 : 0.0));
    for (const auto& e : to_named_tensors(pose_stream_.params())) out.push_back(e);
    for (const auto& e : to_named_tensors(app_stream_.params())) out.push_back(e);
    for (const auto& e : to_named_tensors(agg_.params())) out.push_back(e);
    return out;
  }

  static ActionModel from_named_tensors(const NamedTensors& tensors) {
    auto get = [&tensors](const std::string& key) -> double {
      for (const auto& [name, t] : tensors)
        if (name == key) return t.values.at(0);
      throw ValueError("checkpoint is missing config entry '" + key + "'");
    };
    auto stream_cfg = [&](const std::string& p) {
      ActionConfig c;
      c.num_actions = std::size_t(get(p + ".num_actions"));
      c.num_joints = std::size_t(get(p + ".num_joints"));
      c.frames = std::size_t(get(p + ".frames"));
      c.in_channels = std::size_t(get(p + ".in_channels"));
      c.num_blocks = std::size_t(get(p + ".num_blocks"));
      c.channels = std::size_t(get(p + ".channels"));
      return c;
    };
    ActionModelConfig cfg;
    cfg.pose_stream = stream_cfg("cfg.act_pose");
    cfg.app_stream = stream_cfg("cfg.act_app");
    cfg.use_appearance = get("cfg.act.use_appearance") != 0.0;
    Rng throwaway(0);
    ActionModel model(cfg, throwaway);
    restore_parameters(model.pose_stream_.params(), tensors);
    restore_parameters(model.app_stream_.params(), tensors);
    restore_parameters(model.agg_.params(), tensors);
    return model;
  }

 private:
  ActionModelConfig cfg_;
  ActionNetwork pose_stream_, app_stream_;
  Aggregator agg_;
};

}  // namespace softpose
