#pragma once

#include <string>
#include <vector>

#include "softpose/io.hpp"
#include "softpose/ops.hpp"
#include "softpose/params.hpp"
#include "softpose/pose.hpp"
#include "softpose/rng.hpp"

namespace softpose {

// Pose-estimation CNN at toy scale: a shared entry flow producing visual
// features at 1/8 resolution, followed by K prediction blocks that emit
// per-joint volumetric heat maps, refine features, and re-inject heat maps
// into the feature path. Every block yields a full pose readout
// (intermediate supervision); the final answer is the last block's.
struct NetworkConfig {
  std::size_t input_height = 32;
  std::size_t input_width = 32;
  std::size_t num_joints = 16;
  std::size_t depth_bins = 16;       // N_d
  std::size_t num_blocks = 8;        // K; 8 for pose-only, 4 for multitask
  std::size_t feature_channels = 64; // N_f
  std::size_t stem_channels = 16;
  std::size_t mid_channels = 32;
  double init_stddev = 0.01;

  void validate() const {
    for (std::size_t v : {input_height, input_width, num_joints, depth_bins, num_blocks,
                          feature_channels, stem_channels, mid_channels})
      if (v == 0) throw ValueError("NetworkConfig: all extents must be positive");
    if (input_height % 8 != 0 || input_width % 8 != 0)
      throw ValueError("NetworkConfig: input extents must be multiples of 8, got " +
                       shape_str({input_height, input_width}));
  }

  std::size_t feature_height() const { return input_height / 8; }
  std::size_t feature_width() const { return input_width / 8; }
};

struct PoseForward {
  Tensor features;                                // F_t [H_f,W_f,N_f]
  std::vector<PosePrediction> block_poses;        // one per block; back() is p'_K
  std::vector<std::vector<Tensor>> block_prob_maps;  // per block, per joint [H_f,W_f]
  Tensor prob_stack;                              // M_t [H_f,W_f,N_J], last block
};

class PoseNetwork {
 public:
  PoseNetwork(NetworkConfig cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t nf = cfg_.feature_channels;
    stem_conv_ = make_conv("stem.conv", 3, 3, cfg_.stem_channels, 2, rng);
    stem_bn_ = make_bn("stem.bn", cfg_.stem_channels);
    stem_sr1_ = make_sr("stem.sr1", cfg_.stem_channels, cfg_.mid_channels, rng);
    stem_sr2_ = make_sr("stem.sr2", cfg_.mid_channels, nf, rng);

    const std::size_t heat_channels = cfg_.num_joints * cfg_.depth_bins;
    blocks_.reserve(cfg_.num_blocks);
    for (std::size_t k = 0; k < cfg_.num_blocks; ++k) {
      const std::string p = "block" + std::to_string(k) + ".";
      PredictionBlock b;
      b.full = make_sr(p + "full", nf, nf, rng);
      b.half = make_sr(p + "half", nf, nf, rng);
      b.quarter = make_sr(p + "quarter", nf, nf, rng);
      b.merge_half = make_sr(p + "merge_half", nf, nf, rng);
      b.merge_full = make_sr(p + "merge_full", nf, nf, rng);
      b.heat = make_conv(p + "heat", 1, nf, heat_channels, 1, rng);
      b.reinject = make_conv(p + "reinject", 1, heat_channels, nf, 1, rng);
      b.depth_bias = params_.add_zeros(p + "depth_bias",
                                       {cfg_.depth_bins, cfg_.num_joints});
      blocks_.push_back(b);
    }
  }

  const NetworkConfig& config() const { return cfg_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  std::vector<Tensor> bind(Tape& tape, bool trainable = true) const {
    return params_.bind(tape, trainable);
  }

  PoseForward forward(Tape& tape, const std::vector<Tensor>& bound,
                      const TensorData& image) const {
    return forward(tape, bound, tape.constant(image.shape, image.values));
  }

  // `image` is [H,W,3] on the same tape as `bound`.
  PoseForward forward(Tape& tape, const std::vector<Tensor>& bound,
                      const Tensor& image) const {
    if (image.rank() != 3 || image.shape()[2] != 3 ||
        image.shape()[0] != cfg_.input_height || image.shape()[1] != cfg_.input_width)
      throw ShapeError("PoseNetwork: expected image [" + std::to_string(cfg_.input_height) +
                       "," + std::to_string(cfg_.input_width) + ",3], got " +
                       shape_str(image.shape()));

    Tensor x = reshape(image, {1, cfg_.input_height, cfg_.input_width, 3});
    x = relu(apply_bn(bound, stem_bn_, apply_conv(bound, stem_conv_, x)));
    x = maxpool2x(apply_sr(bound, stem_sr1_, x));
    x = maxpool2x(apply_sr(bound, stem_sr2_, x));
    const Tensor entry = x;  // [1,H_f,W_f,N_f]

    PoseForward out;
    out.features = reshape(entry, {cfg_.feature_height(), cfg_.feature_width(),
                                   cfg_.feature_channels});

    Tensor feat = entry;
    for (std::size_t k = 0; k < blocks_.size(); ++k) {
      const PredictionBlock& blk = blocks_[k];
      Tensor refined = multires(bound, blk, feat);
      Tensor heat = apply_conv(bound, blk.heat, refined);  // [1,H_f,W_f,NJ*Nd]
      Tensor heat3 = reshape(heat, {cfg_.feature_height(), cfg_.feature_width(),
                                    cfg_.num_joints * cfg_.depth_bins});

      std::vector<Tensor> volumes, biases;
      volumes.reserve(cfg_.num_joints);
      const Tensor bias_all = bound[static_cast<std::size_t>(blk.depth_bias)];
      for (std::size_t j = 0; j < cfg_.num_joints; ++j) {
        Tensor vol_hwd = slice_last_axis(heat3, j * cfg_.depth_bins, (j + 1) * cfg_.depth_bins);
        volumes.push_back(move_last_axis_front(vol_hwd));  // [N_d,H_f,W_f]
        biases.push_back(index_last_axis(bias_all, j));    // [N_d]
      }
      PoseReadout readout = volume_to_pose(volumes, biases);
      out.block_poses.push_back(readout.pose);
      out.block_prob_maps.push_back(readout.prob_maps);
      if (k + 1 == blocks_.size()) out.prob_stack = stack_last_axis(readout.prob_maps);

      // Re-inject the per-joint softmax-normalized volumes: bounded in [0,1],
      // so the feature scale stays stable as the logits sharpen.
      Tensor vol_probs = softmax(
          reshape(heat3, {cfg_.feature_height(), cfg_.feature_width(), cfg_.num_joints,
                          cfg_.depth_bins}),
          {0, 1, 3});
      Tensor reinject_in = reshape(vol_probs, {1, cfg_.feature_height(), cfg_.feature_width(),
                                               cfg_.num_joints * cfg_.depth_bins});
      feat = add(refined, apply_conv(bound, blk.reinject, reinject_in));
    }
    return out;
  }

  NamedTensors to_named_tensors_with_config() const {
    NamedTensors out;
    out.emplace_back("cfg.pose.input_height", TensorData::scalar(double(cfg_.input_height)));
    out.emplace_back("cfg.pose.input_width", TensorData::scalar(double(cfg_.input_width)));
    out.emplace_back("cfg.pose.num_joints", TensorData::scalar(double(cfg_.num_joints)));
    out.emplace_back("cfg.pose.depth_bins", TensorData::scalar(double(cfg_.depth_bins)));
    out.emplace_back("cfg.pose.num_blocks", TensorData::scalar(double(cfg_.num_blocks)));
    out.emplace_back("cfg.pose.feature_channels",
                     TensorData::scalar(double(cfg_.feature_channels)));
    out.emplace_back("cfg.pose.stem_channels", TensorData::scalar(double(cfg_.stem_channels)));
    out.emplace_back("cfg.pose.mid_channels", TensorData::scalar(double(cfg_.mid_channels)));
    for (const auto& [name, t] : to_named_tensors(params_)) out.emplace_back(name, t);
    return out;
  }

  static NetworkConfig config_from_tensors(const NamedTensors& tensors) {
    auto get = [&tensors](const std::string& key) -> std::size_t {
      for (const auto& [name, t] : tensors)
        if (name == key) return static_cast<std::size_t>(t.values.at(0));
      throw ValueError("checkpoint is missing config entry '" + key + "'");
    };
    NetworkConfig cfg;
    cfg.input_height = get("cfg.pose.input_height");
    cfg.input_width = get("cfg.pose.input_width");
    cfg.num_joints = get("cfg.pose.num_joints");
    cfg.depth_bins = get("cfg.pose.depth_bins");
    cfg.num_blocks = get("cfg.pose.num_blocks");
    cfg.feature_channels = get("cfg.pose.feature_channels");
    cfg.stem_channels = get("cfg.pose.stem_channels");
    cfg.mid_channels = get("cfg.pose.mid_channels");
    return cfg;
  }

  static PoseNetwork from_named_tensors(const NamedTensors& tensors) {
    Rng throwaway(0);
    PoseNetwork net(config_from_tensors(tensors), throwaway);
    restore_parameters(net.params_, tensors);
    return net;
  }

 private:
  struct ConvLayer {
    int w = -1, b = -1;
    std::size_t stride = 1;
  };
  struct BnLayer {
    int gamma = -1, beta = -1, mean = -1, var = -1;
  };
  struct SepResidual {
    int dw = -1, pw = -1, b = -1;
    BnLayer bn;
    ConvLayer proj;
    bool has_proj = false;
  };
  struct PredictionBlock {
    SepResidual full, half, quarter, merge_half, merge_full;
    ConvLayer heat, reinject;
    int depth_bias = -1;
  };

  ConvLayer make_conv(const std::string& name, std::size_t S, std::size_t cin,
                      std::size_t cout, std::size_t stride, Rng& rng) {
    ConvLayer c;
    c.w = params_.add_trunc_normal(name + ".weight", {S, S, cin, cout}, cfg_.init_stddev, rng);
    c.b = params_.add_zeros(name + ".bias", {cout});
    c.stride = stride;
    return c;
  }

  BnLayer make_bn(const std::string& name, std::size_t c) {
    BnLayer bn;
    bn.gamma = params_.add_full(name + ".gamma", {c}, 1.0);
    bn.beta = params_.add_zeros(name + ".beta", {c});
    bn.mean = params_.add_zeros(name + ".running_mean", {c}, /*trainable=*/false);
    bn.var = params_.add_full(name + ".running_var", {c}, 1.0, /*trainable=*/false);
    return bn;
  }

  SepResidual make_sr(const std::string& name, std::size_t cin, std::size_t cout, Rng& rng) {
    SepResidual sr;
    sr.dw = params_.add_trunc_normal(name + ".dw", {3, 3, cin}, cfg_.init_stddev, rng);
    sr.pw = params_.add_trunc_normal(name + ".pw", {1, 1, cin, cout}, cfg_.init_stddev, rng);
    sr.b = params_.add_zeros(name + ".bias", {cout});
    sr.bn = make_bn(name + ".bn", cout);
    if (cin != cout) {
      sr.proj = make_conv(name + ".proj", 1, cin, cout, 1, rng);
      sr.has_proj = true;
    }
    return sr;
  }

  Tensor apply_conv(const std::vector<Tensor>& bound, const ConvLayer& c, Tensor x) const {
    return bias_add(conv2d(x, bound[static_cast<std::size_t>(c.w)], c.stride, Padding::kSame),
                    bound[static_cast<std::size_t>(c.b)]);
  }

  Tensor apply_bn(const std::vector<Tensor>& bound, const BnLayer& bn, Tensor x) const {
    return batchnorm_inference(x, bound[static_cast<std::size_t>(bn.gamma)],
                               bound[static_cast<std::size_t>(bn.beta)],
                               bound[static_cast<std::size_t>(bn.mean)],
                               bound[static_cast<std::size_t>(bn.var)]);
  }

  Tensor apply_sr(const std::vector<Tensor>& bound, const SepResidual& sr, Tensor x) const {
    Tensor y = separable_conv2d(x, bound[static_cast<std::size_t>(sr.dw)],
                                bound[static_cast<std::size_t>(sr.pw)]);
    y = apply_bn(bound, sr.bn, bias_add(y, bound[static_cast<std::size_t>(sr.b)]));
    Tensor skip = sr.has_proj ? apply_conv(bound, sr.proj, x) : x;
    return relu(add(y, skip));
  }

  // Residual separable processing over up to three resolutions; extents that
  // cannot be halved evenly stop the descent.
  Tensor multires(const std::vector<Tensor>& bound, const PredictionBlock& blk,
                  Tensor feat) const {
    auto can_halve = [](const Tensor& t) {
      const std::size_t h = t.shape()[1], w = t.shape()[2];
      return h >= 2 && w >= 2 && h % 2 == 0 && w % 2 == 0;
    };
    Tensor a = apply_sr(bound, blk.full, feat);
    if (!can_halve(a)) return apply_sr(bound, blk.merge_full, a);
    Tensor b = apply_sr(bound, blk.half, maxpool2x(a));
    if (can_halve(b)) {
      Tensor c = apply_sr(bound, blk.quarter, maxpool2x(b));
      b = apply_sr(bound, blk.merge_half, add(b, upsample2x(c)));
    }
    return apply_sr(bound, blk.merge_full, add(a, upsample2x(b)));
  }

  NetworkConfig cfg_;
  ParameterSet params_;
  ConvLayer stem_conv_;
  BnLayer stem_bn_;
  SepResidual stem_sr1_, stem_sr2_;
  std::vector<PredictionBlock> blocks_;
};

inline void save_pose_network(const std::string& path, const PoseNetwork& net) {
  save_checkpoint(path, net.to_named_tensors_with_config());
}

inline PoseNetwork load_pose_network(const std::string& path) {
  return PoseNetwork::from_named_tensors(load_checkpoint(path));
}

}  // namespace softpose
