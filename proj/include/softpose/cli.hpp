#pragma once

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "softpose/gradsuite.hpp"
#include "softpose/metrics.hpp"
#include "softpose/train.hpp"

namespace softpose::cli {

// Exit codes: 0 success, 1 validation failure, 2 usage error.

// ---------------------------------------------------------------------------
// Flat key=value config files ('#' starts a comment).
// ---------------------------------------------------------------------------

using ConfigMap = std::map<std::string, std::string>;

inline ConfigMap parse_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ValueError("cannot open config file: " + path);
  ConfigMap cfg;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::size_t a = line.find_first_not_of(" \t\r");
    if (a == std::string::npos) continue;
    std::size_t b = line.find_last_not_of(" \t\r");
    line = line.substr(a, b - a + 1);
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ValueError(path + ":" + std::to_string(line_no) + ": expected key=value");
    std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    auto strip = [](std::string s) {
      const std::size_t x = s.find_first_not_of(" \t");
      const std::size_t y = s.find_last_not_of(" \t");
      return x == std::string::npos ? std::string() : s.substr(x, y - x + 1);
    };
    key = strip(key);
    value = strip(value);
    if (key.empty() || value.empty())
      throw ValueError(path + ":" + std::to_string(line_no) + ": empty key or value");
    cfg[key] = value;
  }
  return cfg;
}

namespace detail {

inline double get_double(const ConfigMap& cfg, const std::string& key, double fallback) {
  auto it = cfg.find(key);
  if (it == cfg.end()) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::logic_error&) {
    throw ValueError("config key '" + key + "' is not a number: " + it->second);
  }
}

inline std::size_t get_size(const ConfigMap& cfg, const std::string& key,
                            std::size_t fallback) {
  const double v = get_double(cfg, key, static_cast<double>(fallback));
  if (v < 0.0) throw ValueError("config key '" + key + "' must be non-negative");
  return static_cast<std::size_t>(v);
}

inline bool get_bool(const ConfigMap& cfg, const std::string& key, bool fallback) {
  auto it = cfg.find(key);
  if (it == cfg.end()) return fallback;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw ValueError("config key '" + key + "' must be true/false: " + it->second);
}

inline std::string get_string(const ConfigMap& cfg, const std::string& key,
                              const std::string& fallback) {
  auto it = cfg.find(key);
  return it == cfg.end() ? fallback : it->second;
}

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Config -> train structs
// ---------------------------------------------------------------------------

inline PoseTrainConfig pose_train_config(const ConfigMap& c) {
  PoseTrainConfig t;
  t.seed = detail::get_size(c, "seed", 1);
  t.steps = detail::get_size(c, "steps", 300);
  t.batch = detail::get_size(c, "batch", 24);
  t.learning_rate = detail::get_double(c, "lr", 0.001);
  t.visibility_weight = detail::get_double(c, "vis_weight", 0.01);
  t.eval_every = detail::get_size(c, "eval_every", 25);
  t.train_count = detail::get_size(c, "train_count", 16);
  t.test_count = detail::get_size(c, "test_count", 8);
  t.extent = detail::get_size(c, "extent", 32);
  t.njoints = detail::get_size(c, "njoints", 4);
  t.depth_bins = detail::get_size(c, "depth_bins", 16);
  t.blocks = detail::get_size(c, "blocks", 2);
  t.feature_channels = detail::get_size(c, "feature_channels", 32);
  t.stem_channels = detail::get_size(c, "stem_channels", 12);
  t.mid_channels = detail::get_size(c, "mid_channels", 24);
  return t;
}

inline ActionSynthConfig action_data_config(const ConfigMap& c) {
  ActionSynthConfig d;
  d.seed = detail::get_size(c, "seed", 1);
  d.classes = detail::get_size(c, "classes", 4);
  d.train_clips_per_class = detail::get_size(c, "clips_per_class", 16);
  d.test_clips_per_class = detail::get_size(c, "test_clips_per_class", 8);
  d.frames = detail::get_size(c, "frames", 16);
  d.video_frames = detail::get_size(c, "video_frames", 0);
  d.njoints = detail::get_size(c, "njoints", 4);
  d.dim = detail::get_size(c, "dim", 2);
  d.feat_extent = detail::get_size(c, "feat_extent", 8);
  d.feat_channels = detail::get_size(c, "feat_channels", 8);
  d.image_extent = detail::get_size(c, "image_extent", 16);
  d.noise = detail::get_double(c, "noise", 0.01);
  d.feat_signal = detail::get_double(c, "feat_signal", 0.2);
  d.amplitude = detail::get_double(c, "amplitude", 0.15);
  return d;
}

inline ActionTrainConfig action_train_config(const ConfigMap& c) {
  ActionTrainConfig t;
  t.seed = detail::get_size(c, "seed", 1);
  t.steps = detail::get_size(c, "steps", 500);
  t.batch_clips = detail::get_size(c, "batch_clips", 2);
  t.learning_rate = detail::get_double(c, "lr", 0.0002);
  t.momentum = detail::get_double(c, "momentum", 0.98);
  t.eval_every = detail::get_size(c, "eval_every", 50);
  t.finetune_steps = detail::get_size(c, "finetune_steps", 0);
  t.use_appearance = detail::get_bool(c, "use_appearance", true);
  t.action_blocks = detail::get_size(c, "action_blocks", 4);
  t.app_channels = detail::get_size(c, "app_channels", 16);
  t.data = action_data_config(c);
  return t;
}

// ---------------------------------------------------------------------------
// Checkpoint kinds
// ---------------------------------------------------------------------------

inline constexpr double kKindPose = 0.0;
inline constexpr double kKindAction = 1.0;
inline constexpr double kKindMultitask = 2.0;

inline int checkpoint_kind(const NamedTensors& tensors) {
  for (const auto& [name, t] : tensors)
    if (name == "cfg.kind") return static_cast<int>(t.values.at(0));
  throw ValueError("checkpoint has no cfg.kind marker");
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

inline int cmd_gradcheck(const std::string& module, std::uint64_t seed, double tol,
                         std::ostream& out) {
  const auto results = run_gradcheck_suite(module, seed);
  bool all_pass = true;
  for (const auto& r : results) {
    const bool pass = r.worst_rel_err <= tol;
    all_pass &= pass;
    char line[160];
    std::snprintf(line, sizeof(line), "%s/%s: worst_rel_err=%.3e tol=%.1e %s\n",
                  r.module.c_str(), r.op.c_str(), r.worst_rel_err, tol,
                  pass ? "PASS" : "FAIL");
    out << line;
  }
  out << (all_pass ? "gradcheck: all passed\n" : "gradcheck: FAILURES\n");
  return all_pass ? 0 : 1;
}

inline int cmd_train_pose(const std::string& config_path, const std::string& out_path,
                          std::ostream& out) {
  const PoseTrainConfig cfg = pose_train_config(parse_config_file(config_path));
  PoseTrainResult result = train_pose_toy(cfg);
  NamedTensors tensors = result.net.to_named_tensors_with_config();
  tensors.emplace_back("cfg.kind", TensorData::scalar(kKindPose));
  save_checkpoint(out_path, tensors);
  out << "train-pose: initial_loss=" << detail::fmt(result.initial_loss)
      << " final_loss=" << detail::fmt(result.final_loss)
      << " train_pixel_error=" << detail::fmt(result.train_pixel_error) << "\n";
  for (std::size_t k = 0; k < result.block_losses.size(); ++k)
    out << "train-pose: block" << k << "_loss=" << detail::fmt(result.block_losses[k])
        << "\n";
  out << "train-pose: checkpoint=" << out_path << "\n";
  return 0;
}

inline PoseNetwork load_pose_checkpoint(const std::string& path) {
  NamedTensors tensors = load_checkpoint(path);
  if (checkpoint_kind(tensors) != static_cast<int>(kKindPose))
    throw ValueError(path + ": not a pose checkpoint");
  return PoseNetwork::from_named_tensors(tensors);
}

inline int cmd_train_action(const std::string& config_path, const std::string& out_path,
                            const std::string& pose_ckpt, bool freeze_pose, bool finetune,
                            std::ostream& out) {
  const ConfigMap c = parse_config_file(config_path);
  const std::string mode = detail::get_string(c, "mode", "skeleton");

  if (mode == "skeleton") {
    ActionTrainConfig cfg = action_train_config(c);
    if (finetune && cfg.finetune_steps == 0) cfg.finetune_steps = 50;
    if (!finetune) cfg.finetune_steps = 0;
    ActionTrainResult r = train_action_toy(cfg);
    NamedTensors tensors = r.model.to_named_tensors_with_config();
    tensors.emplace_back("cfg.kind", TensorData::scalar(kKindAction));
    save_checkpoint(out_path, tensors);
    out << "train-action: mode=skeleton"
        << " train_pose_acc=" << detail::fmt(r.train_eval.pose_acc)
        << " train_app_acc=" << detail::fmt(r.train_eval.app_acc)
        << " train_agg_acc=" << detail::fmt(r.train_eval.agg_acc) << "\n"
        << "train-action: test_pose_acc=" << detail::fmt(r.test_eval.pose_acc)
        << " test_app_acc=" << detail::fmt(r.test_eval.app_acc)
        << " test_agg_acc=" << detail::fmt(r.test_eval.agg_acc) << "\n";
    if (cfg.finetune_steps > 0)
      out << "train-action: agg_train_before_ft="
          << detail::fmt(r.agg_train_before_finetune)
          << " agg_train_after_ft=" << detail::fmt(r.agg_train_after_finetune) << "\n";
    out << "train-action: checkpoint=" << out_path << "\n";
    return 0;
  }

  if (mode == "multitask") {
    if (pose_ckpt.empty())
      throw ValueError("train-action: mode=multitask requires --pose-ckpt");
    PoseNetwork pose = load_pose_checkpoint(pose_ckpt);
    MultitaskTrainConfig cfg;
    cfg.seed = detail::get_size(c, "seed", 1);
    cfg.frozen_steps = detail::get_size(c, "frozen_steps", 150);
    cfg.finetune_steps = finetune ? detail::get_size(c, "finetune_steps", 20) : 0;
    cfg.batch_clips = detail::get_size(c, "batch_clips", 2);
    cfg.learning_rate = detail::get_double(c, "lr", 0.0002);
    cfg.momentum = detail::get_double(c, "momentum", 0.98);
    cfg.action_blocks = detail::get_size(c, "action_blocks", 1);
    cfg.app_channels = detail::get_size(c, "app_channels", 8);
    cfg.data = action_data_config(c);
    cfg.data.njoints = pose.config().num_joints;
    (void)freeze_pose;  // phase one always trains with the pose weights frozen

    MultitaskTrainResult r = train_multitask_toy(cfg, std::move(pose));
    NamedTensors tensors = r.model.pose_net().to_named_tensors_with_config();
    for (const auto& e : r.model.action().to_named_tensors_with_config())
      tensors.push_back(e);
    tensors.emplace_back("cfg.mt.num_actions", TensorData::scalar(double(cfg.data.classes)));
    tensors.emplace_back("cfg.mt.frames", TensorData::scalar(double(cfg.data.frames)));
    tensors.emplace_back("cfg.mt.action_dim", TensorData::scalar(double(cfg.data.dim)));
    tensors.emplace_back("cfg.mt.action_blocks",
                         TensorData::scalar(double(cfg.action_blocks)));
    tensors.emplace_back("cfg.mt.app_channels",
                         TensorData::scalar(double(cfg.app_channels)));
    tensors.emplace_back("cfg.kind", TensorData::scalar(kKindMultitask));
    save_checkpoint(out_path, tensors);
    out << "train-action: mode=multitask agg_train_frozen="
        << detail::fmt(r.agg_train_frozen);
    if (cfg.finetune_steps > 0)
      out << " agg_train_finetuned=" << detail::fmt(r.agg_train_finetuned);
    out << "\ntrain-action: checkpoint=" << out_path << "\n";
    return 0;
  }

  throw ValueError("train-action: unknown mode '" + mode + "' (skeleton|multitask)");
}

inline MultitaskModel load_multitask_checkpoint(const std::string& path) {
  NamedTensors tensors = load_checkpoint(path);
  if (checkpoint_kind(tensors) != static_cast<int>(kKindMultitask))
    throw ValueError(path + ": not a multitask checkpoint");
  auto get = [&tensors](const std::string& key) -> double {
    for (const auto& [name, t] : tensors)
      if (name == key) return t.values.at(0);
    throw ValueError("checkpoint is missing config entry '" + key + "'");
  };
  MultitaskConfig cfg;
  cfg.pose = PoseNetwork::config_from_tensors(tensors);
  cfg.num_actions = std::size_t(get("cfg.mt.num_actions"));
  cfg.frames = std::size_t(get("cfg.mt.frames"));
  cfg.action_dim = std::size_t(get("cfg.mt.action_dim"));
  cfg.action_blocks = std::size_t(get("cfg.mt.action_blocks"));
  cfg.app_channels = std::size_t(get("cfg.mt.app_channels"));
  Rng throwaway(0);
  MultitaskModel model(cfg, throwaway);
  restore_parameters(model.pose_net().params(), tensors);
  restore_parameters(model.action().pose_stream().params(), tensors);
  restore_parameters(model.action().app_stream().params(), tensors);
  restore_parameters(model.action().aggregator().params(), tensors);
  return model;
}

inline int cmd_eval_pose(const std::string& ckpt, const std::string& data_cfg,
                         const std::string& pred_path, const std::string& gt_path,
                         double head_size, std::ostream& out) {
  std::vector<Pose> preds, gts;
  std::vector<double> head_sizes;
  std::size_t samples = 0;

  if (!pred_path.empty() || !gt_path.empty()) {
    if (pred_path.empty() || gt_path.empty())
      throw ValueError("eval-pose: --pred and --gt must be given together");
    const SkeletonClip pred_clip = load_skeleton_clip(pred_path);
    const SkeletonClip gt_clip = load_skeleton_clip(gt_path);
    if (pred_clip.frames.size() != gt_clip.frames.size())
      throw ValueError("eval-pose: prediction and ground-truth clips differ in length");
    preds = pred_clip.frames;
    gts = gt_clip.frames;
    head_sizes.assign(gts.size(), head_size);
    samples = gts.size();
  } else {
    if (ckpt.empty() || data_cfg.empty())
      throw ValueError("eval-pose: need --ckpt and --data (or --pred/--gt)");
    PoseNetwork net = load_pose_checkpoint(ckpt);
    const ConfigMap c = parse_config_file(data_cfg);
    PoseDataset ds = synth_pose_dataset(detail::get_size(c, "seed", 1),
                                        detail::get_size(c, "train_count", 16),
                                        detail::get_size(c, "test_count", 8),
                                        detail::get_size(c, "extent", 32),
                                        detail::get_size(c, "njoints", 4));
    if (net.config().num_joints != detail::get_size(c, "njoints", 4))
      throw ValueError("eval-pose: checkpoint joint count differs from the dataset");
    const double extent = static_cast<double>(ds.extent);
    for (const PoseSample& s : ds.test) {
      Pose p = predict_pose(net, s.image);
      // report in pixel units
      for (std::size_t j = 0; j < p.njoints(); ++j) {
        p.coords.values[j * 3 + 0] *= extent;
        p.coords.values[j * 3 + 1] *= extent;
      }
      Pose g = s.pose;
      for (std::size_t j = 0; j < g.njoints(); ++j) {
        g.coords.values[j * 2 + 0] *= extent;
        g.coords.values[j * 2 + 1] *= extent;
      }
      preds.push_back(std::move(p));
      gts.push_back(std::move(g));
      head_sizes.push_back(s.head_size_px);
    }
    samples = gts.size();
  }

  const std::size_t nj = gts.empty() ? 0 : gts[0].njoints();
  std::vector<EvalReport> reports;
  EvalReport p05{"pckh@0.5", pckh(preds, gts, head_sizes, 0.5), {}, samples};
  EvalReport p02{"pckh@0.2", pckh(preds, gts, head_sizes, 0.2), {}, samples};
  EvalReport auc{"auc@0.5", pckh_auc(preds, gts, head_sizes, 0.5), {}, samples};
  EvalReport mp{"mpjpe", mpjpe(preds, gts), {}, samples};
  for (std::size_t j = 0; j < nj; ++j) {
    std::vector<Pose> pj, gj;
    std::vector<double> hj;
    for (std::size_t i = 0; i < gts.size(); ++i) {
      if (!gts[i].valid[j]) continue;
      Pose a = Pose::make(1, preds[i].label_dim);
      const std::size_t dp = preds[i].coords.shape[1];
      a.coords = TensorData({1, dp},
                            std::vector<double>(preds[i].coords.values.begin() + j * dp,
                                                preds[i].coords.values.begin() + (j + 1) * dp));
      Pose b = Pose::make(1, gts[i].label_dim);
      const std::size_t dg = gts[i].coords.shape[1];
      b.coords = TensorData({1, dg},
                            std::vector<double>(gts[i].coords.values.begin() + j * dg,
                                                gts[i].coords.values.begin() + (j + 1) * dg));
      pj.push_back(std::move(a));
      gj.push_back(std::move(b));
      hj.push_back(head_sizes[i]);
    }
    if (gj.empty()) continue;
    p05.breakdown.emplace_back("joint" + std::to_string(j), pckh(pj, gj, hj, 0.5));
    mp.breakdown.emplace_back("joint" + std::to_string(j), mpjpe(pj, gj));
  }
  reports.push_back(std::move(p05));
  reports.push_back(std::move(p02));
  reports.push_back(std::move(auc));
  reports.push_back(std::move(mp));
  out << reports_to_csv(reports);
  return 0;
}

inline int cmd_eval_action(const std::string& ckpt, const std::string& data_cfg,
                           bool multi_clip, std::ostream& out) {
  const ConfigMap c = parse_config_file(data_cfg);
  NamedTensors tensors = load_checkpoint(ckpt);
  const int kind = checkpoint_kind(tensors);
  std::vector<EvalReport> reports;

  if (kind == static_cast<int>(kKindAction)) {
    ActionModel model = ActionModel::from_named_tensors(tensors);
    ActionSynthConfig dc = action_data_config(c);
    dc.with_features = model.config().use_appearance;
    ActionDataset ds = synth_action_dataset(dc);
    const std::size_t T = ds.frames;

    std::vector<EncodedClip> test_clips;
    for (const ActionClipSample& s : ds.test)
      test_clips.push_back(encode_clip(s, single_clip_offset(s.clip.frames.size(), T), T,
                                       model.config().use_appearance));
    const ActionEval ev = evaluate_action(model, test_clips);
    const std::size_t n = test_clips.size();
    reports.push_back({"accuracy.pose_stream", ev.pose_acc, {}, n});
    reports.push_back({"accuracy.appearance_stream", ev.app_acc, {}, n});
    reports.push_back({"accuracy.aggregate", ev.agg_acc, {}, n});
    if (multi_clip)
      reports.push_back({"accuracy.aggregate_multiclip",
                         multi_clip_accuracy(model, ds.test, T,
                                             model.config().use_appearance),
                         {}, n});
  } else if (kind == static_cast<int>(kKindMultitask)) {
    MultitaskModel model = load_multitask_checkpoint(ckpt);
    ActionSynthConfig dc = action_data_config(c);
    dc.with_images = true;
    dc.image_extent = model.config().pose.input_height;
    dc.njoints = model.config().pose.num_joints;
    ActionDataset ds = synth_action_dataset(dc);
    reports.push_back({"accuracy.aggregate",
                       multitask_clip_accuracy(model, ds.test, ds.frames), {},
                       ds.test.size()});
  } else {
    throw ValueError(ckpt + ": not an action checkpoint");
  }
  out << reports_to_csv(reports);
  return 0;
}

inline int cmd_predict(const std::string& ckpt, const std::string& clip_path,
                       std::ostream& out) {
  NamedTensors tensors = load_checkpoint(ckpt);
  if (checkpoint_kind(tensors) != static_cast<int>(kKindAction))
    throw ValueError(ckpt + ": predict expects a skeleton action checkpoint");
  ActionModel model = ActionModel::from_named_tensors(tensors);
  const SkeletonClip clip = load_skeleton_clip(clip_path);
  const ActionConfig& sc = model.config().pose_stream;
  if (clip.njoints() != sc.num_joints)
    throw ValueError("predict: clip has " + std::to_string(clip.njoints()) +
                     " joints, model expects " + std::to_string(sc.num_joints));
  if (clip.dim() != sc.in_channels)
    throw ValueError("predict: clip coordinate dim " + std::to_string(clip.dim()) +
                     " does not match model input channels " +
                     std::to_string(sc.in_channels));

  // Short clips are padded by repeating the last frame; long clips use the
  // middle window.
  std::vector<Pose> frames = clip.frames;
  const std::size_t T = sc.frames;
  if (frames.size() < T) {
    while (frames.size() < T) frames.push_back(frames.back());
  } else if (frames.size() > T) {
    const std::size_t off = single_clip_offset(frames.size(), T);
    frames.assign(clip.frames.begin() + static_cast<std::ptrdiff_t>(off),
                  clip.frames.begin() + static_cast<std::ptrdiff_t>(off + T));
  }

  Tape tape;
  auto bound = model.pose_stream().bind(tape, /*trainable=*/false);
  ActionForward fwd = model.pose_stream().forward(
      tape, bound, tape.leaf(encode_pose_sequence(frames)));

  out << "type,frame,values\n";
  const std::size_t dim = clip.dim();
  for (std::size_t t = 0; t < clip.frames.size(); ++t) {
    out << "pose," << t;
    const Pose& p = clip.frames[t];
    for (std::size_t j = 0; j < p.njoints(); ++j)
      for (std::size_t d = 0; d < dim; ++d) {
        if (p.valid[j]) out << ',' << detail::fmt(p.coords.values[j * dim + d]);
        else out << ",nan";
      }
    out << "\n";
  }
  out << "action,";
  for (double v : fwd.probs.values()) out << ',' << detail::fmt(v);
  out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"differentiable pose estimation and action recognition harness"};
  app.require_subcommand(1);

  std::string module = "all", config, out_path, pose_ckpt, ckpt, data_cfg, clip_path;
  std::string pred_path, gt_path;
  std::uint64_t seed = 1;
  double tol = 1e-4, head_size = 0.1;
  bool freeze_pose = false, finetune = false, multi_clip = false;

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gradcheck->add_option("--module", module, "all|softargmax|pose|action")
      ->check(CLI::IsMember({"all", "softargmax", "pose", "action"}));
  gradcheck->add_option("--seed", seed, "rng seed");
  gradcheck->add_option("--tol", tol, "relative tolerance");

  CLI::App* train_pose = app.add_subcommand("train-pose", "toy pose training");
  train_pose->add_option("--config", config, "key=value config file")->required();
  train_pose->add_option("--out", out_path, "checkpoint output path")->required();

  CLI::App* train_action = app.add_subcommand("train-action", "toy action training");
  train_action->add_option("--config", config, "key=value config file")->required();
  train_action->add_option("--out", out_path, "checkpoint output path")->required();
  train_action->add_option("--pose-ckpt", pose_ckpt, "pose checkpoint (multitask mode)");
  train_action->add_flag("--freeze-pose", freeze_pose, "keep pose weights frozen");
  train_action->add_flag("--finetune", finetune, "run the fine-tune phase at lr/10");

  CLI::App* eval_pose = app.add_subcommand("eval-pose", "PCKh/AUC/MPJPE report (CSV)");
  eval_pose->add_option("--ckpt", ckpt, "pose checkpoint");
  eval_pose->add_option("--data", data_cfg, "dataset config file");
  eval_pose->add_option("--pred", pred_path, "predicted-poses .skc (bypasses the model)");
  eval_pose->add_option("--gt", gt_path, "ground-truth .skc");
  eval_pose->add_option("--head-size", head_size, "head size in pose units for --pred/--gt");

  CLI::App* eval_action = app.add_subcommand("eval-action", "action accuracy report (CSV)");
  eval_action->add_option("--ckpt", ckpt, "action checkpoint")->required();
  eval_action->add_option("--data", data_cfg, "dataset config file")->required();
  eval_action->add_flag("--multi-clip", multi_clip, "average clips spaced T/2 apart");

  CLI::App* predict = app.add_subcommand("predict", "per-frame poses + action distribution");
  predict->add_option("--ckpt", ckpt, "action checkpoint")->required();
  predict->add_option("--clip", clip_path, "skeleton clip (.skc)")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (gradcheck->parsed()) return cmd_gradcheck(module, seed, tol, out);
    if (train_pose->parsed()) return cmd_train_pose(config, out_path, out);
    if (train_action->parsed())
      return cmd_train_action(config, out_path, pose_ckpt, freeze_pose, finetune, out);
    if (eval_pose->parsed())
      return cmd_eval_pose(ckpt, data_cfg, pred_path, gt_path, head_size, out);
    if (eval_action->parsed()) return cmd_eval_action(ckpt, data_cfg, multi_clip, out);
    if (predict->parsed()) return cmd_predict(ckpt, clip_path, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  err << "usage error: no subcommand\n";
  return 2;
}

inline int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace softpose::cli
