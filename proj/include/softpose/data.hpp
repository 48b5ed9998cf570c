#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "softpose/pose.hpp"
#include "softpose/rng.hpp"
#include "softpose/tensor.hpp"

namespace softpose {

// ---------------------------------------------------------------------------
// Skeleton clips and their line-delimited text format:
//   #skc v1 njoints=<N> dim=<D> fps=<f> label=<idx|none>
//   one line per frame: N*D decimals (nan for invalid joints), then N
//   visibility flags (0/1). Strict parse; malformed lines are hard errors.
// ---------------------------------------------------------------------------

struct SkeletonClip {
  std::vector<Pose> frames;
  int action_label = -1;  // -1 = none
  std::string dataset_tag;
  double fps = 0.0;

  std::size_t njoints() const { return frames.empty() ? 0 : frames[0].njoints(); }
  std::size_t dim() const {
    return frames.empty() ? 0 : frames[0].coords.shape[1];
  }
};

namespace detail {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

inline std::string encode_skeleton_clip(const SkeletonClip& clip) {
  if (clip.frames.empty()) throw ValueError("encode_skeleton_clip: clip has no frames");
  const std::size_t nj = clip.njoints(), dim = clip.dim();
  std::ostringstream os;
  os << "#skc v1 njoints=" << nj << " dim=" << dim << " fps=" << detail::format_double(clip.fps)
     << " label=";
  if (clip.action_label < 0) os << "none";
  else os << clip.action_label;
  os << "\n";
  for (const Pose& p : clip.frames) {
    if (p.njoints() != nj || p.coords.shape[1] != dim)
      throw ShapeError("encode_skeleton_clip: inconsistent frame shapes");
    bool first = true;
    for (std::size_t j = 0; j < nj; ++j)
      for (std::size_t d = 0; d < dim; ++d) {
        if (!first) os << ' ';
        first = false;
        if (!p.valid[j]) os << "nan";
        else os << detail::format_double(p.coords.values[j * dim + d]);
      }
    for (std::size_t j = 0; j < nj; ++j) os << ' ' << (p.visibility[j] >= 0.5 ? 1 : 0);
    os << "\n";
  }
  return os.str();
}

inline SkeletonClip decode_skeleton_clip(const std::string& text, const std::string& source) {
  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;

  auto fail = [&source, &line_no](const std::string& msg) -> void {
    throw ValueError(source + ":" + std::to_string(line_no) + ": " + msg);
  };

  if (!std::getline(is, line)) {
    line_no = 1;
    fail("empty clip file");
  }
  ++line_no;
  std::istringstream hs(line);
  std::string magic, v, njs, dims, fpss, labels;
  hs >> magic >> v >> njs >> dims >> fpss >> labels;
  if (magic != "#skc" || v != "v1") fail("expected header '#skc v1 ...'");
  auto field = [&fail](const std::string& token, const std::string& key) -> std::string {
    if (token.rfind(key + "=", 0) != 0) return (fail("expected " + key + "=..."), "");
    return token.substr(key.size() + 1);
  };
  SkeletonClip clip;
  std::size_t nj = 0, dim = 0;
  try {
    nj = std::stoul(field(njs, "njoints"));
    dim = std::stoul(field(dims, "dim"));
    clip.fps = std::stod(field(fpss, "fps"));
  } catch (const std::logic_error&) {
    fail("malformed numeric header field");
  }
  const std::string label = field(labels, "label");
  if (label == "none") clip.action_label = -1;
  else {
    try {
      clip.action_label = std::stoi(label);
    } catch (const std::logic_error&) {
      fail("label must be an index or 'none'");
    }
    if (clip.action_label < 0) fail("label index must be non-negative");
  }
  if (nj == 0 || dim == 0) fail("njoints and dim must be positive");

  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) fail("empty frame line");
    std::istringstream ls(line);
    Pose p = Pose::make(nj, static_cast<int>(dim));
    std::string tok;
    for (std::size_t j = 0; j < nj; ++j) {
      bool joint_nan = false, joint_num = false;
      for (std::size_t d = 0; d < dim; ++d) {
        if (!(ls >> tok)) fail("truncated frame: expected " + std::to_string(nj * dim) +
                               " coordinates");
        if (tok == "nan") {
          joint_nan = true;
          p.coords.values[j * dim + d] = std::numeric_limits<double>::quiet_NaN();
        } else {
          joint_num = true;
          try {
            std::size_t used = 0;
            p.coords.values[j * dim + d] = std::stod(tok, &used);
            if (used != tok.size()) fail("malformed coordinate '" + tok + "'");
          } catch (const std::logic_error&) {
            fail("malformed coordinate '" + tok + "'");
          }
        }
      }
      if (joint_nan && joint_num) fail("joint " + std::to_string(j) + " mixes nan and numbers");
      p.valid[j] = joint_nan ? 0 : 1;
    }
    for (std::size_t j = 0; j < nj; ++j) {
      if (!(ls >> tok)) fail("truncated frame: expected " + std::to_string(nj) +
                             " visibility flags");
      if (tok == "0") p.visibility[j] = 0.0;
      else if (tok == "1") p.visibility[j] = 1.0;
      else fail("visibility flag must be 0 or 1, got '" + tok + "'");
    }
    if (ls >> tok) fail("trailing token '" + tok + "'");
    clip.frames.push_back(std::move(p));
  }
  if (clip.frames.empty()) {
    ++line_no;
    fail("clip has no frames");
  }
  return clip;
}

inline void save_skeleton_clip(const std::string& path, const SkeletonClip& clip) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ValueError("cannot open file for writing: " + path);
  const std::string text = encode_skeleton_clip(clip);
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
}

inline SkeletonClip load_skeleton_clip(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValueError("cannot open file: " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_skeleton_clip(text, path);
}

// ---------------------------------------------------------------------------
// Layout merging: unified layout = the largest dataset's joint list; other
// datasets map by joint name, and unified joints without a source stay
// invalid (their coordinates are NaN-poisoned so accidental reads surface).
// ---------------------------------------------------------------------------

struct JointLayout {
  std::string name;
  std::vector<std::string> joints;
  std::vector<std::pair<std::size_t, std::size_t>> flip_pairs;
};

struct LayoutMap {
  std::vector<std::string> unified_joints;
  std::vector<std::vector<int>> index_map;  // per dataset: joint -> unified (-1 dropped)
  std::vector<std::pair<std::size_t, std::size_t>> flip_pairs;  // unified indexing

  std::size_t unified_njoints() const { return unified_joints.size(); }
};

inline LayoutMap merge_layouts(const std::vector<JointLayout>& datasets) {
  if (datasets.empty()) throw ValueError("merge_layouts: no datasets");
  for (const JointLayout& d : datasets)
    for (std::size_t i = 0; i < d.joints.size(); ++i)
      for (std::size_t j = i + 1; j < d.joints.size(); ++j)
        if (d.joints[i] == d.joints[j])
          throw ValueError("merge_layouts: duplicate joint name '" + d.joints[i] +
                           "' in dataset '" + d.name + "'");

  std::size_t largest = 0;
  for (std::size_t i = 1; i < datasets.size(); ++i)
    if (datasets[i].joints.size() > datasets[largest].joints.size()) largest = i;

  LayoutMap map;
  map.unified_joints = datasets[largest].joints;
  map.flip_pairs = datasets[largest].flip_pairs;
  for (const JointLayout& d : datasets) {
    std::vector<int> idx(d.joints.size(), -1);
    for (std::size_t j = 0; j < d.joints.size(); ++j)
      for (std::size_t u = 0; u < map.unified_joints.size(); ++u)
        if (d.joints[j] == map.unified_joints[u]) {
          idx[j] = static_cast<int>(u);
          break;
        }
    map.index_map.push_back(std::move(idx));
  }
  return map;
}

inline Pose map_to_unified(const LayoutMap& map, std::size_t dataset_index,
                           const Pose& sample) {
  if (dataset_index >= map.index_map.size())
    throw ValueError("map_to_unified: dataset index out of range");
  const std::vector<int>& idx = map.index_map[dataset_index];
  if (sample.njoints() != idx.size())
    throw ShapeError("map_to_unified: sample has " + std::to_string(sample.njoints()) +
                     " joints, layout expects " + std::to_string(idx.size()));
  const std::size_t dim = sample.coords.shape[1];
  Pose out = Pose::make(map.unified_njoints(), sample.label_dim);
  out.coords = TensorData::full({map.unified_njoints(), dim},
                                std::numeric_limits<double>::quiet_NaN());
  for (auto& v : out.valid) v = 0;
  for (auto& v : out.visibility) v = 0.0;
  for (std::size_t j = 0; j < idx.size(); ++j) {
    if (idx[j] < 0) continue;
    const std::size_t u = static_cast<std::size_t>(idx[j]);
    for (std::size_t d = 0; d < dim; ++d)
      out.coords.values[u * dim + d] = sample.coords.values[j * dim + d];
    out.valid[u] = sample.valid[j];
    out.visibility[u] = sample.visibility[j];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic pose data: images are sums of per-joint Gaussian bumps at the
// target locations plus noise, one bump per joint on channel j % 3.
// ---------------------------------------------------------------------------

struct PoseSample {
  TensorData image;  // [H,W,3]
  Pose pose;         // normalized coordinates
  double head_size_px = 4.0;
};

inline void render_joint_bumps(TensorData& image, const Pose& pose, double amplitude = 1.0,
                               double sigma = 1.2) {
  const std::size_t H = image.shape[0], W = image.shape[1];
  const std::size_t nj = pose.njoints();
  const std::size_t dim = pose.coords.shape[1];
  for (std::size_t j = 0; j < nj; ++j) {
    if (!pose.valid[j]) continue;
    const double cx = pose.coords.values[j * dim + 0] * static_cast<double>(W);
    const double cy = pose.coords.values[j * dim + 1] * static_cast<double>(H);
    const std::size_t ch = j % 3;
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const double dx = static_cast<double>(x) - cx;
        const double dy = static_cast<double>(y) - cy;
        const double r2 = dx * dx + dy * dy;
        if (r2 > 25.0) continue;
        image.values[(y * W + x) * 3 + ch] +=
            amplitude * std::exp(-r2 / (2.0 * sigma * sigma));
      }
  }
}

struct PoseDataset {
  std::vector<PoseSample> train, test;
  std::size_t extent = 0;
};

inline PoseDataset synth_pose_dataset(std::uint64_t seed, std::size_t train_count,
                                      std::size_t test_count, std::size_t extent,
                                      std::size_t njoints, double noise = 0.02) {
  if (extent < 16) throw ValueError("synth_pose_dataset: extent must be >= 16");
  Rng rng(seed);
  PoseDataset ds;
  ds.extent = extent;
  auto make_sample = [&]() {
    PoseSample s;
    s.pose = Pose::make(njoints, 2);
    const double margin = 5.0;
    for (std::size_t j = 0; j < njoints; ++j) {
      const double px = rng.uniform(margin, static_cast<double>(extent) - 1.0 - margin);
      const double py = rng.uniform(margin, static_cast<double>(extent) - 1.0 - margin);
      s.pose.coords.values[j * 2 + 0] = px / static_cast<double>(extent);
      s.pose.coords.values[j * 2 + 1] = py / static_cast<double>(extent);
    }
    s.image = TensorData::zeros({extent, extent, 3});
    render_joint_bumps(s.image, s.pose);
    for (double& v : s.image.values) v += rng.normal(0.0, noise);
    s.head_size_px = static_cast<double>(extent) / 8.0;
    return s;
  };
  for (std::size_t i = 0; i < train_count; ++i) ds.train.push_back(make_sample());
  for (std::size_t i = 0; i < test_count; ++i) ds.test.push_back(make_sample());
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic action data: each class is a distinct parametric joint-trajectory
// family; optional per-frame class-correlated feature maps and probability
// maps let the appearance stream train without a pose network.
// ---------------------------------------------------------------------------

struct ActionClipSample {
  SkeletonClip clip;                      // video_frames long (>= T)
  std::vector<TensorData> feature_maps;   // per frame [E,E,Nf] when requested
  std::vector<TensorData> prob_maps;      // per frame [E,E,NJ] when requested
  std::vector<TensorData> images;         // per frame [I,I,3] when requested
};

struct ActionDataset {
  std::vector<ActionClipSample> train, test;
  std::size_t num_actions = 0;
  std::size_t frames = 0;  // clip length T
};

struct ActionSynthConfig {
  std::uint64_t seed = 1;
  std::size_t classes = 4;
  std::size_t train_clips_per_class = 16;
  std::size_t test_clips_per_class = 8;
  std::size_t frames = 16;        // T
  std::size_t video_frames = 0;   // 0 => exactly T
  std::size_t njoints = 4;
  std::size_t dim = 2;
  bool with_features = false;
  std::size_t feat_extent = 8;
  std::size_t feat_channels = 8;
  bool with_images = false;       // render per-frame joint-bump images
  std::size_t image_extent = 16;
  double amplitude = 0.15;
  double noise = 0.01;
  double feat_signal = 0.2;       // class-signature magnitude in feature maps
};

inline ActionDataset synth_action_dataset(const ActionSynthConfig& cfg) {
  if (cfg.classes < 2) throw ValueError("synth_action_dataset: need at least 2 classes");
  if (cfg.dim != 2 && cfg.dim != 3)
    throw ValueError("synth_action_dataset: dim must be 2 or 3");
  const std::size_t video_len = cfg.video_frames == 0 ? cfg.frames : cfg.video_frames;
  if (video_len < cfg.frames)
    throw ValueError("synth_action_dataset: video shorter than a clip");
  Rng rng(cfg.seed);

  // Per-class feature signatures, fixed by the seed. Kept mild so the
  // appearance stream trains at the same rate as the pose stream.
  std::vector<std::vector<double>> signature(cfg.classes,
                                             std::vector<double>(cfg.feat_channels, 0.0));
  for (auto& sig : signature)
    for (double& v : sig) v = rng.uniform(-cfg.feat_signal, cfg.feat_signal);

  auto make_clip = [&](std::size_t cls) {
    ActionClipSample sample;
    SkeletonClip& clip = sample.clip;
    clip.action_label = static_cast<int>(cls);
    clip.dataset_tag = "synth";
    clip.fps = 10.0;

    // Trajectory family: every joint oscillates at two cycles per clip;
    // class c sets the phase gap between neighboring joints to
    // c * 2*pi / classes. The gap is a local pattern over the (time, joint)
    // grid, invariant to the clip's global phase and to window position.
    constexpr double kTau = 6.283185307179586;
    const double global_phase = rng.uniform(0.0, kTau);
    const double joint_gap = kTau * double(cls) / double(cfg.classes);
    std::vector<double> bx(cfg.njoints), by(cfg.njoints), bz(cfg.njoints);
    std::vector<double> phase(cfg.njoints);
    for (std::size_t j = 0; j < cfg.njoints; ++j) {
      bx[j] = rng.uniform(0.3, 0.7);
      by[j] = rng.uniform(0.3, 0.7);
      bz[j] = rng.uniform(0.3, 0.7);
      phase[j] = global_phase + joint_gap * double(j);
    }
    const double freq = 2.0;

    for (std::size_t t = 0; t < video_len; ++t) {
      Pose p = Pose::make(cfg.njoints, static_cast<int>(cfg.dim));
      const double w = 6.283185307179586 * freq * double(t) / double(cfg.frames);
      for (std::size_t j = 0; j < cfg.njoints; ++j) {
        const double dx = cfg.amplitude * std::sin(w + phase[j]);
        const double dy = cfg.amplitude * std::cos(w + phase[j]);
        p.coords.values[j * cfg.dim + 0] = bx[j] + dx + rng.normal(0.0, cfg.noise);
        p.coords.values[j * cfg.dim + 1] = by[j] + dy + rng.normal(0.0, cfg.noise);
        if (cfg.dim == 3)
          p.coords.values[j * cfg.dim + 2] =
              bz[j] + cfg.amplitude * std::sin(w + phase[j] + 0.7853981633974483) +
              rng.normal(0.0, cfg.noise);
      }
      clip.frames.push_back(std::move(p));
    }

    if (cfg.with_features) {
      const std::size_t E = cfg.feat_extent;
      for (std::size_t t = 0; t < video_len; ++t) {
        TensorData F = TensorData::zeros({E, E, cfg.feat_channels});
        for (std::size_t i = 0; i < E * E; ++i)
          for (std::size_t f = 0; f < cfg.feat_channels; ++f)
            F.values[i * cfg.feat_channels + f] =
                signature[cls][f] + rng.normal(0.0, 4.0 * cfg.noise);
        sample.feature_maps.push_back(std::move(F));

        // Gaussian attention at each joint, normalized per channel.
        TensorData M = TensorData::zeros({E, E, cfg.njoints});
        const Pose& p = clip.frames[t];
        for (std::size_t j = 0; j < cfg.njoints; ++j) {
          const double cx = p.coords.values[j * cfg.dim + 0] * double(E);
          const double cy = p.coords.values[j * cfg.dim + 1] * double(E);
          double sum = 0.0;
          for (std::size_t y = 0; y < E; ++y)
            for (std::size_t x = 0; x < E; ++x) {
              const double dx = double(x) - cx, dy = double(y) - cy;
              const double v = std::exp(-(dx * dx + dy * dy) / 2.0);
              M.values[(y * E + x) * cfg.njoints + j] = v;
              sum += v;
            }
          for (std::size_t i = 0; i < E * E; ++i)
            M.values[i * cfg.njoints + j] /= sum;
        }
        sample.prob_maps.push_back(std::move(M));
      }
    }

    if (cfg.with_images) {
      for (std::size_t t = 0; t < video_len; ++t) {
        TensorData img = TensorData::zeros({cfg.image_extent, cfg.image_extent, 3});
        render_joint_bumps(img, clip.frames[t]);
        for (double& v : img.values) v += rng.normal(0.0, cfg.noise);
        sample.images.push_back(std::move(img));
      }
    }
    return sample;
  };

  ActionDataset ds;
  ds.num_actions = cfg.classes;
  ds.frames = cfg.frames;
  for (std::size_t c = 0; c < cfg.classes; ++c)
    for (std::size_t i = 0; i < cfg.train_clips_per_class; ++i)
      ds.train.push_back(make_clip(c));
  for (std::size_t c = 0; c < cfg.classes; ++c)
    for (std::size_t i = 0; i < cfg.test_clips_per_class; ++i)
      ds.test.push_back(make_clip(c));
  return ds;
}

// Clip cutting for single-clip / multi-clip evaluation. Multi-clip offsets
// are spaced T/2 frames apart.
inline SkeletonClip cut_clip(const SkeletonClip& video, std::size_t start, std::size_t T) {
  if (start + T > video.frames.size())
    throw ValueError("cut_clip: window past the end of the video");
  SkeletonClip out;
  out.action_label = video.action_label;
  out.dataset_tag = video.dataset_tag;
  out.fps = video.fps;
  out.frames.assign(video.frames.begin() + static_cast<std::ptrdiff_t>(start),
                    video.frames.begin() + static_cast<std::ptrdiff_t>(start + T));
  return out;
}

inline std::size_t single_clip_offset(std::size_t video_len, std::size_t T) {
  if (video_len < T) throw ValueError("single_clip_offset: video shorter than a clip");
  return (video_len - T) / 2;
}

inline std::vector<std::size_t> multi_clip_offsets(std::size_t video_len, std::size_t T) {
  if (video_len < T) throw ValueError("multi_clip_offsets: video shorter than a clip");
  std::vector<std::size_t> offsets;
  const std::size_t step = std::max<std::size_t>(1, T / 2);
  for (std::size_t o = 0; o + T <= video_len; o += step) offsets.push_back(o);
  return offsets;
}

// ---------------------------------------------------------------------------
// Augmentation: rotation / scale / translation applied consistently to the
// image and the pose, horizontal flip with joint-label swapping, temporal
// subsampling for clips. Joints leaving the crop get visibility target 0.
// ---------------------------------------------------------------------------

struct AugmentationConfig {
  double rotation_deg_min = -45.0, rotation_deg_max = 45.0;
  double scale_min = 0.7, scale_max = 1.3;
  double translate_px_min = -40.0, translate_px_max = 40.0;
  int subsample_min = 1, subsample_max = 3;
  double flip_probability = 0.5;

  void validate() const {
    if (rotation_deg_min > rotation_deg_max || scale_min > scale_max ||
        translate_px_min > translate_px_max || subsample_min > subsample_max ||
        subsample_min < 1 || flip_probability < 0.0 || flip_probability > 1.0)
      throw ValueError("AugmentationConfig: invalid ranges");
  }
};

struct AugmentParams {
  double rotation_deg = 0.0;
  double scale = 1.0;
  double translate_x_px = 0.0, translate_y_px = 0.0;
  bool flip = false;
  int subsample = 1;

  static AugmentParams identity() { return {}; }
};

inline AugmentParams draw_augment_params(const AugmentationConfig& cfg, Rng& rng) {
  cfg.validate();
  AugmentParams p;
  p.rotation_deg = rng.uniform(cfg.rotation_deg_min, cfg.rotation_deg_max);
  p.scale = rng.uniform(cfg.scale_min, cfg.scale_max);
  p.translate_x_px = rng.uniform(cfg.translate_px_min, cfg.translate_px_max);
  p.translate_y_px = rng.uniform(cfg.translate_px_min, cfg.translate_px_max);
  p.flip = rng.bernoulli(cfg.flip_probability);
  p.subsample = cfg.subsample_min +
                static_cast<int>(rng.uniform_int(
                    static_cast<std::uint64_t>(cfg.subsample_max - cfg.subsample_min + 1)));
  return p;
}

namespace detail {

// Forward pixel-space affine: rotate+scale about the image center, translate,
// then mirror when flipping.
struct PixelAffine {
  double a00, a01, a02, a10, a11, a12;

  static PixelAffine from_params(const AugmentParams& p, std::size_t W, std::size_t H) {
    const double rad = p.rotation_deg * 3.141592653589793 / 180.0;
    const double cs = std::cos(rad) * p.scale, sn = std::sin(rad) * p.scale;
    const double cx = (static_cast<double>(W) - 1.0) / 2.0;
    const double cy = (static_cast<double>(H) - 1.0) / 2.0;
    PixelAffine t;
    t.a00 = cs, t.a01 = -sn;
    t.a10 = sn, t.a11 = cs;
    t.a02 = cx - cs * cx + sn * cy + p.translate_x_px;
    t.a12 = cy - sn * cx - cs * cy + p.translate_y_px;
    if (p.flip) {
      // x' = (W-1) - x
      t.a00 = -t.a00, t.a01 = -t.a01;
      t.a02 = (static_cast<double>(W) - 1.0) - t.a02;
    }
    return t;
  }

  void apply(double& x, double& y) const {
    const double nx = a00 * x + a01 * y + a02;
    const double ny = a10 * x + a11 * y + a12;
    x = nx, y = ny;
  }

  PixelAffine inverse() const {
    const double det = a00 * a11 - a01 * a10;
    PixelAffine inv;
    inv.a00 = a11 / det, inv.a01 = -a01 / det;
    inv.a10 = -a10 / det, inv.a11 = a00 / det;
    inv.a02 = -(inv.a00 * a02 + inv.a01 * a12);
    inv.a12 = -(inv.a10 * a02 + inv.a11 * a12);
    return inv;
  }
};

inline double bilinear(const TensorData& img, double x, double y, std::size_t c) {
  const std::size_t H = img.shape[0], W = img.shape[1], C = img.shape[2];
  if (x < -1.0 || y < -1.0 || x > static_cast<double>(W) || y > static_cast<double>(H))
    return 0.0;
  const double fx = std::floor(x), fy = std::floor(y);
  const double wx = x - fx, wy = y - fy;
  auto at = [&](double yy, double xx) -> double {
    if (xx < 0.0 || yy < 0.0 || xx >= static_cast<double>(W) || yy >= static_cast<double>(H))
      return 0.0;
    return img.values[(static_cast<std::size_t>(yy) * W + static_cast<std::size_t>(xx)) * C + c];
  };
  return (1.0 - wy) * ((1.0 - wx) * at(fy, fx) + wx * at(fy, fx + 1.0)) +
         wy * ((1.0 - wx) * at(fy + 1.0, fx) + wx * at(fy + 1.0, fx + 1.0));
}

}  // namespace detail

inline PoseSample augment(const PoseSample& sample, const AugmentParams& params,
                          const std::vector<std::pair<std::size_t, std::size_t>>& flip_pairs = {}) {
  const std::size_t H = sample.image.shape[0], W = sample.image.shape[1];
  const auto fwd = detail::PixelAffine::from_params(params, W, H);
  const auto inv = fwd.inverse();

  PoseSample out = sample;
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      double sx = static_cast<double>(x), sy = static_cast<double>(y);
      inv.apply(sx, sy);
      for (std::size_t c = 0; c < 3; ++c)
        out.image.values[(y * W + x) * 3 + c] = detail::bilinear(sample.image, sx, sy, c);
    }

  const std::size_t nj = sample.pose.njoints();
  const std::size_t dim = sample.pose.coords.shape[1];
  Pose pose = sample.pose;
  for (std::size_t j = 0; j < nj; ++j) {
    if (!pose.valid[j]) continue;
    double px = pose.coords.values[j * dim + 0] * static_cast<double>(W);
    double py = pose.coords.values[j * dim + 1] * static_cast<double>(H);
    fwd.apply(px, py);
    pose.coords.values[j * dim + 0] = px / static_cast<double>(W);
    pose.coords.values[j * dim + 1] = py / static_cast<double>(H);
    const bool inside = px >= 0.0 && py >= 0.0 && px < static_cast<double>(W) &&
                        py < static_cast<double>(H);
    pose.visibility[j] = inside ? pose.visibility[j] : 0.0;
  }
  if (params.flip)
    for (const auto& [a, b] : flip_pairs) {
      for (std::size_t d = 0; d < dim; ++d)
        std::swap(pose.coords.values[a * dim + d], pose.coords.values[b * dim + d]);
      std::swap(pose.visibility[a], pose.visibility[b]);
      std::swap(pose.valid[a], pose.valid[b]);
    }
  out.pose = std::move(pose);
  out.head_size_px = sample.head_size_px * params.scale;
  return out;
}

inline PoseSample augment(const PoseSample& sample, const AugmentationConfig& cfg, Rng& rng,
                          const std::vector<std::pair<std::size_t, std::size_t>>& flip_pairs = {}) {
  return augment(sample, draw_augment_params(cfg, rng), flip_pairs);
}

// Clip-level augmentation: temporal subsampling (every k-th frame, wrapping
// the start so at least one clip-length window survives) and the same
// geometric transform on every frame's coordinates.
inline SkeletonClip augment_clip(const SkeletonClip& clip, const AugmentParams& params,
                                 std::size_t frame_extent,
                                 const std::vector<std::pair<std::size_t, std::size_t>>& flip_pairs = {}) {
  SkeletonClip out;
  out.action_label = clip.action_label;
  out.dataset_tag = clip.dataset_tag;
  out.fps = clip.fps;
  const auto fwd = detail::PixelAffine::from_params(params, frame_extent, frame_extent);
  const std::size_t step = static_cast<std::size_t>(std::max(params.subsample, 1));
  const std::size_t dim = clip.dim();
  for (std::size_t t = 0; t < clip.frames.size(); t += step) {
    Pose p = clip.frames[t];
    for (std::size_t j = 0; j < p.njoints(); ++j) {
      if (!p.valid[j]) continue;
      double px = p.coords.values[j * dim + 0] * static_cast<double>(frame_extent);
      double py = p.coords.values[j * dim + 1] * static_cast<double>(frame_extent);
      fwd.apply(px, py);
      p.coords.values[j * dim + 0] = px / static_cast<double>(frame_extent);
      p.coords.values[j * dim + 1] = py / static_cast<double>(frame_extent);
      const bool inside = px >= 0.0 && py >= 0.0 && px < static_cast<double>(frame_extent) &&
                          py < static_cast<double>(frame_extent);
      p.visibility[j] = inside ? p.visibility[j] : 0.0;
    }
    if (params.flip)
      for (const auto& [a, b] : flip_pairs) {
        for (std::size_t d = 0; d < dim; ++d)
          std::swap(p.coords.values[a * dim + d], p.coords.values[b * dim + d]);
        std::swap(p.visibility[a], p.visibility[b]);
        std::swap(p.valid[a], p.valid[b]);
      }
    out.frames.push_back(std::move(p));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Clip bounding box: pose prediction on the first, middle, and last frames at
// full extent, then the tight normalized box over all valid predicted joints,
// expanded by `margin` per side. Falls back to the full frame when no joint
// is valid.
// ---------------------------------------------------------------------------

struct BBox {
  double x0 = 0.0, y0 = 0.0, x1 = 1.0, y1 = 1.0;

  bool contains(double x, double y) const {
    return x >= x0 && x <= x1 && y >= y0 && y <= y1;
  }
};

using PoseFn = std::function<Pose(const TensorData& image)>;

inline BBox estimate_clip_bbox(const std::vector<TensorData>& frames, const PoseFn& predict,
                               double margin = 0.10) {
  if (frames.empty()) throw ValueError("estimate_clip_bbox: clip has no frames");
  const std::size_t n = frames.size();
  std::vector<std::size_t> picks = {0, n / 2, n - 1};
  picks.erase(std::unique(picks.begin(), picks.end()), picks.end());

  double x0 = 1e30, y0 = 1e30, x1 = -1e30, y1 = -1e30;
  bool any = false;
  for (std::size_t idx : picks) {
    const Pose p = predict(frames[idx]);
    const std::size_t dim = p.coords.shape[1];
    for (std::size_t j = 0; j < p.njoints(); ++j) {
      if (!p.valid[j]) continue;
      any = true;
      x0 = std::min(x0, p.coords.values[j * dim + 0]);
      x1 = std::max(x1, p.coords.values[j * dim + 0]);
      y0 = std::min(y0, p.coords.values[j * dim + 1]);
      y1 = std::max(y1, p.coords.values[j * dim + 1]);
    }
  }
  if (!any) return BBox{};
  const double mx = margin * std::max(x1 - x0, 1e-9);
  const double my = margin * std::max(y1 - y0, 1e-9);
  BBox box;
  box.x0 = std::max(0.0, x0 - mx);
  box.y0 = std::max(0.0, y0 - my);
  box.x1 = std::min(1.0, x1 + mx);
  box.y1 = std::min(1.0, y1 + my);
  return box;
}

// Deterministic interleaving of datasets by configured ratio (e.g. 50%/50%),
// for reproducible mixed-batch composition.
inline std::vector<std::size_t> mixed_schedule(const std::vector<double>& ratios,
                                               std::size_t total) {
  if (ratios.empty()) throw ValueError("mixed_schedule: no ratios");
  double sum = 0.0;
  for (double r : ratios) {
    if (r < 0.0) throw ValueError("mixed_schedule: negative ratio");
    sum += r;
  }
  if (sum <= 0.0) throw ValueError("mixed_schedule: ratios sum to zero");
  std::vector<double> credit(ratios.size(), 0.0);
  std::vector<std::size_t> order;
  order.reserve(total);
  for (std::size_t i = 0; i < total; ++i) {
    for (std::size_t d = 0; d < ratios.size(); ++d) credit[d] += ratios[d] / sum;
    std::size_t best = 0;
    for (std::size_t d = 1; d < ratios.size(); ++d)
      if (credit[d] > credit[best]) best = d;
    credit[best] -= 1.0;
    order.push_back(best);
  }
  return order;
}

}  // namespace softpose
