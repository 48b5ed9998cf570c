#pragma once

#include <cstdint>
#include <vector>

#include "softpose/ops.hpp"
#include "softpose/softargmax.hpp"
#include "softpose/tensor.hpp"

namespace softpose {

// A pose sample: normalized joint coordinates with visibility targets and a
// per-joint validity mask. label_dim 2 means the depth channel carries no
// supervision; invalid joints are excluded from every loss term.
struct Pose {
  TensorData coords;                // [N_J, label_dim]
  std::vector<double> visibility;   // targets in [0,1]
  std::vector<std::uint8_t> valid;  // 1 = supervised
  int label_dim = 2;

  std::size_t njoints() const { return coords.shape.empty() ? 0 : coords.shape[0]; }

  static Pose make(std::size_t njoints, int label_dim) {
    Pose p;
    p.coords = TensorData::zeros({njoints, static_cast<std::size_t>(label_dim)});
    p.visibility.assign(njoints, 1.0);
    p.valid.assign(njoints, 1);
    p.label_dim = label_dim;
    return p;
  }
};

// Tape-side prediction.
struct PosePrediction {
  Tensor coords;      // [N_J, D]
  Tensor visibility;  // [N_J]
};

// ---------------------------------------------------------------------------
// Volumetric readout (unified 2D/3D)
// ---------------------------------------------------------------------------

struct VolumeReadout {
  Tensor x, y, z;    // scalars, normalized
  Tensor prob_map;   // [H,W], softmax of the depth-averaged map
  Tensor mean_map;   // [H,W] raw logits, feeds the visibility head
  Tensor depth_vec;  // [N_d] logits entering the 1-D soft-argmax
};

// Splits one joint's volume [N_d,H,W] into (x,y) from the depth-averaged map
// and z from the spatially-averaged depth vector. Averaging happens on raw
// logits, before the softmax, so product volumes decompose exactly.
// `depth_bias` (optional, [N_d]) is a learnable calibration added to the
// depth logits; it is the only parameter exclusive to the depth readout.
inline VolumeReadout volume_to_pose_single(const Tensor& vol,
                                           const Tensor& depth_bias = Tensor()) {
  if (vol.rank() != 3)
    throw ShapeError("volume_to_pose: expected [N_d,H,W] volume, got " +
                     shape_str(vol.shape()));
  VolumeReadout r;
  r.mean_map = reduce_mean(vol, {0});
  auto xy = soft_argmax_2d(r.mean_map);
  r.x = xy.x;
  r.y = xy.y;
  r.prob_map = probability_map(r.mean_map);
  r.depth_vec = reduce_mean(vol, {1, 2});
  if (depth_bias) r.depth_vec = add(r.depth_vec, depth_bias);
  r.z = soft_argmax_1d(r.depth_vec);
  return r;
}

struct PoseReadout {
  PosePrediction pose;            // coords [N_J,3]
  std::vector<Tensor> prob_maps;  // per joint [H,W]
  std::vector<VolumeReadout> joints;
};

// Per-joint volumes -> full pose plus the 2D probability-map byproducts.
inline PoseReadout volume_to_pose(const std::vector<Tensor>& volumes,
                                  const std::vector<Tensor>& depth_biases = {}) {
  if (volumes.empty()) throw ValueError("volume_to_pose: no joint volumes");
  const Shape ref = volumes[0].shape();  // copy: recording ops may relocate nodes
  PoseReadout out;
  std::vector<Tensor> flat;
  std::vector<Tensor> vis;
  for (std::size_t j = 0; j < volumes.size(); ++j) {
    if (volumes[j].shape() != ref)
      throw ShapeError("volume_to_pose: joint " + std::to_string(j) + " volume shape " +
                       shape_str(volumes[j].shape()) + " differs from joint 0 shape " +
                       shape_str(ref));
    Tensor bias = depth_biases.empty() ? Tensor() : depth_biases[j];
    VolumeReadout r = volume_to_pose_single(volumes[j], bias);
    flat.push_back(r.x);
    flat.push_back(r.y);
    flat.push_back(r.z);
    vis.push_back(joint_visibility(r.mean_map));
    out.prob_maps.push_back(r.prob_map);
    out.joints.push_back(std::move(r));
  }
  out.pose.coords = reshape(stack_scalars(flat), {volumes.size(), 3});
  out.pose.visibility = stack_scalars(vis);
  return out;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

// Per-joint L1 plus squared L2 of the coordinate error, averaged over valid
// joints. Depth columns of 2D-labeled targets are masked out, which makes
// their gradients exactly zero. Invalid target entries are never read into
// the graph.
inline Tensor elastic_net_loss(const Tensor& pred_coords, const Pose& target) {
  if (pred_coords.rank() != 2)
    throw ShapeError("elastic_net_loss: prediction must be [N_J,D], got " +
                     shape_str(pred_coords.shape()));
  const std::size_t nj = pred_coords.shape()[0];
  const std::size_t dp = pred_coords.shape()[1];
  if (target.njoints() != nj)
    throw ShapeError("elastic_net_loss: prediction has " + std::to_string(nj) +
                     " joints, target has " + std::to_string(target.njoints()));
  const std::size_t dt = target.coords.shape[1];
  const std::size_t dsup = std::min<std::size_t>(target.label_dim, std::min(dp, dt));

  std::size_t valid_count = 0;
  std::vector<double> mask(nj * dp, 0.0), tvals(nj * dp, 0.0);
  for (std::size_t j = 0; j < nj; ++j) {
    if (!target.valid[j]) continue;
    ++valid_count;
    for (std::size_t d = 0; d < dsup; ++d) {
      mask[j * dp + d] = 1.0;
      tvals[j * dp + d] = target.coords.values[j * dt + d];
    }
  }
  if (valid_count == 0) throw ValueError("elastic_net_loss: no valid joints");

  Tape& tape = *pred_coords.tape();
  Tensor m = tape.constant({nj, dp}, std::move(mask));
  Tensor t = tape.constant({nj, dp}, std::move(tvals));
  Tensor diff = multiply_elementwise(sub(pred_coords, t), m);
  Tensor l1 = reduce_sum(abs(diff));
  Tensor l2 = reduce_sum(multiply_elementwise(diff, diff));
  return scale(add(l1, l2), 1.0 / static_cast<double>(valid_count));
}

// Mean binary cross entropy over valid joints. Probabilities are clamped to
// [1e-7, 1-1e-7]; saturation is routine during training.
inline Tensor visibility_loss(const Tensor& vis_pred, const std::vector<double>& targets,
                              const std::vector<std::uint8_t>& valid) {
  if (vis_pred.rank() != 1)
    throw ShapeError("visibility_loss: prediction must be [N_J], got " +
                     shape_str(vis_pred.shape()));
  const std::size_t nj = vis_pred.shape()[0];
  if (targets.size() != nj || valid.size() != nj)
    throw ShapeError("visibility_loss: target/mask length does not match " +
                     std::to_string(nj) + " joints");
  std::size_t count = 0;
  std::vector<double> tv(nj, 0.0), uv(nj, 0.0);
  for (std::size_t j = 0; j < nj; ++j) {
    if (!valid[j]) continue;
    ++count;
    tv[j] = targets[j];
    uv[j] = 1.0 - targets[j];
  }
  if (count == 0) throw ValueError("visibility_loss: no valid joints");
  Tape& tape = *vis_pred.tape();
  Tensor v = clamp(vis_pred, 1e-7, 1.0 - 1e-7);
  Tensor ones = tape.constant({nj}, std::vector<double>(nj, 1.0));
  Tensor t = tape.constant({nj}, std::move(tv));
  Tensor u = tape.constant({nj}, std::move(uv));
  Tensor term = add(multiply_elementwise(t, softpose::log(v)),
                    multiply_elementwise(u, softpose::log(sub(ones, v))));
  return scale(reduce_sum(term), -1.0 / static_cast<double>(count));
}

// Batch loss over mixed 2D/3D samples: the plain sum of per-sample losses.
// Depth gradients of 2D-labeled samples vanish identically through the
// per-sample masks, and the batch gradient is the sum of the single-sample
// gradients.
inline Tensor mixed_batch_loss(const std::vector<Tensor>& pred_coords,
                               const std::vector<const Pose*>& targets) {
  if (pred_coords.empty() || pred_coords.size() != targets.size())
    throw ValueError("mixed_batch_loss: empty batch or size mismatch");
  Tensor total = elastic_net_loss(pred_coords[0], *targets[0]);
  for (std::size_t i = 1; i < pred_coords.size(); ++i)
    total = add(total, elastic_net_loss(pred_coords[i], *targets[i]));
  return total;
}

// ---------------------------------------------------------------------------
// Multi-crop averaging
// ---------------------------------------------------------------------------

// Affine from the common normalized frame to the crop frame,
// crop = A . (x, y, 1); a horizontal flip is part of the affine and the flag
// records that joint labels were mirrored.
struct CropTransform {
  double a00 = 1.0, a01 = 0.0, a02 = 0.0;
  double a10 = 0.0, a11 = 1.0, a12 = 0.0;
  bool flipped = false;

  void apply(double& x, double& y) const {
    const double nx = a00 * x + a01 * y + a02;
    const double ny = a10 * x + a11 * y + a12;
    x = nx;
    y = ny;
  }

  void apply_inverse(double& x, double& y) const {
    const double det = a00 * a11 - a01 * a10;
    if (det == 0.0) throw ValueError("CropTransform: singular affine");
    const double bx = x - a02, by = y - a12;
    const double nx = (a11 * bx - a01 * by) / det;
    const double ny = (-a10 * bx + a00 * by) / det;
    x = nx;
    y = ny;
  }

  static CropTransform identity() { return {}; }

  static CropTransform shift_scale(double scale, double dx, double dy) {
    CropTransform t;
    t.a00 = t.a11 = scale;
    t.a02 = dx;
    t.a12 = dy;
    return t;
  }

  // Mirror of a W-pixel-wide frame in normalized units: x -> (W-1)/W - x.
  static CropTransform horizontal_flip(std::size_t width) {
    CropTransform t;
    t.a00 = -1.0;
    t.a02 = static_cast<double>(width - 1) / static_cast<double>(width);
    t.flipped = true;
    return t;
  }
};

struct CropPrediction {
  Pose pose;
  CropTransform transform;
};

// Maps each prediction back to the common frame (undoing flips, which also
// swaps the mirrored joint labels) and averages per joint over valid entries.
inline Pose multi_crop_average(
    const std::vector<CropPrediction>& preds,
    const std::vector<std::pair<std::size_t, std::size_t>>& flip_pairs = {}) {
  if (preds.empty()) throw ValueError("multi_crop_average: empty prediction list");
  const std::size_t nj = preds[0].pose.njoints();
  const std::size_t dim = preds[0].pose.coords.shape[1];
  Pose out = Pose::make(nj, preds[0].pose.label_dim);
  out.coords = TensorData::zeros({nj, dim});
  std::vector<std::size_t> counts(nj, 0);
  std::vector<double> vis_sum(nj, 0.0);

  for (const CropPrediction& cp : preds) {
    if (cp.pose.njoints() != nj || cp.pose.coords.shape[1] != dim)
      throw ShapeError("multi_crop_average: inconsistent pose shapes");
    std::vector<std::size_t> source(nj);
    for (std::size_t j = 0; j < nj; ++j) source[j] = j;
    if (cp.transform.flipped)
      for (const auto& [a, b] : flip_pairs) std::swap(source[a], source[b]);

    for (std::size_t j = 0; j < nj; ++j) {
      const std::size_t s = source[j];
      if (!cp.pose.valid[s]) continue;
      double x = cp.pose.coords.values[s * dim + 0];
      double y = cp.pose.coords.values[s * dim + 1];
      cp.transform.apply_inverse(x, y);
      out.coords.values[j * dim + 0] += x;
      out.coords.values[j * dim + 1] += y;
      for (std::size_t d = 2; d < dim; ++d)
        out.coords.values[j * dim + d] += cp.pose.coords.values[s * dim + d];
      vis_sum[j] += cp.pose.visibility[s];
      ++counts[j];
    }
  }

  for (std::size_t j = 0; j < nj; ++j) {
    if (counts[j] == 0) {
      out.valid[j] = 0;
      out.visibility[j] = 0.0;
      continue;
    }
    const double inv = 1.0 / static_cast<double>(counts[j]);
    for (std::size_t d = 0; d < dim; ++d) out.coords.values[j * dim + d] *= inv;
    out.visibility[j] = vis_sum[j] * inv;
  }
  return out;
}

}  // namespace softpose
